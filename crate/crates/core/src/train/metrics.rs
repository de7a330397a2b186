use crate::error::{Error, Result};

/// Micro-averaged average precision: rank by descending score (stable, so
/// ties keep their input order) and average the precision at each positive.
pub fn average_precision_score(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Domain("average precision is undefined without positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

/// Fraction of predictions equal to their targets.
pub fn accuracy(predicted: &[usize], targets: &[usize]) -> Result<f64> {
    if predicted.len() != targets.len() || predicted.is_empty() {
        return Err(Error::dim(format!("{} predictions for {} targets", predicted.len(), targets.len())));
    }
    Ok(predicted.iter().zip(targets).filter(|(p, t)| p == t).count() as f64 / predicted.len() as f64)
}

/// Index of the largest value, first on ties.
pub fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0
}
