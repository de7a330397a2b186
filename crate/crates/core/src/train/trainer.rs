use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::adam::{Adam, AdamConfig};
use super::metrics::{accuracy, average_precision_score};
use super::network::{Network, Prediction};
use super::rng::{stream_rng, Stream};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::signal::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 16, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean eval-mode loss over the training set after the epoch.
    pub loss: f64,
    /// APS or accuracy on the held-out set, or on the training set when
    /// there is none. NaN when undefined (no positive labels).
    pub metric: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch\tloss\tmetric\twall_seconds";

impl EpochRecord {
    /// One tab-separated log line; floats use shortest round-trip form.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{:.3}", self.epoch, self.loss, self.metric, self.wall_seconds)
    }
}

pub fn format_log(records: &[EpochRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.to_line());
    }
    s
}

/// Mean eval-mode loss and the task metric over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    net.check_dataset(data)?;
    let mut loss = 0.0;
    let (mut scores, mut targets) = (Vec::new(), Vec::new());
    let (mut predicted, mut classes) = (Vec::new(), Vec::new());
    for ex in &data.examples {
        let (l, p) = net.evaluate_example(ex)?;
        loss += l;
        match p {
            Prediction::Scores { scores: s, targets: t } => {
                scores.extend(s);
                targets.extend(t);
            }
            Prediction::Class { predicted: p, target } => {
                predicted.push(p);
                classes.push(target);
            }
        }
    }
    let metric = if predicted.is_empty() {
        average_precision_score(&scores, &targets).unwrap_or(f64::NAN)
    } else {
        accuracy(&predicted, &classes)?
    };
    Ok(Evaluation { loss: loss / data.len() as f64, metric })
}

/// Mini-batch Adam training. Shuffling, dropout and initialization draw
/// from separate streams of `seed`, so a run is reproducible from its
/// config and seed. Every epoch ends with an eval-mode pass whose record is
/// handed to `on_epoch`.
///
/// A non-finite loss or gradient restores the parameters from the end of
/// the last completed epoch and returns [`Error::Divergence`].
pub fn train(
    net: &mut Network,
    data: &Dataset,
    held_out: Option<&Dataset>,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    net.check_dataset(data)?;
    if let Some(h) = held_out {
        net.check_dataset(h)?;
    }
    let mut adam = Adam::new(cfg.adam, &net.store)?;
    let mut shuffle = stream_rng(seed, Stream::Shuffle);
    let mut dropout_rng = Some(stream_rng(seed, Stream::Dropout));
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        let last_good: ParamStore = net.store.clone();
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            net.store.zero_grads();
            for &i in batch {
                let tape = Tape::new();
                let sess = Session::training(&tape, &net.store, dropout_rng.take().expect("dropout stream"));
                let loss = net.example_loss(&sess, &data.examples[i])?;
                dropout_rng = sess.into_rng();
                let value = loss.item();
                let grads = if value.is_finite() { Some(tape.backward(loss)?) } else { None };
                let Some(grads) = grads else {
                    net.store = last_good;
                    return Err(Error::Divergence(format!(
                        "loss became {value} in epoch {epoch}; parameters restored to the end of epoch {}",
                        epoch - 1
                    )));
                };
                net.store.accumulate(&tape, &grads);
            }
            net.store.scale_grads(1.0 / batch.len() as f64);
            if let Err(e) = adam.step(&mut net.store) {
                net.store = last_good;
                return Err(e);
            }
        }
        let train_eval = evaluate(net, data)?;
        if !train_eval.loss.is_finite() {
            net.store = last_good;
            return Err(Error::Divergence(format!("evaluation loss became {} after epoch {epoch}", train_eval.loss)));
        }
        let metric = match held_out {
            Some(h) if !h.is_empty() => evaluate(net, h)?.metric,
            _ => train_eval.metric,
        };
        let record = EpochRecord { epoch, loss: train_eval.loss, metric, wall_seconds: start.elapsed().as_secs_f64() };
        on_epoch(&record);
        records.push(record);
    }
    net.store.zero_grads();
    Ok(records)
}
