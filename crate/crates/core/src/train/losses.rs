use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Mean binary cross-entropy over every logit against multi-hot targets.
pub fn bce_multilabel_loss<'t>(logits: Var<'t>, targets: &[f64]) -> Result<Var<'t>> {
    if let Some(y) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract(format!("binary target {y} is not 0 or 1")));
    }
    logits.bce_with_logits(targets)
}

/// `−log softmax(logits)[target]` for logits of shape `[L]`.
pub fn ce_loss<'t>(logits: Var<'t>, target: usize) -> Result<Var<'t>> {
    if logits.shape().len() != 1 {
        return Err(Error::dim(format!("cross-entropy expects [L] logits, got {:?}", logits.shape())));
    }
    logits.cross_entropy(target)
}
