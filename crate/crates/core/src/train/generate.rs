//! Conditional generation: encode the leading share of a sequence and
//! produce the rest one frame at a time.

use super::network::{Network, Prediction, Task};
use crate::autodiff::Tape;
use crate::complex::{ComplexTensor, ComplexVar};
use crate::error::{Error, Result};
use crate::model::Backbone;
use crate::params::{ParamStore, Session};
use crate::signal::SpectralSequence;

/// `⌈fraction·T⌉`, the number of frames the encoder sees. Both spans must be
/// non-empty.
pub fn split_point(t: usize, fraction: f64) -> Result<usize> {
    // The tolerance keeps products like 0.6·10 from rounding up past 6.
    let te = (fraction * t as f64 - 1e-9).ceil().max(0.0) as usize;
    if t < 2 || te < 1 || te >= t {
        return Err(Error::Contract(format!("cannot split {t} frames at fraction {fraction} into two non-empty spans")));
    }
    Ok(te)
}

/// Teacher forcing: the decoder reads ground-truth frames `Te−1 .. T−1`
/// under its causal mask and predicts frames `Te .. T`.
pub fn teacher_forced<'t>(sess: &Session<'t>, backbone: &Backbone, frames: &ComplexTensor, fraction: f64) -> Result<ComplexVar<'t>> {
    let t = frames.shape()[0];
    let te = split_point(t, fraction)?;
    let enc = backbone.encode(sess, ComplexVar::constant(sess.tape, &frames.rows(0, te)?))?;
    let dec_in = ComplexVar::constant(sess.tape, &frames.rows(te - 1, t - te)?);
    backbone.decode(sess, dec_in, enc)
}

/// Free-running generation from the encoder span `frames[0..Te)`: starting
/// from frame `Te−1`, each produced frame is appended to the decoder input.
pub fn free_run(backbone: &Backbone, params: &ParamStore, context: &ComplexTensor, steps: usize) -> Result<ComplexTensor> {
    let te = context.shape()[0];
    if te == 0 || steps == 0 {
        return Err(Error::Contract("generation needs a non-empty context and at least one step".into()));
    }
    let tape = Tape::new();
    let sess = Session::eval(&tape, params);
    let enc = backbone.encode(&sess, ComplexVar::constant(&tape, context))?;
    let mut inputs = vec![context.rows(te - 1, 1)?];
    let mut produced = Vec::with_capacity(steps);
    for s in 0..steps {
        let dec_in = ComplexTensor::concat_rows(&inputs.iter().collect::<Vec<_>>())?;
        let out = backbone.decode(&sess, ComplexVar::constant(&tape, &dec_in), enc)?;
        let next = out.rows(s, 1)?.to_tensor();
        inputs.push(next.clone());
        produced.push(next);
    }
    ComplexTensor::concat_rows(&produced.iter().collect::<Vec<_>>())
}

/// Free-running output for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Frames `Te .. T`, shape `[T − Te, F]`.
    pub frames: ComplexTensor,
    /// Head output on the generated frames.
    pub prediction: Prediction,
    pub encoder_frames: usize,
}

pub fn conditional_generate(net: &Network, frames: &ComplexTensor, labels: &[f64]) -> Result<Generated> {
    if net.task.task != Task::ConditionalGenerate {
        return Err(Error::Config("the network was not built for conditional generation".into()));
    }
    let t = frames.shape()[0];
    let te = split_point(t, net.task.encoder_fraction)?;
    let generated = free_run(&net.backbone, &net.store, &frames.rows(0, te)?, t - te)?;
    let tape = Tape::new();
    let sess = Session::eval(&tape, &net.store);
    let logits = net.head.forward(&sess, ComplexVar::constant(&tape, &generated).concat_parts()?)?;
    let ex = SpectralSequence { frames: frames.clone(), labels: labels.to_vec() };
    let targets = net.label_targets(&ex)?;
    Ok(Generated { prediction: net.prediction(logits, targets), frames: generated, encoder_frames: te })
}
