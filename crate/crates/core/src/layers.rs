//! Real-valued layers shared by the prediction heads and the concatenated
//! baseline.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::RealTensor;
use crate::train::init::xavier_uniform;

/// Numerical floor inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier-uniform weight `[d_in, d_out]`, zero bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let w = xavier_uniform(&[d_in, d_out], rng)?;
        Ok(Self::from_tensors(store, name, w, bias.then(|| RealTensor::zeros(vec![d_out]))))
    }

    pub fn from_tensors(store: &mut ParamStore, name: &str, weight: RealTensor, bias: Option<RealTensor>) -> Self {
        let (d_in, d_out) = (weight.shape()[0], weight.shape()[1]);
        let weight = store.add(format!("{name}.w"), weight);
        let bias = bias.map(|b| store.add(format!("{name}.b"), b));
        Linear { weight, bias, d_in, d_out }
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(sess.param(self.weight))?;
        match self.bias {
            Some(b) => y.add(sess.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), RealTensor::filled(vec![width], 1.0));
        let bias = store.add(format!("{name}.bias"), RealTensor::zeros(vec![width]));
        LayerNorm { gain, bias }
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(sess.param(self.gain), sess.param(self.bias), LAYER_NORM_EPS)
    }
}

/// Two-layer ReLU network with dropout after the activation.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        Ok(FeedForward {
            hidden: Linear::new(store, &format!("{name}.hidden"), d_model, d_ff, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d_ff, d_model, true, rng)?,
            dropout,
        })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.hidden.forward(sess, x)?.relu();
        let h = sess.dropout(h, self.dropout)?;
        self.output.forward(sess, h)
    }
}
