//! Trainable parameter storage and the per-pass forward context.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_dropout_rate, dropout, Gradients, Tape, Var};
use crate::error::Result;
use crate::tensor::RealTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named collection of trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<RealTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: RealTensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &RealTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut RealTensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(RealTensor::numel).sum()
    }

    /// Records parameter `id` on `tape`; repeated binds in one pass share a node.
    pub fn bind<'t>(&self, tape: &'t Tape, id: ParamId) -> Var<'t> {
        tape.bind(id.0, &self.tensors[id.0])
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(RealTensor::zero_grad);
    }

    /// Adds the gradients of every parameter bound on `tape` into its
    /// gradient buffer.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (key, node) in tape.bindings() {
            if let Some(g) = grads.by_id(node) {
                self.tensors[key].accumulate_grad(g);
            }
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= c);
            }
        }
    }
}

/// Everything a layer needs during one forward pass: the tape, the
/// parameters, the mode, and the dropout stream.
pub struct Session<'t> {
    pub tape: &'t Tape,
    pub params: &'t ParamStore,
    pub training: bool,
    rng: RefCell<Option<ChaCha8Rng>>,
}

impl<'t> Session<'t> {
    /// Inference mode: dropout is the identity.
    pub fn eval(tape: &'t Tape, params: &'t ParamStore) -> Self {
        Session { tape, params, training: false, rng: RefCell::new(None) }
    }

    pub fn training(tape: &'t Tape, params: &'t ParamStore, rng: ChaCha8Rng) -> Self {
        Session { tape, params, training: true, rng: RefCell::new(Some(rng)) }
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.params.bind(self.tape, id)
    }

    pub fn dropout(&self, x: Var<'t>, rate: f64) -> Result<Var<'t>> {
        let mut rng = self.rng.borrow_mut();
        match rng.as_mut() {
            Some(r) if self.training => dropout(x, rate, true, r),
            _ => {
                check_dropout_rate(rate)?;
                Ok(x)
            }
        }
    }

    /// Hands back the dropout stream so the next pass can continue it.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng.into_inner()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_binds_share_one_node() {
        let mut store = ParamStore::new();
        let id = store.add("w", RealTensor::vector(vec![1.0, 2.0]));
        let tape = Tape::new();
        let a = store.bind(&tape, id);
        let b = store.bind(&tape, id);
        assert_eq!(a.id(), b.id());
        let loss = a.mul(b).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&tape, &grads);
        assert_eq!(store.get(id).grad().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn accumulation_adds_until_zeroed() {
        let mut store = ParamStore::new();
        let id = store.add("w", RealTensor::scalar(3.0));
        for _ in 0..2 {
            let tape = Tape::new();
            let w = store.bind(&tape, id);
            let loss = w.mul(w).unwrap();
            let grads = tape.backward(loss).unwrap();
            store.accumulate(&tape, &grads);
        }
        assert_eq!(store.get(id).grad().unwrap(), &[12.0]);
        store.zero_grads();
        assert_eq!(store.get(id).grad().unwrap(), &[0.0]);
    }
}
