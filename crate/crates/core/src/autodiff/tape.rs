use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// How a binary elementwise op lines up its operands.
///
/// The smaller operand must be a scalar or a trailing suffix of the larger
/// operand's shape (i.e. it is repeated over leading batch dimensions).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    /// Left operand is the small one; it holds this many elements.
    Left(usize),
    Right(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RowStat {
    pub argmin: usize,
    pub argmax: usize,
    pub denom: f64,
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Scale(usize, f64),
    Relu(usize),
    MulConst(usize, Rc<Vec<f64>>),
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        a_batched: bool,
        b_batched: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: usize,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape(usize),
    SliceLast {
        a: usize,
        start: usize,
        width: usize,
    },
    ConcatLast(Vec<(usize, usize)>),
    SliceLead {
        a: usize,
        offset: usize,
    },
    ConcatLead(Vec<usize>),
    Sum(usize),
    Mean(usize),
    Gather {
        a: usize,
        picks: Vec<usize>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MinMaxNorm {
        x: usize,
        stats: Vec<RowStat>,
        mask: Option<Rc<Vec<bool>>>,
        t_q: usize,
        t_k: usize,
    },
    Softmax {
        x: usize,
        t_k: usize,
    },
    Conv1d {
        x: usize,
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        width: usize,
        t_out: usize,
    },
    Bce {
        z: usize,
        targets: Rc<Vec<f64>>,
    },
    CrossEntropy {
        z: usize,
        target: usize,
        probs: Vec<f64>,
    },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Rc<Vec<f64>>,
    pub op: Op,
    pub needs_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it;
/// [`Tape::backward`] walks the list in exact reverse order. A tape lives for
/// one forward/backward pass and is confined to one thread.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    record_branches: Cell<bool>,
    branches: RefCell<Vec<u32>>,
    bindings: RefCell<HashMap<usize, usize>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that also logs every discrete branch decision (ReLU signs,
    /// argmin/argmax picks). Gradient checks compare these logs to detect
    /// stencils that straddle a nondifferentiable point.
    pub fn with_branch_log() -> Self {
        let t = Self::default();
        t.record_branches.set(true);
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Gradients flow into it iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &RealTensor) -> Var<'_> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, tensor.requires_grad())
    }

    /// A leaf that receives gradients regardless of the tensor's flag.
    pub fn variable(&self, tensor: &RealTensor) -> Var<'_> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, tensor: &RealTensor) -> Var<'_> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        let t = RealTensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(Vec::new(), vec![value], Op::Leaf, false)
    }

    /// Returns the node already bound to parameter slot `key`, or records a
    /// new trainable leaf for it.
    pub(crate) fn bind(&self, key: usize, tensor: &RealTensor) -> Var<'_> {
        if let Some(&id) = self.bindings.borrow().get(&key) {
            return Var { tape: self, id };
        }
        let v = self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, true);
        self.bindings.borrow_mut().insert(key, v.id);
        v
    }

    pub(crate) fn bindings(&self) -> Vec<(usize, usize)> {
        let mut b: Vec<_> = self.bindings.borrow().iter().map(|(&k, &v)| (k, v)).collect();
        b.sort_unstable();
        b
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        debug_assert_eq!(crate::tensor::numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value: Rc::new(value), op, needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub(crate) fn log_branches(&self, decisions: impl IntoIterator<Item = u32>) {
        if self.record_branches.get() {
            self.branches.borrow_mut().extend(decisions);
        }
    }

    pub fn branch_log(&self) -> Vec<u32> {
        self.branches.borrow().clone()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when no path reaches it.
    pub fn of(&self, v: Var<'_>) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; v.numel()])
    }

    pub(crate) fn by_id(&self, id: usize) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `tensor.grad` (if it tracks one).
    pub fn accumulate_into(&self, v: Var<'_>, tensor: &mut RealTensor) {
        if let Some(g) = self.get(v) {
            tensor.accumulate_grad(g);
        }
    }
}

/// Computes one consumer's contribution to `id` in a fresh buffer, then adds
/// it to the running total. Contributions never see each other's partial sums.
fn with_slot(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut Vec<f64>)) {
    if !nodes[id].needs_grad {
        return;
    }
    let mut local = vec![0.0; nodes[id].value.len()];
    f(&mut local);
    match grads[id].as_mut() {
        Some(total) => total.iter_mut().zip(&local).for_each(|(t, l)| *t += l),
        None => grads[id] = Some(local),
    }
}

fn bcast_acc(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    small: Option<usize>,
    contrib: impl Fn(usize) -> f64,
    n_out: usize,
) {
    with_slot(nodes, grads, id, |dst| {
        match small {
            None => dst.iter_mut().enumerate().for_each(|(i, d)| *d += contrib(i)),
            Some(ns) => (0..n_out).for_each(|i| dst[i % ns] += contrib(i)),
        }
    });
}

fn sides(b: Bcast) -> (Option<usize>, Option<usize>) {
    match b {
        Bcast::Same => (None, None),
        Bcast::Left(n) => (Some(n), None),
        Bcast::Right(n) => (None, Some(n)),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let n_out = g.len();
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Add(a, b, bc) => {
            let (sa, sb) = sides(bc);
            bcast_acc(nodes, grads, a, sa, |i| g[i], n_out);
            bcast_acc(nodes, grads, b, sb, |i| g[i], n_out);
        }
        &Op::Sub(a, b, bc) => {
            let (sa, sb) = sides(bc);
            bcast_acc(nodes, grads, a, sa, |i| g[i], n_out);
            bcast_acc(nodes, grads, b, sb, |i| -g[i], n_out);
        }
        &Op::Mul(a, b, bc) => {
            let (sa, sb) = sides(bc);
            let va = nodes[a].value.clone();
            let vb = nodes[b].value.clone();
            let ia = move |i: usize| sa.map_or(i, |n| i % n);
            let ib = move |i: usize| sb.map_or(i, |n| i % n);
            bcast_acc(nodes, grads, a, sa, |i| g[i] * vb[ib(i)], n_out);
            bcast_acc(nodes, grads, b, sb, |i| g[i] * va[ia(i)], n_out);
        }
        &Op::Scale(a, c) => {
            with_slot(nodes, grads, a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
            });
        }
        &Op::Relu(a) => {
            let x = nodes[a].value.clone();
            with_slot(nodes, grads, a, |d| {
                for i in 0..n_out {
                    if x[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::MulConst(a, mask) => {
            with_slot(nodes, grads, *a, |d| {
                d.iter_mut().zip(g).zip(mask.iter()).for_each(|((d, g), m)| *d += g * m);
            });
        }
        &Op::MatMul { a, b, batch, a_batched, b_batched, m, k, n } => {
            let va = nodes[a].value.clone();
            let vb = nodes[b].value.clone();
            with_slot(nodes, grads, a, |da| {
                for bi in 0..batch {
                    let ao = if a_batched { bi * m * k } else { 0 };
                    let bo = if b_batched { bi * k * n } else { 0 };
                    let go = bi * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[go + i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[ao + i * k + p] += gij * vb[bo + p * n + j];
                            }
                        }
                    }
                }
            });
            with_slot(nodes, grads, b, |db| {
                for bi in 0..batch {
                    let ao = if a_batched { bi * m * k } else { 0 };
                    let bo = if b_batched { bi * k * n } else { 0 };
                    let go = bi * m * n;
                    for i in 0..m {
                        for p in 0..k {
                            let aip = va[ao + i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let row = &g[go + i * n..go + (i + 1) * n];
                            let dst = &mut db[bo + p * n..bo + (p + 1) * n];
                            dst.iter_mut().zip(row).for_each(|(d, g)| *d += aip * g);
                        }
                    }
                }
            });
        }
        &Op::Transpose { a, batch, rows, cols } => {
            with_slot(nodes, grads, a, |d| {
                for bi in 0..batch {
                    let o = bi * rows * cols;
                    for r in 0..rows {
                        for c in 0..cols {
                            d[o + r * cols + c] += g[o + c * rows + r];
                        }
                    }
                }
            });
        }
        &Op::Reshape(a) => {
            with_slot(nodes, grads, a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            });
        }
        &Op::SliceLast { a, start, width } => {
            let len = *nodes[id].shape.last().unwrap_or(&1);
            with_slot(nodes, grads, a, |d| {
                let rows = n_out.checked_div(len).unwrap_or(0);
                for r in 0..rows {
                    for c in 0..len {
                        d[r * width + start + c] += g[r * len + c];
                    }
                }
            });
        }
        Op::ConcatLast(parts) => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let rows = n_out.checked_div(total).unwrap_or(0);
            let mut offset = 0;
            for &(p, w) in parts {
                with_slot(nodes, grads, p, |d| {
                    for r in 0..rows {
                        for c in 0..w {
                            d[r * w + c] += g[r * total + offset + c];
                        }
                    }
                });
                offset += w;
            }
        }
        &Op::SliceLead { a, offset } => {
            with_slot(nodes, grads, a, |d| {
                d[offset..offset + n_out].iter_mut().zip(g).for_each(|(d, g)| *d += g);
            });
        }
        Op::ConcatLead(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                with_slot(nodes, grads, p, |d| {
                    d.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, g)| *d += g);
                });
                offset += len;
            }
        }
        &Op::Sum(a) => {
            with_slot(nodes, grads, a, |d| {
                d.iter_mut().for_each(|d| *d += g[0]);
            });
        }
        &Op::Mean(a) => {
            let n = nodes[a].value.len().max(1) as f64;
            with_slot(nodes, grads, a, |d| {
                d.iter_mut().for_each(|d| *d += g[0] / n);
            });
        }
        Op::Gather { a, picks } => {
            with_slot(nodes, grads, *a, |d| {
                for (o, &src) in picks.iter().enumerate() {
                    d[src] += g[o];
                }
            });
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let width = *nodes[*x].shape.last().unwrap_or(&1);
            let gv = nodes[*gain].value.clone();
            let rows = inv_std.len();
            with_slot(nodes, grads, *gain, |dg| {
                for r in 0..rows {
                    for c in 0..width {
                        dg[c] += g[r * width + c] * xhat[r * width + c];
                    }
                }
            });
            with_slot(nodes, grads, *bias, |db| {
                for r in 0..rows {
                    for c in 0..width {
                        db[c] += g[r * width + c];
                    }
                }
            });
            with_slot(nodes, grads, *x, |dx| {
                let w = width as f64;
                for (r, &istd) in inv_std.iter().enumerate().take(rows) {
                    let o = r * width;
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..width {
                        let dh = g[o + c] * gv[c];
                        s1 += dh;
                        s2 += dh * xhat[o + c];
                    }
                    for c in 0..width {
                        let dh = g[o + c] * gv[c];
                        dx[o + c] += istd / w * (w * dh - s1 - xhat[o + c] * s2);
                    }
                }
            });
        }
        Op::MinMaxNorm { x, stats, mask, t_q, t_k } => {
            let xv = nodes[*x].value.clone();
            with_slot(nodes, grads, *x, |dx| {
                for (r, st) in stats.iter().enumerate() {
                    let o = r * t_k;
                    let q = r % t_q;
                    let lo = xv[o + st.argmin];
                    let mut s = 0.0;
                    let mut wsum = 0.0;
                    for j in 0..*t_k {
                        if mask.as_ref().is_some_and(|m| !m[q * t_k + j]) {
                            continue;
                        }
                        let gj = g[o + j];
                        dx[o + j] += gj / st.denom;
                        s += gj;
                        wsum += gj * (xv[o + j] - lo);
                    }
                    let d2 = st.denom * st.denom;
                    dx[o + st.argmin] += -s / st.denom + wsum / d2;
                    dx[o + st.argmax] += -wsum / d2;
                }
            });
        }
        &Op::Softmax { x, t_k } => {
            let y = nodes[id].value.clone();
            with_slot(nodes, grads, x, |dx| {
                let rows = n_out.checked_div(t_k).unwrap_or(0);
                for r in 0..rows {
                    let o = r * t_k;
                    let dot: f64 = (0..t_k).map(|j| g[o + j] * y[o + j]).sum();
                    for j in 0..t_k {
                        dx[o + j] += y[o + j] * (g[o + j] - dot);
                    }
                }
            });
        }
        &Op::Conv1d { x, kernel, stride, c_in, c_out, width, t_out } => {
            let xv = nodes[x].value.clone();
            let kv = nodes[kernel].value.clone();
            with_slot(nodes, grads, x, |dx| {
                for t in 0..t_out {
                    for w in 0..width {
                        let row = (t * stride + w) * c_in;
                        for c in 0..c_in {
                            let kb = (w * c_in + c) * c_out;
                            let mut acc = 0.0;
                            for o in 0..c_out {
                                acc += g[t * c_out + o] * kv[kb + o];
                            }
                            dx[row + c] += acc;
                        }
                    }
                }
            });
            with_slot(nodes, grads, kernel, |dk| {
                for t in 0..t_out {
                    for w in 0..width {
                        let row = (t * stride + w) * c_in;
                        for c in 0..c_in {
                            let xi = xv[row + c];
                            let kb = (w * c_in + c) * c_out;
                            for o in 0..c_out {
                                dk[kb + o] += xi * g[t * c_out + o];
                            }
                        }
                    }
                }
            });
        }
        Op::Bce { z, targets } => {
            let zv = nodes[*z].value.clone();
            let n = zv.len().max(1) as f64;
            with_slot(nodes, grads, *z, |dz| {
                for i in 0..zv.len() {
                    dz[i] += g[0] * (sigmoid(zv[i]) - targets[i]) / n;
                }
            });
        }
        Op::CrossEntropy { z, target, probs } => {
            with_slot(nodes, grads, *z, |dz| {
                for (i, p) in probs.iter().enumerate() {
                    let onehot = if i == *target { 1.0 } else { 0.0 };
                    dz[i] += g[0] * (p - onehot);
                }
            });
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
