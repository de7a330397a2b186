use std::rc::Rc;

use rand::Rng;

use super::tape::{sigmoid, Bcast, Op, RowStat, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, RealTensor};

/// Which extreme [`Var::reduce_extreme`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

fn bcast(what: &str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    if a == b {
        return Ok((a.to_vec(), Bcast::Same));
    }
    let (na, nb) = (numel(a), numel(b));
    let suffix = |small: &[usize], big: &[usize]| small.len() <= big.len() && big.ends_with(small);
    if nb == 1 || suffix(b, a) {
        Ok((a.to_vec(), Bcast::Right(nb)))
    } else if na == 1 || suffix(a, b) {
        Ok((b.to_vec(), Bcast::Left(na)))
    } else {
        Err(Error::shapes(what, a, b))
    }
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let last = shape.last().copied().unwrap_or(1);
    let rows = numel(shape).checked_div(last).unwrap_or(0);
    (rows, last)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Rc<Vec<f64>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        v[0]
    }

    pub fn to_tensor(&self) -> RealTensor {
        RealTensor::new(self.shape(), self.value().to_vec()).expect("tape node shape is consistent")
    }

    fn unary(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var<'t> {
        let ng = self.tape.needs_grad(self.id);
        self.tape.push(shape, value, op, ng)
    }

    fn binary(&self, other: Var<'t>, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var<'t> {
        let ng = self.tape.needs_grad(self.id) || self.tape.needs_grad(other.id);
        self.tape.push(shape, value, op, ng)
    }

    fn zip_with(&self, other: Var<'t>, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Bcast, Vec<f64>)> {
        let (sa, sb) = (self.shape(), other.shape());
        let (shape, bc) = bcast(what, &sa, &sb)?;
        let (va, vb) = (self.value(), other.value());
        let n = numel(&shape);
        let out = match bc {
            Bcast::Same => va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Right(ns) => (0..n).map(|i| f(va[i], vb[i % ns])).collect(),
            Bcast::Left(ns) => (0..n).map(|i| f(va[i % ns], vb[i])).collect(),
        };
        Ok((shape, bc, out))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, bc, out) = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, shape, out, Op::Add(self.id, other.id, bc)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, bc, out) = self.zip_with(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, shape, out, Op::Sub(self.id, other.id, bc)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, bc, out) = self.zip_with(other, "hadamard", |x, y| x * y)?;
        Ok(self.binary(other, shape, out, Op::Mul(self.id, other.id, bc)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let out = self.value().iter().map(|x| c * x).collect();
        self.unary(self.shape(), out, Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// max(x, 0); the derivative at 0 is taken to be 0.
    pub fn relu(&self) -> Var<'t> {
        let v = self.value();
        self.tape.log_branches(v.iter().map(|&x| u32::from(x > 0.0)));
        let out = v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.unary(self.shape(), out, Op::Relu(self.id))
    }

    /// Multiplies by a fixed array that is not differentiated.
    pub fn mul_const(&self, factors: Vec<f64>) -> Result<Var<'t>> {
        if factors.len() != self.numel() {
            return Err(Error::dim(format!(
                "constant factor has {} elements, tensor has {}",
                factors.len(),
                self.numel()
            )));
        }
        let out = self.value().iter().zip(&factors).map(|(x, m)| x * m).collect();
        Ok(self.unary(self.shape(), out, Op::MulConst(self.id, Rc::new(factors))))
    }

    /// Batched matrix product `[.., m, k] × [.., k, n]`. Batch dimensions must
    /// match, or one side must be a plain matrix that is reused per batch.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shapes("matmul needs rank >= 2", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        if k != k2 {
            return Err(Error::shapes("matmul inner dimensions differ", &sa, &sb));
        }
        let batch_shape = if ba == bb || bb.is_empty() {
            ba.to_vec()
        } else if ba.is_empty() {
            bb.to_vec()
        } else {
            return Err(Error::shapes("matmul batch dimensions", &sa, &sb));
        };
        let batch = numel(&batch_shape);
        let (a_batched, b_batched) = (!ba.is_empty(), !bb.is_empty());
        let (va, vb) = (self.value(), other.value());
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if a_batched { bi * m * k } else { 0 };
            let bo = if b_batched { bi * k * n } else { 0 };
            let co = bi * m * n;
            for i in 0..m {
                let dst = &mut out[co + i * n..co + (i + 1) * n];
                for p in 0..k {
                    let aip = va[ao + i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let row = &vb[bo + p * n..bo + (p + 1) * n];
                    dst.iter_mut().zip(row).for_each(|(d, b)| *d += aip * b);
                }
            }
        }
        let mut shape = batch_shape;
        shape.extend([m, n]);
        Ok(self.binary(other, shape, out, Op::MatMul { a: self.id, b: other.id, batch, a_batched, b_batched, m, k, n }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::dim(format!("transpose needs rank >= 2, got {s:?}")));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = numel(&s[..s.len() - 2]);
        let v = self.value();
        let mut out = vec![0.0; v.len()];
        for bi in 0..batch {
            let o = bi * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[o + c * rows + r] = v[o + r * cols + c];
                }
            }
        }
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        Ok(self.unary(shape, out, Op::Transpose { a: self.id, batch, rows, cols }))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        if numel(&shape) != self.numel() {
            return Err(Error::shapes("reshape", &self.shape(), &shape));
        }
        Ok(self.unary(shape, self.value().to_vec(), Op::Reshape(self.id)))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let s = self.shape();
        let (rows, width) = split_last(&s);
        if start + len > width {
            return Err(Error::dim(format!("slice {start}..{} out of range for last axis of {s:?}", start + len)));
        }
        let v = self.value();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * width + start..r * width + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().expect("rank >= 1") = len;
        Ok(self.unary(shape, out, Op::SliceLast { a: self.id, start, width }))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let s0 = first.shape();
        if s0.is_empty() {
            return Err(Error::dim("concat needs rank >= 1"));
        }
        let lead = &s0[..s0.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != s0.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shapes("concat_last", &s0, &s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows = numel(lead);
        let values: Vec<_> = parts.iter().map(Var::value).collect();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = parts.iter().any(|p| first.tape.needs_grad(p.id));
        let op = Op::ConcatLast(parts.iter().zip(&widths).map(|(p, &w)| (p.id, w)).collect());
        Ok(first.tape.push(shape, out, op, ng))
    }

    /// Entries `start..start+len` of the leading axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let s = self.shape();
        let lead = *s.first().ok_or_else(|| Error::dim("slice_rows on a scalar"))?;
        if start + len > lead {
            return Err(Error::dim(format!("row slice {start}..{} out of range for {s:?}", start + len)));
        }
        let inner = numel(&s[1..]);
        let out = self.value()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        Ok(self.unary(shape, out, Op::SliceLead { a: self.id, offset: start * inner }))
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let s0 = first.shape();
        if s0.is_empty() {
            return Err(Error::dim("concat needs rank >= 1"));
        }
        let mut lead = 0;
        let mut out = Vec::new();
        for p in parts {
            let s = p.shape();
            if s.len() != s0.len() || s[1..] != s0[1..] {
                return Err(Error::shapes("concat_rows", &s0, &s));
            }
            lead += s[0];
            out.extend_from_slice(&p.value());
        }
        let mut shape = s0;
        shape[0] = lead;
        let ng = parts.iter().any(|p| first.tape.needs_grad(p.id));
        Ok(first.tape.push(shape, out, Op::ConcatLead(parts.iter().map(|p| p.id).collect()), ng))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().iter().sum();
        self.unary(Vec::new(), vec![s], Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.value();
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.unary(Vec::new(), vec![s], Op::Mean(self.id))
    }

    /// Minimum or maximum along `axis`, removing that axis. The gradient is
    /// routed to the first index attaining the extreme.
    pub fn reduce_extreme(&self, axis: usize, kind: Extreme) -> Result<Var<'t>> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::Domain(format!("axis {axis} out of range for shape {s:?}")));
        }
        let len = s[axis];
        if len == 0 {
            return Err(Error::Domain(format!("extreme over empty axis {axis} of {s:?}")));
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let v = self.value();
        let mut picks = Vec::with_capacity(outer * inner);
        let mut out = Vec::with_capacity(outer * inner);
        let mut decisions = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut best = 0;
                for j in 1..len {
                    let better = match kind {
                        Extreme::Min => v[at(j)] < v[at(best)],
                        Extreme::Max => v[at(j)] > v[at(best)],
                    };
                    if better {
                        best = j;
                    }
                }
                decisions.push(best as u32);
                picks.push(at(best));
                out.push(v[at(best)]);
            }
        }
        self.tape.log_branches(decisions);
        let mut shape = s;
        shape.remove(axis);
        Ok(self.unary(shape, out, Op::Gather { a: self.id, picks }))
    }

    /// `gain ⊙ (x − μ)/√(σ² + eps) + bias` over the last axis, with the
    /// population variance.
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let s = self.shape();
        let (rows, width) = split_last(&s);
        if gain.shape() != [width] || bias.shape() != [width] {
            return Err(Error::dim(format!(
                "layer norm over width {width} got gain {:?} and bias {:?}",
                gain.shape(),
                bias.shape()
            )));
        }
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![0.0; x.len()];
        let w = width as f64;
        for r in 0..rows {
            let row = &x[r * width..(r + 1) * width];
            let mu = row.iter().sum::<f64>() / w;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / w;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..width {
                let h = (row[c] - mu) * is;
                xhat[r * width + c] = h;
                out[r * width + c] = gv[c] * h + bv[c];
            }
        }
        let ng = [self.id, gain.id, bias.id].iter().any(|&i| self.tape.needs_grad(i));
        let op = Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, xhat, inv_std };
        Ok(self.tape.push(s, out, op, ng))
    }

    /// Row-wise min-max normalization of a score tensor `[.., t_q, t_k]`.
    ///
    /// Each row is mapped to `(x − min)/(max − min + eps)` using only the
    /// entries the mask allows; masked entries become exactly 0. `mask` is a
    /// row-major `[t_q, t_k]` table shared across leading batch dimensions.
    pub fn min_max_norm(&self, mask: Option<&[bool]>, eps: f64) -> Result<Var<'t>> {
        if eps <= 0.0 {
            return Err(Error::Contract(format!("min-max eps must be positive, got {eps}")));
        }
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::dim(format!("min-max norm needs [.., t_q, t_k], got {s:?}")));
        }
        let (t_q, t_k) = (s[s.len() - 2], s[s.len() - 1]);
        if let Some(m) = mask {
            if m.len() != t_q * t_k {
                return Err(Error::dim(format!("mask of {} entries for scores {s:?}", m.len())));
            }
        }
        let rows = numel(&s).checked_div(t_k).unwrap_or(0);
        let x = self.value();
        let mut out = vec![0.0; x.len()];
        let mut stats = Vec::with_capacity(rows);
        let mut decisions = Vec::with_capacity(2 * rows);
        for r in 0..rows {
            let o = r * t_k;
            let q = r % t_q;
            let allowed = |j: usize| mask.is_none_or(|m| m[q * t_k + j]);
            let mut lo: Option<usize> = None;
            let mut hi: Option<usize> = None;
            for j in (0..t_k).filter(|&j| allowed(j)) {
                if lo.is_none_or(|l| x[o + j] < x[o + l]) {
                    lo = Some(j);
                }
                if hi.is_none_or(|h| x[o + j] > x[o + h]) {
                    hi = Some(j);
                }
            }
            let (Some(lo), Some(hi)) = (lo, hi) else {
                return Err(Error::Contract(format!("query row {q} has no unmasked keys")));
            };
            let min = x[o + lo];
            let denom = x[o + hi] - min + eps;
            for j in (0..t_k).filter(|&j| allowed(j)) {
                out[o + j] = (x[o + j] - min) / denom;
            }
            decisions.extend([lo as u32, hi as u32]);
            stats.push(RowStat { argmin: lo, argmax: hi, denom });
        }
        self.tape.log_branches(decisions);
        let mask = mask.map(|m| Rc::new(m.to_vec()));
        Ok(self.unary(s, out, Op::MinMaxNorm { x: self.id, stats, mask, t_q, t_k }))
    }

    /// Row-wise softmax over the last axis restricted to unmasked entries.
    pub fn softmax(&self, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::dim(format!("softmax needs [.., t_q, t_k], got {s:?}")));
        }
        let (t_q, t_k) = (s[s.len() - 2], s[s.len() - 1]);
        if let Some(m) = mask {
            if m.len() != t_q * t_k {
                return Err(Error::dim(format!("mask of {} entries for scores {s:?}", m.len())));
            }
        }
        let rows = numel(&s).checked_div(t_k).unwrap_or(0);
        let x = self.value();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let o = r * t_k;
            let q = r % t_q;
            let allowed = |j: usize| mask.is_none_or(|m| m[q * t_k + j]);
            let max = (0..t_k).filter(|&j| allowed(j)).map(|j| x[o + j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!("query row {q} has no unmasked keys")));
            }
            let mut z = 0.0;
            for j in (0..t_k).filter(|&j| allowed(j)) {
                let e = (x[o + j] - max).exp();
                out[o + j] = e;
                z += e;
            }
            out[o..o + t_k].iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.unary(s, out, Op::Softmax { x: self.id, t_k }))
    }

    /// Valid (unpadded) 1-D cross-correlation of `[T, c_in]` with a
    /// `[width, c_in, c_out]` kernel.
    pub fn conv1d(&self, kernel: Var<'t>, stride: usize) -> Result<Var<'t>> {
        let (sx, sk) = (self.shape(), kernel.shape());
        if sx.len() != 2 || sk.len() != 3 || sx[1] != sk[1] {
            return Err(Error::shapes("conv1d expects [T, c_in] and [width, c_in, c_out]", &sx, &sk));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be >= 1".into()));
        }
        let (t, c_in) = (sx[0], sx[1]);
        let (width, c_out) = (sk[0], sk[2]);
        if t < width {
            return Err(Error::dim(format!("conv1d input length {t} shorter than kernel width {width}")));
        }
        let t_out = (t - width) / stride + 1;
        let (xv, kv) = (self.value(), kernel.value());
        let mut out = vec![0.0; t_out * c_out];
        for to in 0..t_out {
            let dst = &mut out[to * c_out..(to + 1) * c_out];
            for w in 0..width {
                let row = (to * stride + w) * c_in;
                for c in 0..c_in {
                    let xi = xv[row + c];
                    let kb = (w * c_in + c) * c_out;
                    dst.iter_mut().zip(&kv[kb..kb + c_out]).for_each(|(d, k)| *d += xi * k);
                }
            }
        }
        let op = Op::Conv1d { x: self.id, kernel: kernel.id, stride, c_in, c_out, width, t_out };
        Ok(self.binary(kernel, vec![t_out, c_out], out, op))
    }

    /// Mean binary cross-entropy between `sigmoid(self)` and `targets`,
    /// evaluated as `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<Var<'t>> {
        let z = self.value();
        if targets.len() != z.len() {
            return Err(Error::dim(format!("{} targets for {} logits", targets.len(), z.len())));
        }
        let n = z.len().max(1) as f64;
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.unary(Vec::new(), vec![loss], Op::Bce { z: self.id, targets: Rc::new(targets.to_vec()) }))
    }

    /// `−log softmax(self)[target]` for a logit vector.
    pub fn cross_entropy(&self, target: usize) -> Result<Var<'t>> {
        let z = self.value();
        if target >= z.len() {
            return Err(Error::Contract(format!("class index {target} out of range for {} logits", z.len())));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let loss = max + total.ln() - z[target];
        Ok(self.unary(Vec::new(), vec![loss], Op::CrossEntropy { z: self.id, target, probs }))
    }

    pub fn sigmoid_values(&self) -> Vec<f64> {
        self.value().iter().map(|&z| sigmoid(z)).collect()
    }
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1/(1 − rate)`.
pub fn dropout<'t, R: Rng + ?Sized>(x: Var<'t>, rate: f64, training: bool, rng: &mut R) -> Result<Var<'t>> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..x.numel()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    x.mul_const(mask)
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")))
    }
}
