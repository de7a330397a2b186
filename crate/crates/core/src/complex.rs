//! Complex-valued layers expressed as pairs of real tensors.
//!
//! A complex value `a + ib` is carried as its real part `a` and imaginary
//! part `b`; every layer is written as two real functions of `(a, b)`.

use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, LAYER_NORM_EPS};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::RealTensor;
use crate::train::init::xavier_uniform;

/// `re + i·im` with both parts of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    re: RealTensor,
    im: RealTensor,
}

impl ComplexTensor {
    pub fn new(re: RealTensor, im: RealTensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shapes("complex parts", re.shape(), im.shape()));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        ComplexTensor { re: RealTensor::zeros(shape.clone()), im: RealTensor::zeros(shape) }
    }

    pub fn from_complex(shape: impl Into<Vec<usize>>, values: &[Complex64]) -> Result<Self> {
        let shape = shape.into();
        let re = RealTensor::new(shape.clone(), values.iter().map(|c| c.re).collect())?;
        let im = RealTensor::new(shape, values.iter().map(|c| c.im).collect())?;
        Ok(ComplexTensor { re, im })
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re.data().iter().zip(self.im.data()).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn re(&self) -> &RealTensor {
        &self.re
    }

    pub fn im(&self) -> &RealTensor {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut RealTensor {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut RealTensor {
        &mut self.im
    }

    pub fn into_parts(self) -> (RealTensor, RealTensor) {
        (self.re, self.im)
    }

    /// Rows `start..start+len` of a `[T, F]` tensor.
    pub fn rows(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape();
        if s.len() != 2 || start + len > s[0] {
            return Err(Error::dim(format!("row range {start}..{} of {s:?}", start + len)));
        }
        let f = s[1];
        let take = |t: &RealTensor| RealTensor::new(vec![len, f], t.data()[start * f..(start + len) * f].to_vec());
        ComplexTensor::new(take(&self.re)?, take(&self.im)?)
    }

    /// Stacks `[T_i, F]` tensors along time.
    pub fn concat_rows(parts: &[&ComplexTensor]) -> Result<Self> {
        let f = parts.first().map_or(0, |p| p.shape()[1]);
        let mut re = Vec::new();
        let mut im = Vec::new();
        let mut t = 0;
        for p in parts {
            if p.shape().len() != 2 || p.shape()[1] != f {
                return Err(Error::dim(format!("cannot stack {:?} under width {f}", p.shape())));
            }
            t += p.shape()[0];
            re.extend_from_slice(p.re.data());
            im.extend_from_slice(p.im.data());
        }
        ComplexTensor::new(RealTensor::new(vec![t, f], re)?, RealTensor::new(vec![t, f], im)?)
    }
}

/// A complex value recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ComplexVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> ComplexVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shapes("complex parts", &re.shape(), &im.shape()));
        }
        Ok(ComplexVar { re, im })
    }

    pub fn constant(tape: &'t Tape, x: &ComplexTensor) -> Self {
        ComplexVar { re: tape.constant(&x.re), im: tape.constant(&x.im) }
    }

    pub fn variable(tape: &'t Tape, x: &ComplexTensor) -> Self {
        ComplexVar { re: tape.variable(&x.re), im: tape.variable(&x.im) }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    pub fn to_tensor(&self) -> ComplexTensor {
        ComplexTensor { re: self.re.to_tensor(), im: self.im.to_tensor() }
    }

    pub fn add(&self, o: ComplexVar<'t>) -> Result<Self> {
        Ok(ComplexVar { re: self.re.add(o.re)?, im: self.im.add(o.im)? })
    }

    /// Adds a real tensor to both parts.
    pub fn add_real(&self, r: Var<'t>) -> Result<Self> {
        Ok(ComplexVar { re: self.re.add(r)?, im: self.im.add(r)? })
    }

    pub fn rows(&self, start: usize, len: usize) -> Result<Self> {
        Ok(ComplexVar { re: self.re.slice_rows(start, len)?, im: self.im.slice_rows(start, len)? })
    }

    /// `[T, d]` → `[T, 2d]` with the real part first.
    pub fn concat_parts(&self) -> Result<Var<'t>> {
        Var::concat_last(&[self.re, self.im])
    }
}

/// `(a + ib)(A + iB) = (aA − bB) + i(aB + bA)` as a matrix product, plus an
/// optional complex bias added componentwise.
pub fn complex_linear<'t>(x: ComplexVar<'t>, w_re: Var<'t>, w_im: Var<'t>, bias: Option<(Var<'t>, Var<'t>)>) -> Result<ComplexVar<'t>> {
    let (a, b) = (x.re, x.im);
    let mut re = a.matmul(w_re)?.sub(b.matmul(w_im)?)?;
    let mut im = a.matmul(w_im)?.add(b.matmul(w_re)?)?;
    if let Some((b_re, b_im)) = bias {
        re = re.add(b_re)?;
        im = im.add(b_im)?;
    }
    Ok(ComplexVar { re, im })
}

/// Valid complex cross-correlation:
/// `(A∗a − B∗b) + i(A∗b + B∗a)` for input `a + ib` and kernel `A + iB`.
pub fn complex_conv1d<'t>(x: ComplexVar<'t>, k_re: Var<'t>, k_im: Var<'t>, stride: usize) -> Result<ComplexVar<'t>> {
    let (a, b) = (x.re, x.im);
    let re = a.conv1d(k_re, stride)?.sub(b.conv1d(k_im, stride)?)?;
    let im = b.conv1d(k_re, stride)?.add(a.conv1d(k_im, stride)?)?;
    Ok(ComplexVar { re, im })
}

/// Complex weight `W = A + iB` of shape `[d_in, d_out]` with an optional
/// complex bias.
#[derive(Debug, Clone)]
pub struct ComplexLinear {
    pub w_re: ParamId,
    pub w_im: ParamId,
    pub bias: Option<(ParamId, ParamId)>,
    pub d_in: usize,
    pub d_out: usize,
}

impl ComplexLinear {
    /// Both weight parts drawn independently from Xavier uniform; bias zero.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let w_re = xavier_uniform(&[d_in, d_out], rng)?;
        let w_im = xavier_uniform(&[d_in, d_out], rng)?;
        let b = bias.then(|| (RealTensor::zeros(vec![d_out]), RealTensor::zeros(vec![d_out])));
        Self::from_tensors(store, name, w_re, w_im, b)
    }

    pub fn from_tensors(
        store: &mut ParamStore,
        name: &str,
        w_re: RealTensor,
        w_im: RealTensor,
        bias: Option<(RealTensor, RealTensor)>,
    ) -> Result<Self> {
        if w_re.shape() != w_im.shape() || w_re.shape().len() != 2 {
            return Err(Error::shapes("complex weight parts", w_re.shape(), w_im.shape()));
        }
        let (d_in, d_out) = (w_re.shape()[0], w_re.shape()[1]);
        if let Some((br, bi)) = &bias {
            if br.shape() != [d_out] || bi.shape() != [d_out] {
                return Err(Error::shapes("complex bias parts", br.shape(), bi.shape()));
            }
        }
        let w_re = store.add(format!("{name}.w_re"), w_re);
        let w_im = store.add(format!("{name}.w_im"), w_im);
        let bias = bias.map(|(br, bi)| (store.add(format!("{name}.b_re"), br), store.add(format!("{name}.b_im"), bi)));
        Ok(ComplexLinear { w_re, w_im, bias, d_in, d_out })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let last = x.shape().last().copied().unwrap_or(0);
        if last != self.d_in {
            return Err(Error::dim(format!("complex linear expects last axis {}, got {:?}", self.d_in, x.shape())));
        }
        let bias = self.bias.map(|(r, i)| (sess.param(r), sess.param(i)));
        complex_linear(x, sess.param(self.w_re), sess.param(self.w_im), bias)
    }

    /// Applies the real weight part to `x.re` and the imaginary weight part
    /// to `x.im` as two unrelated real maps (no cross terms).
    pub fn forward_split<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        let mut re = x.re.matmul(sess.param(self.w_re))?;
        let mut im = x.im.matmul(sess.param(self.w_im))?;
        if let Some((br, bi)) = self.bias {
            re = re.add(sess.param(br))?;
            im = im.add(sess.param(bi))?;
        }
        Ok(ComplexVar { re, im })
    }
}

/// Complex 1-D convolution layer with kernel `[width, c_in, c_out]`.
#[derive(Debug, Clone)]
pub struct ComplexConv1d {
    pub k_re: ParamId,
    pub k_im: ParamId,
    pub stride: usize,
}

impl ComplexConv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be >= 1".into()));
        }
        let k_re = store.add(format!("{name}.k_re"), xavier_uniform(&[width, c_in, c_out], rng)?);
        let k_im = store.add(format!("{name}.k_im"), xavier_uniform(&[width, c_in, c_out], rng)?);
        Ok(ComplexConv1d { k_re, k_im, stride })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        complex_conv1d(x, sess.param(self.k_re), sess.param(self.k_im), self.stride)
    }
}

/// Separate real two-layer ReLU networks for the real and imaginary parts.
///
/// The first layer's real weights act on `re` and its imaginary weights on
/// `im`; likewise for the second layer. Dropout follows the ReLU.
#[derive(Debug, Clone)]
pub struct ComplexFeedForward {
    pub hidden: ComplexLinear,
    pub output: ComplexLinear,
    pub dropout: f64,
}

impl ComplexFeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        Ok(ComplexFeedForward {
            hidden: ComplexLinear::new(store, &format!("{name}.hidden"), d_model, d_ff, true, rng)?,
            output: ComplexLinear::new(store, &format!("{name}.output"), d_ff, d_model, true, rng)?,
            dropout,
        })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        if self.hidden.d_out != self.output.d_in {
            return Err(Error::dim(format!(
                "feed-forward hidden width {} does not match output input width {}",
                self.hidden.d_out, self.output.d_in
            )));
        }
        let h = self.hidden.forward_split(sess, x)?;
        let h = ComplexVar {
            re: sess.dropout(h.re.relu(), self.dropout)?,
            im: sess.dropout(h.im.relu(), self.dropout)?,
        };
        self.output.forward_split(sess, h)
    }
}

/// Independent layer normalization of each part, each with its own affine
/// parameters.
#[derive(Debug, Clone)]
pub struct ComplexLayerNorm {
    pub re: LayerNorm,
    pub im: LayerNorm,
}

impl ComplexLayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        ComplexLayerNorm {
            re: LayerNorm::new(store, &format!("{name}.re"), width),
            im: LayerNorm::new(store, &format!("{name}.im"), width),
        }
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x: ComplexVar<'t>) -> Result<ComplexVar<'t>> {
        Ok(ComplexVar { re: self.re.forward(sess, x.re)?, im: self.im.forward(sess, x.im)? })
    }
}

/// Functional form used by tests and the oracle suites.
pub fn complex_layer_norm<'t>(x: ComplexVar<'t>, re: (Var<'t>, Var<'t>), im: (Var<'t>, Var<'t>)) -> Result<ComplexVar<'t>> {
    Ok(ComplexVar { re: x.re.layer_norm(re.0, re.1, LAYER_NORM_EPS)?, im: x.im.layer_norm(im.0, im.1, LAYER_NORM_EPS)? })
}

/// Sinusoidal table `PE[t, 2j] = sin(t / 10000^(2j/d))`,
/// `PE[t, 2j+1] = cos(t / 10000^(2j/d))`.
pub fn positional_encoding(t: usize, d: usize) -> Result<RealTensor> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding width must be even, got {d}")));
    }
    Ok(RealTensor::from_fn(vec![t, d], |i| {
        let (pos, col) = (i / d, i % d);
        let j = col / 2;
        let angle = pos as f64 / 10000f64.powf(2.0 * j as f64 / d as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_c(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> ComplexTensor {
        let re = RealTensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..1.0));
        let im = RealTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        ComplexTensor::new(re, im).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn parts_must_agree() {
        assert!(ComplexTensor::new(RealTensor::zeros(vec![2]), RealTensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn scalar_complex_product() {
        let tape = Tape::new();
        let x = ComplexVar::constant(&tape, &ComplexTensor::from_complex(vec![1, 1], &[Complex64::new(1.0, 2.0)]).unwrap());
        let wr = tape.constant(&RealTensor::new(vec![1, 1], vec![3.0]).unwrap());
        let wi = tape.constant(&RealTensor::new(vec![1, 1], vec![4.0]).unwrap());
        let y = complex_linear(x, wr, wi, None).unwrap();
        assert_eq!((y.re.item(), y.im.item()), (-5.0, 10.0));
    }

    #[test]
    fn zero_imaginary_weight_gives_two_real_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_c(vec![3, 4], &mut rng);
        let w = RealTensor::from_fn(vec![4, 2], |_| rng.random_range(-1.0..1.0));
        let tape = Tape::new();
        let xv = ComplexVar::constant(&tape, &x);
        let wv = tape.constant(&w);
        let y = complex_linear(xv, wv, tape.constant(&RealTensor::zeros(vec![4, 2])), None).unwrap();
        assert_eq!(*y.re.value(), *xv.re.matmul(wv).unwrap().value());
        assert_eq!(*y.im.value(), *xv.im.matmul(wv).unwrap().value());
    }

    #[test]
    fn linear_matches_complex_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = rand_c(vec![2, 3], &mut rng);
            let w = rand_c(vec![3, 3], &mut rng);
            let bias = rand_c(vec![3], &mut rng);
            let tape = Tape::new();
            let y = complex_linear(
                ComplexVar::constant(&tape, &x),
                tape.constant(w.re()),
                tape.constant(w.im()),
                Some((tape.constant(bias.re()), tape.constant(bias.im()))),
            )
            .unwrap()
            .to_tensor()
            .to_complex();
            let (xc, wc, bc) = (x.to_complex(), w.to_complex(), bias.to_complex());
            for i in 0..2 {
                for j in 0..3 {
                    let mut acc = bc[j];
                    for p in 0..3 {
                        acc += xc[i * 3 + p] * wc[p * 3 + j];
                    }
                    let got = y[i * 3 + j];
                    assert!(close(got.re, acc.re, 1e-10) && close(got.im, acc.im, 1e-10));
                }
            }
        }
    }

    #[test]
    fn conv1d_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_c(vec![5, 1], &mut rng);
        let tape = Tape::new();
        let y = complex_conv1d(
            ComplexVar::constant(&tape, &x),
            tape.constant(&RealTensor::new(vec![1, 1, 1], vec![1.0]).unwrap()),
            tape.constant(&RealTensor::new(vec![1, 1, 1], vec![0.0]).unwrap()),
            1,
        )
        .unwrap();
        assert_eq!(y.to_tensor(), x);
    }

    #[test]
    fn conv1d_imaginary_unit_kernel_rotates_real_input() {
        let a = RealTensor::new(vec![4, 1], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let x = ComplexTensor::new(a.clone(), RealTensor::zeros(vec![4, 1])).unwrap();
        let tape = Tape::new();
        let y = complex_conv1d(
            ComplexVar::constant(&tape, &x),
            tape.constant(&RealTensor::new(vec![1, 1, 1], vec![0.0]).unwrap()),
            tape.constant(&RealTensor::new(vec![1, 1, 1], vec![1.0]).unwrap()),
            1,
        )
        .unwrap();
        assert!(y.re.value().iter().all(|&v| v == 0.0));
        assert_eq!(*y.im.value(), a.data().to_vec());
    }

    #[test]
    fn conv1d_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, c_in, c_out, width, stride) = (9, 2, 3, 3, 2);
        let x = rand_c(vec![t, c_in], &mut rng);
        let k = rand_c(vec![width, c_in, c_out], &mut rng);
        let tape = Tape::new();
        let y = complex_conv1d(ComplexVar::constant(&tape, &x), tape.constant(k.re()), tape.constant(k.im()), stride).unwrap();
        let t_out = (t - width) / stride + 1;
        assert_eq!(y.shape(), vec![t_out, c_out]);
        let (xc, kc, yc) = (x.to_complex(), k.to_complex(), y.to_tensor().to_complex());
        for to in 0..t_out {
            for o in 0..c_out {
                let mut acc = Complex64::new(0.0, 0.0);
                for w in 0..width {
                    for c in 0..c_in {
                        acc += xc[(to * stride + w) * c_in + c] * kc[(w * c_in + c) * c_out + o];
                    }
                }
                let got = yc[to * c_out + o];
                assert!(close(got.re, acc.re, 1e-10) && close(got.im, acc.im, 1e-10));
            }
        }
    }

    #[test]
    fn conv1d_rejects_short_input() {
        let tape = Tape::new();
        let x = ComplexVar::constant(&tape, &ComplexTensor::zeros(vec![2, 1]));
        let k = tape.constant(&RealTensor::zeros(vec![3, 1, 1]));
        assert!(matches!(complex_conv1d(x, k, k, 1), Err(Error::Dimension(_))));
    }

    fn identity_ff(store: &mut ParamStore, d: usize) -> ComplexFeedForward {
        let eye = || RealTensor::identity(d);
        let zb = || Some((RealTensor::zeros(vec![d]), RealTensor::zeros(vec![d])));
        ComplexFeedForward {
            hidden: ComplexLinear::from_tensors(store, "h", eye(), eye(), zb()).unwrap(),
            output: ComplexLinear::from_tensors(store, "o", eye(), eye(), zb()).unwrap(),
            dropout: 0.0,
        }
    }

    #[test]
    fn feed_forward_identity_passes_nonnegative_input() {
        let mut store = ParamStore::new();
        let ff = identity_ff(&mut store, 3);
        let x = ComplexTensor::new(
            RealTensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 0.5, 0.25]).unwrap(),
            RealTensor::new(vec![2, 3], vec![1.0, 0.0, 4.0, 2.0, 2.0, 0.0]).unwrap(),
        )
        .unwrap();
        let tape = Tape::new();
        let sess = Session::eval(&tape, &store);
        let y = ff.forward(&sess, ComplexVar::constant(&tape, &x)).unwrap();
        assert_eq!(y.to_tensor(), x);
    }

    #[test]
    fn feed_forward_keeps_parts_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ff = ComplexFeedForward::new(&mut store, "ff", 4, 6, 0.0, &mut rng).unwrap();
        let x = rand_c(vec![3, 4], &mut rng);
        let zero_im = ComplexTensor::new(x.re().clone(), RealTensor::zeros(vec![3, 4])).unwrap();
        let tape = Tape::new();
        let sess = Session::eval(&tape, &store);
        let y0 = ff.forward(&sess, ComplexVar::constant(&tape, &zero_im)).unwrap();
        assert!(y0.im.value().iter().all(|&v| v == 0.0), "zero biases keep im at zero");
        let y1 = ff.forward(&sess, ComplexVar::constant(&tape, &x)).unwrap();
        assert_eq!(*y0.re.value(), *y1.re.value(), "im input never reaches re output");
    }

    #[test]
    fn feed_forward_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let ff = ComplexFeedForward::new(&mut store, "ff", 3, 5, 0.0, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let x = rand_c(vec![4, 3], &mut rng);
        let reports = grad_check_params(
            &mut store,
            |sess| {
                let y = ff.forward(sess, ComplexVar::constant(sess.tape, &x))?;
                y.re.mul(y.re)?.sum().add(y.im.sum())
            },
            1e-6,
            1e-4,
            64,
        )
        .unwrap();
        for (name, r) in reports {
            assert!(r.passed, "{name}: {r:?}");
        }
    }

    #[test]
    fn layer_norm_per_part_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_c(vec![5, 8], &mut rng);
        let mut store = ParamStore::new();
        let ln = ComplexLayerNorm::new(&mut store, "ln", 8);
        let tape = Tape::new();
        let sess = Session::eval(&tape, &store);
        let y = ln.forward(&sess, ComplexVar::constant(&tape, &x)).unwrap().to_tensor();
        for part in [y.re(), y.im()] {
            for r in 0..5 {
                let row = part.row(r);
                let mean = row.iter().sum::<f64>() / 8.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
                assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6, "{mean} {var}");
            }
        }
    }

    #[test]
    fn layer_norm_constant_and_zero_parts() {
        let x = ComplexTensor::new(RealTensor::filled(vec![2, 4], 3.0), RealTensor::zeros(vec![2, 4])).unwrap();
        let mut store = ParamStore::new();
        let ln = ComplexLayerNorm::new(&mut store, "ln", 4);
        let tape = Tape::new();
        let sess = Session::eval(&tape, &store);
        let y = ln.forward(&sess, ComplexVar::constant(&tape, &x)).unwrap();
        assert!(y.re.value().iter().chain(y.im.value().iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn positional_encoding_table() {
        let pe = positional_encoding(64, 32).unwrap();
        for c in 0..32 {
            assert_eq!(pe.at(&[0, c]), if c % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        for i in 0..64 {
            for j in i + 1..64 {
                assert!(pe.row(i) != pe.row(j), "rows {i} and {j} collide");
            }
        }
        assert!(matches!(positional_encoding(4, 5), Err(Error::Config(_))));
    }
}
