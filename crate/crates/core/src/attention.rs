//! Min-max attention, real multi-head attention, and the eight-term complex
//! attention.
//!
//! For complex queries `Q = Qa + iQb`, keys `K = Ka + iKb` and values
//! `V = Va + iVb`, the product `Q Kᵀ V` expands into eight real products.
//! Complex attention evaluates each of them as a real multi-head attention
//! `MH(query part, key part, value part)` and recombines them with the signs
//! in [`EXPANSION_TERMS`]:
//!
//! ```text
//! re = MH(a,a,a) − MH(a,b,b) − MH(b,a,b) − MH(b,b,a)
//! im = MH(a,a,b) + MH(a,b,a) + MH(b,a,a) − MH(b,b,b)
//! ```

use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::complex::{complex_linear, ComplexLinear, ComplexTensor, ComplexVar};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::{ParamStore, Session};

/// Added to `max − min` so constant rows normalize to zero.
pub const MIN_MAX_EPS: f64 = 1e-9;

/// Which keys each query may attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    t_q: usize,
    t_k: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(t_q: usize, t_k: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != t_q * t_k {
            return Err(Error::dim(format!("mask table of {} entries for {t_q}x{t_k}", allowed.len())));
        }
        Ok(AttentionMask { t_q, t_k, allowed })
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Contract("causal mask needs at least one step".into()));
        }
        Ok(AttentionMask { t_q: t, t_k: t, allowed: (0..t * t).map(|i| i % t <= i / t).collect() })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.t_q, self.t_k)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.t_k + j]
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// How raw query–key scores become attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKernel {
    /// `min_max_norm(QKᵀ/√d_k)`.
    MinMax,
    /// `softmax(QKᵀ/√d_k)`; used by the concatenated baseline.
    Softmax,
    /// Raw `QKᵀ`, unscaled and unnormalized (masked entries zeroed). Only
    /// meaningful for checking the algebra of the expansion.
    Linear,
}

/// Per query row over unmasked keys: `(x − min)/(max − min + eps)`.
/// Masked entries are exactly 0; a row whose visible entries are all equal
/// becomes all zeros.
pub fn min_max_norm<'t>(scores: Var<'t>, mask: Option<&AttentionMask>, eps: f64) -> Result<Var<'t>> {
    scores.min_max_norm(mask.map(AttentionMask::as_slice), eps)
}

fn check_mask(mask: Option<&AttentionMask>, t_q: usize, t_k: usize) -> Result<()> {
    match mask {
        Some(m) if m.dims() != (t_q, t_k) => {
            Err(Error::dim(format!("mask is {:?} but scores are {t_q}x{t_k}", m.dims())))
        }
        _ => Ok(()),
    }
}

/// Attention weights `[t_q, t_k]` for queries `[t_q, d_k]` and keys `[t_k, d_k]`.
pub fn attention_weights<'t>(q: Var<'t>, k: Var<'t>, mask: Option<&AttentionMask>, kernel: ScoreKernel) -> Result<Var<'t>> {
    let (sq, sk) = (q.shape(), k.shape());
    if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] {
        return Err(Error::shapes("queries and keys must share d_k", &sq, &sk));
    }
    check_mask(mask, sq[0], sk[0])?;
    let scores = q.matmul(k.transpose()?)?;
    let inv_sqrt_dk = 1.0 / (sq[1] as f64).sqrt();
    match kernel {
        ScoreKernel::MinMax => min_max_norm(scores.scale(inv_sqrt_dk), mask, MIN_MAX_EPS),
        ScoreKernel::Softmax => scores.scale(inv_sqrt_dk).softmax(mask.map(AttentionMask::as_slice)),
        ScoreKernel::Linear => match mask {
            Some(m) => scores.mul_const(m.as_slice().iter().map(|&a| f64::from(u8::from(a))).collect()),
            None => Ok(scores),
        },
    }
}

fn apply_weights<'t>(w: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    if w.shape()[1] != v.shape()[0] {
        return Err(Error::shapes("keys and values must share T_k", &w.shape(), &v.shape()));
    }
    w.matmul(v)
}

/// `min_max_norm(QKᵀ/√d_k)·V`. The weights lie in `[0, 1]` and need not sum
/// to one.
pub fn scaled_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, mask: Option<&AttentionMask>) -> Result<Var<'t>> {
    attend(q, k, v, mask, ScoreKernel::MinMax)
}

pub fn attend<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, mask: Option<&AttentionMask>, kernel: ScoreKernel) -> Result<Var<'t>> {
    apply_weights(attention_weights(q, k, mask, kernel)?, v)
}

fn head_width(d_model: usize, n_heads: usize) -> Result<usize> {
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::Config(format!("d_model {d_model} is not divisible by n_heads {n_heads}")));
    }
    Ok(d_model / n_heads)
}

/// Splits already-projected `q, k, v` into `n_heads` column blocks, attends
/// within each block and concatenates the results.
pub fn split_heads<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    n_heads: usize,
    mask: Option<&AttentionMask>,
    kernel: ScoreKernel,
) -> Result<Var<'t>> {
    let d_model = *q.shape().last().ok_or_else(|| Error::dim("scalar queries"))?;
    let d_k = head_width(d_model, n_heads)?;
    if n_heads == 1 {
        return attend(q, k, v, mask, kernel);
    }
    let heads = (0..n_heads)
        .map(|h| {
            let s = h * d_k;
            attend(q.slice_last(s, d_k)?, k.slice_last(s, d_k)?, v.slice_last(s, d_k)?, mask, kernel)
        })
        .collect::<Result<Vec<_>>>()?;
    Var::concat_last(&heads)
}

/// Functional multi-head attention:
/// `Concat(head_1..head_n)·W_O` with `head_i` attending over the i-th block
/// of `x_q·W_Q`, `x_k·W_K`, `x_v·W_V`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head<'t>(
    x_q: Var<'t>,
    x_k: Var<'t>,
    x_v: Var<'t>,
    w_q: Var<'t>,
    w_k: Var<'t>,
    w_v: Var<'t>,
    w_o: Var<'t>,
    n_heads: usize,
    mask: Option<&AttentionMask>,
    kernel: ScoreKernel,
) -> Result<Var<'t>> {
    let cat = split_heads(x_q.matmul(w_q)?, x_k.matmul(w_k)?, x_v.matmul(w_v)?, n_heads, mask, kernel)?;
    cat.matmul(w_o)
}

/// Real multi-head attention layer with its own projections.
#[derive(Debug, Clone)]
pub struct MultiHead {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub kernel: ScoreKernel,
}

impl MultiHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        kernel: ScoreKernel,
        rng: &mut R,
    ) -> Result<Self> {
        head_width(d_model, n_heads)?;
        Ok(MultiHead {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, false, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, false, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, false, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, true, rng)?,
            n_heads,
            kernel,
        })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, x_q: Var<'t>, x_kv: Var<'t>, mask: Option<&AttentionMask>) -> Result<Var<'t>> {
        let q = self.q.forward(sess, x_q)?;
        let k = self.k.forward(sess, x_kv)?;
        let v = self.v.forward(sess, x_kv)?;
        self.o.forward(sess, split_heads(q, k, v, self.n_heads, mask, self.kernel)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Re,
    Im,
}

/// One product of the expansion: which parts feed query, key and value,
/// which output part it lands in, and with what sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionTerm {
    pub query: Part,
    pub key: Part,
    pub value: Part,
    pub output: Part,
    pub sign: f64,
}

const fn term(query: Part, key: Part, value: Part, output: Part, sign: f64) -> ExpansionTerm {
    ExpansionTerm { query, key, value, output, sign }
}

/// The eight real products of `(Qa + iQb)(Ka + iKb)ᵀ(Va + iVb)`.
pub const EXPANSION_TERMS: [ExpansionTerm; 8] = {
    use Part::{Im as B, Re as A};
    [
        term(A, A, A, A, 1.0),
        term(A, B, B, A, -1.0),
        term(B, A, B, A, -1.0),
        term(B, B, A, A, -1.0),
        term(A, A, B, B, 1.0),
        term(A, B, A, B, 1.0),
        term(B, A, A, B, 1.0),
        term(B, B, B, B, -1.0),
    ]
};

fn pick<'t>(x: &ComplexVar<'t>, p: Part) -> Var<'t> {
    match p {
        Part::Re => x.re,
        Part::Im => x.im,
    }
}

fn accumulate<'t>(acc: &mut Option<Var<'t>>, x: Var<'t>, sign: f64) -> Result<()> {
    *acc = Some(match (acc.take(), sign >= 0.0) {
        (None, true) => x,
        (None, false) => x.neg(),
        (Some(a), true) => a.add(x)?,
        (Some(a), false) => a.sub(x)?,
    });
    Ok(())
}

/// Combines the expansion terms over already-projected complex `q`, `k`,
/// `v`. Each distinct (query part, key part) weight matrix is computed once
/// per head and reused by the terms that share it.
pub fn expand_terms<'t>(
    q: ComplexVar<'t>,
    k: ComplexVar<'t>,
    v: ComplexVar<'t>,
    n_heads: usize,
    mask: Option<&AttentionMask>,
    kernel: ScoreKernel,
    terms: &[ExpansionTerm],
) -> Result<ComplexVar<'t>> {
    let d_model = *q.shape().last().ok_or_else(|| Error::dim("scalar queries"))?;
    let d_k = head_width(d_model, n_heads)?;
    let mut re_heads = Vec::with_capacity(n_heads);
    let mut im_heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let block = |x: Var<'t>| if n_heads == 1 { Ok(x) } else { x.slice_last(h * d_k, d_k) };
        let (qa, qb) = (block(q.re)?, block(q.im)?);
        let (ka, kb) = (block(k.re)?, block(k.im)?);
        let (va, vb) = (block(v.re)?, block(v.im)?);
        let qh = ComplexVar { re: qa, im: qb };
        let kh = ComplexVar { re: ka, im: kb };
        let vh = ComplexVar { re: va, im: vb };
        let mut weights: [[Option<Var<'t>>; 2]; 2] = [[None; 2]; 2];
        let (mut re, mut im) = (None, None);
        for t in terms {
            let (qi, ki) = (t.query as usize, t.key as usize);
            let w = match weights[qi][ki] {
                Some(w) => w,
                None => {
                    let w = attention_weights(pick(&qh, t.query), pick(&kh, t.key), mask, kernel)?;
                    weights[qi][ki] = Some(w);
                    w
                }
            };
            let out = apply_weights(w, pick(&vh, t.value))?;
            match t.output {
                Part::Re => accumulate(&mut re, out, t.sign)?,
                Part::Im => accumulate(&mut im, out, t.sign)?,
            }
        }
        let zero = || qa.scale(0.0).matmul(va.transpose()?)?.matmul(va);
        re_heads.push(match re {
            Some(r) => r,
            None => zero()?,
        });
        im_heads.push(match im {
            Some(i) => i,
            None => zero()?,
        });
    }
    let join = |heads: Vec<Var<'t>>| if heads.len() == 1 { Ok(heads[0]) } else { Var::concat_last(&heads) };
    Ok(ComplexVar { re: join(re_heads)?, im: join(im_heads)? })
}

/// Whether the eight products share one complex projection per role or
/// each own independent real projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSharing {
    Shared,
    PerTerm,
}

#[derive(Debug, Clone)]
enum Projections {
    Shared { q: ComplexLinear, k: ComplexLinear, v: ComplexLinear },
    PerTerm(Vec<[Linear; 3]>),
}

/// Complex attention layer: projections, the eight-term expansion, and one
/// complex output projection `W_O`.
#[derive(Debug, Clone)]
pub struct ComplexAttention {
    projections: Projections,
    pub out_proj: ComplexLinear,
    pub n_heads: usize,
    pub d_model: usize,
    pub kernel: ScoreKernel,
    pub dropout: f64,
}

impl ComplexAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        sharing: ProjectionSharing,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        head_width(d_model, n_heads)?;
        let projections = match sharing {
            ProjectionSharing::Shared => Projections::Shared {
                q: ComplexLinear::new(store, &format!("{name}.q"), d_model, d_model, false, rng)?,
                k: ComplexLinear::new(store, &format!("{name}.k"), d_model, d_model, false, rng)?,
                v: ComplexLinear::new(store, &format!("{name}.v"), d_model, d_model, false, rng)?,
            },
            ProjectionSharing::PerTerm => {
                let mut per_term = Vec::with_capacity(EXPANSION_TERMS.len());
                for t in 0..EXPANSION_TERMS.len() {
                    let mut mk = |role: &str| Linear::new(store, &format!("{name}.term{t}.{role}"), d_model, d_model, false, rng);
                    per_term.push([mk("q")?, mk("k")?, mk("v")?]);
                }
                Projections::PerTerm(per_term)
            }
        };
        let out_proj = ComplexLinear::new(store, &format!("{name}.o"), d_model, d_model, true, rng)?;
        Ok(ComplexAttention { projections, out_proj, n_heads, d_model, kernel: ScoreKernel::MinMax, dropout })
    }

    /// Builds a shared-projection layer from explicit weights.
    pub fn from_parts(q: ComplexLinear, k: ComplexLinear, v: ComplexLinear, out_proj: ComplexLinear, n_heads: usize) -> Result<Self> {
        let d_model = q.d_in;
        head_width(d_model, n_heads)?;
        Ok(ComplexAttention {
            projections: Projections::Shared { q, k, v },
            out_proj,
            n_heads,
            d_model,
            kernel: ScoreKernel::MinMax,
            dropout: 0.0,
        })
    }

    pub fn sharing(&self) -> ProjectionSharing {
        match self.projections {
            Projections::Shared { .. } => ProjectionSharing::Shared,
            Projections::PerTerm(_) => ProjectionSharing::PerTerm,
        }
    }

    /// Self-attention when `x_q` and `x_kv` are the same stream; cross
    /// attention otherwise (queries from `x_q`, keys and values from `x_kv`).
    pub fn forward<'t>(
        &self,
        sess: &Session<'t>,
        x_q: ComplexVar<'t>,
        x_kv: ComplexVar<'t>,
        mask: Option<&AttentionMask>,
    ) -> Result<ComplexVar<'t>> {
        for x in [&x_q, &x_kv] {
            if x.shape().len() != 2 || x.shape()[1] != self.d_model {
                return Err(Error::dim(format!("complex attention expects [T, {}], got {:?}", self.d_model, x.shape())));
            }
        }
        let mixed = match &self.projections {
            Projections::Shared { q, k, v } => {
                let (q, k, v) = (q.forward(sess, x_q)?, k.forward(sess, x_kv)?, v.forward(sess, x_kv)?);
                expand_terms(q, k, v, self.n_heads, mask, self.kernel, &EXPANSION_TERMS)?
            }
            Projections::PerTerm(per_term) => {
                let (mut re, mut im) = (None, None);
                for (t, [wq, wk, wv]) in EXPANSION_TERMS.iter().zip(per_term) {
                    let q = wq.forward(sess, pick(&x_q, t.query))?;
                    let k = wk.forward(sess, pick(&x_kv, t.key))?;
                    let v = wv.forward(sess, pick(&x_kv, t.value))?;
                    let out = split_heads(q, k, v, self.n_heads, mask, self.kernel)?;
                    match t.output {
                        Part::Re => accumulate(&mut re, out, t.sign)?,
                        Part::Im => accumulate(&mut im, out, t.sign)?,
                    }
                }
                ComplexVar { re: re.expect("expansion has real terms"), im: im.expect("expansion has imaginary terms") }
            }
        };
        let out = self.out_proj.forward(sess, mixed)?;
        Ok(ComplexVar { re: sess.dropout(out.re, self.dropout)?, im: sess.dropout(out.im, self.dropout)? })
    }
}

/// Direct complex evaluation of `(XW_Q)(XW_K)ᵀ(XW_V)` (plain transpose,
/// no conjugation), for small instances.
pub fn oracle_linear_complex_attention(
    x: &ComplexTensor,
    w_q: &ComplexTensor,
    w_k: &ComplexTensor,
    w_v: &ComplexTensor,
) -> Result<ComplexTensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("oracle expects [T, d], got {s:?}")));
    }
    let (t, d) = (s[0], s[1]);
    for w in [w_q, w_k, w_v] {
        if w.shape().len() != 2 || w.shape()[0] != d {
            return Err(Error::shapes("oracle weight", s, w.shape()));
        }
    }
    let matmul = |a: &[Complex64], b: &[Complex64], m: usize, k: usize, n: usize| {
        let mut out = vec![Complex64::new(0.0, 0.0); m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        out
    };
    let xc = x.to_complex();
    let (dq, dk, dv) = (w_q.shape()[1], w_k.shape()[1], w_v.shape()[1]);
    if dq != dk {
        return Err(Error::shapes("oracle query/key widths", w_q.shape(), w_k.shape()));
    }
    let q = matmul(&xc, &w_q.to_complex(), t, d, dq);
    let k = matmul(&xc, &w_k.to_complex(), t, d, dk);
    let v = matmul(&xc, &w_v.to_complex(), t, d, dv);
    let mut kt = vec![Complex64::new(0.0, 0.0); t * dk];
    for i in 0..t {
        for j in 0..dk {
            kt[j * t + i] = k[i * dk + j];
        }
    }
    let scores = matmul(&q, &kt, t, dq, t);
    ComplexTensor::from_complex(vec![t, dv], &matmul(&scores, &v, t, t, dv))
}

/// The real eight-term decomposition of the same product: single head, no
/// normalization, no output projection. With the correct sign table this
/// equals [`oracle_linear_complex_attention`].
pub fn linear_complex_attention(
    x: &ComplexTensor,
    w_q: &ComplexTensor,
    w_k: &ComplexTensor,
    w_v: &ComplexTensor,
    terms: &[ExpansionTerm],
) -> Result<ComplexTensor> {
    let tape = Tape::new();
    let xv = ComplexVar::constant(&tape, x);
    let proj = |w: &ComplexTensor| complex_linear(xv, tape.constant(w.re()), tape.constant(w.im()), None);
    let (q, k, v) = (proj(w_q)?, proj(w_k)?, proj(w_v)?);
    Ok(expand_terms(q, k, v, 1, None, ScoreKernel::Linear, terms)?.to_tensor())
}
