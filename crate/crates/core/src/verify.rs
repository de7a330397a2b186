//! Finite-difference gradient suite and oracle-equivalence suite, shared by
//! the `gradcheck`/`oracle` commands and the acceptance tests.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    attend, linear_complex_attention, min_max_norm, oracle_linear_complex_attention, AttentionMask, ComplexAttention, ExpansionTerm,
    MultiHead, ProjectionSharing, ScoreKernel, EXPANSION_TERMS, MIN_MAX_EPS,
};
use crate::autodiff::{grad_check_params, GradCheckReport, Tape, Var};
use crate::complex::{ComplexConv1d, ComplexFeedForward, ComplexLinear, ComplexTensor, ComplexVar};
use crate::error::{Error, Result};
use crate::model::{DecoderLayer, EncoderLayer, ModelConfig};
use crate::params::{ParamStore, Session};
use crate::signal::{dft, idft};
use crate::tensor::RealTensor;
use crate::train::{bce_multilabel_loss, ce_loss};

/// Finite-difference step used by the gradient suite.
pub const FD_STEP: f64 = 1e-6;
/// Relative tolerance of the eight-term oracle check.
pub const EXPANSION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Instances, coordinates or rows examined.
    pub cases: usize,
    /// Coordinates skipped because the perturbation crossed a min/max or
    /// ReLU branch.
    pub excluded: usize,
    pub max_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, cases: usize, max_error: f64, tol: f64) -> Self {
        CheckResult { name: name.into(), cases, excluded: 0, max_error, tol, passed: max_error <= tol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Tab-separated table, one row per check.
    pub fn to_text(&self) -> String {
        let mut s = String::from("check\tcases\texcluded\tmax_error\ttol\tstatus\n");
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{}\t{}\t{}\t{:e}\t{:e}\t{status}", c.name, c.cases, c.excluded, c.max_error, c.tol);
        }
        s
    }

    /// `Ok(self)` when every check passed, otherwise a verification error
    /// naming the failures.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let names: Vec<String> = self.failures().iter().map(|c| format!("{} ({:e} > {:e})", c.name, c.max_error, c.tol)).collect();
        Err(Error::Verification(names.join(", ")))
    }
}

fn rand_real(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> RealTensor {
    RealTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rand_complex(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> ComplexTensor {
    let re = rand_real(shape.clone(), rng);
    ComplexTensor::new(re, rand_real(shape, rng)).expect("matching parts")
}

fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

fn add_input(store: &mut ParamStore, name: &str, x: &ComplexTensor) -> (crate::ParamId, crate::ParamId) {
    (store.add(format!("{name}.re"), x.re().clone()), store.add(format!("{name}.im"), x.im().clone()))
}

/// `⟨y, p⟩` summed over both parts; a scalar with a dense gradient.
fn probe<'t>(sess: &Session<'t>, y: ComplexVar<'t>, p: &ComplexTensor) -> Result<Var<'t>> {
    let p = ComplexVar::constant(sess.tape, p);
    y.re.mul(p.re)?.sum().add(y.im.mul(p.im)?.sum())
}

fn summarize(name: &str, reports: Vec<(String, GradCheckReport)>, tol: f64) -> CheckResult {
    let mut out = CheckResult::new(name, 0, 0.0, tol);
    for (param, r) in reports {
        out.cases += r.checked;
        out.excluded += r.excluded.len();
        if r.max_rel_error.is_nan() || r.max_rel_error > out.max_error {
            out.max_error = r.max_rel_error;
        }
        if !r.passed {
            out.passed = false;
            out.name = format!("{name}:{param}");
        }
    }
    out
}

const COORDS: usize = 12;

/// Central finite-difference checks of every layer at tiny dimensions,
/// with all parameters and inputs perturbed away from initialization.
pub fn gradient_suite(tol: f64, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let (t, d) = (4, 4);
    let cfg = ModelConfig {
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        d_model: d,
        n_heads: 2,
        d_ff: 6,
        dropout_relu: 0.0,
        dropout_residual: 0.0,
        ..ModelConfig::default()
    };

    // Complex linear.
    {
        let mut store = ParamStore::new();
        let layer = ComplexLinear::new(&mut store, "lin", d, 3, true, &mut rng)?;
        let (xr, xi) = add_input(&mut store, "input", &rand_complex(vec![t, d], &mut rng));
        jitter(&mut store, &mut rng);
        let p = rand_complex(vec![t, 3], &mut rng);
        let r = grad_check_params(&mut store, |s| probe(s, layer.forward(s, ComplexVar::new(s.param(xr), s.param(xi))?)?, &p), FD_STEP, tol, COORDS)?;
        checks.push(summarize("complex_linear", r, tol));
    }

    // Complex conv1d.
    {
        let mut store = ParamStore::new();
        let layer = ComplexConv1d::new(&mut store, "conv", 2, 3, 2, 1, &mut rng)?;
        let (xr, xi) = add_input(&mut store, "input", &rand_complex(vec![5, 3], &mut rng));
        let p = rand_complex(vec![4, 2], &mut rng);
        let r = grad_check_params(&mut store, |s| probe(s, layer.forward(s, ComplexVar::new(s.param(xr), s.param(xi))?)?, &p), FD_STEP, tol, COORDS)?;
        checks.push(summarize("complex_conv1d", r, tol));
    }

    // Feed-forward.
    {
        let mut store = ParamStore::new();
        let layer = ComplexFeedForward::new(&mut store, "ff", d, 6, 0.0, &mut rng)?;
        let (xr, xi) = add_input(&mut store, "input", &rand_complex(vec![t, d], &mut rng));
        jitter(&mut store, &mut rng);
        let p = rand_complex(vec![t, d], &mut rng);
        let r = grad_check_params(&mut store, |s| probe(s, layer.forward(s, ComplexVar::new(s.param(xr), s.param(xi))?)?, &p), FD_STEP, tol, COORDS)?;
        checks.push(summarize("feed_forward", r, tol));
    }

    // Min-max attention on raw Q, K, V.
    {
        let mut store = ParamStore::new();
        let q = store.add("q", rand_real(vec![t, 3], &mut rng));
        let k = store.add("k", rand_real(vec![t, 3], &mut rng));
        let v = store.add("v", rand_real(vec![t, 3], &mut rng));
        let p = rand_real(vec![t, 3], &mut rng);
        // One hidden key per row, three visible.
        let mask = AttentionMask::new(t, t, (0..t * t).map(|i| i / t != (i % t + 1) % t).collect())?;
        let r = grad_check_params(
            &mut store,
            |s| attend(s.param(q), s.param(k), s.param(v), Some(&mask), ScoreKernel::MinMax)?.mul(s.tape.constant(&p)).map(|y| y.sum()),
            FD_STEP,
            tol,
            COORDS,
        )?;
        checks.push(summarize("min_max_attention", r, tol));
    }

    // Real multi-head attention.
    {
        let mut store = ParamStore::new();
        let layer = MultiHead::new(&mut store, "mh", d, 2, ScoreKernel::MinMax, &mut rng)?;
        let x = store.add("input", rand_real(vec![t, d], &mut rng));
        jitter(&mut store, &mut rng);
        let p = rand_real(vec![t, d], &mut rng);
        let mask = AttentionMask::causal(t)?;
        let r = grad_check_params(
            &mut store,
            |s| layer.forward(s, s.param(x), s.param(x), Some(&mask))?.mul(s.tape.constant(&p)).map(|y| y.sum()),
            FD_STEP,
            tol,
            COORDS,
        )?;
        checks.push(summarize("multi_head", r, tol));
    }

    // Complex attention.
    {
        let mut store = ParamStore::new();
        let layer = ComplexAttention::new(&mut store, "att", d, 2, ProjectionSharing::Shared, 0.0, &mut rng)?;
        let (xr, xi) = add_input(&mut store, "input", &rand_complex(vec![t, d], &mut rng));
        jitter(&mut store, &mut rng);
        let p = rand_complex(vec![t, d], &mut rng);
        let mask = AttentionMask::causal(t)?;
        let r = grad_check_params(
            &mut store,
            |s| {
                let x = ComplexVar::new(s.param(xr), s.param(xi))?;
                probe(s, layer.forward(s, x, x, Some(&mask))?, &p)
            },
            FD_STEP,
            tol,
            COORDS,
        )?;
        checks.push(summarize("complex_attention", r, tol));
    }

    // Encoder layer.
    {
        let mut store = ParamStore::new();
        let layer = EncoderLayer::new(&mut store, "enc", &cfg, &mut rng)?;
        let (xr, xi) = add_input(&mut store, "input", &rand_complex(vec![t, d], &mut rng));
        jitter(&mut store, &mut rng);
        let p = rand_complex(vec![t, d], &mut rng);
        let r = grad_check_params(&mut store, |s| probe(s, layer.forward(s, ComplexVar::new(s.param(xr), s.param(xi))?)?, &p), FD_STEP, tol, COORDS)?;
        checks.push(summarize("encoder_layer", r, tol));
    }

    // Decoder layer, with cross-attention to a perturbable encoder state.
    {
        let mut store = ParamStore::new();
        let layer = DecoderLayer::new(&mut store, "dec", &cfg, &mut rng)?;
        let (yr, yi) = add_input(&mut store, "input", &rand_complex(vec![t, d], &mut rng));
        let (er, ei) = add_input(&mut store, "memory", &rand_complex(vec![t + 1, d], &mut rng));
        jitter(&mut store, &mut rng);
        let p = rand_complex(vec![t, d], &mut rng);
        let r = grad_check_params(
            &mut store,
            |s| {
                let y = ComplexVar::new(s.param(yr), s.param(yi))?;
                let enc = ComplexVar::new(s.param(er), s.param(ei))?;
                probe(s, layer.forward(s, y, Some(enc))?, &p)
            },
            FD_STEP,
            tol,
            COORDS,
        )?;
        checks.push(summarize("decoder_layer", r, tol));
    }

    // Losses.
    {
        let mut store = ParamStore::new();
        let z = store.add("logits", RealTensor::from_fn(vec![3, 4], |_| rng.random_range(-3.0..3.0)));
        let y: Vec<f64> = (0..12).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let r = grad_check_params(&mut store, |s| bce_multilabel_loss(s.param(z), &y), FD_STEP, tol, 12)?;
        checks.push(summarize("bce_loss", r, tol));

        let mut store = ParamStore::new();
        let z = store.add("logits", RealTensor::from_fn(vec![5], |_| rng.random_range(-3.0..3.0)));
        let r = grad_check_params(&mut store, |s| ce_loss(s.param(z), 2), FD_STEP, tol, 5)?;
        checks.push(summarize("ce_loss", r, tol));
    }

    Ok(SuiteReport { checks, seconds: start.elapsed().as_secs_f64() })
}

/// Eight-term decomposition against the direct complex product on `cases`
/// random instances with `T, d ≤ 8`; reports the worst relative error.
pub fn expansion_check(cases: usize, seed: u64, terms: &[ExpansionTerm]) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (t, d) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let x = rand_complex(vec![t, d], &mut rng);
        let w: Vec<ComplexTensor> = (0..3).map(|_| rand_complex(vec![d, d], &mut rng)).collect();
        let got = linear_complex_attention(&x, &w[0], &w[1], &w[2], terms)?;
        let want = oracle_linear_complex_attention(&x, &w[0], &w[1], &w[2])?;
        let scale = want.re().data().iter().chain(want.im().data()).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let err = got.re().max_abs_diff(want.re()).max(got.im().max_abs_diff(want.im())) / scale;
        worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
    }
    let mut r = CheckResult::new("expansion_vs_complex_product", cases, worst, EXPANSION_TOL);
    r.passed = !worst.is_nan() && worst <= EXPANSION_TOL;
    Ok(r)
}

/// Property violations of min-max normalization over random rows, a third
/// of them constant and a third partially masked.
pub fn min_max_check(rows: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let tape = Tape::new();
    for r in 0..rows {
        let n = rng.random_range(1..=12);
        let scores: Vec<f64> = if r % 3 == 0 { vec![rng.random_range(-5.0..5.0); n] } else { (0..n).map(|_| rng.random_range(-5.0..5.0)).collect() };
        let mut allowed = vec![true; n];
        if r % 3 == 1 {
            allowed.iter_mut().for_each(|a| *a = rng.random_bool(0.6));
            allowed[rng.random_range(0..n)] = true;
        }
        let mask = AttentionMask::new(1, n, allowed.clone())?;
        let out = min_max_norm(tape.constant(&RealTensor::new(vec![1, n], scores.clone())?), Some(&mask), MIN_MAX_EPS)?;
        let out = out.value();
        let visible: Vec<usize> = (0..n).filter(|&j| allowed[j]).collect();
        let lo = visible.iter().map(|&j| scores[j]).fold(f64::INFINITY, f64::min);
        let hi = visible.iter().map(|&j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
        let degenerate = hi == lo;
        let ok = (0..n).all(|j| {
            let v = out[j];
            (0.0..=1.0).contains(&v)
                && (allowed[j] || v == 0.0)
                && (!degenerate || v == 0.0)
                && (!allowed[j] || scores[j] != lo || v == 0.0)
        });
        violations += usize::from(!ok);
    }
    Ok(CheckResult::new("min_max_properties", rows, violations as f64, 0.0))
}

/// Impulse and DC closed forms, plus roundtrip and Parseval on random
/// length-`n` signals.
pub fn dft_check(n: usize, trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    if n == 0 {
        return Err(Error::Contract("DFT check needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut impulse = vec![0.0; n];
    impulse[0] = 1.0;
    let impulse_err = dft(&impulse).iter().map(|v| (v - Complex64::new(1.0, 0.0)).norm()).fold(0.0, f64::max);
    let dc = dft(&vec![1.0; n]);
    let dc_err = (dc[0] - Complex64::new(n as f64, 0.0)).norm();
    let leak = dc[1..].iter().map(|v| v.norm()).fold(0.0, f64::max) / n as f64;

    let (mut roundtrip, mut parseval) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = dft(&x);
        let back = idft(&spec);
        let norm = x.iter().map(|v| v * v).sum::<f64>();
        let rt = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm.sqrt();
        let energy = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        roundtrip = roundtrip.max(rt);
        parseval = parseval.max((energy - norm).abs() / norm);
    }
    Ok(vec![
        CheckResult::new("dft_impulse_exact", n, impulse_err, 0.0),
        CheckResult::new("dft_dc_bin_exact", 1, dc_err, 0.0),
        CheckResult::new("dft_dc_leakage", n - 1, leak, 1e-12),
        CheckResult::new("dft_roundtrip", trials, roundtrip, 1e-6),
        CheckResult::new("dft_parseval", trials, parseval, 1e-6),
    ])
}

/// Average precision by enumeration: for each positive, count the items
/// ranked at or above it under (score desc, index asc), without sorting.
/// Terms are summed in rank order so the result is bit-comparable with
/// [`crate::train::average_precision_score`].
pub fn average_precision_brute_force(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let above = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let mut terms: Vec<(usize, usize)> =
        pos.iter().map(|&i| ((0..n).filter(|&j| above(i, j)).count(), pos.iter().filter(|&&j| above(i, j)).count())).collect();
    terms.sort_unstable();
    Some(terms.iter().map(|&(rank, hits)| hits as f64 / rank as f64).sum::<f64>() / pos.len() as f64)
}

/// Mismatches between the ranking metric and the enumeration oracle on
/// random inputs of length `≤ 12` with frequent ties.
pub fn average_precision_check(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let n = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[rng.random_range(0..n)] = true;
        let got = crate::train::average_precision_score(&scores, &labels)?;
        mismatches += usize::from(Some(got) != average_precision_brute_force(&scores, &labels));
    }
    let hand = crate::train::average_precision_score(&[0.9, 0.8, 0.1], &[true, false, true])?;
    mismatches += usize::from((hand - 5.0 / 6.0).abs() > 1e-15);
    Ok(CheckResult::new("average_precision_vs_enumeration", cases + 1, mismatches as f64, 0.0))
}

/// Stable BCE against the direct per-element formula.
pub fn bce_check(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (t, l) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let z = RealTensor::from_fn(vec![t, l], |_| rng.random_range(-8.0..8.0));
        let y: Vec<f64> = (0..t * l).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let tape = Tape::new();
        let got = bce_multilabel_loss(tape.constant(&z), &y)?.item();
        let want = z.data().iter().zip(&y).map(|(&z, &y)| -(y * sigmoid(z).ln() + (1.0 - y) * (1.0 - sigmoid(z)).ln())).sum::<f64>()
            / (t * l) as f64;
        worst = worst.max((got - want).abs());
    }
    Ok(CheckResult::new("bce_vs_elementwise", cases, worst, 1e-9))
}

/// Every oracle-equivalence check, with the attention expansion evaluated
/// under `terms`.
pub fn oracle_suite_with_terms(cases: usize, seed: u64, terms: &[ExpansionTerm]) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = vec![expansion_check(cases, seed, terms)?, min_max_check(1000, seed ^ 1)?];
    checks.extend(dft_check(64, 8, seed ^ 2)?);
    checks.push(average_precision_check(1000, seed ^ 3)?);
    checks.push(bce_check(cases, seed ^ 4)?);
    Ok(SuiteReport { checks, seconds: start.elapsed().as_secs_f64() })
}

pub fn oracle_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    oracle_suite_with_terms(cases, seed, &EXPANSION_TERMS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes() {
        let r = gradient_suite(1e-4, 0).unwrap();
        assert_eq!(r.checks.len(), 10);
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.checks.iter().all(|c| c.cases > 0));
    }

    #[test]
    fn oracle_suite_passes() {
        let r = oracle_suite(100, 0).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.into_result().is_ok());
    }

    #[test]
    fn flipped_sign_fails_the_oracle_suite() {
        let mut terms = EXPANSION_TERMS;
        terms[3].sign = -terms[3].sign;
        let err = oracle_suite_with_terms(20, 0, &terms).unwrap().into_result().unwrap_err();
        assert!(matches!(&err, Error::Verification(m) if m.contains("expansion")), "{err}");
    }

    #[test]
    fn brute_force_matches_hand_case() {
        assert_eq!(average_precision_brute_force(&[0.9, 0.8, 0.1], &[true, false, true]), Some((1.0 + 2.0 / 3.0) / 2.0));
        assert_eq!(average_precision_brute_force(&[0.1], &[false]), None);
    }
}
