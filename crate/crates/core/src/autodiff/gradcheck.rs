use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::RealTensor;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Outcome of comparing tape gradients to central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h stencil crossed a nondifferentiable point
    /// (a ReLU sign flip, a change of argmin/argmax). They are not compared.
    pub excluded: Vec<usize>,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

struct Probe {
    value: f64,
    branches: Vec<u32>,
}

fn probe<F>(f: &F, x: &RealTensor) -> Result<Probe>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::with_branch_log();
    let v = tape.variable(x);
    let y = f(&tape, v)?;
    if y.numel() != 1 {
        return Err(Error::Contract(format!("gradient check needs a scalar function, got shape {:?}", y.shape())));
    }
    Ok(Probe { value: y.item(), branches: tape.branch_log() })
}

#[derive(Default)]
struct Tally {
    max_rel: f64,
    worst: Option<usize>,
    checked: usize,
    excluded: Vec<usize>,
    nan: bool,
}

impl Tally {
    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let rel = relative_error(analytic, numeric);
        if rel.is_nan() {
            self.nan = true;
            self.worst = Some(index);
        } else if rel > self.max_rel {
            self.max_rel = rel;
            self.worst = Some(index);
        }
    }

    fn report(self, tol: f64) -> GradCheckReport {
        let max_rel_error = if self.nan { f64::NAN } else { self.max_rel };
        GradCheckReport {
            passed: !self.nan && self.max_rel <= tol,
            max_rel_error,
            worst_index: self.worst,
            checked: self.checked,
            excluded: self.excluded,
            tol,
        }
    }
}

/// Checks the gradient of scalar `f` at `x` against
/// `(f(x + h·e_k) − f(x − h·e_k)) / 2h` for every coordinate `k`.
pub fn grad_check<F>(f: F, x: &RealTensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, &coords, h, tol)
}

/// Like [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_coords<F>(f: F, x: &RealTensor, coords: &[usize], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::with_branch_log();
    let v = tape.variable(x);
    let y = f(&tape, v)?;
    let base_branches = tape.branch_log();
    let grads = tape.backward(y)?;
    let analytic = grads.of(v);

    let mut tally = Tally::default();
    let mut shifted = x.clone();
    for &k in coords {
        let orig = x.data()[k];
        shifted.data_mut()[k] = orig + h;
        let plus = probe(&f, &shifted)?;
        shifted.data_mut()[k] = orig - h;
        let minus = probe(&f, &shifted)?;
        shifted.data_mut()[k] = orig;
        if plus.branches != base_branches || minus.branches != base_branches {
            tally.excluded.push(k);
            continue;
        }
        tally.record(k, analytic[k], (plus.value - minus.value) / (2.0 * h));
    }
    Ok(tally.report(tol))
}

/// Per-parameter finite-difference check of a scalar function of a
/// [`ParamStore`]. At most `max_coords` evenly spaced coordinates of each
/// parameter are probed. The function is always evaluated in eval mode.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    f: F,
    h: f64,
    tol: f64,
    max_coords: usize,
) -> Result<Vec<(String, GradCheckReport)>>
where
    F: for<'t> Fn(&Session<'t>) -> Result<Var<'t>>,
{
    let eval = |store: &ParamStore| -> Result<Probe> {
        let tape = Tape::with_branch_log();
        let sess = Session::eval(&tape, store);
        let y = f(&sess)?;
        Ok(Probe { value: y.item(), branches: tape.branch_log() })
    };

    store.zero_grads();
    let base_branches = {
        let tape = Tape::with_branch_log();
        let sess = Session::eval(&tape, store);
        let y = f(&sess)?;
        let grads = tape.backward(y)?;
        let b = tape.branch_log();
        store.accumulate(&tape, &grads);
        b
    };

    let ids: Vec<ParamId> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).numel();
        let analytic = store.get(id).grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let mut tally = Tally::default();
        for k in (0..n).step_by(stride) {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            if plus.branches != base_branches || minus.branches != base_branches {
                tally.excluded.push(k);
                continue;
            }
            tally.record(k, analytic[k], (plus.value - minus.value) / (2.0 * h));
        }
        out.push((store.name(id).to_string(), tally.report(tol)));
    }
    store.zero_grads();
    Ok(out)
}
