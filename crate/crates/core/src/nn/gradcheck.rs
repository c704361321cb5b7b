//! Central finite-difference check of tape gradients.

use std::fmt;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const DEFAULT_GRAD_FLOOR: f64 = 1e-6;

/// Worst entry of one named parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub eps: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn num_entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }

    pub fn summary(&self) -> String {
        let failed = self.failures().count();
        if failed == 0 {
            format!("all {} parameters pass (tol {:e})", self.params.len(), self.tol)
        } else {
            format!(
                "{failed} of {} parameters fail (tol {:e}, worst {:.3e})",
                self.params.len(),
                self.tol,
                self.max_rel_error()
            )
        }
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{}",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.max_rel_error,
                p.entries
            )?;
        }
        write!(f, "{}", self.summary())
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward gradients with `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every parameter.
///
/// `forward` must build a fresh tape and return its scalar loss. The stored
/// gradients of `params` are left untouched.
pub fn grad_check<F>(forward: F, params: &mut ParamStore, eps: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    grad_check_with_floor(forward, params, eps, tol, DEFAULT_GRAD_FLOOR)
}

pub fn grad_check_with_floor<F>(
    forward: F,
    params: &mut ParamStore,
    eps: f64,
    tol: f64,
    floor: f64,
) -> Result<GradReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let (tape, loss) = forward(p)?;
        Ok(tape.value(loss).item())
    };

    let (tape, loss) = forward(params)?;
    let base = tape.value(loss).item();
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Numeric(format!(
            "non-deterministic forward: {base} then {again}"
        )));
    }

    let mut analytic = params.clone();
    analytic.zero_grads();
    tape.backward_into(loss, &mut analytic)?;

    let ids: Vec<_> = params.ids().collect();
    let mut checks = Vec::with_capacity(ids.len());
    for id in ids {
        let n = params.value(id).numel();
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            entries: n,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for k in 0..n {
            let original = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = original + eps;
            let plus = eval(params);
            params.value_mut(id).data_mut()[k] = original - eps;
            let minus = eval(params);
            params.value_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.grad(id).data()[k];
            let err = relative_error(a, numeric, floor);
            if err.is_nan() || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_entry = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_error <= tol;
        checks.push(check);
    }
    Ok(GradReport {
        eps,
        tol,
        params: checks,
    })
}
