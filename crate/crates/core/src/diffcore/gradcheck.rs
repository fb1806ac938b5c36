//! Central finite-difference verification of analytic gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The function was evaluated at a non-differentiable point (e.g. a tie
    /// inside a max), so no gradient comparison is meaningful.
    Excluded,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct InputCheck {
    pub index: usize,
    pub max_relative_error: f64,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|i| i.status != CheckStatus::Fail)
    }

    pub fn excluded(&self) -> bool {
        self.inputs.iter().any(|i| i.status == CheckStatus::Excluded)
    }
}

/// Below this magnitude the error is measured in absolute terms.
pub const ABS_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, bool)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::with_checks(true);
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&tape, &vars)?;
    tape.check()?;
    let v = y.value();
    if v.len() != 1 {
        return Err(Error::dim("gradient_check", format!("function returned shape {:?}, expected a scalar", v.shape())));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function value {v} is not finite")));
    }
    Ok((v, tape.hit_nondifferentiable_point()))
}

/// Compares the tape gradient of scalar `f` with central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` for every element of every input.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let tape = Tape::with_checks(true);
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&tape, &vars)?;
    if y.value().len() != 1 {
        return Err(Error::dim("gradient_check", format!("function returned shape {:?}, expected a scalar", y.shape())));
    }
    let kink = tape.hit_nondifferentiable_point();
    let grads = tape.backward(y)?;

    let mut report = GradCheckReport { max_relative_error: 0.0, inputs: Vec::with_capacity(inputs.len()) };
    for (idx, input) in inputs.iter().enumerate() {
        if kink {
            report.inputs.push(InputCheck { index: idx, max_relative_error: f64::NAN, status: CheckStatus::Excluded });
            continue;
        }
        let analytic = grads.get(vars[idx]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut worst: f64 = 0.0;
        let mut excluded = false;
        let mut probe = inputs.to_vec();
        for e in 0..input.len() {
            let orig = input.data()[e];
            probe[idx].data_mut()[e] = orig + eps;
            let (plus, k1) = evaluate(&f, &probe)?;
            probe[idx].data_mut()[e] = orig - eps;
            let (minus, k2) = evaluate(&f, &probe)?;
            probe[idx].data_mut()[e] = orig;
            excluded |= k1 || k2;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
        let status = if excluded {
            CheckStatus::Excluded
        } else if worst <= tol {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        if !excluded {
            report.max_relative_error = report.max_relative_error.max(worst);
        }
        report.inputs.push(InputCheck { index: idx, max_relative_error: worst, status });
    }
    Ok(report)
}
