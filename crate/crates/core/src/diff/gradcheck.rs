//! Central finite-difference gradient verification (64-bit only).

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Below this magnitude gradients are compared in absolute rather than
/// relative terms, since finite differences carry roundoff of that order.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// One evaluation of the function under test.
pub struct Evaluation {
    pub loss: f64,
    /// Activation-pattern signature (see [`crate::diff::Tape::kink_signature`]).
    pub kink: u64,
    /// Analytic gradients, one vector per parameter set; requested only at
    /// the base point.
    pub grads: Option<Vec<Vec<Tensor<f64>>>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or max-pool kink.
    pub skipped: usize,
    /// `set/name[index]` of the worst coordinate.
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients against `(f(p+h) - f(p-h)) / 2h` for every
/// coordinate (or an evenly strided subset of at most `max_per_tensor`
/// coordinates per tensor).
pub fn grad_check<F>(
    params: &mut [ParamSet<f64>],
    h: f64,
    max_per_tensor: Option<usize>,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[ParamSet<f64>], bool) -> Result<Evaluation>,
{
    let base = f(params, true)?;
    let analytic = base
        .grads
        .ok_or_else(|| Error::Invariant("grad_check: base evaluation returned no gradients".into()))?;
    if analytic.len() != params.len() {
        return Err(Error::ParamMismatch("grad_check: gradient set count".into()));
    }
    let mut report = GradCheckReport::default();
    for s in 0..params.len() {
        for ti in 0..params[s].len() {
            let n = params[s].tensors()[ti].len();
            let stride = match max_per_tensor {
                Some(m) if m > 0 && n > m => n.div_ceil(m),
                _ => 1,
            };
            for idx in (0..n).step_by(stride) {
                let orig = params[s].tensors()[ti].data()[idx];
                params[s].tensors_mut()[ti].data_mut()[idx] = orig + h;
                let plus = f(params, false)?;
                params[s].tensors_mut()[ti].data_mut()[idx] = orig - h;
                let minus = f(params, false)?;
                params[s].tensors_mut()[ti].data_mut()[idx] = orig;
                if plus.kink != base.kink || minus.kink != base.kink {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (plus.loss - minus.loss) / (2.0 * h);
                let a = analytic[s][ti].data()[idx];
                let err = relative_error(a, numeric);
                report.checked += 1;
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some(format!(
                        "{}/{}[{idx}]",
                        params[s].group().as_str(),
                        params[s].names()[ti]
                    ));
                }
            }
        }
    }
    Ok(report)
}
