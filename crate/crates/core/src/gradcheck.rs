//! Central-difference gradient checking.
//!
//! The forward closure maps the full input list to a scalar; the backward
//! closure returns one gradient tensor per input. Each element is perturbed
//! by `±step` and the analytic value `a` is compared with the numeric value
//! `n` through `|a - n| / max(|a|, |n|, 1e-8)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_relative_error: f64,
    pub per_input_errors: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} max_rel_err={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.op_name,
            self.max_relative_error,
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `backward` against central differences of `forward` for every
/// element of every named input.
pub fn finite_diff_check<F, B>(
    op_name: &str,
    inputs: &[(String, Tensor)],
    mut forward: F,
    mut backward: B,
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
    B: FnMut(&[Tensor]) -> Result<Vec<Tensor>>,
{
    if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("finite_diff_check", "step must be positive"));
    }
    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let base = forward(&values)?;
    if !base.is_finite() {
        return Err(Error::NonFinite { what: format!("{op_name} forward") });
    }
    let analytic = backward(&values)?;
    if analytic.len() != values.len() {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("backward returned {} gradients for {} inputs", analytic.len(), values.len()),
        ));
    }

    let mut per_input_errors = Vec::with_capacity(values.len());
    for (k, (name, _)) in inputs.iter().enumerate() {
        analytic[k].expect_same_shape("finite_diff_check", &values[k])?;
        let mut worst: f64 = 0.0;
        for i in 0..values[k].len() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + step;
            let plus = forward(&values)?;
            values[k].data_mut()[i] = orig - step;
            let minus = forward(&values)?;
            values[k].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { what: format!("{op_name} forward at {name}[{i}]") });
            }
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
        per_input_errors.push((name.clone(), worst));
    }

    let max_relative_error = per_input_errors.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_relative_error,
        per_input_errors,
        tolerance,
        passed: max_relative_error < tolerance,
    })
}

/// Named inputs from `(name, tensor)` pairs.
pub fn named<'a>(items: impl IntoIterator<Item = (&'a str, Tensor)>) -> Vec<(String, Tensor)> {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}
