use crate::error::Result;

use super::{no_grad, Tensor};

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-4;

/// Denominator floor of the relative error: components smaller than this
/// are compared absolutely (scaled by the floor).
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index, analytic, numeric)` of the
    /// worst component.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares analytic gradients of `loss_fn` w.r.t. `params` against central
/// finite differences. `loss_fn` must be deterministic and return a scalar.
///
/// Relative error per component is `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn check_gradients<F>(params: &[Tensor], loss_fn: F, step: f64) -> Result<GradCheck>
where
    F: Fn() -> Result<Tensor>,
{
    for p in params {
        p.zero_grad();
    }
    loss_fn()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.len() {
            let original = p.with_values(|v| v[i]);
            p.update_leaf(|v, _| v[i] = original + step);
            let plus = no_grad(&loss_fn)?.item();
            p.update_leaf(|v, _| v[i] = original - step);
            let minus = no_grad(&loss_fn)?.item();
            p.update_leaf(|v, _| v[i] = original);

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][i];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            // NaN compares false, so it always lands here
            if !(rel <= report.max_rel_error) || report.worst.is_none() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((pi, i, a, numeric));
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(report)
}
