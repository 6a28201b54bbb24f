use super::{NumError, Real};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub fd_step: f64,
}

/// Central-difference gradient `[f(p + h e_k) - f(p - h e_k)] / 2h`.
pub fn finite_diff_grad<T, F>(mut f: F, point: &[T], step: T) -> Result<Vec<T>, NumError>
where
    T: Real,
    F: FnMut(&[T]) -> T,
{
    if !(step > T::zero()) {
        return Err(NumError::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = point.to_vec();
    let two_h = step + step;
    let mut grad = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let orig = probe[k];
        probe[k] = orig + step;
        let up = f(&probe);
        probe[k] = orig - step;
        let down = f(&probe);
        probe[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumError::NonFinite { coordinate: k });
        }
        grad.push((up - down) / two_h);
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true derivative is ~0 from reporting
/// huge ratios out of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Scale floor used by [`check_gradient`].
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Compares `analytic` against the central-difference gradient of `f` at `point`.
pub fn check_gradient<T, F>(f: F, point: &[T], analytic: &[T], step: T) -> Result<GradCheckReport, NumError>
where
    T: Real,
    F: FnMut(&[T]) -> T,
{
    if analytic.len() != point.len() {
        return Err(NumError::Shape { expected: format!("{} gradient entries", point.len()), got: analytic.len().to_string() });
    }
    let numeric = finite_diff_grad(f, point, step)?;
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_coordinate: 0, fd_step: step.as_f64() };
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a.as_f64(), n.as_f64(), REL_ERR_FLOOR);
        if e > report.max_rel_err || e.is_nan() {
            report.max_rel_err = e;
            report.worst_coordinate = k;
        }
    }
    Ok(report)
}
