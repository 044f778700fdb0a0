use super::tensor::Tensor;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Coordinates whose analytic gradient is below this are compared absolutely.
pub const ABS_COMPARE_BELOW: f64 = 1e-8;

/// Central-difference check `(f(θ+h) − f(θ−h)) / 2h` of every coordinate.
///
/// `loss_fn` returns the loss and its reverse-mode gradient (one tensor per
/// parameter); it must be deterministic.
pub fn finite_difference_check<F>(mut loss_fn: F, params: &[Tensor], h: f64) -> GradCheck
where
    F: FnMut(&[Tensor]) -> (f64, Vec<Tensor>),
{
    assert!(h > 0.0, "step must be positive");
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let (up, _) = loss_fn(&work);
            work[p].data_mut()[i] = orig - h;
            let (down, _) = loss_fn(&work);
            work[p].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p].data()[i];
            let err = if a.abs() < ABS_COMPARE_BELOW {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (p, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}
