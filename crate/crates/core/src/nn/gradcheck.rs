//! Central-finite-difference gradient verification helpers. Test-support
//! code, exposed publicly so integration and acceptance suites can share it.

/// Central finite differences of `loss` with respect to every parameter
/// reachable through `params_of`, in slice-visitation order.
pub fn central_difference<T>(
    subject: &mut T,
    mut params_of: impl FnMut(&mut T) -> Vec<&mut [f64]>,
    mut loss_of: impl FnMut(&T) -> f64,
    h: f64,
) -> Vec<f64> {
    let total: usize = params_of(subject).iter().map(|s| s.len()).sum();
    let mut grad = Vec::with_capacity(total);
    for k in 0..total {
        let nudge = |subject: &mut T, params_of: &mut dyn FnMut(&mut T) -> Vec<&mut [f64]>, delta: f64| {
            let mut slices = params_of(subject);
            let mut idx = k;
            for s in slices.iter_mut() {
                if idx < s.len() {
                    s[idx] += delta;
                    return;
                }
                idx -= s.len();
            }
            unreachable!("index {k} beyond parameter count");
        };
        nudge(subject, &mut params_of, h);
        let up = loss_of(subject);
        nudge(subject, &mut params_of, -2.0 * h);
        let down = loss_of(subject);
        nudge(subject, &mut params_of, h);
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Worst relative disagreement between two gradient vectors. Denominator
/// floored at 1e-6 so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Flattens gradient slices in visitation order.
pub fn flatten(slices: &[&[f64]]) -> Vec<f64> {
    slices.iter().flat_map(|s| s.iter().copied()).collect()
}
