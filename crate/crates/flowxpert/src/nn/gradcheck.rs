//! Finite-difference gradient verification.
//!
//! Backpropagation implementations are checked by comparing analytic
//! gradients against central differences of the loss, evaluated in f64.
//! The step size trades truncation error (O(h^2)) against cancellation;
//! 1e-5 sits comfortably inside the sweet spot for f64 and unit-scale
//! parameters.

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error floor so near-zero gradients do not divide by zero.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Central-difference gradient of `f` at `theta`:
/// `(f(theta + h e_k) - f(theta - h e_k)) / 2h` per coordinate.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = f(&probe);
        probe[k] = orig - h;
        let down = f(&probe);
        probe[k] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Absolute disagreement below this is indistinguishable from central
/// difference round-off (roughly `eps * |f| / h`) and counts as exact.
/// Without the gate, a parameter whose true gradient is structurally
/// zero (e.g. a bias feeding straight into batch-norm) would score its
/// round-off noise as a large relative error.
pub const NOISE_ATOL: f64 = 1e-9;

/// Worst relative error between analytic and numeric gradients:
/// `max_k |a_k - n_k| / max(floor, |a_k| + |n_k|)`, with disagreements
/// below [`NOISE_ATOL`] treated as zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= NOISE_ATOL {
                0.0
            } else {
                diff / REL_ERR_FLOOR.max(a.abs() + n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Convenience composition: numeric gradient of `f` at `theta`, compared
/// against `analytic`. Returns the worst relative error.
pub fn check_gradient(
    f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    let numeric = finite_diff_gradient(f, theta, h);
    max_rel_err(analytic, &numeric)
}
