//! Central-difference gradient verification.

use super::params::ParamSet;

/// Floor on the denominator of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Max over coordinates of `|analytic − numeric| / max(|numeric|, 1e-8)`,
/// with `numeric = (f(θ+ε) − f(θ−ε)) / 2ε`. `theta` is restored on return.
pub fn max_relative_error<F>(mut f: F, theta: &mut [f64], analytic: &[f64], epsilon: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "analytic gradient length");
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + epsilon;
        let plus = f(theta);
        theta[i] = orig - epsilon;
        let minus = f(theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = libm::fabs(analytic[i] - numeric) / libm::fmax(libm::fabs(numeric), REL_FLOOR);
        worst = libm::fmax(worst, rel);
    }
    worst
}

/// Compare `params.grads` against central differences of `loss_fn` over every
/// scalar parameter (both heads and τ).
pub fn finite_diff_check<F>(mut loss_fn: F, params: &ParamSet, epsilon: f64) -> f64
where
    F: FnMut(&ParamSet) -> f64,
{
    let analytic = params.grads.to_flat();
    let mut theta = params.to_flat();
    let mut work = params.without_grads();
    max_relative_error(
        |flat| {
            work.load_flat(flat).expect("flat length matches");
            loss_fn(&work)
        },
        &mut theta,
        &analytic,
        epsilon,
    )
}
