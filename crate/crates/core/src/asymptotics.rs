//! First-order variance and bias of the pooled-data estimators.
//!
//! Each function returns the bandwidth-free factor so that for a bandwidth
//! `h` the variance term is `factor / h` and the bias term is `factor * h²`.
//! `v` is `∫K² / f(x)` and `b` is `∫u²K(u)du` for the local linear smoother.

/// `h · A(x)²` for the homogeneous-pool estimator:
/// `(νN)⁻¹ (1-p)^{2-ν} {1 - (1-p)^ν} v`.
pub fn homogeneous_variance_factor(p: f64, nu: f64, n: f64, v: f64) -> f64 {
    let s = 1.0 - p;
    s.powf(2.0 - nu) * (1.0 - s.powf(nu)) * v / (nu * n)
}

/// `B(x) / h²` for the homogeneous-pool estimator:
/// `½ {p'' - (ν-1)(1-p)⁻¹ p'²} b`.
pub fn homogeneous_bias_factor(p: f64, dp: f64, d2p: f64, nu: f64, b: f64) -> f64 {
    0.5 * (d2p - (nu - 1.0) * dp * dp / (1.0 - p)) * b
}

/// `h · A₁(x)²` for the random-pool estimator:
/// `N⁻¹ (1-p) q^{1-ν} {1 - (1-p) q^{ν-1}} v`.
pub fn random_pool_variance_factor(p: f64, q: f64, nu: f64, n: f64, v: f64) -> f64 {
    let s = 1.0 - p;
    s * q.powf(1.0 - nu) * (1.0 - s * q.powf(nu - 1.0)) * v / n
}

/// `B₁(x) / h²` for the random-pool estimator: `½ p'' b`.
pub fn random_pool_bias_factor(d2p: f64, b: f64) -> f64 {
    0.5 * d2p * b
}

/// `λ_N(x)` from `λ_N⁵ = (1 - p)^{-ν}`.
pub fn overpooling_lambda(p: f64, nu: f64) -> f64 {
    (1.0 - p).powf(-nu / 5.0)
}

/// Bandwidth minimizing `V/h + C h⁴`, the integrated first-order error.
pub fn amise_optimal_bandwidth(variance_integral: f64, bias_sq_integral: f64) -> Option<f64> {
    if variance_integral > 0.0 && bias_sq_integral > 0.0 {
        Some((variance_integral / (4.0 * bias_sq_integral)).powf(0.2))
    } else {
        None
    }
}
