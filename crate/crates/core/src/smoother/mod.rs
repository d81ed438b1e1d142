//! Local polynomial smoothing with effective-weight extraction.
//!
//! The univariate smoother fits, at each evaluation point `x`, a degree-`ℓ`
//! polynomial in `(u - x)` by kernel-weighted least squares and reports the
//! intercept. Every such fit is a linear smoother: the fitted value is a
//! fixed linear combination of the responses whose weights depend only on
//! the design points. [`LocalFit`] exposes those weights.

mod bandwidth;
mod multivariate;

pub use bandwidth::{
    select_bandwidth, select_bandwidth_with, BandwidthSearch, CurveEstimate, PilotCurve,
    PluginContext, ResponseScale,
};
pub use multivariate::{select_bandwidth_nd, DesignNd, LocalLinearNd};

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Kernel;
use crate::linalg::{solve_in_place, SmallMatrix, MAX_DIM};

/// Pivots below this fraction of the largest moment entry mark a failed fit.
pub const SINGULAR_PIVOT: f64 = 1e-12;
/// Pivots below this fraction are accepted but reported as near-singular.
pub const NEAR_SINGULAR_PIVOT: f64 = 1e-8;
/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = MAX_DIM - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("design must contain at least one point")]
    EmptyDesign,
    #[error("design has {covariates} covariates but {responses} responses")]
    LengthMismatch { covariates: usize, responses: usize },
    #[error("non-finite design value at index {0}")]
    NonFinite(usize),
    #[error("polynomial degree must be between 1 and {MAX_DEGREE}, got {0}")]
    InvalidDegree(usize),
    #[error("bandwidth must be finite and positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("invalid bandwidth search: {0}")]
    InvalidSearch(String),
    #[error("bandwidth rule is not fixed; select a bandwidth first")]
    UnresolvedBandwidth,
    #[error("local fit failed at x = {x}: {reason}")]
    FitFailed { x: f64, reason: FitFailure },
    #[error(
        "no candidate bandwidth produced a usable fit; the smallest usable bandwidth is about {smallest_usable:.6}"
    )]
    NoUsableBandwidth { smallest_usable: f64 },
    #[error("design has {points} points but bandwidth selection needs at least {needed}")]
    TooFewPoints { points: usize, needed: usize },
    #[error("plug-in bandwidth unsupported: {0}")]
    PluginUnsupported(String),
}

/// Why a single local fit could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitFailure {
    /// Fewer distinct design points with positive kernel weight than
    /// polynomial coefficients.
    InsufficientData { distinct: usize, needed: usize },
    /// The local moment matrix is numerically singular.
    Singular { relative_pivot: f64 },
    /// Leave-one-out refit is undefined (the point carries all its own weight).
    DegenerateLeverage,
}

impl fmt::Display for FitFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitFailure::InsufficientData { distinct, needed } => write!(
                f,
                "{distinct} distinct design points carry kernel weight, {needed} needed (bandwidth too small here)"
            ),
            FitFailure::Singular { relative_pivot } => write!(
                f,
                "moment matrix is numerically singular (relative pivot {relative_pivot:.3e})"
            ),
            FitFailure::DegenerateLeverage => write!(f, "leave-one-out fit undefined"),
        }
    }
}

/// How the bandwidth is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Fixed(f64),
    CrossValidation(BandwidthSearch),
    Plugin(BandwidthSearch),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::CrossValidation(BandwidthSearch::default())
    }
}

impl BandwidthRule {
    pub fn validate(&self) -> Result<(), SmoothError> {
        match self {
            BandwidthRule::Fixed(h) => {
                if h.is_finite() && *h > 0.0 {
                    Ok(())
                } else {
                    Err(SmoothError::InvalidBandwidth(*h))
                }
            }
            BandwidthRule::CrossValidation(s) | BandwidthRule::Plugin(s) => s.validate(),
        }
    }
}

/// Kernel, degree and bandwidth rule: everything that defines the smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    pub kernel: Kernel,
    pub degree: usize,
    pub bandwidth: BandwidthRule,
    /// Retry failed fits with the bandwidth doubled, at most three times.
    #[serde(default)]
    pub widen_on_failure: bool,
}

impl Default for SmootherSpec {
    fn default() -> Self {
        SmootherSpec {
            kernel: Kernel::Gaussian,
            degree: 1,
            bandwidth: BandwidthRule::default(),
            widen_on_failure: false,
        }
    }
}

impl SmootherSpec {
    pub fn local_linear(kernel: Kernel, bandwidth: BandwidthRule) -> Self {
        SmootherSpec {
            kernel,
            degree: 1,
            bandwidth,
            widen_on_failure: false,
        }
    }

    pub fn fixed(kernel: Kernel, degree: usize, h: f64) -> Self {
        SmootherSpec {
            kernel,
            degree,
            bandwidth: BandwidthRule::Fixed(h),
            widen_on_failure: false,
        }
    }

    pub fn validate(&self) -> Result<(), SmoothError> {
        if self.degree == 0 || self.degree > MAX_DEGREE {
            return Err(SmoothError::InvalidDegree(self.degree));
        }
        self.bandwidth.validate()
    }

    /// The smoother with the bandwidth pinned to `h`.
    pub fn with_bandwidth(&self, h: f64) -> Result<LocalSmoother, SmoothError> {
        LocalSmoother::new(self.kernel, self.degree, h)
    }

    /// The smoother for a fixed-bandwidth spec.
    pub fn resolved(&self) -> Result<LocalSmoother, SmoothError> {
        match self.bandwidth {
            BandwidthRule::Fixed(h) => self.with_bandwidth(h),
            _ => Err(SmoothError::UnresolvedBandwidth),
        }
    }
}

/// Univariate regression design `(u_j, z_j)`, stored sorted by `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    u: Vec<f64>,
    z: Vec<f64>,
    /// `order[k]` is the caller's index of the k-th smallest point.
    order: Vec<usize>,
}

impl Design {
    pub fn new(u: Vec<f64>, z: Vec<f64>) -> Result<Self, SmoothError> {
        if u.len() != z.len() {
            return Err(SmoothError::LengthMismatch {
                covariates: u.len(),
                responses: z.len(),
            });
        }
        if u.is_empty() {
            return Err(SmoothError::EmptyDesign);
        }
        if let Some(i) = u
            .iter()
            .zip(&z)
            .position(|(a, b)| !a.is_finite() || !b.is_finite())
        {
            return Err(SmoothError::NonFinite(i));
        }
        let mut order: Vec<usize> = (0..u.len()).collect();
        order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
        let su = order.iter().map(|&i| u[i]).collect();
        let sz = order.iter().map(|&i| z[i]).collect();
        Ok(Design {
            u: su,
            z: sz,
            order,
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, SmoothError> {
        let (u, z) = pairs.iter().copied().unzip();
        Design::new(u, z)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Covariates in ascending order.
    pub fn sorted_u(&self) -> &[f64] {
        &self.u
    }

    /// Responses aligned with [`Design::sorted_u`].
    pub fn sorted_z(&self) -> &[f64] {
        &self.z
    }

    /// Caller index of each sorted position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Responses in the caller's original order.
    pub fn responses(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.z.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = self.z[k];
        }
        out
    }

    /// Same covariates, responses replaced (given in the caller's order).
    pub fn with_responses(&self, z: &[f64]) -> Result<Self, SmoothError> {
        if z.len() != self.len() {
            return Err(SmoothError::LengthMismatch {
                covariates: self.len(),
                responses: z.len(),
            });
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(SmoothError::NonFinite(i));
        }
        Ok(Design {
            u: self.u.clone(),
            z: self.order.iter().map(|&i| z[i]).collect(),
            order: self.order.clone(),
        })
    }

    /// Covariates in the caller's original order.
    pub fn covariates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.u.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = self.u[k];
        }
        out
    }

    pub fn range(&self) -> (f64, f64) {
        (self.u[0], self.u[self.u.len() - 1])
    }

    pub fn response_variance(&self) -> f64 {
        let n = self.z.len() as f64;
        let mean = self.z.iter().sum::<f64>() / n;
        self.z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// Whether the moment system was well conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Ok,
    NearSingular,
}

/// A local polynomial fit at one point, with its effective weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub x: f64,
    pub value: f64,
    /// Weight of each design point (caller's order); they sum to one and
    /// `value = Σ weights[j] * z[j]`.
    pub effective_weights: Vec<f64>,
    /// Design points with positive kernel weight.
    pub local_count: usize,
    pub condition: Conditioning,
}

/// Kernel moments of a design around one evaluation point.
struct LocalMoments {
    /// `s[k] = Σ K_j t_j^k`, `t_j = (u_j - x)/h`, for `k ≤ 2ℓ`.
    s: [f64; 2 * MAX_DIM - 1],
    /// `t[k] = Σ K_j t_j^k z_j`, for `k ≤ ℓ`.
    t: [f64; MAX_DIM],
    nonzero: usize,
    distinct: usize,
}

/// Solution of the local system for the unit right-hand side.
struct LocalSolve {
    /// `a = M⁻¹ e₀`: the effective weight of point j is `K_j Σ_k a_k t_j^k`.
    a: [f64; MAX_DIM],
    moments: LocalMoments,
    condition: Conditioning,
}

/// A univariate local polynomial smoother with a resolved bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSmoother {
    pub kernel: Kernel,
    pub degree: usize,
    pub h: f64,
}

impl LocalSmoother {
    pub fn new(kernel: Kernel, degree: usize, h: f64) -> Result<Self, SmoothError> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(SmoothError::InvalidDegree(degree));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(SmoothError::InvalidBandwidth(h));
        }
        Ok(LocalSmoother { kernel, degree, h })
    }

    fn window(&self, design: &Design, x: f64) -> Range<usize> {
        match self.kernel.support_radius() {
            None => 0..design.len(),
            Some(r) => {
                let lo = x - r * self.h;
                let hi = x + r * self.h;
                let a = design.u.partition_point(|&v| v < lo);
                let b = design.u.partition_point(|&v| v <= hi);
                a..b
            }
        }
    }

    fn moments(&self, design: &Design, x: f64) -> LocalMoments {
        let l = self.degree;
        let mut m = LocalMoments {
            s: [0.0; 2 * MAX_DIM - 1],
            t: [0.0; MAX_DIM],
            nonzero: 0,
            distinct: 0,
        };
        let inv_h = 1.0 / self.h;
        let mut last = f64::NAN;
        let range = self.window(design, x);
        let us = &design.u[range.clone()];
        let zs = &design.z[range];
        if l == 1 {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&u, &z) in us.iter().zip(zs) {
                let t = (u - x) * inv_h;
                let k = self.kernel.eval(t);
                if k > 0.0 {
                    m.nonzero += 1;
                    if u != last {
                        m.distinct += 1;
                        last = u;
                    }
                    let kt = k * t;
                    s0 += k;
                    s1 += kt;
                    s2 += kt * t;
                    t0 += k * z;
                    t1 += kt * z;
                }
            }
            m.s[0] = s0;
            m.s[1] = s1;
            m.s[2] = s2;
            m.t[0] = t0;
            m.t[1] = t1;
            return m;
        }
        for (&u, &z) in us.iter().zip(zs) {
            let t = (u - x) * inv_h;
            let k = self.kernel.eval(t);
            if k > 0.0 {
                m.nonzero += 1;
                if u != last {
                    m.distinct += 1;
                    last = u;
                }
                let mut p = k;
                for j in 0..=2 * l {
                    m.s[j] += p;
                    if j <= l {
                        m.t[j] += p * z;
                    }
                    p *= t;
                }
            }
        }
        m
    }

    fn system(&self, m: &LocalMoments) -> SmallMatrix {
        let n = self.degree + 1;
        let mut mat = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in mat.iter_mut().enumerate().take(n) {
            for (j, v) in row.iter_mut().enumerate().take(n) {
                *v = m.s[i + j];
            }
        }
        mat
    }

    fn check_support(&self, m: &LocalMoments) -> Result<(), FitFailure> {
        let needed = self.degree + 1;
        if m.distinct < needed {
            return Err(FitFailure::InsufficientData {
                distinct: m.distinct,
                needed,
            });
        }
        Ok(())
    }

    fn solve_unit(&self, design: &Design, x: f64) -> Result<LocalSolve, FitFailure> {
        let moments = self.moments(design, x);
        self.check_support(&moments)?;
        let mut mat = self.system(&moments);
        let mut a = [0.0; MAX_DIM];
        a[0] = 1.0;
        let info = solve_in_place(&mut mat, &mut a, self.degree + 1, SINGULAR_PIVOT)
            .map_err(|p| FitFailure::Singular { relative_pivot: p })?;
        let condition = if info.min_relative_pivot < NEAR_SINGULAR_PIVOT {
            Conditioning::NearSingular
        } else {
            Conditioning::Ok
        };
        Ok(LocalSolve {
            a,
            moments,
            condition,
        })
    }

    /// Fitted value at `x` without materializing the weights.
    pub fn value_at(&self, design: &Design, x: f64) -> Result<f64, FitFailure> {
        let sol = self.solve_unit(design, x)?;
        Ok(dot(&sol.a, &sol.moments.t, self.degree + 1))
    }

    /// Local polynomial coefficients at `x` converted to derivatives:
    /// element `k` estimates the k-th derivative of the regression curve.
    pub fn derivatives_at(&self, design: &Design, x: f64) -> Result<Vec<f64>, FitFailure> {
        let moments = self.moments(design, x);
        self.check_support(&moments)?;
        let n = self.degree + 1;
        let mut mat = self.system(&moments);
        let mut beta = moments.t;
        solve_in_place(&mut mat, &mut beta, n, SINGULAR_PIVOT)
            .map_err(|p| FitFailure::Singular { relative_pivot: p })?;
        let mut out = Vec::with_capacity(n);
        let mut fact = 1.0;
        let mut hk = 1.0;
        for (k, b) in beta.iter().take(n).enumerate() {
            if k > 0 {
                fact *= k as f64;
                hk *= self.h;
            }
            out.push(b * fact / hk);
        }
        Ok(out)
    }

    /// Leave-one-out prediction at sorted design position `k`.
    ///
    /// Uses the exact deletion identity for weighted least squares:
    /// `ẑ₋ₖ = (ẑₖ - Hₖₖ zₖ) / (1 - Hₖₖ)` with `Hₖₖ` the point's own weight.
    pub(crate) fn leave_one_out(&self, design: &Design, k: usize) -> Result<f64, FitFailure> {
        let x = design.u[k];
        let sol = self.solve_unit(design, x)?;
        let m = &sol.moments;
        let dup = (k > 0 && design.u[k - 1] == x) || (k + 1 < design.len() && design.u[k + 1] == x);
        let distinct_without = if dup { m.distinct } else { m.distinct - 1 };
        if distinct_without < self.degree + 1 {
            return Err(FitFailure::InsufficientData {
                distinct: distinct_without,
                needed: self.degree + 1,
            });
        }
        let fitted = dot(&sol.a, &m.t, self.degree + 1);
        let leverage = self.kernel.eval(0.0) * sol.a[0];
        let denom = 1.0 - leverage;
        if !(denom > 1e-10) {
            return Err(FitFailure::DegenerateLeverage);
        }
        Ok((fitted - leverage * design.z[k]) / denom)
    }

    /// Full fit at `x` including the effective weights.
    pub fn fit(&self, design: &Design, x: f64) -> Result<LocalFit, SmoothError> {
        let sol = self
            .solve_unit(design, x)
            .map_err(|reason| SmoothError::FitFailed { x, reason })?;
        let n = self.degree + 1;
        let mut weights = vec![0.0; design.len()];
        let inv_h = 1.0 / self.h;
        for idx in self.window(design, x) {
            let t = (design.u[idx] - x) * inv_h;
            let k = self.kernel.eval(t);
            if k > 0.0 {
                let mut poly = 0.0;
                let mut p = 1.0;
                for a in sol.a.iter().take(n) {
                    poly += a * p;
                    p *= t;
                }
                weights[design.order[idx]] = k * poly;
            }
        }
        Ok(LocalFit {
            x,
            value: dot(&sol.a, &sol.moments.t, n),
            effective_weights: weights,
            local_count: sol.moments.nonzero,
            condition: sol.condition,
        })
    }
}

#[inline]
fn dot(a: &[f64; MAX_DIM], b: &[f64; MAX_DIM], n: usize) -> f64 {
    a.iter().zip(b).take(n).map(|(x, y)| x * y).sum()
}

/// Fits the degree-`ℓ` local polynomial at `x` with the bandwidth fixed by
/// `spec` and returns the fit together with its effective weights.
pub fn local_poly_fit(
    design: &Design,
    spec: &SmootherSpec,
    x: f64,
) -> Result<LocalFit, SmoothError> {
    spec.validate()?;
    spec.resolved()?.fit(design, x)
}

/// `Σ_j w̃_j (u_j - x)^k` for the normalized effective weights of `fit`.
pub fn effective_weight_moments(fit: &LocalFit, design: &Design, k: u32) -> f64 {
    let total: f64 = fit.effective_weights.iter().sum();
    let u = design.covariates();
    fit.effective_weights
        .iter()
        .zip(&u)
        .map(|(w, u)| w / total * (u - fit.x).powi(k as i32))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design_from(u: &[f64], f: impl Fn(f64) -> f64) -> Design {
        Design::new(u.to_vec(), u.iter().map(|&v| f(v)).collect()).unwrap()
    }

    /// Direct 2x2 weighted normal equations, independent of the moment code.
    fn local_linear_oracle(pairs: &[(f64, f64)], h: f64, x: f64) -> f64 {
        let k = |u: f64| (-(u * u) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(u, z) in pairs {
            let w = k((u - x) / h) / h;
            let d = u - x;
            sw += w;
            swx += w * d;
            swxx += w * d * d;
            swy += w * z;
            swxy += w * d * z;
        }
        // Cramer's rule for the intercept.
        (swxx * swy - swx * swxy) / (sw * swxx - swx * swx)
    }

    #[test]
    fn three_point_design_matches_normal_equations() {
        let pairs = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)];
        let design = Design::from_pairs(&pairs).unwrap();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 1.0);
        let fit = local_poly_fit(&design, &spec, 1.0).unwrap();
        let oracle = local_linear_oracle(&pairs, 1.0, 1.0);
        assert!(
            (fit.value - oracle).abs() < 1e-10,
            "{} vs {}",
            fit.value,
            oracle
        );
        // Symmetric design around x = 1: the slope term vanishes, the
        // intercept is the kernel-weighted mean 1 / (1 + 2 e^{-1/2}).
        let expected = 1.0 / (1.0 + 2.0 * (-0.5f64).exp());
        assert!((oracle - expected).abs() < 1e-12);
        let off = local_poly_fit(&design, &spec, 0.3).unwrap().value;
        assert!((off - local_linear_oracle(&pairs, 1.0, 0.3)).abs() < 1e-10);
    }

    #[test]
    fn reproduces_lines_exactly() {
        let u = [0.1, 0.5, 0.55, 2.0, 3.3];
        let design = design_from(&u, |v| 2.0 * v + 1.0);
        for h in [0.05, 0.3, 1.0, 10.0] {
            let s = LocalSmoother::new(Kernel::Gaussian, 1, h).unwrap();
            for x in [-1.0, 0.0, 0.5, 1.7, 3.0] {
                if let Ok(v) = s.value_at(&design, x) {
                    assert!(
                        (v - (2.0 * x + 1.0)).abs() < 1e-9 * (1.0 + x.abs()),
                        "h={h} x={x}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_reproduction_any_degree() {
        let u: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let design = design_from(&u, |_| 0.7);
        for degree in 1..=4 {
            let s = LocalSmoother::new(Kernel::Epanechnikov, degree, 1.5).unwrap();
            for x in [-1.0, 0.0, 0.9] {
                let v = s.value_at(&design, x).unwrap();
                assert!((v - 0.7).abs() < 1e-10, "degree {degree}");
            }
        }
    }

    #[test]
    fn moments_of_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let z: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let design = Design::new(u, z).unwrap();
        for x in [0.2, 0.5, 0.81] {
            let fit1 = LocalSmoother::new(Kernel::Gaussian, 1, 0.15)
                .unwrap()
                .fit(&design, x)
                .unwrap();
            assert!((effective_weight_moments(&fit1, &design, 0) - 1.0).abs() < 1e-10);
            assert!(effective_weight_moments(&fit1, &design, 1).abs() < 1e-10);
            let fit2 = LocalSmoother::new(Kernel::Gaussian, 2, 0.15)
                .unwrap()
                .fit(&design, x)
                .unwrap();
            assert!(effective_weight_moments(&fit2, &design, 1).abs() < 1e-10);
            assert!(effective_weight_moments(&fit2, &design, 2).abs() < 1e-10);
        }
    }

    #[test]
    fn degree_two_annihilates_second_moment_against_direct_solve() {
        // Independent route: weights from the explicit 3x3 normal equations.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let design = Design::new(u.clone(), vec![0.0; u.len()]).unwrap();
        let (x, h) = (0.1, 0.4);
        let k: Vec<f64> = u
            .iter()
            .map(|&v| Kernel::Gaussian.eval((v - x) / h))
            .collect();
        let mut m = [[0.0f64; 3]; 3];
        for (j, &v) in u.iter().enumerate() {
            let d = v - x;
            let row = [1.0, d, d * d];
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += k[j] * row[a] * row[b];
                }
            }
        }
        // First row of the inverse via adjugate.
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let inv0 = [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
            -(m[0][1] * m[2][2] - m[0][2] * m[2][1]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ];
        let direct: Vec<f64> = u
            .iter()
            .zip(&k)
            .map(|(&v, &kw)| {
                let d = v - x;
                kw * (inv0[0] + inv0[1] * d + inv0[2] * d * d)
            })
            .collect();
        let moment2: f64 = direct
            .iter()
            .zip(&u)
            .map(|(w, v)| w * (v - x).powi(2))
            .sum();
        assert!(moment2.abs() < 1e-10);
        let fit = LocalSmoother::new(Kernel::Gaussian, 2, h)
            .unwrap()
            .fit(&design, x)
            .unwrap();
        for (a, b) in fit.effective_weights.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fails_with_too_few_local_points() {
        let design = design_from(&[0.0, 0.1, 5.0], |v| v);
        let s = LocalSmoother::new(Kernel::Epanechnikov, 2, 0.5).unwrap();
        match s.fit(&design, 0.05) {
            Err(SmoothError::FitFailed {
                reason: FitFailure::InsufficientData { distinct, needed },
                ..
            }) => {
                assert_eq!(distinct, 2);
                assert_eq!(needed, 3);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        // Repeated covariates do not count as distinct support.
        let tied = design_from(&[1.0, 1.0, 1.0, 1.0], |_| 0.5);
        let s = LocalSmoother::new(Kernel::Gaussian, 1, 1.0).unwrap();
        assert!(s.value_at(&tied, 1.0).is_err());
    }

    #[test]
    fn compact_kernel_weights_vanish_outside_support() {
        let u: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let design = design_from(&u, |v| v * v);
        let h = 0.2;
        let fit = LocalSmoother::new(Kernel::Epanechnikov, 1, h)
            .unwrap()
            .fit(&design, 0.4)
            .unwrap();
        for (w, v) in fit.effective_weights.iter().zip(&u) {
            if (v - 0.4f64).abs() > h {
                assert_eq!(*w, 0.0);
            }
        }
        assert!(fit.local_count < 50);
    }

    #[test]
    fn unresolved_bandwidth_is_an_error() {
        let design = design_from(&[0.0, 1.0, 2.0], |v| v);
        let spec = SmootherSpec::default();
        assert_eq!(
            local_poly_fit(&design, &spec, 1.0),
            Err(SmoothError::UnresolvedBandwidth)
        );
    }

    #[test]
    fn derivatives_of_a_cubic_with_local_cubic() {
        let u: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let design = design_from(&u, |v| 1.0 - 2.0 * v + 3.0 * v * v - v * v * v);
        let s = LocalSmoother::new(Kernel::Gaussian, 3, 0.3).unwrap();
        let d = s.derivatives_at(&design, 0.5).unwrap();
        assert!((d[0] - (1.0 - 1.0 + 0.75 - 0.125)).abs() < 1e-9);
        assert!((d[1] - (-2.0 + 3.0 - 0.75)).abs() < 1e-8);
        assert!((d[2] - (6.0 - 3.0)).abs() < 1e-7);
    }

    #[test]
    fn leave_one_out_matches_explicit_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let z: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let design = Design::new(u, z).unwrap();
        let s = LocalSmoother::new(Kernel::Gaussian, 1, 0.2).unwrap();
        for k in 0..design.len() {
            let mut uu = design.sorted_u().to_vec();
            let mut zz = design.sorted_z().to_vec();
            let x = uu.remove(k);
            zz.remove(k);
            let reduced = Design::new(uu, zz).unwrap();
            let direct = s.value_at(&reduced, x).unwrap();
            let fast = s.leave_one_out(&design, k).unwrap();
            assert!((direct - fast).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn polynomial_reproduction(
            coefs in proptest::collection::vec(-3.0f64..3.0, 4),
            degree in 1usize..=3,
            seed in 0u64..1000,
            x in 0.1f64..0.9,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
            let q = |v: f64| coefs.iter().take(degree + 1).rev().fold(0.0, |acc, c| acc * v + c);
            let design = design_from(&u, q);
            let fit = LocalSmoother::new(Kernel::Gaussian, degree, 0.3).unwrap().fit(&design, x).unwrap();
            let truth = q(x);
            prop_assert!((fit.value - truth).abs() <= 1e-10 * truth.abs().max(1.0));
            // Linearity: the value is the weighted sum of responses.
            let z = design.responses();
            let lin: f64 = fit.effective_weights.iter().zip(&z).map(|(w, z)| w * z).sum();
            prop_assert!((lin - fit.value).abs() < 1e-12 * fit.value.abs().max(1.0));
            for k in 0..=degree as u32 {
                let m = effective_weight_moments(&fit, &design, k);
                let target = if k == 0 { 1.0 } else { 0.0 };
                prop_assert!((m - target).abs() < 1e-10);
            }
        }
    }
}
