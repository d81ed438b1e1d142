//! Bandwidth selection: leave-one-out cross-validation and a plug-in rule
//! built on the first-order error formulas of the pooled estimators.

use serde::{Deserialize, Serialize};

use super::{BandwidthRule, Design, LocalSmoother, SmoothError, SmootherSpec, SINGULAR_PIVOT};
use crate::asymptotics;
use crate::density::NormalReferenceKde;
use crate::kernel::Kernel;
use crate::linalg::{solve_in_place, MAX_DIM};

/// Pilot bandwidth as a multiple of the cross-validated one.
const PILOT_FACTOR: f64 = 1.5;
/// Evaluation points used to integrate the plug-in criterion.
const PLUGIN_POINTS: usize = 101;
/// Resolution of the plug-in minimization between the bounds.
const PLUGIN_SEARCH_POINTS: usize = 400;

/// Candidate set for data-driven bandwidth selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearch {
    /// Explicit candidates; when empty a geometric grid of `grid_size`
    /// points between the bounds is used.
    #[serde(default)]
    pub candidates: Vec<f64>,
    /// `(h_min, h_max)`. Defaults to 1% and 50% of the design range.
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
    pub grid_size: usize,
    /// Multivariate cross-validation scores at most this many design
    /// points, evenly spread. Each score still refits on the full design.
    pub max_loo_points: usize,
    /// Univariate designs larger than this are scored at every point from
    /// linearly binned kernel moments instead of exact refits.
    #[serde(default = "default_binned_above")]
    pub binned_cv_above: usize,
}

fn default_binned_above() -> usize {
    500
}

impl Default for BandwidthSearch {
    fn default() -> Self {
        BandwidthSearch {
            candidates: Vec::new(),
            bounds: None,
            grid_size: 16,
            max_loo_points: 500,
            binned_cv_above: default_binned_above(),
        }
    }
}

impl BandwidthSearch {
    pub fn with_candidates(candidates: Vec<f64>) -> Self {
        BandwidthSearch {
            candidates,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SmoothError> {
        if let Some(bad) = self
            .candidates
            .iter()
            .find(|h| !(h.is_finite() && **h > 0.0))
        {
            return Err(SmoothError::InvalidSearch(format!(
                "candidate bandwidth {bad} is not positive"
            )));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(SmoothError::InvalidSearch(format!(
                    "bounds ({lo}, {hi}) must satisfy 0 < h_min < h_max"
                )));
            }
        }
        if self.candidates.is_empty() && self.grid_size == 0 {
            return Err(SmoothError::InvalidSearch("empty candidate grid".into()));
        }
        if self.max_loo_points < 2 {
            return Err(SmoothError::InvalidSearch(
                "cross-validation needs at least two scoring points".into(),
            ));
        }
        Ok(())
    }

    /// Effective bounds for a design spanning `range`.
    pub fn resolved_bounds(&self, range: f64) -> (f64, f64) {
        self.bounds.unwrap_or((0.01 * range, 0.5 * range))
    }

    /// Candidates in ascending order.
    pub fn resolved_candidates(&self, range: f64) -> Vec<f64> {
        let mut c = if self.candidates.is_empty() {
            let (lo, hi) = self.resolved_bounds(range);
            geometric_grid(lo, hi, self.grid_size)
        } else {
            self.candidates.clone()
        };
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }

    fn clamp(&self, h: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => h.clamp(lo, hi),
            None => h,
        }
    }
}

pub(crate) fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

/// What the smoothed response measures, which fixes how a pilot fit of its
/// mean is turned into the prevalence curve and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseScale {
    /// Individual outcomes: the mean is `p` itself.
    Direct,
    /// Negatives of homogeneous pools of size `nu`: the mean is `(1-p)^ν`.
    PoolNegative { nu: f64 },
    /// Pool positives attached to individual covariates under random
    /// pooling: the mean is `1 - (1-p) q^{ν-1}`.
    RandomPoolPositive { nu: f64, q: f64 },
}

/// Extra information the plug-in rule needs beyond the design.
#[derive(Debug, Clone, Default)]
pub struct PluginContext<'a> {
    pub scale: Option<ResponseScale>,
    /// Individual covariates for the density estimate; the design
    /// covariates are used when absent.
    pub covariates: Option<&'a [f64]>,
    /// Number of individuals behind the design.
    pub n_individuals: Option<usize>,
    /// Integration interval; the central 90% of the design by default.
    pub interval: Option<(f64, f64)>,
}

impl<'a> PluginContext<'a> {
    pub fn new(scale: ResponseScale) -> Self {
        PluginContext {
            scale: Some(scale),
            ..Default::default()
        }
    }

    fn scale(&self) -> ResponseScale {
        self.scale.unwrap_or(ResponseScale::Direct)
    }

    fn individuals(&self, design: &Design) -> f64 {
        if let Some(n) = self.n_individuals {
            return n as f64;
        }
        match self.scale() {
            ResponseScale::PoolNegative { nu } => nu * design.len() as f64,
            _ => design.len() as f64,
        }
    }
}

/// Pilot estimate of the prevalence curve at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveEstimate {
    pub p: f64,
    pub dp: f64,
    pub d2p: f64,
    pub density: f64,
}

/// Local quadratic pilot fit of the response mean plus a density estimate.
#[derive(Debug, Clone)]
pub struct PilotCurve<'d> {
    design: &'d Design,
    smoother: LocalSmoother,
    scale: ResponseScale,
    kde: NormalReferenceKde,
}

impl<'d> PilotCurve<'d> {
    pub fn new(
        design: &'d Design,
        kernel: Kernel,
        h: f64,
        scale: ResponseScale,
        covariates: Option<&[f64]>,
    ) -> Result<Self, SmoothError> {
        let smoother = LocalSmoother::new(kernel, 2, h)?;
        let kde = match covariates {
            Some(c) => NormalReferenceKde::new(c),
            None => NormalReferenceKde::new(design.sorted_u()),
        }
        .ok_or_else(|| SmoothError::PluginUnsupported("covariates have no spread".into()))?;
        Ok(PilotCurve {
            design,
            smoother,
            scale,
            kde,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.smoother.h
    }

    pub fn scale(&self) -> ResponseScale {
        self.scale
    }

    /// `None` where the pilot fit fails.
    pub fn at(&self, x: f64) -> Option<CurveEstimate> {
        let d = self.smoother.derivatives_at(self.design, x).ok()?;
        let (m, dm, d2m) = (d[0], d[1], d[2]);
        let (p, dp, d2p) = match self.scale {
            ResponseScale::Direct => (m, dm, d2m),
            ResponseScale::PoolNegative { nu } => {
                let mu = m.clamp(1e-6, 1.0);
                let r = 1.0 / nu;
                let p = 1.0 - mu.powf(r);
                let dp = -r * mu.powf(r - 1.0) * dm;
                let d2p = -r * ((r - 1.0) * mu.powf(r - 2.0) * dm * dm + mu.powf(r - 1.0) * d2m);
                (p, dp, d2p)
            }
            ResponseScale::RandomPoolPositive { nu, q } => {
                let c = q.powf(nu - 1.0);
                (1.0 - (1.0 - m) / c, dm / c, d2m / c)
            }
        };
        Some(CurveEstimate {
            p: p.clamp(0.0, 0.999),
            dp,
            d2p,
            density: self.kde.eval(x),
        })
    }
}

/// Chooses a bandwidth for `design` following `spec.bandwidth`.
///
/// Fixed rules return their value. Plug-in selection treats the responses
/// as individual outcomes; use [`select_bandwidth_with`] for pooled designs.
pub fn select_bandwidth(design: &Design, spec: &SmootherSpec) -> Result<f64, SmoothError> {
    select_bandwidth_with(design, spec, &PluginContext::default())
}

pub fn select_bandwidth_with(
    design: &Design,
    spec: &SmootherSpec,
    ctx: &PluginContext<'_>,
) -> Result<f64, SmoothError> {
    spec.validate()?;
    match &spec.bandwidth {
        BandwidthRule::Fixed(h) => Ok(*h),
        BandwidthRule::CrossValidation(search) => {
            cross_validate(design, spec.kernel, spec.degree, search)
        }
        BandwidthRule::Plugin(search) => plugin(design, spec.kernel, spec.degree, search, ctx),
    }
}

fn check_size(design: &Design, degree: usize) -> Result<(), SmoothError> {
    let needed = 2 * (degree + 1);
    if design.len() < needed {
        return Err(SmoothError::TooFewPoints {
            points: design.len(),
            needed,
        });
    }
    Ok(())
}

fn design_span(design: &Design) -> f64 {
    let (a, b) = design.range();
    let span = b - a;
    if span > 0.0 {
        span
    } else {
        1.0
    }
}

/// Evenly spread sorted positions, all of them when `n ≤ max`.
pub(crate) fn scoring_positions(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..max)
        .map(|k| ((k as f64) * (n - 1) as f64 / (max - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}

/// Mean squared leave-one-out error, `None` if any scoring fit fails.
fn cv_score(design: &Design, smoother: &LocalSmoother, positions: &[usize]) -> Option<f64> {
    let z = design.sorted_z();
    let mut acc = 0.0;
    for &k in positions {
        let pred = smoother.leave_one_out(design, k).ok()?;
        acc += (z[k] - pred).powi(2);
    }
    Some(acc / positions.len() as f64)
}

/// Picks the smallest candidate whose score ties the minimum.
pub(crate) fn argmin_smallest(
    candidates: &[f64],
    scores: &[Option<f64>],
    scale: f64,
) -> Option<f64> {
    let best = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    candidates
        .iter()
        .zip(scores)
        .find(|(_, s)| matches!(s, Some(v) if *v <= best + tol))
        .map(|(h, _)| *h)
}

fn cross_validate(
    design: &Design,
    kernel: Kernel,
    degree: usize,
    search: &BandwidthSearch,
) -> Result<f64, SmoothError> {
    check_size(design, degree)?;
    let span = design_span(design);
    let candidates = search.resolved_candidates(span);
    let binned = design.len() > search.binned_cv_above;
    let positions: Vec<usize> = (0..design.len()).collect();
    let distinct = DistinctPrefix::new(design);
    let score = |s: &LocalSmoother| {
        if binned {
            binned_cv_score(design, s, &distinct)
        } else {
            cv_score(design, s, &positions)
        }
    };
    let scores: Vec<Option<f64>> = candidates
        .iter()
        .map(|&h| {
            let s = LocalSmoother::new(kernel, degree, h).ok()?;
            score(&s)
        })
        .collect();
    match argmin_smallest(&candidates, &scores, design.response_variance()) {
        Some(h) => Ok(search.clamp(h)),
        None => {
            let mut h = candidates.last().copied().unwrap_or(span);
            for _ in 0..40 {
                h *= 2.0;
                let s = LocalSmoother::new(kernel, degree, h)?;
                if score(&s).is_some() {
                    break;
                }
            }
            Err(SmoothError::NoUsableBandwidth { smallest_usable: h })
        }
    }
}

/// Grid cells per bandwidth for binned cross-validation.
const BINS_PER_H: f64 = 16.0;
/// Gaussian tails beyond this many bandwidths are dropped when binning.
const GAUSS_CUTOFF: f64 = 8.0;
const MAX_BINS: usize = 1 << 16;

/// Count of distinct covariate values before each sorted position.
struct DistinctPrefix(Vec<usize>);

impl DistinctPrefix {
    fn new(design: &Design) -> Self {
        let u = design.sorted_u();
        let mut acc = 0;
        let mut v = Vec::with_capacity(u.len() + 1);
        v.push(0);
        for (i, x) in u.iter().enumerate() {
            if i == 0 || *x != u[i - 1] {
                acc += 1;
            }
            v.push(acc);
        }
        DistinctPrefix(v)
    }

    /// Distinct values among sorted positions `a..b`.
    fn within(&self, u: &[f64], a: usize, b: usize) -> usize {
        if b <= a {
            return 0;
        }
        let carried = usize::from(a > 0 && u[a] == u[a - 1]);
        self.0[b] - self.0[a] + carried
    }
}

/// Leave-one-out score over every design point with kernel moments taken
/// from a linearly binned design on a grid of spacing `h / 16`, evaluated
/// at each point by linear interpolation between grid nodes.
fn binned_cv_score(design: &Design, s: &LocalSmoother, distinct: &DistinctPrefix) -> Option<f64> {
    let (u, z) = (design.sorted_u(), design.sorted_z());
    let (lo, hi) = design.range();
    let span = hi - lo;
    let mut delta = s.h / BINS_PER_H;
    if span / delta > (MAX_BINS - 2) as f64 {
        delta = span / (MAX_BINS - 2) as f64;
    }
    let m = (span / delta).ceil() as usize + 2;
    let mut count = vec![0.0; m];
    let mut zsum = vec![0.0; m];
    for (&x, &y) in u.iter().zip(z) {
        let pos = (x - lo) / delta;
        let i = (pos.floor() as usize).min(m - 2);
        let f = pos - i as f64;
        count[i] += 1.0 - f;
        count[i + 1] += f;
        zsum[i] += (1.0 - f) * y;
        zsum[i + 1] += f * y;
    }
    let l = s.degree;
    let ns = 2 * l + 1;
    let radius = s.kernel.support_radius().unwrap_or(GAUSS_CUTOFF);
    let reach = ((radius * s.h / delta).ceil() as usize).min(m - 1);
    let step = delta / s.h;
    // kw[o][j] = K(t) t^j at offset o - reach, t = (o - reach) * δ / h.
    let kw: Vec<[f64; 2 * MAX_DIM - 1]> = (0..=2 * reach)
        .map(|o| {
            let t = (o as f64 - reach as f64) * step;
            let mut w = [0.0; 2 * MAX_DIM - 1];
            let mut p = s.kernel.eval(t);
            for v in w.iter_mut().take(ns) {
                *v = p;
                p *= t;
            }
            w
        })
        .collect();
    // Moments at grid nodes: sums over bins g of c_g K(t) t^j with
    // t = (g - node) δ / h.
    let mut gs = vec![[0.0; 2 * MAX_DIM - 1]; m];
    let mut gt = vec![[0.0; MAX_DIM]; m];
    for node in 0..m {
        let a = node.saturating_sub(reach);
        let b = (node + reach).min(m - 1);
        let (sm, tm) = (&mut gs[node], &mut gt[node]);
        for g in a..=b {
            let (c, zc) = (count[g], zsum[g]);
            if c == 0.0 {
                continue;
            }
            let w = &kw[g + reach - node];
            for j in 0..ns {
                sm[j] += c * w[j];
            }
            for j in 0..=l {
                tm[j] += zc * w[j];
            }
        }
    }
    let k0 = s.kernel.eval(0.0);
    let mut acc = 0.0;
    for (k, (&x, &y)) in u.iter().zip(z).enumerate() {
        let (a, b) = match s.kernel.support_radius() {
            None => (0, u.len()),
            Some(r) => (
                u.partition_point(|&v| v <= x - r * s.h),
                u.partition_point(|&v| v < x + r * s.h),
            ),
        };
        let dup = (k > 0 && u[k - 1] == x) || (k + 1 < u.len() && u[k + 1] == x);
        let d = distinct.within(u, a, b) - usize::from(!dup);
        if d < l + 1 {
            return None;
        }
        let pos = (x - lo) / delta;
        let i = (pos.floor() as usize).min(m - 2);
        let f = pos - i as f64;
        let mut mat = [[0.0; MAX_DIM]; MAX_DIM];
        for (r, row) in mat.iter_mut().enumerate().take(l + 1) {
            for (c, v) in row.iter_mut().enumerate().take(l + 1) {
                *v = (1.0 - f) * gs[i][r + c] + f * gs[i + 1][r + c];
            }
        }
        let mut e = [0.0; MAX_DIM];
        e[0] = 1.0;
        solve_in_place(&mut mat, &mut e, l + 1, SINGULAR_PIVOT).ok()?;
        let fitted: f64 = (0..=l)
            .map(|j| e[j] * ((1.0 - f) * gt[i][j] + f * gt[i + 1][j]))
            .sum();
        let leverage = k0 * e[0];
        let denom = 1.0 - leverage;
        if !(denom > 1e-10) {
            return None;
        }
        acc += (y - (fitted - leverage * y) / denom).powi(2);
    }
    Some(acc / u.len() as f64)
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Integrated first-order variance and squared bias factors over the
/// interval, from pilot estimates.
pub(crate) fn integrated_error_factors(
    pilot: &PilotCurve<'_>,
    kernel: Kernel,
    n_individuals: f64,
    interval: (f64, f64),
) -> Option<(f64, f64)> {
    let (a, b) = interval;
    let step = (b - a) / (PLUGIN_POINTS - 1) as f64;
    let (mut var_int, mut bias_int, mut weight) = (0.0, 0.0, 0.0);
    for i in 0..PLUGIN_POINTS {
        let x = a + step * i as f64;
        let Some(est) = pilot.at(x) else { continue };
        if !(est.density > 0.0) {
            continue;
        }
        let v = kernel.roughness() / est.density;
        let bk = kernel.second_moment();
        let (var, bias) = match pilot.scale() {
            ResponseScale::Direct => (
                asymptotics::homogeneous_variance_factor(est.p, 1.0, n_individuals, v),
                asymptotics::homogeneous_bias_factor(est.p, est.dp, est.d2p, 1.0, bk),
            ),
            ResponseScale::PoolNegative { nu } => (
                asymptotics::homogeneous_variance_factor(est.p, nu, n_individuals, v),
                asymptotics::homogeneous_bias_factor(est.p, est.dp, est.d2p, nu, bk),
            ),
            ResponseScale::RandomPoolPositive { nu, q } => (
                asymptotics::random_pool_variance_factor(est.p, q, nu, n_individuals, v),
                asymptotics::random_pool_bias_factor(est.d2p, bk),
            ),
        };
        let w = if i == 0 || i == PLUGIN_POINTS - 1 {
            0.5
        } else {
            1.0
        };
        var_int += w * var;
        bias_int += w * bias * bias;
        weight += w;
    }
    if weight == 0.0 {
        return None;
    }
    let scale = (b - a) / weight;
    Some((var_int * scale, bias_int * scale))
}

fn plugin(
    design: &Design,
    kernel: Kernel,
    degree: usize,
    search: &BandwidthSearch,
    ctx: &PluginContext<'_>,
) -> Result<f64, SmoothError> {
    if degree != 1 {
        return Err(SmoothError::PluginUnsupported(format!(
            "the plug-in rule uses local linear constants, degree {degree} requested"
        )));
    }
    check_size(design, 2)?;
    let h_cv = cross_validate(design, kernel, degree, search)?;
    let pilot = PilotCurve::new(
        design,
        kernel,
        PILOT_FACTOR * h_cv,
        ctx.scale(),
        ctx.covariates,
    )?;
    let interval = ctx.interval.unwrap_or_else(|| {
        let u = design.sorted_u();
        (empirical_quantile(u, 0.05), empirical_quantile(u, 0.95))
    });
    let (var_int, bias_int) =
        integrated_error_factors(&pilot, kernel, ctx.individuals(design), interval).ok_or_else(
            || SmoothError::PluginUnsupported("pilot fit failed across the interval".into()),
        )?;
    let (lo, hi) = search.resolved_bounds(design_span(design));
    let grid = geometric_grid(lo, hi, PLUGIN_SEARCH_POINTS);
    let objective = |h: f64| var_int / h + bias_int * h.powi(4);
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap_or(h_cv);
    Ok(best.clamp(lo, hi))
}
