//! Prevalence-curve estimators.
//!
//! * DH smooths the pool negatives of homogeneous pools against the pool
//!   centers to get `μ̂ ≈ (1 - p)^ν` and returns `1 - μ̂^{1/ν}`.
//! * DH_binned is the same idea on equal-width bins of `[0,1]^d`, with the
//!   root taken at the local bin count.
//! * DM regresses pool positives on the individual covariates of randomly
//!   formed pools and corrects with the estimated overall negative rate.
//! * LL is the local polynomial fit to the ungrouped outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics;
use crate::kernel::Kernel;
use crate::pooling::{PooledDataset, PoolingError, PoolingStrategy, RawDataset};
use crate::smoother::{
    select_bandwidth_nd, select_bandwidth_with, BandwidthRule, CurveEstimate, Design, DesignNd,
    FitFailure, LocalLinearNd, LocalSmoother, PilotCurve, PluginContext, ResponseScale,
    SmoothError, SmootherSpec,
};

/// Grid size used when the caller gives only an interval.
pub const DEFAULT_GRID_POINTS: usize = 201;
/// Bandwidth doublings tried at a failed point when widening is enabled.
pub const MAX_WIDENINGS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error("outcomes are required: {0}")]
    MissingResponses(&'static str),
    #[error("pool sizes range from {min} to {max}; the equal-size estimator needs a common size, use estimate_dh_binned for unequal pools")]
    UnequalGroupSizes { min: usize, max: usize },
    #[error("{estimator} needs {expected} pools, got {found:?}")]
    WrongStrategy {
        estimator: EstimatorTag,
        expected: &'static str,
        found: PoolingStrategy,
    },
    #[error("{estimator} is univariate but the data have dimension {dim}")]
    NotUnivariate { estimator: EstimatorTag, dim: usize },
    #[error("grid has {len} values, not a multiple of dimension {dim}")]
    GridShape { len: usize, dim: usize },
    #[error("every pool tested positive so the overall negative rate is 0; choose a smaller pool size than {nu}")]
    AllPoolsPositive { nu: usize },
    #[error("{nonempty} nonempty bins, at least {needed} needed")]
    TooFewBins { nonempty: usize, needed: usize },
    #[error("multivariate smoothing is local linear only, degree {0} requested")]
    MultivariateDegree(usize),
    #[error("no pools to estimate from")]
    NoGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "DH")]
    Dh,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "LL")]
    Ll,
    #[serde(rename = "DH_binned")]
    DhBinned,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 4] = [
        EstimatorTag::Dh,
        EstimatorTag::Dm,
        EstimatorTag::Ll,
        EstimatorTag::DhBinned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Dh => "DH",
            EstimatorTag::Dm => "DM",
            EstimatorTag::Ll => "LL",
            EstimatorTag::DhBinned => "DH_binned",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dh" => Ok(EstimatorTag::Dh),
            "dm" => Ok(EstimatorTag::Dm),
            "ll" => Ok(EstimatorTag::Ll),
            "dh_binned" | "binned" => Ok(EstimatorTag::DhBinned),
            _ => Err(format!(
                "unknown estimator '{s}' (expected DH, DM, LL or DH_binned)"
            )),
        }
    }
}

/// Whether the value fed to the final transform was clamped into `[0, 1]`.
///
/// For DH and DH_binned this refers to `μ̂`, so `ClampedHigh` means `p̂ = 0`.
/// For LL and DM it refers to `p̂` itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampFlag {
    #[default]
    None,
    ClampedLow,
    ClampedHigh,
}

impl ClampFlag {
    fn clamp(v: f64) -> (f64, ClampFlag) {
        if v < 0.0 {
            (0.0, ClampFlag::ClampedLow)
        } else if v > 1.0 {
            (1.0, ClampFlag::ClampedHigh)
        } else {
            (v, ClampFlag::None)
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClampFlag::None => "none",
            ClampFlag::ClampedLow => "clamped_low",
            ClampFlag::ClampedHigh => "clamped_high",
        }
    }
}

impl FromStr for ClampFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ClampFlag::None),
            "clamped_low" => Ok(ClampFlag::ClampedLow),
            "clamped_high" => Ok(ClampFlag::ClampedHigh),
            _ => Err(format!("unknown clamp flag '{s}'")),
        }
    }
}

/// Why a grid point has no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointIssue {
    FitFailed {
        reason: FitFailure,
    },
    /// The bin containing the point holds no data (`m(x) = 0`).
    EmptyBin,
    /// The point lies outside the binned region.
    OutsideRegion,
}

impl fmt::Display for PointIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointIssue::FitFailed { reason } => write!(f, "fit failed: {reason}"),
            PointIssue::EmptyBin => f.write_str("empty bin"),
            PointIssue::OutsideRegion => f.write_str("outside binned region"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub index: usize,
    pub issue: PointIssue,
}

/// A grid point that needed a wider bandwidth than the selected one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidenedPoint {
    pub index: usize,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: EstimatorTag,
    pub dim: usize,
    /// Nominal pool size (1 for LL).
    pub nu: f64,
    /// Evaluation points, row-major with `dim` columns.
    pub grid: Vec<f64>,
    pub p_hat: Vec<Option<f64>>,
    /// Smoother output before clamping: `μ̂` for DH, `ĝ` for DM, `p̂` for LL.
    pub mu_hat: Vec<Option<f64>>,
    pub clamp_flags: Vec<ClampFlag>,
    pub failures: Vec<PointFailure>,
    pub bandwidth_used: f64,
    #[serde(default)]
    pub widened: Vec<WidenedPoint>,
    /// Estimated `E{1 - p(X)}` (DM only).
    #[serde(default)]
    pub q_hat: Option<f64>,
}

impl EstimateResult {
    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.grid[i * self.dim..(i + 1) * self.dim]
    }

    pub fn clamped_count(&self) -> usize {
        self.clamp_flags
            .iter()
            .filter(|f| **f != ClampFlag::None)
            .count()
    }
}

/// `n` equispaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
                .collect()
        }
    }
}

type PointFit = Result<(f64, Option<f64>), PointIssue>;

/// Fits at `h`, doubling the bandwidth up to [`MAX_WIDENINGS`] times on
/// failure when `widen` is set.
fn fit_widening<F>(h: f64, widen: bool, fit: F) -> PointFit
where
    F: Fn(f64) -> Result<f64, FitFailure>,
{
    let mut err = match fit(h) {
        Ok(v) => return Ok((v, None)),
        Err(e) => e,
    };
    if widen {
        let mut hw = h;
        for _ in 0..MAX_WIDENINGS {
            hw *= 2.0;
            match fit(hw) {
                Ok(v) => return Ok((v, Some(hw))),
                Err(e) => err = e,
            }
        }
    }
    Err(PointIssue::FitFailed { reason: err })
}

struct Assembly {
    estimator: EstimatorTag,
    dim: usize,
    nu: f64,
    grid: Vec<f64>,
    bandwidth: f64,
    q_hat: Option<f64>,
}

impl Assembly {
    fn finish<T>(self, fits: Vec<PointFit>, transform: T) -> EstimateResult
    where
        T: Fn(usize, f64) -> (f64, ClampFlag),
    {
        let n = fits.len();
        let mut out = EstimateResult {
            estimator: self.estimator,
            dim: self.dim,
            nu: self.nu,
            grid: self.grid,
            p_hat: Vec::with_capacity(n),
            mu_hat: Vec::with_capacity(n),
            clamp_flags: Vec::with_capacity(n),
            failures: Vec::new(),
            bandwidth_used: self.bandwidth,
            widened: Vec::new(),
            q_hat: self.q_hat,
        };
        for (i, fit) in fits.into_iter().enumerate() {
            match fit {
                Ok((mu, widened)) => {
                    let (p, flag) = transform(i, mu);
                    out.p_hat.push(Some(p));
                    out.mu_hat.push(Some(mu));
                    out.clamp_flags.push(flag);
                    if let Some(bandwidth) = widened {
                        out.widened.push(WidenedPoint {
                            index: i,
                            bandwidth,
                        });
                    }
                }
                Err(issue) => {
                    out.p_hat.push(None);
                    out.mu_hat.push(None);
                    out.clamp_flags.push(ClampFlag::None);
                    out.failures.push(PointFailure { index: i, issue });
                }
            }
        }
        out
    }
}

fn univariate_fits(design: &Design, spec: &SmootherSpec, h: f64, grid: &[f64]) -> Vec<PointFit> {
    grid.iter()
        .map(|&x| {
            fit_widening(h, spec.widen_on_failure, |hh| {
                LocalSmoother {
                    kernel: spec.kernel,
                    degree: spec.degree,
                    h: hh,
                }
                .value_at(design, x)
            })
        })
        .collect()
}

fn check_univariate(estimator: EstimatorTag, dim: usize) -> Result<(), EstimateError> {
    if dim != 1 {
        return Err(EstimateError::NotUnivariate { estimator, dim });
    }
    Ok(())
}

fn common_size(pooled: &PooledDataset) -> Result<usize, EstimateError> {
    if pooled.is_empty() {
        return Err(EstimateError::NoGroups);
    }
    pooled.common_size().ok_or_else(|| {
        let sizes = pooled.groups.iter().map(|g| g.size());
        EstimateError::UnequalGroupSizes {
            min: sizes.clone().min().unwrap_or(0),
            max: sizes.max().unwrap_or(0),
        }
    })
}

fn pool_negatives(pooled: &PooledDataset) -> Result<Vec<f64>, EstimateError> {
    pooled
        .groups
        .iter()
        .map(|g| g.pooled_negative().map(|z| if z { 1.0 } else { 0.0 }))
        .collect::<Option<Vec<f64>>>()
        .ok_or(EstimateError::MissingResponses("pool results are missing"))
}

fn member_covariates(pooled: &PooledDataset) -> Vec<f64> {
    pooled
        .groups
        .iter()
        .flat_map(|g| g.member_covariates.iter().copied())
        .collect()
}

/// The design DH smooths: pool centers against pool negatives.
pub fn dh_design(pooled: &PooledDataset) -> Result<Design, EstimateError> {
    let z = pool_negatives(pooled)?;
    let u = pooled.groups.iter().map(|g| g.center[0]).collect();
    Ok(Design::new(u, z)?)
}

/// Homogeneous-pool estimator.
pub fn estimate_dh(
    pooled: &PooledDataset,
    spec: &SmootherSpec,
    grid: &[f64],
) -> Result<EstimateResult, EstimateError> {
    spec.validate()?;
    check_univariate(EstimatorTag::Dh, pooled.dim)?;
    if pooled.strategy != PoolingStrategy::HomogeneousSorted {
        return Err(EstimateError::WrongStrategy {
            estimator: EstimatorTag::Dh,
            expected: "homogeneous (sorted, contiguous)",
            found: pooled.strategy,
        });
    }
    let nu = common_size(pooled)?;
    let design = dh_design(pooled)?;
    let covariates = member_covariates(pooled);
    let ctx = PluginContext {
        scale: Some(ResponseScale::PoolNegative { nu: nu as f64 }),
        covariates: Some(&covariates),
        n_individuals: Some(covariates.len()),
        interval: None,
    };
    let h = select_bandwidth_with(&design, spec, &ctx)?;
    let fits = univariate_fits(&design, spec, h, grid);
    let root = 1.0 / nu as f64;
    Ok(Assembly {
        estimator: EstimatorTag::Dh,
        dim: 1,
        nu: nu as f64,
        grid: grid.to_vec(),
        bandwidth: h,
        q_hat: None,
    }
    .finish(fits, |_, mu| {
        let (m, flag) = ClampFlag::clamp(mu);
        (1.0 - m.powf(root), flag)
    }))
}

/// Ungrouped local polynomial estimator.
pub fn estimate_ll(
    raw: &RawDataset,
    spec: &SmootherSpec,
    grid: &[f64],
) -> Result<EstimateResult, EstimateError> {
    spec.validate()?;
    check_univariate(EstimatorTag::Ll, raw.dim())?;
    let y = raw.responses().ok_or(EstimateError::MissingResponses(
        "LL needs individual outcomes",
    ))?;
    let z = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let design = Design::new(raw.covariates().to_vec(), z)?;
    let ctx = PluginContext::new(ResponseScale::Direct);
    let h = select_bandwidth_with(&design, spec, &ctx)?;
    let fits = univariate_fits(&design, spec, h, grid);
    Ok(Assembly {
        estimator: EstimatorTag::Ll,
        dim: 1,
        nu: 1.0,
        grid: grid.to_vec(),
        bandwidth: h,
        q_hat: None,
    }
    .finish(fits, |_, v| ClampFlag::clamp(v)))
}

/// Random-pool estimator.
///
/// `ĝ` regresses each individual's pool result on its own covariate, so
/// `E ĝ ≈ 1 - (1 - p) q^{ν-1}` with `q = E{1 - p(X)}`, and `q` is estimated
/// from the proportion of negative pools as `(J⁻¹ Σ Z*)^{1/ν}`.
pub fn estimate_dm(
    pooled: &PooledDataset,
    spec: &SmootherSpec,
    grid: &[f64],
) -> Result<EstimateResult, EstimateError> {
    spec.validate()?;
    check_univariate(EstimatorTag::Dm, pooled.dim)?;
    if !matches!(
        pooled.strategy,
        PoolingStrategy::Random | PoolingStrategy::External
    ) {
        return Err(EstimateError::WrongStrategy {
            estimator: EstimatorTag::Dm,
            expected: "randomly formed",
            found: pooled.strategy,
        });
    }
    let nu = common_size(pooled)?;
    let negatives = pool_negatives(pooled)?;
    let negative_rate = negatives.iter().sum::<f64>() / negatives.len() as f64;
    if negative_rate == 0.0 {
        return Err(EstimateError::AllPoolsPositive { nu });
    }
    let q_hat = negative_rate.powf(1.0 / nu as f64);
    let mut u = Vec::with_capacity(pooled.n_individuals);
    let mut g = Vec::with_capacity(pooled.n_individuals);
    for (group, z) in pooled.groups.iter().zip(&negatives) {
        for &x in &group.member_covariates {
            u.push(x);
            g.push(1.0 - z);
        }
    }
    let design = Design::new(u, g)?;
    let covariates = design.covariates();
    let ctx = PluginContext {
        scale: Some(ResponseScale::RandomPoolPositive {
            nu: nu as f64,
            q: q_hat,
        }),
        covariates: Some(&covariates),
        n_individuals: Some(covariates.len()),
        interval: None,
    };
    let h = select_bandwidth_with(&design, spec, &ctx)?;
    let fits = univariate_fits(&design, spec, h, grid);
    let c = q_hat.powi(nu as i32 - 1);
    Ok(Assembly {
        estimator: EstimatorTag::Dm,
        dim: 1,
        nu: nu as f64,
        grid: grid.to_vec(),
        bandwidth: h,
        q_hat: Some(q_hat),
    }
    .finish(fits, |_, gv| ClampFlag::clamp(1.0 - (1.0 - gv) / c)))
}

/// Pool size used in the root of the binned estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinExponent {
    /// Number of points in the bin containing `x`.
    #[default]
    LocalCount,
    /// Bin counts, empty bins included, smoothed with the same smoother and
    /// bandwidth as `μ̂`. Estimates the expected count instead of using the
    /// noisy realized one, which matters when bins hold few points.
    SmoothedCount,
}

impl FromStr for BinExponent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" | "local_count" => Ok(BinExponent::LocalCount),
            "smoothed" | "smoothed_count" => Ok(BinExponent::SmoothedCount),
            other => Err(format!(
                "unknown bin exponent '{other}' (expected local or smoothed)"
            )),
        }
    }
}

/// Binned estimator on `[0,1]^d`; `grid` is row-major with `d` columns.
///
/// The root is taken at the count `m(x)` of the bin containing each grid
/// point; points in empty bins or outside the cube are reported missing.
pub fn estimate_dh_binned(
    pooled: &PooledDataset,
    spec: &SmootherSpec,
    grid: &[f64],
) -> Result<EstimateResult, EstimateError> {
    estimate_dh_binned_with(pooled, spec, grid, BinExponent::LocalCount)
}

/// [`estimate_dh_binned`] with a choice of root exponent.
pub fn estimate_dh_binned_with(
    pooled: &PooledDataset,
    spec: &SmootherSpec,
    grid: &[f64],
    exponent: BinExponent,
) -> Result<EstimateResult, EstimateError> {
    spec.validate()?;
    let geometry = match (&pooled.strategy, &pooled.bin_geometry) {
        (PoolingStrategy::Binned, Some(g)) => g,
        _ => {
            return Err(EstimateError::WrongStrategy {
                estimator: EstimatorTag::DhBinned,
                expected: "binned",
                found: pooled.strategy,
            })
        }
    };
    let d = pooled.dim;
    if !grid.len().is_multiple_of(d) {
        return Err(EstimateError::GridShape {
            len: grid.len(),
            dim: d,
        });
    }
    if d > 1 && spec.degree != 1 {
        return Err(EstimateError::MultivariateDegree(spec.degree));
    }
    let needed = 2 * (d + 1);
    if pooled.len() < needed {
        return Err(EstimateError::TooFewBins {
            nonempty: pooled.len(),
            needed,
        });
    }
    let z = pool_negatives(pooled)?;
    let centers: Vec<f64> = pooled
        .groups
        .iter()
        .flat_map(|g| g.center.clone())
        .collect();
    let points = grid.len() / d;
    let all_centers: Vec<f64> = (0..geometry.bin_count())
        .flat_map(|b| geometry.center(b))
        .collect();
    let all_counts: Vec<f64> = geometry.counts.iter().map(|&c| c as f64).collect();
    let local = |i: usize| match geometry.count_at(&grid[i * d..(i + 1) * d]) {
        None => Err(PointIssue::OutsideRegion),
        Some(0) if exponent == BinExponent::LocalCount => Err(PointIssue::EmptyBin),
        Some(m) => Ok(m as f64),
    };
    let smoothed = |i: usize, value: Result<f64, FitFailure>| -> Result<f64, PointIssue> {
        local(i)?;
        match value {
            Ok(m) if m > 0.0 => Ok(m),
            Ok(_) => Err(PointIssue::EmptyBin),
            Err(reason) => Err(PointIssue::FitFailed { reason }),
        }
    };
    let exps: Vec<Result<f64, PointIssue>>;
    let fits: Vec<PointFit>;
    let h;
    if d == 1 {
        let design = Design::new(centers, z)?;
        let covariates = member_covariates(pooled);
        let ctx = PluginContext {
            scale: Some(ResponseScale::PoolNegative { nu: pooled.nu }),
            covariates: Some(&covariates),
            n_individuals: Some(covariates.len()),
            interval: None,
        };
        h = select_bandwidth_with(&design, spec, &ctx)?;
        let smoother = |hh| LocalSmoother {
            kernel: spec.kernel,
            degree: spec.degree,
            h: hh,
        };
        exps = match exponent {
            BinExponent::LocalCount => (0..points).map(local).collect(),
            BinExponent::SmoothedCount => {
                let count_design = Design::new(all_centers, all_counts)?;
                (0..points)
                    .map(|i| smoothed(i, smoother(h).value_at(&count_design, grid[i])))
                    .collect()
            }
        };
        fits = exps
            .iter()
            .zip(grid)
            .map(|(m, &x)| match m {
                Err(issue) => Err(*issue),
                Ok(_) => fit_widening(h, spec.widen_on_failure, |hh| {
                    smoother(hh).value_at(&design, x)
                }),
            })
            .collect();
    } else {
        let design = DesignNd::new(centers, d, z)?;
        h = match &spec.bandwidth {
            BandwidthRule::Fixed(h) => *h,
            BandwidthRule::CrossValidation(search) => {
                select_bandwidth_nd(&design, spec.kernel, search)?
            }
            BandwidthRule::Plugin(_) => {
                return Err(SmoothError::PluginUnsupported(
                    "the plug-in rule is univariate; use cross-validation or a fixed bandwidth"
                        .into(),
                )
                .into())
            }
        };
        let smoother = |hh| LocalLinearNd {
            kernel: spec.kernel,
            h: hh,
        };
        exps = match exponent {
            BinExponent::LocalCount => (0..points).map(local).collect(),
            BinExponent::SmoothedCount => {
                let count_design = DesignNd::new(all_centers, d, all_counts)?;
                (0..points)
                    .map(|i| {
                        smoothed(
                            i,
                            smoother(h).value_at(&count_design, &grid[i * d..(i + 1) * d]),
                        )
                    })
                    .collect()
            }
        };
        fits = exps
            .iter()
            .enumerate()
            .map(|(i, m)| match m {
                Err(issue) => Err(*issue),
                Ok(_) => fit_widening(h, spec.widen_on_failure, |hh| {
                    smoother(hh).value_at(&design, &grid[i * d..(i + 1) * d])
                }),
            })
            .collect();
    }
    Ok(Assembly {
        estimator: EstimatorTag::DhBinned,
        dim: d,
        nu: pooled.nu,
        grid: grid.to_vec(),
        bandwidth: h,
        q_hat: None,
    }
    .finish(fits, |i, mu| {
        let m = exps[i].unwrap_or(1.0);
        let (v, flag) = ClampFlag::clamp(mu);
        (1.0 - v.powf(1.0 / m), flag)
    }))
}

/// A prevalence curve with known derivatives and covariate density.
pub trait TrueModel {
    fn p(&self, x: f64) -> f64;
    fn dp(&self, x: f64) -> f64;
    fn d2p(&self, x: f64) -> f64;
    fn density(&self, x: f64) -> f64;
    /// `E{1 - p(X)}`.
    fn mean_negative(&self) -> f64;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("covariate density is zero at x = {0}")]
    ZeroDensity(f64),
    #[error("p(x) = {p} at x = {x} is outside [0, 1)")]
    InvalidPrevalence { x: f64, p: f64 },
    #[error("pilot fit failed at x = {0}")]
    PilotFailed(f64),
}

/// First-order variance and bias of DH and DM at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDiagnostics {
    pub x: f64,
    pub p: f64,
    /// Standard deviation of the DH estimate.
    pub a: f64,
    /// Bias of the DH estimate.
    pub b: f64,
    /// Standard deviation of the DM estimate.
    pub a1: f64,
    /// Bias of the DM estimate.
    pub b1: f64,
    pub q: f64,
    pub lambda_n: f64,
    pub b_const: f64,
    pub v: f64,
}

/// Evaluates the first-order formulas from a curve estimate at `x`.
pub fn diagnostics_from_curve(
    x: f64,
    curve: CurveEstimate,
    q: f64,
    kernel: Kernel,
    nu: f64,
    n: f64,
    h: f64,
) -> Result<AsymptoticDiagnostics, DiagnosticsError> {
    if !(curve.density > 0.0) {
        return Err(DiagnosticsError::ZeroDensity(x));
    }
    if !(0.0..1.0).contains(&curve.p) {
        return Err(DiagnosticsError::InvalidPrevalence { x, p: curve.p });
    }
    let v = kernel.roughness() / curve.density;
    let b_const = kernel.second_moment();
    let a2 = asymptotics::homogeneous_variance_factor(curve.p, nu, n, v) / h;
    let a1_2 = asymptotics::random_pool_variance_factor(curve.p, q, nu, n, v) / h;
    Ok(AsymptoticDiagnostics {
        x,
        p: curve.p,
        a: a2.max(0.0).sqrt(),
        b: asymptotics::homogeneous_bias_factor(curve.p, curve.dp, curve.d2p, nu, b_const) * h * h,
        a1: a1_2.max(0.0).sqrt(),
        b1: asymptotics::random_pool_bias_factor(curve.d2p, b_const) * h * h,
        q,
        lambda_n: asymptotics::overpooling_lambda(curve.p, nu),
        b_const,
        v,
    })
}

/// Diagnostics from a known model.
pub fn asymptotic_diagnostics(
    model: &dyn TrueModel,
    kernel: Kernel,
    nu: f64,
    n: f64,
    h: f64,
    x: f64,
) -> Result<AsymptoticDiagnostics, DiagnosticsError> {
    let curve = CurveEstimate {
        p: model.p(x),
        dp: model.dp(x),
        d2p: model.d2p(x),
        density: model.density(x),
    };
    diagnostics_from_curve(x, curve, model.mean_negative(), kernel, nu, n, h)
}

/// Pilot multiplier applied to the working bandwidth in data mode.
const PILOT_FACTOR: f64 = 1.5;
/// Covariates used to average `1 - p̂` when estimating `q`.
const Q_POINTS: usize = 500;

fn pilot_diagnostics(
    pilot: &PilotCurve<'_>,
    covariates: &[f64],
    kernel: Kernel,
    nu: f64,
    h: f64,
    grid: &[f64],
) -> Vec<Result<AsymptoticDiagnostics, DiagnosticsError>> {
    let stride = (covariates.len() / Q_POINTS).max(1);
    let negatives: Vec<f64> = covariates
        .iter()
        .step_by(stride)
        .filter_map(|&x| pilot.at(x).map(|c| 1.0 - c.p))
        .collect();
    let q = if negatives.is_empty() {
        1.0
    } else {
        negatives.iter().sum::<f64>() / negatives.len() as f64
    };
    let n = covariates.len() as f64;
    grid.iter()
        .map(|&x| {
            let c = pilot.at(x).ok_or(DiagnosticsError::PilotFailed(x))?;
            diagnostics_from_curve(x, c, q, kernel, nu, n, h)
        })
        .collect()
}

/// Data-mode diagnostics for homogeneous pools, with `p`, `p'`, `p''` from a
/// local quadratic pilot fit at `1.5 h` and a normal-reference density.
pub fn pooled_data_diagnostics(
    pooled: &PooledDataset,
    kernel: Kernel,
    h: f64,
    grid: &[f64],
) -> Result<Vec<Result<AsymptoticDiagnostics, DiagnosticsError>>, EstimateError> {
    check_univariate(EstimatorTag::Dh, pooled.dim)?;
    let nu = common_size(pooled)? as f64;
    let design = dh_design(pooled)?;
    let covariates = member_covariates(pooled);
    let pilot = PilotCurve::new(
        &design,
        kernel,
        PILOT_FACTOR * h,
        ResponseScale::PoolNegative { nu },
        Some(&covariates),
    )?;
    Ok(pilot_diagnostics(&pilot, &covariates, kernel, nu, h, grid))
}

/// Data-mode diagnostics for individual outcomes, evaluated for pools of
/// size `nu` (what pooling these individuals would cost).
pub fn individual_data_diagnostics(
    raw: &RawDataset,
    kernel: Kernel,
    nu: f64,
    h: f64,
    grid: &[f64],
) -> Result<Vec<Result<AsymptoticDiagnostics, DiagnosticsError>>, EstimateError> {
    check_univariate(EstimatorTag::Ll, raw.dim())?;
    let y = raw
        .responses()
        .ok_or(EstimateError::MissingResponses("diagnostics need outcomes"))?;
    let z = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let design = Design::new(raw.covariates().to_vec(), z)?;
    let pilot = PilotCurve::new(
        &design,
        kernel,
        PILOT_FACTOR * h,
        ResponseScale::Direct,
        None,
    )?;
    Ok(pilot_diagnostics(
        &pilot,
        raw.covariates(),
        kernel,
        nu,
        h,
        grid,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::{pool_binned, pool_homogeneous, pool_random};
    use crate::smoother::BandwidthSearch;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, seed: u64, p: impl Fn(f64) -> f64) -> RawDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = x.iter().map(|&v| rng.random::<f64>() < p(v)).collect();
        RawDataset::univariate(x, Some(y)).unwrap()
    }

    fn cv() -> SmootherSpec {
        SmootherSpec::local_linear(Kernel::Gaussian, BandwidthRule::default())
    }

    #[test]
    fn dh_with_singleton_pools_is_ll() {
        let raw = synthetic(400, 3, |x| 0.05 + 0.3 * x * x);
        let grid = linspace(0.05, 0.95, 37);
        for spec in [
            cv(),
            SmootherSpec::fixed(Kernel::Epanechnikov, 1, 0.15),
            SmootherSpec::fixed(Kernel::Gaussian, 2, 0.2),
        ] {
            let ll = estimate_ll(&raw, &spec, &grid).unwrap();
            let dh = estimate_dh(&pool_homogeneous(&raw, 1).unwrap(), &spec, &grid).unwrap();
            assert_eq!(ll.bandwidth_used, dh.bandwidth_used);
            for (a, b) in ll.p_hat.iter().zip(&dh.p_hat) {
                assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dm_with_singleton_pools_is_ll() {
        let raw = synthetic(300, 4, |x| 0.1 + 0.2 * x);
        let grid = linspace(0.0, 1.0, 21);
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.2);
        let ll = estimate_ll(&raw, &spec, &grid).unwrap();
        let dm = estimate_dm(&pool_random(&raw, 1, 9).unwrap(), &spec, &grid).unwrap();
        assert_eq!(dm.q_hat.map(|q| q > 0.0), Some(true));
        for (a, b) in ll.p_hat.iter().zip(&dm.p_hat) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn root_transform_and_clamping() {
        // Constant responses make μ̂ equal to that constant.
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let raw = RawDataset::univariate(x, Some(vec![false; 50])).unwrap();
        let pooled = pool_homogeneous(&raw, 5).unwrap();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.3);
        let r = estimate_dh(&pooled, &spec, &[0.5]).unwrap();
        assert!((r.mu_hat[0].unwrap() - 1.0).abs() < 1e-12);
        assert!(r.p_hat[0].unwrap().abs() < 1e-12);

        let (m, f) = ClampFlag::clamp(1.03);
        assert_eq!((m, f), (1.0, ClampFlag::ClampedHigh));
        assert_eq!(1.0 - m.powf(0.2), 0.0);
        assert!((1.0 - 0.9f64.powf(0.2) - 0.020851637639023).abs() < 1e-12);
    }

    #[test]
    fn ll_constant_outcomes() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).fract()).collect();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.2);
        let zeros = RawDataset::univariate(x.clone(), Some(vec![false; 40])).unwrap();
        let ones = RawDataset::univariate(x, Some(vec![true; 40])).unwrap();
        let grid = linspace(0.0, 1.0, 11);
        assert!(estimate_ll(&zeros, &spec, &grid)
            .unwrap()
            .p_hat
            .iter()
            .all(|p| p.unwrap().abs() < 1e-12));
        assert!(estimate_ll(&ones, &spec, &grid)
            .unwrap()
            .p_hat
            .iter()
            .all(|p| (p.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dm_all_negative_and_all_positive() {
        let x: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.2);
        let neg = RawDataset::univariate(x.clone(), Some(vec![false; 60])).unwrap();
        let r = estimate_dm(&pool_random(&neg, 6, 1).unwrap(), &spec, &[0.5]).unwrap();
        assert_eq!(r.q_hat, Some(1.0));
        assert!(r.p_hat[0].unwrap().abs() < 1e-12);
        let pos = RawDataset::univariate(x, Some(vec![true; 60])).unwrap();
        let err = estimate_dm(&pool_random(&pos, 6, 1).unwrap(), &spec, &[0.5]).unwrap_err();
        assert_eq!(err, EstimateError::AllPoolsPositive { nu: 6 });
        assert!(err.to_string().contains("smaller pool size"));
    }

    #[test]
    fn strategy_and_response_checks() {
        let raw = synthetic(100, 5, |_| 0.1);
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.2);
        let random = pool_random(&raw, 5, 2).unwrap();
        assert!(matches!(
            estimate_dh(&random, &spec, &[0.5]),
            Err(EstimateError::WrongStrategy { .. })
        ));
        let sorted = pool_homogeneous(&raw, 5).unwrap();
        assert!(matches!(
            estimate_dm(&sorted, &spec, &[0.5]),
            Err(EstimateError::WrongStrategy { .. })
        ));
        let no_y = RawDataset::univariate(raw.covariates().to_vec(), None).unwrap();
        assert!(matches!(
            estimate_ll(&no_y, &spec, &[0.5]),
            Err(EstimateError::MissingResponses(_))
        ));
        let pooled = pool_homogeneous(&no_y, 5).unwrap();
        assert!(matches!(
            estimate_dh(&pooled, &spec, &[0.5]),
            Err(EstimateError::MissingResponses(_))
        ));
    }

    #[test]
    fn unequal_sizes_point_to_binned() {
        let raw = synthetic(20, 6, |_| 0.2);
        let mut pooled = pool_homogeneous(&raw, 5).unwrap();
        let moved = pooled.groups[1].members.pop().unwrap();
        pooled.groups[0].members.push(moved);
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.3);
        let err = estimate_dh(&pooled, &spec, &[0.5]).unwrap_err();
        assert!(err.to_string().contains("estimate_dh_binned"));
    }

    #[test]
    fn failed_points_and_widening() {
        let x = vec![0.0, 0.1, 0.2, 0.3, 0.8, 0.9, 1.0, 1.1];
        let raw = RawDataset::univariate(
            x,
            Some(vec![false, true, false, false, true, false, false, true]),
        )
        .unwrap();
        let mut spec = SmootherSpec::fixed(Kernel::Epanechnikov, 1, 0.12);
        let r = estimate_ll(&raw, &spec, &[0.15, 0.55]).unwrap();
        assert!(r.p_hat[0].is_some());
        assert!(r.p_hat[1].is_none());
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].index, 1);
        spec.widen_on_failure = true;
        let w = estimate_ll(&raw, &spec, &[0.15, 0.55]).unwrap();
        assert!(w.p_hat[1].is_some());
        assert_eq!(w.widened.len(), 1);
        assert!((w.widened[0].bandwidth - 0.48).abs() < 1e-12);
    }

    #[test]
    fn binned_constant_and_empty_bins() {
        let x: Vec<f64> = (0..40)
            .map(|i| (i as f64 + 0.5) / 40.0)
            .filter(|v| !(0.5..0.75).contains(v))
            .collect();
        let n = x.len();
        let raw = RawDataset::univariate(x, Some(vec![false; n])).unwrap();
        let pooled = pool_binned(&raw, n as f64 / 10.0).unwrap();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.2);
        let r = estimate_dh_binned(&pooled, &spec, &[0.1, 0.65, 0.9, 1.5]).unwrap();
        assert!(r.p_hat[0].unwrap().abs() < 1e-12);
        assert!(r.p_hat[2].unwrap().abs() < 1e-12);
        assert!(r.p_hat[1].is_none());
        assert!(r.p_hat[3].is_none());
        assert_eq!(r.failures[0].issue, PointIssue::EmptyBin);
        assert_eq!(r.failures[1].issue, PointIssue::OutsideRegion);
    }

    #[test]
    fn binned_two_dimensional_recovers_smooth_surface() {
        let truth = |a: f64, b: f64| 0.01 + 0.02 * (a + b);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let mut pts = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            pts.extend([a, b]);
            y.push(rng.random::<f64>() < truth(a, b));
        }
        let raw = RawDataset::new(pts, 2, Some(y)).unwrap();
        // J = 20 bins per axis, about 50 points per bin.
        let pooled = pool_binned(&raw, 50.0).unwrap();
        let geometry = pooled.bin_geometry.clone().unwrap();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.15);
        let axis = linspace(0.2, 0.8, 5);
        let grid: Vec<f64> = axis
            .iter()
            .flat_map(|&a| axis.iter().flat_map(move |&b| [a, b]))
            .collect();
        let r = estimate_dh_binned(&pooled, &spec, &grid).unwrap();
        let mut rel = 0.0;
        for i in 0..r.len() {
            let x = r.point(i);
            let p = r.p_hat[i].unwrap();
            rel += (p / truth(x[0], x[1]) - 1.0).abs() / r.len() as f64;
            let m = geometry.count_at(x).unwrap() as f64;
            assert!((r.mu_hat[i].unwrap() - (1.0 - p).powf(m)).abs() < 1e-12);
        }
        // The root at the local count m(x) adds relative noise of order
        // m^{-1/2} on top of the smoothing error.
        assert!(rel < 0.2, "{rel}");
    }

    #[test]
    fn smoothed_count_fills_empty_bins_and_tracks_the_mean_count() {
        let x: Vec<f64> = (0..40)
            .map(|i| (i as f64 + 0.5) / 40.0)
            .filter(|v| !(0.5..0.75).contains(v))
            .collect();
        let n = x.len();
        let raw = RawDataset::univariate(x, Some(vec![false; n])).unwrap();
        let pooled = pool_binned(&raw, n as f64 / 10.0).unwrap();
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.2);
        let r = estimate_dh_binned_with(
            &pooled,
            &spec,
            &[0.1, 0.65, 1.5],
            BinExponent::SmoothedCount,
        )
        .unwrap();
        assert!(r.p_hat[0].unwrap().abs() < 1e-12);
        assert!(r.p_hat[1].unwrap().abs() < 1e-12);
        assert!(r.p_hat[2].is_none());
        assert_eq!(
            "smoothed".parse::<BinExponent>().unwrap(),
            BinExponent::SmoothedCount
        );
        assert!("median".parse::<BinExponent>().is_err());

        // Root consistency against an independent local linear fit of the
        // bin counts at the same bandwidth.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..600).map(|_| rng.random()).collect();
        let ys: Vec<bool> = xs
            .iter()
            .map(|&v| rng.random::<f64>() < 0.05 + 0.1 * v)
            .collect();
        let raw = RawDataset::univariate(xs, Some(ys)).unwrap();
        let pooled = pool_binned(&raw, 6.0).unwrap();
        let g = pooled.bin_geometry.clone().unwrap();
        let counts = Design::new(
            (0..g.bin_count()).map(|b| g.center(b)[0]).collect(),
            g.counts.iter().map(|&c| c as f64).collect(),
        )
        .unwrap();
        let grid = linspace(0.1, 0.9, 9);
        let r = estimate_dh_binned_with(&pooled, &spec, &grid, BinExponent::SmoothedCount).unwrap();
        for (i, &x) in grid.iter().enumerate() {
            let m = LocalSmoother {
                kernel: Kernel::Gaussian,
                degree: 1,
                h: 0.2,
            }
            .value_at(&counts, x)
            .unwrap();
            assert!((m - 6.0).abs() < 1.0, "smoothed count {m}");
            let p = r.p_hat[i].unwrap();
            assert!((r.mu_hat[i].unwrap() - (1.0 - p).powf(m)).abs() < 1e-12);
        }
    }

    #[test]
    fn binned_plugin_rejected_in_two_dimensions() {
        let pts: Vec<f64> = (0..64)
            .flat_map(|i| [((i % 8) as f64 + 0.5) / 8.0, ((i / 8) as f64 + 0.5) / 8.0])
            .collect();
        let raw = RawDataset::new(pts, 2, Some(vec![false; 64])).unwrap();
        let pooled = pool_binned(&raw, 4.0).unwrap();
        let spec = SmootherSpec::local_linear(
            Kernel::Gaussian,
            BandwidthRule::Plugin(BandwidthSearch::default()),
        );
        assert!(matches!(
            estimate_dh_binned(&pooled, &spec, &[0.5, 0.5]),
            Err(EstimateError::Smooth(SmoothError::PluginUnsupported(_)))
        ));
    }

    #[test]
    fn ll_tracks_linear_truth() {
        let truth = |x: f64| 0.1 + 0.4 * x;
        let grid = linspace(0.1, 0.9, 9);
        let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, 0.1);
        let reps: Vec<Vec<f64>> = (0..100)
            .map(|s| {
                let r = estimate_ll(&synthetic(4000, 1000 + s, truth), &spec, &grid).unwrap();
                r.p_hat.iter().map(|v| v.unwrap()).collect()
            })
            .collect();
        for (i, &x) in grid.iter().enumerate() {
            let vals: Vec<f64> = reps.iter().map(|r| r[i]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
            assert!((mean - truth(x)).abs() < 3.0 * sd, "x={x}");
            let inside = vals
                .iter()
                .filter(|v| (*v - truth(x)).abs() < 3.0 * sd)
                .count();
            assert!(inside >= 95, "x={x}: {inside}");
        }
    }

    struct Quadratic;

    impl TrueModel for Quadratic {
        fn p(&self, x: f64) -> f64 {
            x * x / 8.0
        }
        fn dp(&self, x: f64) -> f64 {
            x / 4.0
        }
        fn d2p(&self, _: f64) -> f64 {
            0.25
        }
        fn density(&self, x: f64) -> f64 {
            if (0.0..=1.0).contains(&x) {
                1.0
            } else {
                0.0
            }
        }
        fn mean_negative(&self) -> f64 {
            1.0 - 1.0 / 24.0
        }
    }

    struct Flat(f64);

    impl TrueModel for Flat {
        fn p(&self, _: f64) -> f64 {
            self.0
        }
        fn dp(&self, _: f64) -> f64 {
            0.0
        }
        fn d2p(&self, _: f64) -> f64 {
            0.0
        }
        fn density(&self, _: f64) -> f64 {
            1.0
        }
        fn mean_negative(&self) -> f64 {
            1.0 - self.0
        }
    }

    #[test]
    fn diagnostics_closed_forms() {
        let d =
            asymptotic_diagnostics(&Flat(0.2), Kernel::Gaussian, 5.0, 1000.0, 0.1, 0.3).unwrap();
        assert_eq!(d.b, 0.0);
        assert_eq!(d.b1, 0.0);
        let one = asymptotic_diagnostics(&Flat(0.2), Kernel::Epanechnikov, 1.0, 1000.0, 0.1, 0.3)
            .unwrap();
        assert!((one.a * one.a - 0.2 * 0.8 * 0.6 / (1000.0 * 0.1)).abs() < 1e-15);
        assert!(one.lambda_n >= 1.0);
        let q = asymptotic_diagnostics(&Quadratic, Kernel::Gaussian, 5.0, 1e4, 0.2, 0.5).unwrap();
        let p: f64 = 1.0 / 32.0;
        let v = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        let a2 = (1.0 - p).powf(-3.0) * (1.0 - (1.0 - p).powi(5)) * v / (5.0 * 1e4 * 0.2);
        assert!((q.a * q.a - a2).abs() < 1e-15);
        assert!(matches!(
            asymptotic_diagnostics(&Quadratic, Kernel::Gaussian, 5.0, 1e4, 0.2, 1.5),
            Err(DiagnosticsError::ZeroDensity(_))
        ));
    }

    #[test]
    fn diagnostics_variance_scales_with_prevalence() {
        struct Scaled(f64);
        impl TrueModel for Scaled {
            fn p(&self, x: f64) -> f64 {
                self.0 * x * x / 8.0
            }
            fn dp(&self, x: f64) -> f64 {
                self.0 * x / 4.0
            }
            fn d2p(&self, _: f64) -> f64 {
                self.0 / 4.0
            }
            fn density(&self, _: f64) -> f64 {
                1.0
            }
            fn mean_negative(&self) -> f64 {
                1.0 - self.0 / 24.0
            }
        }
        let full =
            asymptotic_diagnostics(&Scaled(0.2), Kernel::Gaussian, 5.0, 1e4, 0.2, 0.5).unwrap();
        let half =
            asymptotic_diagnostics(&Scaled(0.1), Kernel::Gaussian, 5.0, 1e4, 0.2, 0.5).unwrap();
        let ratio = (half.a * half.a) / (full.a * full.a);
        assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn data_mode_diagnostics_are_sensible() {
        let raw = synthetic(5000, 8, |x| x * x / 8.0);
        let pooled = pool_homogeneous(&raw, 5).unwrap();
        let d = pooled_data_diagnostics(&pooled, Kernel::Gaussian, 0.2, &[0.5]).unwrap();
        let d = d[0].clone().unwrap();
        assert!(d.a > 0.0 && (0.0..0.2).contains(&d.p));
        assert!(d.q > 0.9 && d.q <= 1.0);
        let i = individual_data_diagnostics(&raw, Kernel::Gaussian, 5.0, 0.2, &[0.5]).unwrap();
        assert!(i[0].as_ref().unwrap().a > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn outputs_in_unit_interval_and_root_consistent(seed in 0u64..10_000, nu in 1usize..8, h in 0.05f64..0.5) {
            let raw = synthetic(nu * 40, seed, |x| 0.3 * x);
            let pooled = pool_homogeneous(&raw, nu).unwrap();
            let spec = SmootherSpec::fixed(Kernel::Gaussian, 1, h);
            let grid = linspace(0.0, 1.0, 15);
            let dh = estimate_dh(&pooled, &spec, &grid).unwrap();
            for ((p, mu), flag) in dh.p_hat.iter().zip(&dh.mu_hat).zip(&dh.clamp_flags) {
                let (p, mu) = (p.unwrap(), mu.unwrap());
                prop_assert!((0.0..=1.0).contains(&p));
                if *flag == ClampFlag::None {
                    prop_assert!((mu - (1.0 - p).powi(nu as i32)).abs() < 1e-12);
                }
            }
            let ll = estimate_ll(&raw, &spec, &grid).unwrap();
            prop_assert!(ll.p_hat.iter().all(|p| (0.0..=1.0).contains(&p.unwrap())));
            if let Ok(dm) = estimate_dm(&pool_random(&raw, nu, seed).unwrap(), &spec, &grid) {
                prop_assert!(dm.p_hat.iter().all(|p| (0.0..=1.0).contains(&p.unwrap())));
            }
        }

        #[test]
        fn smoother_stage_is_scale_equivariant(seed in 0u64..10_000, c in 0.1f64..10.0) {
            let raw = synthetic(200, seed, |x| 0.4 * x);
            let design = dh_design(&pool_homogeneous(&raw, 4).unwrap()).unwrap();
            let scaled: Vec<f64> = design.responses().iter().map(|z| c * z).collect();
            let design_c = design.with_responses(&scaled).unwrap();
            let s = LocalSmoother::new(Kernel::Gaussian, 1, 0.2).unwrap();
            for x in [0.1, 0.5, 0.9] {
                let a = s.value_at(&design, x).unwrap();
                let b = s.value_at(&design_c, x).unwrap();
                prop_assert!((c * a - b).abs() < 1e-12 * c.max(1.0));
            }
        }
    }
}
