//! Building pooled datasets from individual samples.
//!
//! Three constructions are supported: homogeneous pools of consecutive
//! order statistics, uniformly random pools, and equal-width bins of the
//! unit cube for multivariate (or unequal-size) pooling. A pool tests
//! positive when at least one member is positive.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolingError {
    #[error("dataset is empty")]
    Empty,
    #[error("covariate matrix has {values} values, not a multiple of dimension {dim}")]
    Shape { values: usize, dim: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite covariate at row {0}")]
    NonFinite(usize),
    #[error("{responses} responses for {rows} covariate rows")]
    ResponseLength { rows: usize, responses: usize },
    #[error("group size must be at least 1, got {0}")]
    InvalidGroupSize(f64),
    #[error(
        "group size {nu} does not divide N = {n}; equal-count pools need ν | N, use binned pooling for unequal groups"
    )]
    NotDivisible { n: usize, nu: usize },
    #[error("sorted pooling is univariate but the data have dimension {0}; use binned pooling")]
    NeedsBinning(usize),
    #[error(
        "(N/ν)^(1/d) = {bins_per_axis:.6} is not an integer; nearest valid group sizes are {suggestions:?}"
    )]
    NonIntegerBins {
        bins_per_axis: f64,
        suggestions: Vec<f64>,
    },
}

/// Individual covariates (row-major, `dim` columns) with optional outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    covariates: Vec<f64>,
    dim: usize,
    responses: Option<Vec<bool>>,
}

impl RawDataset {
    pub fn new(
        covariates: Vec<f64>,
        dim: usize,
        responses: Option<Vec<bool>>,
    ) -> Result<Self, PoolingError> {
        if dim == 0 {
            return Err(PoolingError::ZeroDimension);
        }
        if !covariates.len().is_multiple_of(dim) {
            return Err(PoolingError::Shape {
                values: covariates.len(),
                dim,
            });
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(PoolingError::NonFinite(i / dim));
        }
        let rows = covariates.len() / dim;
        if let Some(r) = &responses {
            if r.len() != rows {
                return Err(PoolingError::ResponseLength {
                    rows,
                    responses: r.len(),
                });
            }
        }
        Ok(RawDataset {
            covariates,
            dim,
            responses,
        })
    }

    pub fn univariate(x: Vec<f64>, y: Option<Vec<bool>>) -> Result<Self, PoolingError> {
        RawDataset::new(x, 1, y)
    }

    pub fn len(&self) -> usize {
        self.covariates.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major covariate values.
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn responses(&self) -> Option<&[bool]> {
        self.responses.as_deref()
    }

    pub fn has_responses(&self) -> bool {
        self.responses.is_some()
    }
}

/// One pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Row indices into the raw dataset.
    pub members: Vec<usize>,
    /// Member covariates, row-major.
    pub member_covariates: Vec<f64>,
    /// Member mean, or the bin center for binned pools.
    pub center: Vec<f64>,
    /// Pool test result `Y* = max Y`, when member outcomes are known.
    pub pooled_positive: Option<bool>,
    /// Flat bin index for binned pools.
    #[serde(default)]
    pub bin: Option<usize>,
}

impl Group {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// `Z* = 1 - Y*`.
    pub fn pooled_negative(&self) -> Option<bool> {
        self.pooled_positive.map(|y| !y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    HomogeneousSorted,
    Random,
    Binned,
    /// Pools formed elsewhere whose homogeneity was not established.
    External,
}

/// Equal-width bins of `[0,1]^d`, intervals `(k/J, (k+1)/J]` with the
/// origin face closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGeometry {
    pub dim: usize,
    pub bins_per_axis: usize,
    pub width: f64,
    /// Points per bin, flat index `Σ k_l J^(d-1-l)`.
    pub counts: Vec<usize>,
    /// Points outside the unit cube, excluded from every bin.
    pub outside: usize,
}

impl BinGeometry {
    fn axis_index(j: usize, x: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        if x == 0.0 {
            return Some(0);
        }
        let jf = j as f64;
        let mut k = ((x * jf).ceil() as usize).clamp(1, j) - 1;
        // Edges are the floating values k/J; settle ties against them.
        while k > 0 && x <= k as f64 / jf {
            k -= 1;
        }
        while k + 1 < j && x > (k + 1) as f64 / jf {
            k += 1;
        }
        Some(k)
    }

    /// Flat index of the bin containing `x`, `None` outside the cube.
    pub fn bin_of(&self, x: &[f64]) -> Option<usize> {
        debug_assert_eq!(x.len(), self.dim);
        let mut flat = 0;
        for &v in x {
            flat = flat * self.bins_per_axis + Self::axis_index(self.bins_per_axis, v)?;
        }
        Some(flat)
    }

    pub fn axis_indices(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rem = flat;
        for slot in idx.iter_mut().rev() {
            *slot = rem % self.bins_per_axis;
            rem /= self.bins_per_axis;
        }
        idx
    }

    /// Center `((k_l + ½) w)_l` of a bin.
    pub fn center(&self, flat: usize) -> Vec<f64> {
        self.axis_indices(flat)
            .into_iter()
            .map(|k| (k as f64 + 0.5) * self.width)
            .collect()
    }

    /// Count of the bin containing `x`: the local group size `m(x)`.
    pub fn count_at(&self, x: &[f64]) -> Option<usize> {
        self.bin_of(x).map(|b| self.counts[b])
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledDataset {
    pub groups: Vec<Group>,
    pub strategy: PoolingStrategy,
    /// Nominal group size (may be fractional for bins).
    pub nu: f64,
    pub dim: usize,
    pub bin_geometry: Option<BinGeometry>,
    /// Individuals in the source sample.
    pub n_individuals: usize,
}

impl PooledDataset {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// The common group size, `None` if sizes differ.
    pub fn common_size(&self) -> Option<usize> {
        let first = self.groups.first()?.size();
        self.groups
            .iter()
            .all(|g| g.size() == first)
            .then_some(first)
    }

    pub fn has_results(&self) -> bool {
        self.groups.iter().all(|g| g.pooled_positive.is_some())
    }

    /// Max covariate of each group is at most the min of the next, after
    /// ordering groups by their smallest member (univariate only).
    pub fn is_contiguous(&self) -> bool {
        if self.dim != 1 {
            return false;
        }
        let mut ranges: Vec<(f64, f64)> = self
            .groups
            .iter()
            .map(|g| {
                g.member_covariates
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect();
        ranges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        ranges.windows(2).all(|w| w[0].1 <= w[1].0)
    }
}

fn mean_point(raw: &RawDataset, members: &[usize]) -> Vec<f64> {
    let d = raw.dim();
    let mut c = vec![0.0; d];
    for &i in members {
        for (k, v) in raw.point(i).iter().enumerate() {
            c[k] += v;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

fn make_group(raw: &RawDataset, members: Vec<usize>, center: Option<Vec<f64>>) -> Group {
    let member_covariates = members
        .iter()
        .flat_map(|&i| raw.point(i).to_vec())
        .collect();
    let pooled_positive = raw.responses().map(|y| members.iter().any(|&i| y[i]));
    let center = center.unwrap_or_else(|| mean_point(raw, &members));
    Group {
        members,
        member_covariates,
        center,
        pooled_positive,
        bin: None,
    }
}

fn check_divisible(raw: &RawDataset, nu: usize) -> Result<(), PoolingError> {
    if raw.is_empty() {
        return Err(PoolingError::Empty);
    }
    if nu == 0 {
        return Err(PoolingError::InvalidGroupSize(0.0));
    }
    if !raw.len().is_multiple_of(nu) {
        return Err(PoolingError::NotDivisible { n: raw.len(), nu });
    }
    Ok(())
}

/// Sorts the sample and forms pools of `nu` consecutive order statistics.
///
/// Ties are broken by original row index.
pub fn pool_homogeneous(raw: &RawDataset, nu: usize) -> Result<PooledDataset, PoolingError> {
    if raw.dim() != 1 {
        return Err(PoolingError::NeedsBinning(raw.dim()));
    }
    check_divisible(raw, nu)?;
    let x = raw.covariates();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let groups = order
        .chunks(nu)
        .map(|c| make_group(raw, c.to_vec(), None))
        .collect();
    Ok(PooledDataset {
        groups,
        strategy: PoolingStrategy::HomogeneousSorted,
        nu: nu as f64,
        dim: 1,
        bin_geometry: None,
        n_individuals: raw.len(),
    })
}

/// Uniformly random partition into `N/ν` pools from a seeded shuffle.
pub fn pool_random(raw: &RawDataset, nu: usize, seed: u64) -> Result<PooledDataset, PoolingError> {
    check_divisible(raw, nu)?;
    let mut order: Vec<usize> = (0..raw.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let groups = order
        .chunks(nu)
        .map(|c| make_group(raw, c.to_vec(), None))
        .collect();
    Ok(PooledDataset {
        groups,
        strategy: PoolingStrategy::Random,
        nu: nu as f64,
        dim: raw.dim(),
        bin_geometry: None,
        n_individuals: raw.len(),
    })
}

/// Bins `[0,1]^d` into cubes of side `(ν/N)^{1/d}`; each nonempty bin is a
/// pool centered at the bin center. Points outside the cube are counted in
/// [`BinGeometry::outside`] and left out.
pub fn pool_binned(raw: &RawDataset, nu: f64) -> Result<PooledDataset, PoolingError> {
    if raw.is_empty() {
        return Err(PoolingError::Empty);
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(PoolingError::InvalidGroupSize(nu));
    }
    let d = raw.dim();
    let n = raw.len() as f64;
    let per_axis = (n / nu).powf(1.0 / d as f64);
    let rounded = per_axis.round();
    if rounded < 1.0 || (per_axis - rounded).abs() > 1e-9 * per_axis.max(1.0) {
        let lo = per_axis.floor().max(1.0);
        let hi = per_axis.ceil().max(1.0);
        let mut suggestions: Vec<f64> = [lo, hi].iter().map(|j| n / j.powi(d as i32)).collect();
        suggestions.dedup();
        return Err(PoolingError::NonIntegerBins {
            bins_per_axis: per_axis,
            suggestions,
        });
    }
    let j = rounded as usize;
    let total = j.pow(d as u32);
    let mut geometry = BinGeometry {
        dim: d,
        bins_per_axis: j,
        width: 1.0 / j as f64,
        counts: vec![0; total],
        outside: 0,
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); total];
    for i in 0..raw.len() {
        match geometry.bin_of(raw.point(i)) {
            Some(b) => members[b].push(i),
            None => geometry.outside += 1,
        }
    }
    let mut groups = Vec::new();
    for (b, m) in members.into_iter().enumerate() {
        geometry.counts[b] = m.len();
        if m.is_empty() {
            continue;
        }
        let mut g = make_group(raw, m, Some(geometry.center(b)));
        g.bin = Some(b);
        groups.push(g);
    }
    Ok(PooledDataset {
        groups,
        strategy: PoolingStrategy::Binned,
        nu,
        dim: d,
        bin_geometry: Some(geometry),
        n_individuals: raw.len(),
    })
}

/// Probability that a pool with member prevalences `p` tests negative,
/// `∏ (1 - p_i)`.
pub fn pooled_negative_probability(p: &[f64]) -> f64 {
    p.iter().map(|v| 1.0 - v).product()
}
