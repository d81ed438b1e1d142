//! d-variate local linear smoothing with a radially symmetric kernel.

use super::bandwidth::{argmin_smallest, geometric_grid, scoring_positions};
use super::{BandwidthSearch, FitFailure, SmoothError, SINGULAR_PIVOT};
use crate::kernel::Kernel;
use crate::linalg::{solve_in_place, MAX_DIM};

/// Design points in `d` dimensions (row-major) with scalar responses.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignNd {
    points: Vec<f64>,
    dim: usize,
    z: Vec<f64>,
}

impl DesignNd {
    pub fn new(points: Vec<f64>, dim: usize, z: Vec<f64>) -> Result<Self, SmoothError> {
        if dim == 0 || dim + 1 > MAX_DIM {
            return Err(SmoothError::InvalidSearch(format!(
                "dimension {dim} outside 1..={}",
                MAX_DIM - 1
            )));
        }
        if points.len() != dim * z.len() {
            return Err(SmoothError::LengthMismatch {
                covariates: points.len() / dim,
                responses: z.len(),
            });
        }
        if z.is_empty() {
            return Err(SmoothError::EmptyDesign);
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(SmoothError::NonFinite(i / dim));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(SmoothError::NonFinite(i));
        }
        Ok(DesignNd { points, dim, z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn responses(&self) -> &[f64] {
        &self.z
    }

    fn max_span(&self) -> f64 {
        (0..self.dim)
            .map(|k| {
                let (lo, hi) =
                    (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
                        let v = self.points[j * self.dim + k];
                        (lo.min(v), hi.max(v))
                    });
                hi - lo
            })
            .fold(0.0, f64::max)
    }
}

struct NdSolve {
    a: [f64; MAX_DIM],
    t: [f64; MAX_DIM],
    nonzero: usize,
}

/// Local linear smoother in `d` dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLinearNd {
    pub kernel: Kernel,
    pub h: f64,
}

impl LocalLinearNd {
    pub fn new(kernel: Kernel, h: f64) -> Result<Self, SmoothError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(SmoothError::InvalidBandwidth(h));
        }
        Ok(LocalLinearNd { kernel, h })
    }

    fn solve(&self, design: &DesignNd, x: &[f64]) -> Result<NdSolve, FitFailure> {
        let d = design.dim;
        let n = d + 1;
        let inv_h = 1.0 / self.h;
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        let mut t = [0.0; MAX_DIM];
        let mut phi = [0.0; MAX_DIM];
        let mut nonzero = 0;
        for j in 0..design.len() {
            let p = design.point(j);
            phi[0] = 1.0;
            let mut r2 = 0.0;
            for k in 0..d {
                let tk = (p[k] - x[k]) * inv_h;
                phi[k + 1] = tk;
                r2 += tk * tk;
            }
            let w = self.kernel.radial_profile(r2);
            if w <= 0.0 {
                continue;
            }
            nonzero += 1;
            let zj = design.z[j];
            for a in 0..n {
                let wa = w * phi[a];
                t[a] += wa * zj;
                for b in a..n {
                    m[a][b] += wa * phi[b];
                }
            }
        }
        if nonzero < n {
            return Err(FitFailure::InsufficientData {
                distinct: nonzero,
                needed: n,
            });
        }
        for a in 0..n {
            for b in 0..a {
                m[a][b] = m[b][a];
            }
        }
        let mut a = [0.0; MAX_DIM];
        a[0] = 1.0;
        solve_in_place(&mut m, &mut a, n, SINGULAR_PIVOT)
            .map_err(|p| FitFailure::Singular { relative_pivot: p })?;
        Ok(NdSolve { a, t, nonzero })
    }

    pub fn value_at(&self, design: &DesignNd, x: &[f64]) -> Result<f64, FitFailure> {
        debug_assert_eq!(x.len(), design.dim);
        let s = self.solve(design, x)?;
        Ok(s.a
            .iter()
            .zip(&s.t)
            .take(design.dim + 1)
            .map(|(a, t)| a * t)
            .sum())
    }

    /// Number of design points with positive weight at `x`.
    pub fn local_count(&self, design: &DesignNd, x: &[f64]) -> usize {
        self.solve(design, x).map(|s| s.nonzero).unwrap_or(0)
    }

    pub(crate) fn leave_one_out(&self, design: &DesignNd, j: usize) -> Result<f64, FitFailure> {
        let x = design.point(j).to_vec();
        let s = self.solve(design, &x)?;
        if s.nonzero <= design.dim + 1 {
            return Err(FitFailure::InsufficientData {
                distinct: s.nonzero - 1,
                needed: design.dim + 1,
            });
        }
        let fitted: f64 =
            s.a.iter()
                .zip(&s.t)
                .take(design.dim + 1)
                .map(|(a, t)| a * t)
                .sum();
        let leverage = self.kernel.radial_profile(0.0) * s.a[0];
        let denom = 1.0 - leverage;
        if !(denom > 1e-10) {
            return Err(FitFailure::DegenerateLeverage);
        }
        Ok((fitted - leverage * design.z[j]) / denom)
    }
}

/// Leave-one-out cross-validated bandwidth for a d-variate design.
pub fn select_bandwidth_nd(
    design: &DesignNd,
    kernel: Kernel,
    search: &BandwidthSearch,
) -> Result<f64, SmoothError> {
    search.validate()?;
    let needed = 2 * (design.dim + 1);
    if design.len() < needed {
        return Err(SmoothError::TooFewPoints {
            points: design.len(),
            needed,
        });
    }
    let span = design.max_span().max(f64::MIN_POSITIVE);
    let candidates = if search.candidates.is_empty() {
        let (lo, hi) = search.resolved_bounds(span);
        geometric_grid(lo, hi, search.grid_size)
    } else {
        let mut c = search.candidates.clone();
        c.sort_by(f64::total_cmp);
        c
    };
    let positions = scoring_positions(design.len(), search.max_loo_points);
    let scores: Vec<Option<f64>> = candidates
        .iter()
        .map(|&h| {
            let s = LocalLinearNd::new(kernel, h).ok()?;
            let mut acc = 0.0;
            for &j in &positions {
                let pred = s.leave_one_out(design, j).ok()?;
                acc += (design.z[j] - pred).powi(2);
            }
            Some(acc / positions.len() as f64)
        })
        .collect();
    let n = design.len() as f64;
    let mean = design.z.iter().sum::<f64>() / n;
    let var = design.z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let h = argmin_smallest(&candidates, &scores, var).ok_or(SmoothError::NoUsableBandwidth {
        smallest_usable: candidates.last().copied().unwrap_or(span) * 2.0,
    })?;
    Ok(match search.bounds {
        Some((lo, hi)) => h.clamp(lo, hi),
        None => h,
    })
}
