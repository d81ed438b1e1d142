//! Symmetric smoothing kernels.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A density-normalized, symmetric, nonnegative kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// Standard normal density.
    #[default]
    Gaussian,
    /// `3/4 (1 - u^2)` on `[-1, 1]`.
    Epanechnikov,
    /// `1/2` on `[-1, 1]`.
    Uniform,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Gaussian, Kernel::Epanechnikov, Kernel::Uniform];

    /// Kernel density at `u`.
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Uniform => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// Unnormalized radial profile used for d-variate smoothing, `k(|t|)`.
    ///
    /// Only ratios of these values matter to a local polynomial fit, so the
    /// d-dimensional normalizing constant is dropped.
    #[inline]
    pub fn radial_profile(self, r2: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * r2).exp(),
            Kernel::Epanechnikov => {
                if r2 <= 1.0 {
                    1.0 - r2
                } else {
                    0.0
                }
            }
            Kernel::Uniform => {
                if r2 <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width of the support in units of the bandwidth; `None` for
    /// kernels with unbounded support.
    pub fn support_radius(self) -> Option<f64> {
        match self {
            Kernel::Gaussian => None,
            Kernel::Epanechnikov | Kernel::Uniform => Some(1.0),
        }
    }

    /// `∫ u² K(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel::Gaussian => 1.0,
            Kernel::Epanechnikov => 0.2,
            Kernel::Uniform => 1.0 / 3.0,
        }
    }

    /// `∫ K(u)² du`.
    pub fn roughness(self) -> f64 {
        match self {
            Kernel::Gaussian => 1.0 / (2.0 * PI.sqrt()),
            Kernel::Epanechnikov => 0.6,
            Kernel::Uniform => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Kernel::Gaussian),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "uniform" | "box" => Ok(Kernel::Uniform),
            other => Err(format!("unknown kernel '{other}'")),
        }
    }
}
