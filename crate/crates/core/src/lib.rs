//! Nonparametric estimation of a prevalence curve `p(x) = P(Y = 1 | X = x)`
//! when individuals are tested in pools and only pool results are observed.
//!
//! The main estimator pools individuals with similar covariates, smooths the
//! pool-negative indicators to estimate `(1 - p)^ν`, and takes the `ν`-th
//! root. A random-pooling reconstruction and the ungrouped local linear fit
//! are provided for comparison, together with a Monte Carlo harness.

pub mod asymptotics;
pub mod density;
pub mod estimators;
pub mod io;
pub mod kernel;
mod linalg;
pub mod par;
pub mod pooling;
pub mod simulation;
pub mod smoother;

pub use estimators::{
    estimate_dh, estimate_dh_binned, estimate_dh_binned_with, estimate_dm, estimate_ll,
    BinExponent, ClampFlag, EstimateError, EstimateResult, EstimatorTag,
};
pub use kernel::Kernel;
pub use par::Execution;
pub use pooling::{
    pool_binned, pool_homogeneous, pool_random, pooled_negative_probability, PooledDataset,
    PoolingError, PoolingStrategy, RawDataset,
};
pub use smoother::{BandwidthRule, BandwidthSearch, SmoothError, SmootherSpec};
