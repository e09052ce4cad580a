//! Reflected stochastic differential equations driven by G-Brownian motion.
//!
//! The crate covers the whole pipeline on a discrete time grid:
//!
//! - [`grid`]: time grids, sample paths, Riemann–Stieltjes sums.
//! - [`gbm`]: G-Brownian scenarios under volatility controls.
//! - [`skorokhod`]: the one-dimensional Skorokhod map.
//! - [`rgsde`]: reflected Euler and Picard solvers, comparison and stability.
//! - [`gexpect`]: upper expectations, capacities, BDG checks, the G-heat PDE.
//! - [`ito`]: residual of the discrete Itô formula.
//! - [`config`] and [`runner`]: TOML experiments and their outputs.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod expr;
pub mod gbm;
pub mod gexpect;
pub mod grid;
pub mod ito;
pub mod rgsde;
pub mod rng;
pub mod runner;
pub mod skorokhod;

pub use config::{parse_config, serialize_config, ConfigError, ExperimentKind, ExperimentSpec};
pub use error::{Error, Result};
pub use gbm::{build_family, simulate_ensemble, simulate_scenario, FamilySpec, GScenario, VolatilityBand, VolatilityControl};
pub use grid::{EndpointRule, IncreasingPath, SamplePath, TimeGrid};
pub use rgsde::{euler_reflected, picard_solve, Coefficient, ObstacleSpec, RGSDEProblem, RGSDESolution};
pub use skorokhod::{skorokhod_map, ReflectedPair};

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order is always index order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}
