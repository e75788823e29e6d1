//! Robust clustering of probability distributions in L2-Wasserstein space.
//!
//! The crate computes trimmed k-barycenters: `k` distributions that best
//! summarize a weighted set of distributions after discarding a fraction `α`
//! of the most discrepant mass. Two geometries have closed-form distances and
//! barycenters and are supported natively:
//!
//! * location-scatter families, represented by [`GaussianDistribution`]
//!   (mean vector plus covariance), with the Bures-Wasserstein distance and
//!   the covariance fixed-point barycenter;
//! * univariate distributions, represented by their quantile function on a
//!   fixed midpoint grid ([`QuantileFunction`]).
//!
//! On top of the solver, [`aggregate`] builds a robust consensus of the
//! k-feature reports produced by `m` independent clustering units, and
//! [`datagen`] provides the simulation and per-unit fitting machinery used to
//! exercise the whole pipeline.

pub mod aggregate;
pub mod datagen;
pub mod error;
pub mod kbary;
pub mod linalg;
pub mod wasserstein;

pub use error::{Error, Result};
pub use kbary::{solve_trimmed_kbarycenter, SolverConfig, TrimSolution};
pub use linalg::{SpdMatrix, SymMatrix};
pub use wasserstein::{
    w2_distance, Distribution, GaussianDistribution, QuantileFunction, Space,
    WeightedDistributionSet,
};
