//! Explicit uniqueness regions for Gibbs point processes with non-negative
//! pair potentials.
//!
//! The crate computes activity bounds `z_bar(beta)` below which the Gibbs
//! measure is unique, under four criteria:
//!
//! - the limiting Dobrushin bound `z M(beta) < 1` ([`criteria::dobrushin_bound`]),
//! - the fixed-mesh Dobrushin sum over single-cube specifications ([`dobrushin_grid`]),
//! - the constant-weight cluster expansion bound `z M(beta) < 1/e`,
//! - disagreement percolation `z < z_c(d) / R^d`,
//!
//! where `M(beta)` is the integral of the Mayer function `1 - exp(-beta phi)`.
//! A grand-canonical Metropolis-Hastings sampler with an exact small-window
//! oracle ([`sampler`]) probes the same regions empirically.
//!
//! All numerics are generic over [`Scalar`] (`f32`, `f64`); the `*64`
//! aliases below fix the common `f64` case.

pub mod criteria;
pub mod dobrushin_grid;
pub mod error;
pub mod extended;
pub mod mayer;
pub mod numerics;
pub mod potentials;
pub mod sampler;
mod scalar;

pub use error::{Error, Result};
pub use extended::Extended;
pub use scalar::{distance, Scalar};

pub type PairPotential64 = potentials::PairPotential<f64>;
pub type PairPotential32 = potentials::PairPotential<f32>;
pub type Cube64 = numerics::Cube<f64>;
pub type MayerIntegral64 = mayer::MayerIntegralResult<f64>;
pub type PsiIntegral64 = mayer::PsiIntegralResult<f64>;
pub type UniquenessBound64 = criteria::UniquenessBound<f64>;
pub type Discretization64 = dobrushin_grid::Discretization<f64>;
pub type BoundaryConfiguration64 = dobrushin_grid::BoundaryConfiguration<f64>;
pub type ChainSettings64 = sampler::ChainSettings<f64>;
pub type Window64 = sampler::Window<f64>;
