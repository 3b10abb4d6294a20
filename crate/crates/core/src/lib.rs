//! Hierarchical component selection by proportional-redistribution price
//! dynamics.
//!
//! Every selector keeps a weight vector over its children, routes by those
//! weights and, after each round, moves mass towards or away from the child
//! it chose. A selected child learns whether its parent approved from the
//! sign of the change in its own weight, so no evaluation needs to be
//! reported down the tree.
//!
//! * [`mechanism`]: simplex vectors, the two redistribution updates, signals.
//! * [`hierarchy`]: trees, routing, the per-round delta and explicit protocols.
//! * [`equilibrium`]: closed-form equilibria, drift, Jacobian, ODE probe.
//! * [`simlab`]: generators, schedules, experiment runner and metrics.
//! * [`ingest`]: natural-hierarchy CSV loading and quality normalisation.
//!
//! The math is generic over the scalar: the update rules accept any
//! [`Scalar`] (including exact rationals), the sampled and analysed parts any
//! [`Real`]. The aliases below fix the common instantiations.

pub mod equilibrium;
mod error;
pub mod hierarchy;
pub mod ingest;
pub mod mechanism;
mod scalar;
pub mod simlab;

pub use error::{Error, IngestError, Result, TreeError};
pub use scalar::{Real, Scalar};

use num_rational::BigRational;

/// Double-precision price vector.
pub type Prices = mechanism::PriceVector<f64>;
/// Exact rational price vector; the sum identity holds with equality.
pub type ExactPrices = mechanism::PriceVector<BigRational>;
pub type Rate = mechanism::UpdateRate<f64>;
pub type ExactRate = mechanism::UpdateRate<BigRational>;
pub type Delta = mechanism::WeightDelta<f64>;
pub type SelectorTree = hierarchy::Tree<f64>;
pub type SelectorTree32 = hierarchy::Tree<f32>;
pub type Schedule = hierarchy::EtaSchedule<f64>;
pub type Qualities = equilibrium::QualityVector<f64>;
pub type Equilibrium = equilibrium::EquilibriumSolution<f64>;
pub type Drift = equilibrium::DriftVector<f64>;
pub type Jacobian = equilibrium::JacobianMatrix<f64>;
