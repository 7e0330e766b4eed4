//! Per-variety crop yield prediction and risk-balanced planting portfolios.
//!
//! The pipeline has three stages:
//!
//! 1. **Prediction** — a two-layer hierarchical model. A shared random-forest
//!    regressor predicts the check yield (site productivity reference) from
//!    soil, region and weather attributes; per-variety forests predict each
//!    variety's yield ratio relative to the check. Variety yield is the
//!    product of the two, plus a variety-specific residual noise term.
//! 2. **Simulation** — next-year weather is unknown, so weather attributes are
//!    resampled from historical records of sites near (or climatically similar
//!    to) the target site, producing a scenario matrix of simulated yields per
//!    variety.
//! 3. **Decision** — a planting portfolio (grid-quantized weights over at most
//!    a few varieties) is selected by one of three models: mean-variance
//!    utility, yield maximization under a variance cap, or empirical-quantile
//!    (robust) maximization.
//!
//! All numeric code is generic over the scalar type via [`Scalar`]; `f64` is
//! the default used by the CLI and the aliases below.

pub mod clustering;
pub mod dataset;
pub mod decision;
pub mod error;
pub mod forest;
pub mod hierarchy;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the main pipeline types.
pub type Dataset64 = dataset::Dataset<f64>;
pub type ForestModel64 = forest::ForestModel<f64>;
pub type CorrelationMatrix64 = clustering::CorrelationMatrix<f64>;
pub type ClusterAssignment64 = clustering::ClusterAssignment<f64>;
pub type HierarchicalModel64 = hierarchy::HierarchicalModel<f64>;
pub type ScenarioMatrix64 = scenario::ScenarioMatrix<f64>;
pub type ScenarioStats64 = scenario::ScenarioStats<f64>;
pub type Solution64 = decision::Solution<f64>;
