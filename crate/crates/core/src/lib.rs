//! Composite τ- and composite S-estimators for linear mixed models with a
//! variance-components covariance `Σ(η, γ) = η (I + Σ_j γ_j V_j)`.
//!
//! The estimators minimise a sum of robust scales of two-dimensional
//! Mahalanobis distances taken over every coordinate couple, which keeps
//! them robust when outliers hit individual cells rather than whole units.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod error;
pub mod fit;
pub mod inference;
pub mod init;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod rho;
pub mod sim;
pub mod simplex;

pub use error::{Error, Result};
pub use fit::{Estimator, FitConfig, FitResult};
pub use model::{Dataset, ModelSpec, PairIndex, Parameters};
pub use objective::{Objective, PairScale};
pub use rho::{RhoConfig, ScaleResult};
