//! Efficient estimation of stochastic-interventional direct and indirect
//! effects with an intermediate confounder.
//!
//! All variables are discrete, so every integral over the treatment,
//! confounder or mediator reduces to a finite sum. [`law`] holds exact joint
//! distributions used as ground truth; [`learn`] fits cross-fitted
//! nuisances; [`eif`] evaluates influence functions; [`estimate`] builds the
//! one-step and targeted estimators; [`mc`] runs simulation studies.

pub mod eif;
pub mod error;
pub mod estimate;
pub mod intervene;
pub mod law;
pub mod learn;
pub mod mc;

pub use error::{Error, Result};
pub use intervene::Intervention;
