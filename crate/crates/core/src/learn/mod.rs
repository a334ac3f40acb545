//! Cross-fitted nuisance estimation.

mod data;
mod fit;
mod folds;
pub mod irls;
mod learner;
mod nuisance;

pub use data::{Dataset, Obs, Roles, YScale};
pub use fit::{derive_secondary, fit_nuisances, fit_primary, LearnerConfig, SecondaryPath};
pub use folds::{make_folds, FoldPlan};
pub use irls::{fit_logistic_irls, IrlsFit, IrlsOptions};
pub use learner::{Categorical, Example, LearnerKind, Mean, DEFAULT_ALPHA};
pub use nuisance::{ClampCounts, Nuisance, NuisanceSet, WBlock};
