//! Discrete factor analysis for non-negative count data.
//!
//! Variables are grouped so that every group of two or more shares one
//! additive latent count (`Y_j = U + X_j`). Models are fitted by exact
//! maximum likelihood under Poisson or negative binomial components, with
//! optional zero inflation and truncation, and the grouping is chosen by a
//! forward AIC search.

pub mod cli;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod optim;
pub mod report;
pub mod search;
pub mod simulate;
pub mod types;

pub use distributions::{BaseParams, EntityParams};
pub use error::{Error, Result};
pub use estimation::{fit_group, fit_model, fit_singleton, FitDiagnostics, FitResult, GroupFit, GroupFitCache, OptimizerConfig};
pub use likelihood::{group_log_lik, model_log_lik, singleton_log_lik, truncated_group_log_lik, GroupData};
pub use search::{candidate_models, forward_search, tie_break, SearchTrace};
pub use simulate::{simulate, SimSpec};
pub use types::{parameter_count, Base, Dataset, GroupParameters, ModelFamily, Partition};
