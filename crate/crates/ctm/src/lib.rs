//! Cure time modelling for population-based survival analysis.
//!
//! A diseased cohort is followed against the general population: each
//! subject either dies of the disease, dies of something else, or is
//! censored. When survivors past some time point become indistinguishable
//! from the general population, the cohort is statistically cured. This
//! crate estimates that cure time (and the cure rate attained there) by
//! constrained maximum likelihood against a background life table, with
//! parametric bootstrap inference, nonparametric relative-survival
//! diagnostics, and a simulation engine for calibration studies.

pub mod bootstrap;
pub mod config;
pub mod data;
pub mod excess;
pub mod lifetable;
pub mod likelihood;
pub mod manifest;
pub mod nonparam;
pub mod optimizer;
pub mod report;
pub mod seed;
pub mod simgen;

pub use data::{CensoringStatus, Dataset, Observation, Sex};
pub use excess::{ExcessModel, Family};
pub use lifetable::{LifeTable, SubjectBackground};
pub use likelihood::CtmParams;
pub use optimizer::{CtmFit, OptimizerConfig};
