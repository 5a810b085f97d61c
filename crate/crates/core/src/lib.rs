//! Calibrated sequential-trial effect estimation: cross-fitted nuisance
//! learners, doubly robust trial-specific and cross-trial estimators,
//! marginal structural model projection across trials, pseudorisk model
//! selection, the heterogeneity decomposition, and a simulation engine.

pub mod decomposition;
pub mod error;
pub mod estimators;
pub mod export;
pub mod learners;
pub mod nuisance;
pub mod projection;
pub mod rng;
pub mod selection;
pub mod simulation;
pub mod spline;
pub mod trial_data;

pub use error::{Error, Result};
