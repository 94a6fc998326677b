//! Budgeted offline-to-online policy selection.
//!
//! Given K candidate policies pretrained offline, a hard budget of online
//! interaction transitions, and noisy value estimates, this crate forecasts
//! each candidate's fine-tuning value trajectory with an AR(2)-ARCH(1) model,
//! schedules fine-tuning through a max-priority queue keyed by simulated
//! 95th-percentile upper confidence bounds, and scores the outcome against
//! OPE / Best / OE / FT reference strategies with min-max normalized regret.

pub mod baselines;
pub mod envsim;
pub mod error;
pub mod harness;
pub mod rngutil;
pub mod selector;
pub mod valuemodel;

pub use error::{Error, Result};
