//! Poisoning attacks and robust gradient aggregation for linear and logistic
//! regression, with the experiment drivers and numeric bound checks built on
//! top of them.

pub mod aggregators;
pub mod attacks;
pub mod data;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod models;
pub mod rng;
pub mod theory;
pub mod training;
pub mod vector;

pub use error::{Error, Result};
