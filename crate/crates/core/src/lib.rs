//! Parameter reduction of rigid multibody dynamic models.
//!
//! The crate models open chains and the 6-PUS hexaglide, samples exciting
//! trajectories, and searches for reduced parameter sets whose inverse and
//! direct dynamics stay accurate while costing fewer operations.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod excitation;
pub mod heuristics;
pub mod jsonio;
pub mod linalg;
pub mod mbmodel;
pub mod pipeline;
pub mod reduction;
pub mod scalar;
pub mod symdag;
pub mod tree;

pub use error::{Error, Result};
