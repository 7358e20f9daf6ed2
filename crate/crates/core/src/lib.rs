//! Topology optimisation of 2D test specimens for noise-robust identification
//! of anisotropic elastic stiffness, plus the synthetic-identification benchmark.

pub mod config;
pub mod cost;
pub mod equilibrium;
pub mod error;
pub mod fe;
pub mod identification;
pub mod filter;
pub mod io;
pub mod material;
pub mod mesh;
pub mod optimizer;
pub mod parallel;
pub mod registry;
pub mod sensitivity;
pub mod studies;

pub use error::{Error, Result};
