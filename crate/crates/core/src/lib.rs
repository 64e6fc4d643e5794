//! Multi-pass SGD, GD and ridge regression on interpolating least squares:
//! exact expected risks through the second-moment operator recursion, Monte
//! Carlo trajectories, closed-form risk bounds and reproducible experiments.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod exact_engine;
pub mod experiments;
pub mod linalg;
pub mod problem;
pub mod seed;
pub mod selftest;
pub mod spectra;
pub mod trajectories;

pub use error::{Error, ErrorClass, Result};
pub use problem::{sample_dataset, sample_instance, Dataset, ProblemInstance};
pub use spectra::{Spectrum, SpectrumFamily};
