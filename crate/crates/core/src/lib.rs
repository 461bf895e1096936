//! Surrogate interface models for finite element substructuring.

pub mod analysis1d;
pub mod cli;
pub mod container;
pub mod coupled;
pub mod decomposition;
pub mod error;
pub mod exemplar;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod nn;
pub mod plot;
pub mod pod;
pub mod solver;
pub mod study;
pub mod surrogate;
pub mod training;

pub use error::{Error, Result};
