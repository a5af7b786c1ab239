//! Laboratory for measuring representational biases in gradient-trained
//! networks: controlled multi-feature dataset generators, a small MLP
//! trainer with representation snapshotting, and an analysis battery
//! (linear probes, PCA simplification, steering interventions, RSA,
//! downstream classifiers).

pub mod analysis;
pub mod booldata;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod seqgen;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
