//! Supervised learning recast as a Markov reward process and solved with
//! generalized temporal-difference learning.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod link;
pub mod mrp;
pub mod rng;
pub mod solvers;
pub mod synthetic;
pub mod td;
pub mod variance;

pub use error::{Error, Result};
pub use link::{LinkFunction, LinkKind, LipschitzBound};
pub use mrp::{Dataset, Labels, StationaryDistribution, TransitionKind, TransitionMatrix};
