//! Geometry-aware codec-fake detection over precomputed feature sequences.
//!
//! The pipeline: a token-wise adapter, a selective state-space backbone,
//! attention pooling into a small set of evidence vectors, projection onto
//! the Poincaré ball, and prototype-based scoring with one real-class
//! prototype and K fake-mode prototypes. Training uses a three-term
//! objective (classification, geometry-aware clustering, prototype
//! repulsion), AdamW, and deterministic seeded data order.

pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod evidence;
pub mod head;
pub mod inspect;
pub mod manifold;
pub mod model;
pub mod objective;
pub mod gradcheck;
pub(crate) mod rng;
pub mod metrics;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
