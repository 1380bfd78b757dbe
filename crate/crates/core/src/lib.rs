//! From-scratch single-image HDR reconstruction: a small tensor engine
//! with reverse-mode differentiation, the U-shaped reconstruction network
//! with spatial feature modulation and an input-weighting gate, losses
//! and evaluation metrics in tone-mapped space, a synthetic degradation
//! data pipeline, and an Adam training loop with resumable checkpoints.
//!
//! # Determinism
//!
//! Everything is deterministic by construction. A run is seeded once;
//! model initialization and batch sampling share that single stream, and
//! results are bitwise reproducible for a given seed and element type.
//! With the `parallel` feature enabled, convolutions fan out across
//! disjoint output planes only, so parallel and sequential builds produce
//! bitwise-identical numbers too.
//!
//! # Precision
//!
//! All numeric code is generic over [`element::Element`], instantiated at
//! `f32` for training and inference and at `f64` for finite-difference
//! gradient verification, where single precision would bury the
//! comparison in rounding noise.

pub mod data;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod shape;
pub mod tape;
pub mod tensor;
pub mod train;

pub use element::{Dtype, Element};
pub use error::{Error, Result};
pub use shape::Shape;
pub use tape::Tape;
pub use tensor::Tensor;
