//! Flow-matching generative models with idempotent refinement.
//!
//! The crate trains networks that predict the clean endpoint `x1` of a
//! conditional probability path directly (the velocity field is recovered as
//! `(x1_hat - x_t) / (1 - t)`), optionally regularised so that the predictor is
//! idempotent: feeding a prediction back into the network reproduces it. At
//! sampling time the same property is exploited by a predictor-refiner ODE
//! integrator that re-applies the network to its own prediction before each
//! Euler step.
//!
//! States are either flat `Vec<f64>` vectors or rigid-frame chains
//! ([`geometry::FrameChain`]), with translation components treated in R^3 and
//! rotations on SO(3) via geodesic interpolation.

pub mod energy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod sampler;
pub mod tasks;

pub use error::{CoreError, Result};
