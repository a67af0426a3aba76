//! Joint active-device detection and channel estimation for grant-free
//! uplink access, with expectation propagation under a spike-and-slab prior,
//! greedy and message-passing baselines, and a seeded Monte Carlo harness.

pub mod baselines;
pub mod detection;
pub mod ep;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod scenario;

pub use error::{Error, Result};

/// Complex double used for every signal quantity.
pub type C64 = nalgebra::Complex<f64>;
