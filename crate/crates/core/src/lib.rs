//! Batch normalization and training-dynamics diagnostics on a minimal
//! from-scratch network core, plus singular-value spectra of products of
//! Gaussian matrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` arrays, seeded randomness, initialisation,
//!   3×3 convolution and a Jacobi eigenvalue routine.
//! * [`nn`]: layers, batch normalization with ablatable components, the
//!   softmax cross-entropy loss, SGD with momentum and the network builder.
//! * [`diagnostics`]: moment profiles, divergence capture, loss probes,
//!   gradient sign coherence and the class-wise gradient analyses.
//! * [`rmt`]: the product-of-Gaussians singular-value density and its
//!   Monte-Carlo validation.
//! * [`noise`]: minibatch gradient-noise estimates.
//! * [`harness`]: configuration, datasets, training loops and artifacts.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod nn;
pub mod noise;
pub mod rmt;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{SeededRng, Tensor};
