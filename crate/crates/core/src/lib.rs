//! Desk-scale iterative style transfer trained with reinforcement learning.
//!
//! A single policy network observes a moving image together with a style
//! image and emits a small action map. A builder network applies that action
//! to produce the next moving image, so stylisation strength accumulates one
//! step at a time. Control parameters learn from a soft actor-critic loop
//! driven by a style-distance reward, while the shared generative parameters
//! learn from content, style and contrastive losses balanced by homoscedastic
//! uncertainty weights.
//!
//! Everything runs on CPU with a small define-by-run autodiff tape; see
//! [`tensor`] for the engine and [`trainer`] for the end-to-end loop.

pub mod backbone;
pub mod config;
pub mod container;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod imageio;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod optim;
pub mod rl;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
