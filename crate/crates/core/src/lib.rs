//! Foveated video super-resolution with cross-resolution flow propagation.
//!
//! [`model::Crfp`] is the recurrent network; [`foveation`] simulates gaze,
//! [`data`] loads and degrades clips, [`metrics`] scores the fovea, past-fovea
//! and whole-frame regions, [`train`] fits the model and [`eval`] runs it
//! causally over clips.

pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod flow;
pub mod foveation;
mod layers;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{EvalConfig, ModelConfig, Preset, RunConfig, TraceKind, TrainConfig};
pub use error::{Error, Result};
pub use foveation::{FoveaBox, GazeTrace, Point};
pub use model::{Crfp, RecurrentState};
pub use fvsr_tensor::Tensor;
