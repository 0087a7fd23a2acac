//! Multi-modal brain-lesion segmentation: model, losses, training, inference and evaluation.

pub mod cli;
pub mod components;
pub mod config;
pub mod data;
pub mod distance;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod modality;
pub mod model;
pub mod nn;
pub mod optim;
pub mod overlay;
pub mod report;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
