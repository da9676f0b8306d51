//! Semi-supervised training with a learned reward model for pseudo-label
//! selection.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod numfmt;
pub mod optim;
pub mod pipeline;
pub mod rewarder;
pub mod selection;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
