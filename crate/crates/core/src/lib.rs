//! Joint discrete-continuous diffusion for conditioned layout generation.
//!
//! Box coordinates follow a Gaussian diffusion chain while component classes
//! follow an absorbing-state (MASK) chain synchronized every ten continuous
//! steps. A transformer encoder predicts clean boxes and class logits from
//! the noised layout, with condition embeddings marking which attributes
//! are pinned.

pub mod checkpoint;
pub mod continuous;
pub mod denoiser;
pub mod discrete;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod layout;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod sampler;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
pub use layout::{AttrFlags, BBox, Component, ConditionSpec, DatasetSchema, Layout, SlotCondition};
