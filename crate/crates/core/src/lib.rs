//! Few-shot detection with query-conditioned support coupling and dynamic
//! prototype aggregation, sized to train on a laptop CPU.
//!
//! The pieces, bottom up:
//!
//! - [`coupling`] injects attention-gathered query content into each
//!   support feature map where the support resembles the query.
//! - [`aggregation`] reduces coupled maps to image prototypes and then to
//!   one prototype per class.
//! - [`detector`] holds the shared backbone, RoI pooling, the
//!   prototype-gated heads and inference.
//! - [`data`] generates the synthetic shape world and samples episodes;
//!   [`train`] runs meta-training and finetuning over them.
//! - [`eval`] computes AP, runs ablations and gradient checks, and dumps
//!   the condition and weight maps.

pub mod aggregation;
pub mod boxes;
pub mod config;
pub mod coupling;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod layers;
pub mod train;

pub use config::{ArmFlags, ImageProto, ModelConfig};
pub use error::{IcpeError, Result};
