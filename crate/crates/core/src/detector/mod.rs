//! The two-branch detector: shared backbone, query-specific prototypes,
//! prototype-gated RoI heads.

pub mod backbone;
pub mod loss;
pub mod model;
pub mod predict;
pub mod roi;

pub use backbone::Backbone;
pub use loss::{positive_deltas, total_loss, LossParts};
pub use model::{
    channel_attention, flip_chw, DetectionOutput, Heads, Model, PrototypeSet, SupportInstance,
    SupportSet,
};
pub use predict::{nms, predict, PredictOptions};
pub use roi::{box_to_window, extract_roi_features, sliding_grid};
