//! Three-stage cascaded detector: image pyramid, P-Net proposal scan,
//! R-Net refinement and O-Net output with landmarks.
//!
//! Stage order: per-level NMS, cross-level NMS, regression, square crop,
//! R-Net (regress then NMS), square crop, O-Net (regress then min-mode NMS),
//! clip to the image.

mod boxes;
mod pipeline;
mod pyramid;
mod training;

pub use boxes::{apply_regression, clip_box, iou, nms, square_and_clip, DetectionBox, IouMode};
pub use pipeline::{detect_faces, detect_faces_traced, propose, refine_stage, DetectionTrace, MtcnnNets};
pub use pyramid::{
    build_pyramid, generate_candidates, pyramid_scales, MtcnnConfig, PyramidLevel, PNET_STRIDE, PNET_WINDOW,
};
pub use training::{stage_samples, train_net, train_tiny_nets, CropQuota, TinyTrainConfig, TrainLog};
