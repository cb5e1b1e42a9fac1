//! Haar/AdaBoost baseline: integral images, rectangle and oriented Gaussian
//! features, discrete AdaBoost stages and an attentional cascade with a
//! sliding-window scanner.
//!
//! Feature responses are divided by the window's pixel standard deviation
//! before thresholding, in training and detection alike.

mod boost;
mod cascade;
mod features;
mod integral;

pub use boost::{
    adaboost_train_stage, train_stage_on_matrix, FeatureMatrix, Stage, StageTargets, StageTraining, WeakClassifier,
    MIN_WEIGHTED_ERROR,
};
pub use cascade::{
    cascade_detect, cascade_train, face_free_regions, training_windows, window_count, CascadeConfig, CascadeTraining, StrongCascade, DETECT_NMS_IOU,
};
pub use features::{
    enumerate_gaussian_features, enumerate_rect_features, eval_feature, feature_pool, GaussianFeature, HaarFeature,
    RectKind,
};
pub use integral::{integral_image, rect_sum, squared_integral_image, IntegralImage, Rect, ScanImage, Window};
