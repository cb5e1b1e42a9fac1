use serde::{Deserialize, Serialize};

use super::boxes::DetectionBox;
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Image};
use crate::tensor::Tensor;

/// Side of the P-Net scanning window.
pub const PNET_WINDOW: usize = 12;
/// Spatial stride of the P-Net preset's score map.
pub const PNET_STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtcnnConfig {
    pub min_face_size: f32,
    pub scale_factor: f32,
    /// Face-probability thresholds for the P, R and O stages.
    pub stage_thresholds: [f32; 3],
    /// IoU for NMS within one pyramid level.
    pub nms_intra_scale: f32,
    /// IoU for NMS across levels and after R-Net.
    pub nms_inter_stage: f32,
    /// IoU for the final O-Net NMS, computed in min mode.
    pub nms_final: f32,
}

impl Default for MtcnnConfig {
    fn default() -> Self {
        MtcnnConfig {
            min_face_size: 20.0,
            scale_factor: 0.709,
            stage_thresholds: [0.6, 0.7, 0.7],
            nms_intra_scale: 0.5,
            nms_inter_stage: 0.7,
            nms_final: 0.7,
        }
    }
}

impl MtcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::usage(format!("scale factor {} not in (0, 1)", self.scale_factor)));
        }
        if !(self.min_face_size >= PNET_WINDOW as f32) {
            return Err(Error::usage(format!("min face size {} below 12", self.min_face_size)));
        }
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        let all = self
            .stage_thresholds
            .iter()
            .chain([&self.nms_intra_scale, &self.nms_inter_stage, &self.nms_final]);
        if !all.copied().all(unit) {
            return Err(Error::usage("thresholds must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub scale: f32,
    pub image: Image,
}

/// Scales `12 / min_face * factor^k` while the scaled short side stays >= 12.
pub fn pyramid_scales(width: usize, height: usize, cfg: &MtcnnConfig) -> Vec<f32> {
    let min_side = width.min(height) as f32;
    let mut scale = PNET_WINDOW as f32 / cfg.min_face_size;
    let mut scales = Vec::new();
    while min_side * scale >= PNET_WINDOW as f32 {
        scales.push(scale);
        scale *= cfg.scale_factor;
    }
    scales
}

/// Levels in descending scale order; empty when the image is smaller than the minimum face.
pub fn build_pyramid(img: &Image, cfg: &MtcnnConfig) -> Result<Vec<PyramidLevel>> {
    cfg.validate()?;
    pyramid_scales(img.width(), img.height(), cfg)
        .into_iter()
        .map(|scale| {
            let w = ((img.width() as f32 * scale).ceil() as usize).max(PNET_WINDOW);
            let h = ((img.height() as f32 * scale).ceil() as usize).max(PNET_WINDOW);
            Ok(PyramidLevel {
                scale,
                image: resize_bilinear(img, w, h)?,
            })
        })
        .collect()
}

/// Turns P-Net output maps into image-space proposals.
///
/// Cell `(i, j)` covers the level-image window starting at `(2j, 2i)`; its
/// box in the original image is that window divided by `scale`.
pub fn generate_candidates(
    score_map: &Tensor,
    offset_map: &Tensor,
    scale: f32,
    threshold: f32,
) -> Result<Vec<DetectionBox>> {
    let (sc, h, w) = score_map.chw()?;
    let (oc, oh, ow) = offset_map.chw()?;
    if sc != 2 || oc != 4 || (h, w) != (oh, ow) {
        return Err(Error::shape("generate_candidates", score_map.shape(), offset_map.shape()));
    }
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let score = score_map.at3(1, i, j);
            if score < threshold {
                continue;
            }
            let (x, y) = ((j * PNET_STRIDE) as f32, (i * PNET_STRIDE) as f32);
            let win = PNET_WINDOW as f32;
            out.push(DetectionBox {
                x1: x / scale,
                y1: y / scale,
                x2: (x + win) / scale,
                y2: (y + win) / scale,
                score,
                offsets: Some([
                    offset_map.at3(0, i, j),
                    offset_map.at3(1, i, j),
                    offset_map.at3(2, i, j),
                    offset_map.at3(3, i, j),
                ]),
                landmarks: None,
            });
        }
    }
    Ok(out)
}
