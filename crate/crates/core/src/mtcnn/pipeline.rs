use rayon::prelude::*;

use super::boxes::{apply_regression, clip_box, nms, square_and_clip, DetectionBox, IouMode};
use super::pyramid::{build_pyramid, generate_candidates, MtcnnConfig};
use crate::error::{Error, Result};
use crate::imaging::{crop_with_padding, normalize, Image};
use crate::tensor::{NetKind, NetworkSpec};

/// The three cascade networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MtcnnNets {
    pub pnet: NetworkSpec,
    pub rnet: NetworkSpec,
    pub onet: NetworkSpec,
}

/// Final boxes plus the survivor count after each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTrace {
    pub proposals: usize,
    pub refined: usize,
    pub outputs: usize,
    pub boxes: Vec<DetectionBox>,
}

fn face_prob(score: &[f32]) -> f32 {
    score[1].clamp(0.0, 1.0)
}

/// P-Net scan of every pyramid level, NMS per level, NMS across levels,
/// then box regression. Returns unsquared proposals.
pub fn propose(img: &Image, pnet: &NetworkSpec, cfg: &MtcnnConfig) -> Result<Vec<DetectionBox>> {
    if pnet.kind != NetKind::PNet {
        return Err(Error::usage(format!("proposal stage needs pnet, got {}", pnet.kind.name())));
    }
    let rgb = img.to_rgb();
    let levels = build_pyramid(&rgb, cfg)?;
    let per_level: Vec<Vec<DetectionBox>> = levels
        .par_iter()
        .map(|level| {
            let out = pnet.forward(&normalize(&level.image))?;
            let offsets = out.bbox.as_ref().ok_or_else(|| Error::usage("pnet has no box head"))?;
            let cands = generate_candidates(&out.score, offsets, level.scale, cfg.stage_thresholds[0])?;
            Ok(nms(&cands, cfg.nms_intra_scale, IouMode::Union))
        })
        .collect::<Result<_>>()?;
    let merged: Vec<DetectionBox> = per_level.into_iter().flatten().collect();
    nms(&merged, cfg.nms_inter_stage, IouMode::Union)
        .iter()
        .map(apply_regression)
        .filter(|b| b.as_ref().map_or(true, |b| b.x2 > b.x1 && b.y2 > b.y1))
        .collect()
}

/// Re-scores `boxes` with R-Net or O-Net.
///
/// Each box is cropped with zero padding, resized to the net input, and
/// normalized. Boxes scoring `>= threshold` get their offsets (and, for
/// O-Net, landmarks mapped from box-relative to image coordinates), are
/// regressed, then pruned by NMS.
pub fn refine_stage(
    img: &Image,
    boxes: &[DetectionBox],
    net: &NetworkSpec,
    threshold: f32,
    nms_iou: f32,
    mode: IouMode,
) -> Result<Vec<DetectionBox>> {
    let size = match net.kind {
        NetKind::RNet | NetKind::ONet => net.kind.input_size().expect("preset size"),
        other => return Err(Error::usage(format!("refine stage needs rnet or onet, got {}", other.name()))),
    };
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let rgb = img.to_rgb();
    let scored: Vec<Option<DetectionBox>> = boxes
        .par_iter()
        .map(|b| {
            let crop = crop_with_padding(&rgb, b.x1, b.y1, b.x2, b.y2, size)?;
            let out = net.forward(&normalize(&crop))?;
            let score = face_prob(out.score.data());
            if score < threshold {
                return Ok(None);
            }
            let d = out.bbox.as_ref().ok_or_else(|| Error::usage("net has no box head"))?.data();
            let mut kept = DetectionBox {
                score,
                offsets: Some([d[0], d[1], d[2], d[3]]),
                landmarks: b.landmarks,
                ..b.clone()
            };
            if let Some(lm) = &out.landmarks {
                let l = lm.data();
                let (w, h) = (b.width(), b.height());
                let mut pts = [[0f32; 2]; 5];
                for (k, p) in pts.iter_mut().enumerate() {
                    *p = [b.x1 + l[k] * w, b.y1 + l[k + 5] * h];
                }
                kept.landmarks = Some(pts);
            }
            Ok(Some(apply_regression(&kept)?))
        })
        .collect::<Result<_>>()?;
    let survivors: Vec<DetectionBox> = scored
        .into_iter()
        .flatten()
        .filter(|b| b.x2 > b.x1 && b.y2 > b.y1)
        .collect();
    Ok(nms(&survivors, nms_iou, mode))
}

/// Full three-stage detection, also reporting per-stage survivor counts.
pub fn detect_faces_traced(img: &Image, nets: &MtcnnNets, cfg: &MtcnnConfig) -> Result<DetectionTrace> {
    let (w, h) = (img.width(), img.height());
    let square = |bs: Vec<DetectionBox>| -> Vec<DetectionBox> {
        bs.iter().map(|b| square_and_clip(b, w, h, false)).collect()
    };
    let proposals = square(propose(img, &nets.pnet, cfg)?);
    let refined = refine_stage(
        img,
        &proposals,
        &nets.rnet,
        cfg.stage_thresholds[1],
        cfg.nms_inter_stage,
        IouMode::Union,
    )?;
    let refined = square(refined);
    let outputs = refine_stage(img, &refined, &nets.onet, cfg.stage_thresholds[2], cfg.nms_final, IouMode::Min)?;
    let n_out = outputs.len();
    let boxes: Vec<DetectionBox> = outputs
        .iter()
        .map(|b| clip_box(b, w, h))
        .filter(|b| b.x2 > b.x1 && b.y2 > b.y1)
        .collect();
    Ok(DetectionTrace {
        proposals: proposals.len(),
        refined: refined.len(),
        outputs: n_out,
        boxes,
    })
}

pub fn detect_faces(img: &Image, nets: &MtcnnNets, cfg: &MtcnnConfig) -> Result<Vec<DetectionBox>> {
    Ok(detect_faces_traced(img, nets, cfg)?.boxes)
}
