use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scored rectangle flowing through the cascade stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub score: f32,
    /// Regression offsets `(dx1, dy1, dx2, dy2)` in units of box width/height.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<[f32; 4]>,
    /// Five `(x, y)` keypoints: eyes, nose tip, mouth corners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<[[f32; 2]; 5]>,
}

impl DetectionBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32, score: f32) -> Self {
        DetectionBox {
            x1,
            y1,
            x2,
            y2,
            score,
            offsets: None,
            landmarks: None,
        }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1 && (0.0..=1.0).contains(&self.score)
    }

    pub fn corners(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    /// Intersection over union.
    Union,
    /// Intersection over the smaller area.
    Min,
}

pub fn iou(a: &DetectionBox, b: &DetectionBox, mode: IouMode) -> f32 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let denom = match mode {
        IouMode::Union => a.area() + b.area() - inter,
        IouMode::Min => a.area().min(b.area()),
    };
    (inter / denom).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited by descending score (ties: lower input index first);
/// each kept box removes every remaining box with `iou >= iou_threshold`.
pub fn nms(boxes: &[DetectionBox], iou_threshold: f32, mode: IouMode) -> Vec<DetectionBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(boxes[i].clone());
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j], mode) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Moves each edge by its offset times the box extent; clears the offsets.
pub fn apply_regression(b: &DetectionBox) -> Result<DetectionBox> {
    let [dx1, dy1, dx2, dy2] = b
        .offsets
        .ok_or_else(|| Error::usage("apply_regression on a box without offsets"))?;
    let (w, h) = (b.width(), b.height());
    Ok(DetectionBox {
        x1: b.x1 + dx1 * w,
        y1: b.y1 + dy1 * h,
        x2: b.x2 + dx2 * w,
        y2: b.y2 + dy2 * h,
        offsets: None,
        ..b.clone()
    })
}

/// Grows the shorter side about the center to make the box square and
/// optionally intersects it with the image.
pub fn square_and_clip(b: &DetectionBox, image_w: usize, image_h: usize, clip: bool) -> DetectionBox {
    let side = b.width().max(b.height());
    let cx = (b.x1 + b.x2) / 2.0;
    let cy = (b.y1 + b.y2) / 2.0;
    let mut out = b.clone();
    // already square up to float rounding of a previous pass
    let square = (b.width() - b.height()).abs() <= side * 1e-5;
    if !square && b.width() < side {
        out.x1 = cx - side / 2.0;
        out.x2 = out.x1 + side;
    }
    if !square && b.height() < side {
        out.y1 = cy - side / 2.0;
        out.y2 = out.y1 + side;
    }
    if clip {
        out = clip_box(&out, image_w, image_h);
    }
    out
}

pub fn clip_box(b: &DetectionBox, image_w: usize, image_h: usize) -> DetectionBox {
    let (w, h) = (image_w as f32, image_h as f32);
    DetectionBox {
        x1: b.x1.clamp(0.0, w),
        y1: b.y1.clamp(0.0, h),
        x2: b.x2.clamp(0.0, w),
        y2: b.y2.clamp(0.0, h),
        ..b.clone()
    }
}
