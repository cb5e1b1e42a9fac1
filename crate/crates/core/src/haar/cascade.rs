use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::boost::{train_stage_on_matrix, FeatureMatrix, Stage, StageTargets, WeakClassifier};
use super::features::{feature_pool, GaussianFeature, HaarFeature, RectKind};
use super::integral::{ScanImage, Window};
use crate::error::{Error, Result};
use crate::imaging::{grayscale, resize_bilinear, Image};
use crate::mtcnn::{clip_box, nms, DetectionBox, IouMode};

/// IoU used to merge overlapping cascade detections.
pub const DETECT_NMS_IOU: f32 = 0.3;

/// Attentional cascade: a window is a face only if every stage accepts it.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongCascade {
    pub window: usize,
    pub stages: Vec<Stage>,
}

impl StrongCascade {
    /// Margin of the last stage if every stage accepts, `None` on rejection.
    /// An empty cascade accepts everything with margin 0.
    pub fn evaluate(&self, win: &Window<'_>) -> Option<f64> {
        let mut margin = 0.0;
        for stage in &self.stages {
            let score = stage.score(win);
            if score < stage.threshold as f64 {
                return None;
            }
            margin = score - stage.threshold as f64;
        }
        Some(margin)
    }

    pub fn accepts(&self, window: &Image) -> bool {
        let scan = ScanImage::new(window);
        self.evaluate(&scan.window(0, 0, self.window)).is_some()
    }

    /// Flat `f32` encoding used by the weights container.
    ///
    /// Layout: `window, stage_count`, then per stage `weak_count, threshold`
    /// followed by 11 values per weak classifier:
    /// `kind, x, y, w, h, sigma_x, sigma_y, theta, threshold, polarity, alpha`
    /// (`kind` 0-4 = rectangle layouts, 5 = Gaussian with `x, y` as its center).
    pub fn to_blob(&self) -> Vec<f32> {
        let mut out = vec![self.window as f32, self.stages.len() as f32];
        for stage in &self.stages {
            out.push(stage.weak.len() as f32);
            out.push(stage.threshold);
            for w in &stage.weak {
                match &w.feature {
                    HaarFeature::Rect { kind, x, y, w, h } => {
                        out.extend([kind.code() as f32, *x as f32, *y as f32, *w as f32, *h as f32, 0.0, 0.0, 0.0]);
                    }
                    HaarFeature::Gaussian(g) => {
                        out.extend([GAUSSIAN_CODE, g.cx, g.cy, 0.0, 0.0, g.sigma_x, g.sigma_y, g.theta]);
                    }
                }
                out.extend([w.threshold, w.polarity as f32, w.alpha]);
            }
        }
        out
    }

    pub fn from_blob(blob: &[f32]) -> Result<Self> {
        let bad = |why: &str| Error::MalformedRecord {
            name: "cascade".into(),
            reason: why.to_string(),
        };
        let mut it = blob.iter().copied();
        let mut next = |what: &str| it.next().ok_or_else(|| bad(&format!("blob ends before {what}")));
        let as_count = |v: f32| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0 {
                Ok(v as usize)
            } else {
                Err(bad(&format!("{v} is not a count")))
            }
        };
        let window = as_count(next("window")?)?;
        let n_stages = as_count(next("stage count")?)?;
        let mut stages = Vec::with_capacity(n_stages.min(1024));
        for _ in 0..n_stages {
            let n_weak = as_count(next("weak count")?)?;
            let threshold = next("stage threshold")?;
            let mut weak = Vec::with_capacity(n_weak.min(4096));
            for _ in 0..n_weak {
                let mut v = [0f32; 11];
                for slot in &mut v {
                    *slot = next("weak classifier")?;
                }
                let feature = if v[0] == GAUSSIAN_CODE {
                    HaarFeature::Gaussian(GaussianFeature::new(window, v[5], v[6], v[7], v[1], v[2])?)
                } else {
                    let kind = RectKind::from_code(as_count(v[0])? as u8)
                        .filter(|_| v[0] < GAUSSIAN_CODE)
                        .ok_or_else(|| bad("unknown feature kind"))?;
                    HaarFeature::rect(kind, as_count(v[1])?, as_count(v[2])?, as_count(v[3])?, as_count(v[4])?, window)?
                };
                let polarity = match v[9] {
                    p if p == 1.0 => 1,
                    p if p == -1.0 => -1,
                    _ => return Err(bad("polarity must be +1 or -1")),
                };
                weak.push(WeakClassifier {
                    feature,
                    threshold: v[8],
                    polarity,
                    alpha: v[10],
                });
            }
            stages.push(Stage { weak, threshold });
        }
        if it.next().is_some() {
            return Err(bad("trailing values after last stage"));
        }
        Ok(StrongCascade { window, stages })
    }
}

const GAUSSIAN_CODE: f32 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub window: usize,
    pub targets: StageTargets,
    pub max_stages: usize,
    pub rounds_per_stage: usize,
    pub pool_cap: usize,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            window: 16,
            targets: StageTargets::default(),
            max_stages: 10,
            rounds_per_stage: 50,
            pool_cap: 50_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CascadeTraining {
    pub cascade: StrongCascade,
    /// Fraction of the original training negatives still accepted after each stage.
    pub false_positive_history: Vec<f64>,
    /// Fraction of the training positives accepted after each stage.
    pub detection_history: Vec<f64>,
}

fn to_scan(windows: &[Image], n: usize) -> Result<Vec<ScanImage>> {
    windows
        .iter()
        .map(|w| {
            if w.width() != n || w.height() != n {
                return Err(Error::usage(format!(
                    "training window {}x{} is not {n}x{n}",
                    w.width(),
                    w.height()
                )));
            }
            Ok(ScanImage::new(w))
        })
        .collect()
}

/// Windows from `backgrounds` that the current cascade still accepts.
fn mine_false_positives(cascade: &StrongCascade, backgrounds: &[Image], want: usize, seed: u64) -> Vec<ScanImage> {
    let n = cascade.window;
    let mut found: Vec<(usize, usize, usize, usize)> = Vec::new();
    let levels: Vec<Vec<ScanImage>> = backgrounds.iter().map(|b| pyramid(b, n, 1.25)).map(|l| l.into_iter().map(|(_, s)| s).collect()).collect();
    for (bi, lvls) in levels.iter().enumerate() {
        for (li, scan) in lvls.iter().enumerate() {
            let (w, h) = (scan.gray.width(), scan.gray.height());
            for y in (0..=h - n).step_by((n / 2).max(1)) {
                for x in (0..=w - n).step_by((n / 2).max(1)) {
                    if cascade.evaluate(&scan.window(x, y, n)).is_some() {
                        found.push((bi, li, x, y));
                    }
                }
            }
        }
    }
    found.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    found.truncate(want);
    found
        .into_iter()
        .map(|(bi, li, x, y)| {
            let g = &levels[bi][li].gray;
            let mut px = Vec::with_capacity(n * n);
            for yy in y..y + n {
                for xx in x..x + n {
                    px.push(g.get(xx, yy, 0));
                }
            }
            ScanImage::new(&Image::new(n, n, 1, px).expect("n x n"))
        })
        .collect()
}

/// Trains stages until `max_stages`, or until no training negatives survive.
///
/// After each stage, rejected negatives are dropped and the set is refilled
/// with false positives mined from `backgrounds` (if any); positives the
/// cascade rejects are dropped as well.
pub fn cascade_train(
    positives: &[Image],
    negatives: &[Image],
    backgrounds: &[Image],
    cfg: &CascadeConfig,
) -> Result<CascadeTraining> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::usage("cascade training needs positive and negative windows"));
    }
    let n = cfg.window;
    let mut pos = to_scan(positives, n)?;
    let original_neg = to_scan(negatives, n)?;
    let mut neg: Vec<ScanImage> = original_neg.clone();
    let pool = feature_pool(n, cfg.pool_cap, cfg.seed);
    let mut cascade = StrongCascade {
        window: n,
        stages: Vec::new(),
    };
    let mut false_positive_history = Vec::new();
    let mut detection_history = Vec::new();
    let original_pos = pos.clone();

    for stage_idx in 0..cfg.max_stages {
        if neg.is_empty() || pos.is_empty() {
            break;
        }
        let mut windows = pos.clone();
        windows.extend(neg.iter().cloned());
        let labels: Vec<i8> = (0..windows.len()).map(|i| if i < pos.len() { 1 } else { -1 }).collect();
        let matrix = FeatureMatrix::compute(&windows, n, &pool);
        let trained = train_stage_on_matrix(&matrix, &pool, &labels, cfg.rounds_per_stage, cfg.targets)?;
        cascade.stages.push(trained.stage);

        let accepted = |s: &ScanImage| cascade.evaluate(&s.window(0, 0, n)).is_some();
        pos.retain(|s| accepted(s));
        neg.retain(|s| accepted(s));
        let still = original_neg.iter().filter(|s| accepted(s)).count();
        false_positive_history.push(still as f64 / original_neg.len() as f64);
        let kept = original_pos.iter().filter(|s| accepted(s)).count();
        detection_history.push(kept as f64 / original_pos.len() as f64);

        if !backgrounds.is_empty() && neg.len() < original_neg.len() {
            let want = original_neg.len() - neg.len();
            let seed = cfg.seed.wrapping_add(stage_idx as u64 + 1);
            neg.extend(mine_false_positives(&cascade, backgrounds, want, seed));
        }
    }
    Ok(CascadeTraining {
        cascade,
        false_positive_history,
        detection_history,
    })
}

/// Number of `n × n` windows at pixel `step` on a `w × h` image.
pub fn window_count(w: usize, h: usize, n: usize, step: usize) -> usize {
    if w < n || h < n || step == 0 {
        return 0;
    }
    ((w - n) / step + 1) * ((h - n) / step + 1)
}

/// Downscaled gray copies with their scale factor, while the short side holds a window.
fn pyramid(img: &Image, n: usize, scale_stride: f32) -> Vec<(f32, ScanImage)> {
    let gray = grayscale(img);
    let mut out = Vec::new();
    let mut factor = 1.0f32;
    loop {
        let w = (gray.width() as f32 / factor).round() as usize;
        let h = (gray.height() as f32 / factor).round() as usize;
        if w < n || h < n {
            break;
        }
        let level = if factor == 1.0 {
            gray.clone()
        } else {
            resize_bilinear(&gray, w, h).expect("positive extent")
        };
        out.push((factor, ScanImage::new(&level)));
        if scale_stride <= 1.0 {
            break;
        }
        factor *= scale_stride;
    }
    out
}

/// Sliding-window detection over a pyramid of downscaled images.
///
/// Each accepted window becomes a box in original coordinates scored by the
/// logistic of its last-stage margin; overlapping boxes are merged by NMS.
pub fn cascade_detect(img: &Image, cascade: &StrongCascade, step: usize, scale_stride: f32) -> Result<Vec<DetectionBox>> {
    if step == 0 {
        return Err(Error::usage("scan step must be >= 1"));
    }
    let n = cascade.window;
    let levels = pyramid(img, n, scale_stride);
    let hits: Vec<DetectionBox> = levels
        .par_iter()
        .flat_map_iter(|(factor, scan)| {
            let (w, h) = (scan.gray.width(), scan.gray.height());
            let factor = *factor;
            (0..=h - n).step_by(step).flat_map(move |y| {
                (0..=w - n).step_by(step).filter_map(move |x| {
                    cascade.evaluate(&scan.window(x, y, n)).map(|margin| {
                        let score = (1.0 / (1.0 + (-margin).exp())) as f32;
                        DetectionBox::new(
                            x as f32 * factor,
                            y as f32 * factor,
                            (x + n) as f32 * factor,
                            (y + n) as f32 * factor,
                            score,
                        )
                    })
                })
            })
        })
        .collect();
    Ok(nms(&hits, DETECT_NMS_IOU, IouMode::Union)
        .iter()
        .map(|b| clip_box(b, img.width(), img.height()))
        .filter(|b| b.x2 > b.x1 && b.y2 > b.y1)
        .collect())
}

/// Face crops and random face-free crops (IoU < 0.3 with every face), all `n × n`.
pub fn training_windows(
    images: &[(Image, Vec<DetectionBox>)],
    n: usize,
    negatives_per_image: usize,
    seed: u64,
) -> Result<(Vec<Image>, Vec<Image>)> {
    use crate::imaging::crop_with_padding;
    use crate::mtcnn::iou;
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (img, faces) in images {
        for f in faces {
            let side = f.width().max(f.height());
            let (cx, cy) = ((f.x1 + f.x2) / 2.0, (f.y1 + f.y2) / 2.0);
            pos.push(crop_with_padding(img, cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0, n)?);
        }
        let (w, h) = (img.width() as f32, img.height() as f32);
        if w.min(h) < n as f32 {
            continue;
        }
        let mut got = 0;
        for _ in 0..negatives_per_image * 50 {
            if got == negatives_per_image {
                break;
            }
            let side = rng.gen_range(n as f32..=(w.min(h) / 2.0).max(n as f32));
            let x = rng.gen_range(0.0..=w - side).floor();
            let y = rng.gen_range(0.0..=h - side).floor();
            let cand = DetectionBox::new(x, y, x + side, y + side, 0.0);
            if faces.iter().all(|f| iou(&cand, f, IouMode::Union) < 0.3) {
                neg.push(crop_with_padding(img, x, y, x + side, y + side, n)?);
                got += 1;
            }
        }
    }
    Ok((pos, neg))
}

/// Face-free strips (left, right, above, below each face) at least `n` pixels
/// thick, cut from annotated images for false-positive mining.
pub fn face_free_regions(images: &[(Image, Vec<DetectionBox>)], n: usize) -> Result<Vec<Image>> {
    use crate::imaging::{crop_padded, PixelRect};

    let mut out = Vec::new();
    for (img, faces) in images {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let mut strips = Vec::new();
        for f in faces {
            let (x1, y1) = (f.x1.floor() as i64, f.y1.floor() as i64);
            let (x2, y2) = (f.x2.ceil() as i64, f.y2.ceil() as i64);
            strips.push(PixelRect { x1: 0, y1: 0, x2: x1, y2: h });
            strips.push(PixelRect { x1: x2, y1: 0, x2: w, y2: h });
            strips.push(PixelRect { x1: 0, y1: 0, x2: w, y2: y1 });
            strips.push(PixelRect { x1: 0, y1: y2, x2: w, y2: h });
        }
        for r in strips {
            let r = PixelRect {
                x1: r.x1.max(0),
                y1: r.y1.max(0),
                x2: r.x2.min(w),
                y2: r.y2.min(h),
            };
            if r.x2 - r.x1 < n as i64 || r.y2 - r.y1 < n as i64 {
                continue;
            }
            let clear = faces.iter().all(|f| {
                f.x2 <= r.x1 as f32 || f.x1 >= r.x2 as f32 || f.y2 <= r.y1 as f32 || f.y1 >= r.y2 as f32
            });
            if clear {
                out.push(crop_padded(img, r)?);
            }
        }
    }
    Ok(out)
}
