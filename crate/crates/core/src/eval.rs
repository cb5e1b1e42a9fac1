//! Detection-to-ground-truth matching, confusion counts, the four summary
//! metrics, dataset splitting and per-class reports.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mtcnn::{iou, DetectionBox, IouMode};

/// Default IoU a detection needs to count as a true positive.
pub const DEFAULT_MATCH_IOU: f32 = 0.5;

/// The four collected-image categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceClass {
    Front,
    FrontMask,
    LeftMask,
    RightMask,
}

impl FaceClass {
    pub const ALL: [FaceClass; 4] = [
        FaceClass::Front,
        FaceClass::FrontMask,
        FaceClass::LeftMask,
        FaceClass::RightMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaceClass::Front => "front",
            FaceClass::FrontMask => "front_mask",
            FaceClass::LeftMask => "left_mask",
            FaceClass::RightMask => "right_mask",
        }
    }

    pub fn masked(self) -> bool {
        self != FaceClass::Front
    }
}

impl fmt::Display for FaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaceClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown class {s:?}")))
    }
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: String,
    pub path: String,
    /// Category name as written in the annotation file.
    pub class: String,
    pub boxes: Vec<DetectionBox>,
}

impl Annotation {
    pub fn face_class(&self) -> Result<FaceClass> {
        self.class
            .parse()
            .map_err(|_| Error::Data(format!("image {:?} has unknown class {:?}", self.id, self.class)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Which metrics had a zero denominator (and were reported as 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// Harmonic mean of precision and recall; 0 (flagged) when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let (accuracy, ua) = ratio(tp + tn, tp + fp + tn + fn_);
    let (precision, up) = ratio(tp, tp + fp);
    let (recall, ur) = ratio(tp, tp + fn_);
    let (f1, uf) = f1_score(precision, recall);
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        undefined: UndefinedFlags {
            accuracy: ua,
            precision: up,
            recall: ur,
            f1: uf,
        },
    }
}

/// Greedy one-to-one matching.
///
/// Detections are visited by descending score (ties broken by coordinates,
/// so the result does not depend on input order). Each takes the unmatched
/// ground-truth box of highest IoU if that IoU reaches `iou_min` (TP), else
/// it is an FP. Unmatched ground truth is FN. With `image_level_tn`, an image
/// with neither ground truth nor detections counts one TN.
pub fn match_detections(
    detections: &[DetectionBox],
    ground_truth: &[DetectionBox],
    iou_min: f32,
    image_level_tn: bool,
) -> ConfusionCounts {
    let mut order: Vec<&DetectionBox> = detections.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| {
                a.corners()
                    .iter()
                    .zip(b.corners().iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let mut taken = vec![false; ground_truth.len()];
    let mut c = ConfusionCounts::default();
    for d in order {
        let best = ground_truth
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, g)| (i, iou(d, g, IouMode::Union)))
            .filter(|&(_, v)| v >= iou_min)
            .fold(None::<(usize, f32)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        match best {
            Some((i, _)) => {
                taken[i] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    c.fn_ = taken.iter().filter(|t| !**t).count() as u64;
    if image_level_tn && detections.is_empty() && ground_truth.is_empty() {
        c.tn = 1;
    }
    c
}

/// Seeded shuffle, then the first `floor(fraction * N)` items train and the rest test.
pub fn split_dataset<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::usage("cannot split an empty dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::usage(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * items.len() as f64).floor() as usize;
    let train = idx[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = idx[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `algorithm/class` for class rows, `algorithm` for the overall row.
    pub label: String,
    pub images: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// Mean score of all detections on the row's images.
    pub mean_confidence: Option<f64>,
}

impl ReportRow {
    fn new(label: String, images: usize, counts: ConfusionCounts, score_sum: f64, n_scores: usize) -> Self {
        ReportRow {
            label,
            images,
            counts,
            metrics: compute_metrics(&counts),
            mean_confidence: (n_scores > 0).then(|| score_sum / n_scores as f64),
        }
    }
}

/// Per-class rows in [`FaceClass::ALL`] order (classes without images are
/// omitted), then the overall row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn overall(&self) -> Option<&ReportRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_min: f32,
    pub image_level_tn: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_min: DEFAULT_MATCH_IOU,
            image_level_tn: true,
        }
    }
}

/// Runs `detector` over every image and aggregates counts per class and overall.
pub fn evaluate_dataset<F>(
    algorithm: &str,
    detector: F,
    test_set: &[(Annotation, Image)],
    opts: EvalOptions,
) -> Result<EvalReport>
where
    F: Fn(&Annotation, &Image) -> Result<Vec<DetectionBox>> + Sync,
{
    let classes: Vec<FaceClass> = test_set.iter().map(|(a, _)| a.face_class()).collect::<Result<_>>()?;
    let per_image: Vec<(ConfusionCounts, f64, usize)> = test_set
        .par_iter()
        .map(|(ann, img)| {
            let dets = detector(ann, img)?;
            let c = match_detections(&dets, &ann.boxes, opts.iou_min, opts.image_level_tn);
            Ok((c, dets.iter().map(|d| d.score as f64).sum(), dets.len()))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut total = (ConfusionCounts::default(), 0f64, 0usize, 0usize);
    for class in FaceClass::ALL {
        let mut acc = (ConfusionCounts::default(), 0f64, 0usize, 0usize);
        for (c, stats) in classes.iter().zip(&per_image) {
            if *c == class {
                acc.0 += stats.0;
                acc.1 += stats.1;
                acc.2 += stats.2;
                acc.3 += 1;
            }
        }
        if acc.3 > 0 {
            rows.push(ReportRow::new(format!("{algorithm}/{class}"), acc.3, acc.0, acc.1, acc.2));
            total.0 += acc.0;
            total.1 += acc.1;
            total.2 += acc.2;
            total.3 += acc.3;
        }
    }
    rows.push(ReportRow::new(algorithm.to_string(), total.3, total.0, total.1, total.2));
    Ok(EvalReport {
        algorithm: algorithm.to_string(),
        rows,
    })
}

/// A published metrics row whose F1 is checked against its own precision and recall.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportedRow {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    /// F1 as printed, kept as text so its printed precision is known.
    pub f1_printed: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Audit {
    pub name: String,
    pub printed: f64,
    pub computed: f64,
    pub tolerance: f64,
    pub consistent: bool,
}

/// Recomputes each row's F1 from its precision and recall.
///
/// A row is consistent when the recomputed value is within `tolerance` of the
/// printed one, widened to half a unit in the printed value's last decimal
/// (a value printed as `0.69` cannot be held to a third decimal).
pub fn audit_reported_f1(rows: &[ReportedRow], tolerance: f64) -> Result<Vec<F1Audit>> {
    rows.iter()
        .map(|r| {
            let printed: f64 = r
                .f1_printed
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {:?}: F1 {:?} is not a number", r.name, r.f1_printed)))?;
            let decimals = r.f1_printed.trim().split('.').nth(1).map_or(0, str::len) as i32;
            let tol = tolerance.max(0.5 * 10f64.powi(-decimals));
            let (computed, _) = f1_score(r.precision, r.recall);
            Ok(F1Audit {
                name: r.name.clone(),
                printed,
                computed,
                tolerance: tol,
                consistent: (computed - printed).abs() <= tol + 1e-12,
            })
        })
        .collect()
}
