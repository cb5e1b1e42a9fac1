use rayon::prelude::*;

use super::features::HaarFeature;
use super::integral::{ScanImage, Window};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Lower clamp on the weighted error before computing a stump's vote.
pub const MIN_WEIGHTED_ERROR: f64 = 1e-10;

/// Decision stump over one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub feature: HaarFeature,
    pub threshold: f32,
    /// `+1`: face when `value < threshold`; `-1`: face when `value > threshold`.
    pub polarity: i8,
    pub alpha: f32,
}

impl WeakClassifier {
    #[inline]
    pub fn votes_face(&self, value: f32) -> bool {
        if self.polarity > 0 {
            value < self.threshold
        } else {
            value > self.threshold
        }
    }
}

/// One boosted stage: a window passes when the summed votes reach `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub weak: Vec<WeakClassifier>,
    pub threshold: f32,
}

impl Stage {
    pub fn score(&self, win: &Window<'_>) -> f64 {
        let std = win.std_dev();
        self.weak
            .iter()
            .filter(|w| w.votes_face(w.feature.value(win, std)))
            .map(|w| w.alpha as f64)
            .sum()
    }

    pub fn total_alpha(&self) -> f64 {
        self.weak.iter().map(|w| w.alpha as f64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTargets {
    /// Minimum fraction of training positives a stage must accept.
    pub min_detection_rate: f64,
    /// Fraction of negatives a stage may accept before boosting stops early.
    pub max_false_positive_rate: f64,
}

impl Default for StageTargets {
    fn default() -> Self {
        StageTargets {
            min_detection_rate: 0.995,
            max_false_positive_rate: 0.5,
        }
    }
}

/// Normalized feature responses, one row per feature, one column per sample.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    samples: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn compute(windows: &[ScanImage], n: usize, pool: &[HaarFeature]) -> Self {
        let stds: Vec<f64> = windows.iter().map(|s| s.window(0, 0, n).std_dev()).collect();
        let values = pool
            .par_iter()
            .flat_map_iter(|f| {
                windows
                    .iter()
                    .zip(&stds)
                    .map(move |(s, &std)| f.value(&s.window(0, 0, n), std))
            })
            .collect();
        FeatureMatrix {
            samples: windows.len(),
            values,
        }
    }

    pub fn row(&self, feature: usize) -> &[f32] {
        &self.values[feature * self.samples..(feature + 1) * self.samples]
    }
}

/// Everything a stage-training run produced, for inspection.
#[derive(Debug, Clone)]
pub struct StageTraining {
    pub stage: Stage,
    pub initial_weights: Vec<f64>,
    /// Sum of the sample weights after each round's renormalization.
    pub weight_sums: Vec<f64>,
    /// Weighted error of each selected stump.
    pub errors: Vec<f64>,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct Stump {
    error: f64,
    threshold: f32,
    polarity: i8,
}

/// Optimal threshold and polarity for one feature by a weighted scan over
/// its sorted responses.
fn best_stump(values: &[f32], order: &[u32], labels: &[i8], weights: &[f64], total_pos: f64, total_neg: f64) -> Stump {
    let mut best = Stump {
        error: f64::INFINITY,
        threshold: 0.0,
        polarity: 1,
    };
    let (mut below_pos, mut below_neg) = (0f64, 0f64);
    let n = order.len();
    for k in 0..=n {
        // candidate threshold between sorted positions k-1 and k
        let boundary = k == 0 || k == n || values[order[k - 1] as usize] < values[order[k] as usize];
        if boundary {
            // polarity +1: face below threshold
            let err_pos = below_neg + (total_pos - below_pos);
            // polarity -1: face above threshold
            let err_neg = below_pos + (total_neg - below_neg);
            let (error, polarity) = if err_pos <= err_neg { (err_pos, 1) } else { (err_neg, -1) };
            if error < best.error {
                let threshold = match k {
                    0 => values[order[0] as usize] as f64 - 1.0,
                    k if k == n => values[order[n - 1] as usize] as f64 + 1.0,
                    k => (values[order[k - 1] as usize] as f64 + values[order[k] as usize] as f64) / 2.0,
                };
                best = Stump {
                    error,
                    threshold: threshold as f32,
                    polarity,
                };
            }
        }
        if k < n {
            let i = order[k] as usize;
            if labels[i] > 0 {
                below_pos += weights[i];
            } else {
                below_neg += weights[i];
            }
        }
    }
    best
}

/// Largest `f32` not above `v`.
fn f32_at_most(v: f64) -> f32 {
    let f = v as f32;
    if f as f64 > v {
        f.next_down()
    } else {
        f
    }
}

/// Discrete AdaBoost over precomputed feature responses.
pub fn train_stage_on_matrix(
    matrix: &FeatureMatrix,
    pool: &[HaarFeature],
    labels: &[i8],
    rounds: usize,
    targets: StageTargets,
) -> Result<StageTraining> {
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::usage("stage training needs both positive and negative samples"));
    }
    if rounds == 0 {
        return Err(Error::usage("stage training needs at least one round"));
    }
    if pool.is_empty() {
        return Err(Error::usage("empty feature pool"));
    }
    let orders: Vec<Vec<u32>> = (0..pool.len())
        .into_par_iter()
        .map(|f| {
            let row = matrix.row(f);
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut weights = vec![1.0 / n as f64; n];
    let initial_weights = weights.clone();
    let mut scores = vec![0f64; n];
    let mut stage = Stage {
        weak: Vec::new(),
        threshold: 0.0,
    };
    let mut weight_sums = Vec::new();
    let mut errors = Vec::new();
    let (mut detection_rate, mut false_positive_rate) = (1.0, 1.0);

    for _ in 0..rounds {
        let total_pos: f64 = (0..n).filter(|&i| labels[i] > 0).map(|i| weights[i]).sum();
        let total_neg: f64 = (0..n).filter(|&i| labels[i] <= 0).map(|i| weights[i]).sum();
        let (feature, stump) = (0..pool.len())
            .into_par_iter()
            .map(|f| (f, best_stump(matrix.row(f), &orders[f], labels, &weights, total_pos, total_neg)))
            .reduce(
                || (usize::MAX, Stump { error: f64::INFINITY, threshold: 0.0, polarity: 1 }),
                |a, b| match a.1.error.total_cmp(&b.1.error).then(a.0.cmp(&b.0)) {
                    std::cmp::Ordering::Greater => b,
                    _ => a,
                },
            );
        let mut weak = WeakClassifier {
            feature: pool[feature].clone(),
            threshold: stump.threshold,
            polarity: stump.polarity,
            alpha: 0.0,
        };
        let row = matrix.row(feature);
        // error of the stump as stored (threshold rounded to f32)
        let correct: Vec<bool> = (0..n).map(|i| weak.votes_face(row[i]) == (labels[i] > 0)).collect();
        let error: f64 = (0..n).filter(|&i| !correct[i]).map(|i| weights[i]).sum();
        if !(error < 0.5) {
            return Err(Error::Training(format!(
                "no stump with weighted error below 0.5 (best {error:.6})"
            )));
        }
        let eps = error.max(MIN_WEIGHTED_ERROR);
        let alpha = 0.5 * ((1.0 - eps) / eps).ln();
        weak.alpha = alpha as f32;
        let a = weak.alpha as f64;
        for i in 0..n {
            weights[i] *= if correct[i] { (-a).exp() } else { a.exp() };
            if weak.votes_face(row[i]) {
                scores[i] += a;
            }
        }
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        weight_sums.push(weights.iter().sum());
        errors.push(error);
        stage.weak.push(weak);

        let mut pos_scores: Vec<f64> = (0..n).filter(|&i| labels[i] > 0).map(|i| scores[i]).collect();
        pos_scores.sort_by(|a, b| b.total_cmp(a));
        let keep = ((targets.min_detection_rate * n_pos as f64).ceil() as usize).clamp(1, n_pos);
        let threshold = f32_at_most((stage.total_alpha() / 2.0).min(pos_scores[keep - 1]));
        stage.threshold = threshold;
        let accepted = |i: usize| scores[i] >= threshold as f64;
        detection_rate = (0..n).filter(|&i| labels[i] > 0 && accepted(i)).count() as f64 / n_pos as f64;
        false_positive_rate = (0..n).filter(|&i| labels[i] <= 0 && accepted(i)).count() as f64 / n_neg as f64;
        if detection_rate >= targets.min_detection_rate && false_positive_rate <= targets.max_false_positive_rate {
            break;
        }
    }
    Ok(StageTraining {
        stage,
        initial_weights,
        weight_sums,
        errors,
        detection_rate,
        false_positive_rate,
    })
}

/// Trains one stage on `n × n` gray windows labelled `+1` (face) or `-1`.
pub fn adaboost_train_stage(
    samples: &[(Image, i8)],
    pool: &[HaarFeature],
    rounds: usize,
    targets: StageTargets,
) -> Result<StageTraining> {
    let n = samples.first().map(|(w, _)| w.width()).ok_or_else(|| Error::usage("no samples"))?;
    if samples.iter().any(|(w, _)| w.width() != n || w.height() != n) {
        return Err(Error::usage("all training windows must be n x n"));
    }
    if pool.iter().any(|f| !f.fits(n)) {
        return Err(Error::usage("feature pool does not fit the window size"));
    }
    let scans: Vec<ScanImage> = samples.iter().map(|(w, _)| ScanImage::new(w)).collect();
    let labels: Vec<i8> = samples.iter().map(|(_, l)| if *l > 0 { 1 } else { -1 }).collect();
    let matrix = FeatureMatrix::compute(&scans, n, pool);
    train_stage_on_matrix(&matrix, pool, &labels, rounds, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::features::{feature_pool, RectKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Left half dark / right half bright for faces, mirrored for background.
    fn split_windows(rng: &mut ChaCha8Rng, count: usize) -> Vec<(Image, i8)> {
        (0..count)
            .map(|i| {
                let face = i % 2 == 0;
                let px: Vec<u8> = (0..64)
                    .map(|p| {
                        let right = p % 8 >= 4;
                        let base = if right == face { 180 } else { 60 };
                        base + rng.gen_range(0..20)
                    })
                    .collect();
                (Image::new(8, 8, 1, px).unwrap(), if face { 1 } else { -1 })
            })
            .collect()
    }

    #[test]
    fn separable_feature_gives_single_perfect_stump() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = split_windows(&mut rng, 40);
        let pool = vec![HaarFeature::rect(RectKind::TwoRectH, 0, 0, 8, 8, 8).unwrap()];
        let t = adaboost_train_stage(&samples, &pool, 10, StageTargets {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.0,
        })
        .unwrap();
        assert_eq!(t.stage.weak.len(), 1);
        assert_eq!(t.errors, vec![0.0]);
        let alpha = t.stage.weak[0].alpha as f64;
        assert!(alpha.is_finite());
        assert!((alpha - 0.5 * ((1.0 - 1e-10) / 1e-10f64).ln()).abs() < 1e-5);
        assert_eq!(t.detection_rate, 1.0);
        assert_eq!(t.false_positive_rate, 0.0);
    }

    #[test]
    fn weights_start_uniform_and_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut samples = split_windows(&mut rng, 60);
        // flip a few labels so boosting needs several rounds
        for s in samples.iter_mut().take(6) {
            s.1 = -s.1;
        }
        let pool = feature_pool(8, 2000, 0);
        let t = adaboost_train_stage(&samples, &pool, 8, StageTargets {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.0,
        })
        .unwrap();
        assert!(t.initial_weights.iter().all(|&w| w == 1.0 / 60.0));
        assert!((t.initial_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for s in &t.weight_sums {
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(t.errors.iter().all(|&e| e < 0.5));
        assert!(t.stage.weak.iter().all(|w| w.alpha > 0.0));
    }

    #[test]
    fn full_detection_target_puts_threshold_below_every_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut samples = split_windows(&mut rng, 50);
        for s in samples.iter_mut().take(8) {
            s.1 = -s.1;
        }
        let pool = feature_pool(8, 1500, 3);
        let t = adaboost_train_stage(&samples, &pool, 5, StageTargets {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.0,
        })
        .unwrap();
        let min_pos = samples
            .iter()
            .filter(|(_, l)| *l > 0)
            .map(|(w, _)| t.stage.score(&ScanImage::new(w).window(0, 0, 8)))
            .fold(f64::INFINITY, f64::min);
        assert!(t.stage.threshold as f64 <= min_pos);
        assert_eq!(t.detection_rate, 1.0);
    }

    #[test]
    fn training_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples = split_windows(&mut rng, 10);
        let pool = feature_pool(8, 100, 0);
        let faces: Vec<_> = samples.iter().filter(|s| s.1 > 0).cloned().collect();
        assert!(matches!(
            adaboost_train_stage(&faces, &pool, 3, StageTargets::default()),
            Err(Error::Usage(_))
        ));
        // identical windows with both labels: nothing beats chance
        let flat = Image::filled(8, 8, 1, 90).unwrap();
        let twins = vec![(flat.clone(), 1), (flat, -1)];
        assert!(matches!(
            adaboost_train_stage(&twins, &pool, 3, StageTargets::default()),
            Err(Error::Training(_))
        ));
    }
}
