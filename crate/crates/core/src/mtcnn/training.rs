//! Trains the tiny P/R/O-Net presets on images with one known face each.
//!
//! Crops are drawn around the ground-truth box and labelled by IoU:
//! positives (>= 0.65) carry class, box and landmark targets, part faces
//! (0.4 to 0.65) carry box targets only, negatives (< 0.3) carry class only.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::boxes::{iou, DetectionBox, IouMode};
use super::pipeline::MtcnnNets;
use crate::error::{Error, Result};
use crate::imaging::{crop_with_padding, normalize, Image};
use crate::tensor::{train_step, ArchSize, NetKind, NetworkSpec, Sample};

const POS_IOU: f32 = 0.65;
const PART_IOU: f32 = 0.4;
const NEG_IOU: f32 = 0.3;

/// Crop quotas per training image for one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropQuota {
    pub positives: usize,
    pub parts: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyTrainConfig {
    /// Quotas for P-Net, R-Net, O-Net.
    pub quotas: [CropQuota; 3],
    pub epochs: [usize; 3],
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TinyTrainConfig {
    fn default() -> Self {
        TinyTrainConfig {
            quotas: [
                CropQuota { positives: 3, parts: 2, negatives: 8 },
                CropQuota { positives: 3, parts: 2, negatives: 6 },
                CropQuota { positives: 3, parts: 2, negatives: 4 },
            ],
            epochs: [6, 6, 6],
            batch_size: 16,
            learning_rate: 0.05,
            seed: 42,
        }
    }
}

/// Mean batch loss per epoch, per network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub pnet: Vec<f64>,
    pub rnet: Vec<f64>,
    pub onet: Vec<f64>,
}

fn square_around<R: Rng>(rng: &mut R, gt: &DetectionBox, scale: (f32, f32), shift: f32) -> DetectionBox {
    let gs = gt.width().max(gt.height());
    let side = gs * rng.gen_range(scale.0..scale.1);
    let cx = (gt.x1 + gt.x2) / 2.0 + gs * rng.gen_range(-shift..=shift);
    let cy = (gt.y1 + gt.y2) / 2.0 + gs * rng.gen_range(-shift..=shift);
    DetectionBox::new(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0, 0.0)
}

fn sample_for(img: &Image, crop: &DetectionBox, gt: &DetectionBox, size: usize, label: Option<usize>) -> Result<Sample> {
    let patch = crop_with_padding(img, crop.x1, crop.y1, crop.x2, crop.y2, size)?;
    let (w, h) = (crop.width(), crop.height());
    let with_box = label != Some(0);
    let bbox = with_box.then(|| {
        [
            (gt.x1 - crop.x1) / w,
            (gt.y1 - crop.y1) / h,
            (gt.x2 - crop.x2) / w,
            (gt.y2 - crop.y2) / h,
        ]
    });
    let landmarks = match (label, gt.landmarks) {
        (Some(1), Some(pts)) => {
            let mut t = [0f32; 10];
            for (k, [x, y]) in pts.iter().enumerate() {
                t[k] = (x - crop.x1) / w;
                t[k + 5] = (y - crop.y1) / h;
            }
            Some(t)
        }
        _ => None,
    };
    Ok(Sample {
        input: normalize(&patch),
        label,
        bbox,
        landmarks,
    })
}

/// Labelled crops resized to `size` for every `(image, face box)` pair.
pub fn stage_samples(data: &[(Image, DetectionBox)], size: usize, quota: CropQuota, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (img, gt) in data {
        if !gt.is_valid() {
            return Err(Error::Data("training face box is empty".into()));
        }
        let img = img.to_rgb();
        let (iw, ih) = (img.width() as f32, img.height() as f32);
        let (mut pos, mut part, mut neg) = (0, 0, 0);
        for _ in 0..(quota.positives + quota.parts + quota.negatives) * 50 {
            if pos >= quota.positives && part >= quota.parts && neg >= quota.negatives {
                break;
            }
            let crop = match rng.gen_range(0..3) {
                0 => square_around(&mut rng, gt, (0.8, 1.25), 0.1),
                1 => square_around(&mut rng, gt, (0.7, 1.4), 0.35),
                _ => {
                    let side = rng.gen_range(12f32.min(iw / 2.0)..=iw.min(ih) / 2.0);
                    let x = rng.gen_range(0.0..=iw - side);
                    let y = rng.gen_range(0.0..=ih - side);
                    DetectionBox::new(x, y, x + side, y + side, 0.0)
                }
            };
            let v = iou(&crop, gt, IouMode::Union);
            let label = if v >= POS_IOU && pos < quota.positives {
                pos += 1;
                Some(1)
            } else if (PART_IOU..POS_IOU).contains(&v) && part < quota.parts {
                part += 1;
                None
            } else if v < NEG_IOU && neg < quota.negatives {
                neg += 1;
                Some(0)
            } else {
                continue;
            };
            out.push(sample_for(&img, &crop, gt, size, label)?);
        }
    }
    Ok(out)
}

/// Minibatch SGD over `samples`; returns the mean batch loss of each epoch.
pub fn train_net(
    net: &mut NetworkSpec,
    samples: &[Sample],
    epochs: usize,
    batch_size: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::usage("training needs samples and a nonzero batch size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            total += train_step(net, &batch, learning_rate, rng.gen())?;
            batches += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("{} loss diverged", net.kind.name())));
        }
        history.push(mean);
    }
    Ok(history)
}

/// Trains the three tiny presets, each on its own crops.
pub fn train_tiny_nets(data: &[(Image, DetectionBox)], cfg: &TinyTrainConfig) -> Result<(MtcnnNets, TrainLog)> {
    if data.is_empty() {
        return Err(Error::usage("no training images"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kinds = [NetKind::PNet, NetKind::RNet, NetKind::ONet];
    let mut nets = Vec::with_capacity(3);
    let mut logs = Vec::with_capacity(3);
    for (i, kind) in kinds.into_iter().enumerate() {
        let mut net = NetworkSpec::preset(kind, ArchSize::Tiny, &mut rng)?;
        let size = kind.input_size().expect("preset");
        let samples = stage_samples(data, size, cfg.quotas[i], rng.gen())?;
        logs.push(train_net(&mut net, &samples, cfg.epochs[i], cfg.batch_size, cfg.learning_rate, rng.gen())?);
        nets.push(net);
    }
    let mut nets = nets.into_iter();
    let mut logs = logs.into_iter();
    Ok((
        MtcnnNets {
            pnet: nets.next().unwrap(),
            rnet: nets.next().unwrap(),
            onet: nets.next().unwrap(),
        },
        TrainLog {
            pnet: logs.next().unwrap(),
            rnet: logs.next().unwrap(),
            onet: logs.next().unwrap(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data() -> Vec<(Image, DetectionBox)> {
        (0..3)
            .map(|i| {
                let mut img = Image::filled(48, 48, 3, 40).unwrap();
                for y in 10..30 {
                    for x in 10 + i..30 + i {
                        img.set(x, y, 0, 220);
                    }
                }
                (img, DetectionBox::new(10. + i as f32, 10., 30. + i as f32, 30., 1.0))
            })
            .collect()
    }

    #[test]
    fn crops_respect_quota_and_labels() {
        let q = CropQuota { positives: 2, parts: 1, negatives: 3 };
        let s = stage_samples(&toy_data(), 12, q, 1).unwrap();
        assert_eq!(s.iter().filter(|s| s.label == Some(1)).count(), 6);
        assert_eq!(s.iter().filter(|s| s.label == Some(0)).count(), 9);
        assert!(s.iter().all(|s| s.input.shape() == [3, 12, 12]));
        assert!(s.iter().filter(|s| s.label == Some(0)).all(|s| s.bbox.is_none()));
        assert!(s.iter().filter(|s| s.label.is_none()).all(|s| s.bbox.is_some()));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TinyTrainConfig {
            epochs: [1, 1, 1],
            ..TinyTrainConfig::default()
        };
        let a = train_tiny_nets(&toy_data(), &cfg).unwrap();
        let b = train_tiny_nets(&toy_data(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(train_tiny_nets(&[], &cfg).is_err());
    }
}
