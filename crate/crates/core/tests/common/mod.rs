//! Independent oracles and seeded sweeps shared by the integration tests
//! and the acceptance target.

#![allow(dead_code)]

use facecascade::haar::{integral_image, rect_sum, Rect};
use facecascade::imaging::Image;
use facecascade::mtcnn::{nms, pyramid_scales, DetectionBox, IouMode, MtcnnConfig};
use facecascade::tensor::{
    conv2d_forward, dense_forward, loss, loss_and_gradients, maxpool2d, Conv2d, Dense, Head, HeadKind, LayerSpec,
    LossWeights, MaxPool2d, NetworkSpec, PRelu, Sample, Softmax, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one sweep: pass flag plus a one-line summary.
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(passed: bool, detail: String) -> Self {
        Check { passed, detail }
    }
}

/// `|a - b| / max(|b|, 1)`: relative for large values, absolute near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Direct quadruple loop in f64 over zero-padded input.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oc, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0f64; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b.data()[o] as f64;
                for i in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            let xv = x.data()[(i * h + iy as usize) * wd + ix as usize] as f64;
                            let wv = w.data()[((o * c + i) * kh + ky) * kw + kx] as f64;
                            s += xv * wv;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    (vec![oc, oh, ow], out)
}

pub fn conv_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..cases {
        let c = rng.gen_range(1..5);
        let oc = rng.gen_range(1..6);
        let k = rng.gen_range(1..5);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        let h = rng.gen_range(k..k + 10);
        let w = rng.gen_range(k..k + 10);
        let x = rand_tensor(&mut rng, &[c, h, w]);
        let layer = Conv2d::new(rand_tensor(&mut rng, &[oc, c, k, k]), rand_tensor(&mut rng, &[oc]), stride, pad).unwrap();
        let got = conv2d_forward(&x, &layer).unwrap();
        let (shape, want) = naive_conv(&x, &layer.weight, &layer.bias, stride, pad);
        if got.shape() != shape.as_slice() {
            return Check::new(false, format!("shape {:?} vs {:?}", got.shape(), shape));
        }
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max(rel_err(*a as f64, *b));
        }
    }
    Check::new(worst <= 1e-5, format!("{cases} cases, max rel err {worst:.2e}"))
}

pub fn dense_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..cases {
        let n_in = rng.gen_range(1..200);
        let n_out = rng.gen_range(1..40);
        let x = rand_tensor(&mut rng, &[n_in]);
        let layer = Dense {
            weight: rand_tensor(&mut rng, &[n_out, n_in]),
            bias: rand_tensor(&mut rng, &[n_out]),
        };
        let got = dense_forward(&x, &layer).unwrap();
        for o in 0..n_out {
            let want: f64 = layer.bias.data()[o] as f64
                + (0..n_in)
                    .map(|i| layer.weight.data()[o * n_in + i] as f64 * x.data()[i] as f64)
                    .sum::<f64>();
            worst = worst.max(rel_err(got.data()[o] as f64, want));
        }
    }
    Check::new(worst <= 1e-5, format!("{cases} cases, max rel err {worst:.2e}"))
}

pub fn maxpool_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let c = rng.gen_range(1..4);
        let win = rng.gen_range(1..4);
        let stride = rng.gen_range(1..4);
        let h = rng.gen_range(win..win + 9);
        let w = rng.gen_range(win..win + 9);
        let x = rand_tensor(&mut rng, &[c, h, w]);
        let got = maxpool2d(&x, win, stride).unwrap();
        let (oh, ow) = ((h - win) / stride + 1, (w - win) / stride + 1);
        if got.shape() != [c, oh, ow] {
            return Check::new(false, format!("case {case}: shape {:?}", got.shape()));
        }
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..win {
                        for kx in 0..win {
                            m = m.max(x.at3(ch, oy * stride + ky, ox * stride + kx));
                        }
                    }
                    if got.at3(ch, oy, ox).to_bits() != m.to_bits() {
                        return Check::new(false, format!("case {case}: ({ch},{oy},{ox}) differs"));
                    }
                }
            }
        }
    }
    Check::new(true, format!("{cases} cases, bit-exact"))
}

/// Overlap in f64, from the definition.
pub fn iou_f64(a: &DetectionBox, b: &DetectionBox, mode: IouMode) -> f64 {
    let f = |v: f32| v as f64;
    let iw = (f(a.x2).min(f(b.x2)) - f(a.x1).max(f(b.x1))).max(0.0);
    let ih = (f(a.y2).min(f(b.y2)) - f(a.y1).max(f(b.y1))).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let area = |d: &DetectionBox| (f(d.x2) - f(d.x1)) * (f(d.y2) - f(d.y1));
    match mode {
        IouMode::Union => inter / (area(a) + area(b) - inter),
        IouMode::Min => inter / area(a).min(area(b)),
    }
}

/// Repeatedly keep the best remaining box (lowest index on ties) and drop
/// everything overlapping it by at least `t`.
pub fn naive_nms(boxes: &[DetectionBox], t: f64, mode: IouMode) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if boxes[i].score > boxes[best].score || (boxes[i].score == boxes[best].score && i < best) {
                best = i;
            }
        }
        keep.push(best);
        alive.retain(|&i| i != best && iou_f64(&boxes[best], &boxes[i], mode) < t);
    }
    keep
}

pub fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<DetectionBox> {
    (0..n)
        .map(|_| {
            let x: f32 = rng.gen_range(0.0..100.0);
            let y: f32 = rng.gen_range(0.0..100.0);
            let w: f32 = rng.gen_range(1.0..40.0);
            let h: f32 = rng.gen_range(1.0..40.0);
            // coarse scores so ties occur
            let s = rng.gen_range(0..50) as f32 / 50.0;
            DetectionBox::new(x, y, x + w, y + h, s)
        })
        .collect()
}

pub fn nms_sweep(sets: usize, max_n: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for set in 0..sets {
        let n = rng.gen_range(0..=max_n);
        let boxes = random_boxes(&mut rng, n);
        let t = rng.gen_range(0.2..0.8f32);
        for mode in [IouMode::Union, IouMode::Min] {
            let got = nms(&boxes, t, mode);
            let want: Vec<DetectionBox> = naive_nms(&boxes, t as f64, mode).into_iter().map(|i| boxes[i].clone()).collect();
            if got != want {
                return Check::new(false, format!("set {set} (n={n}, {mode:?}) differs"));
            }
        }
    }
    Check::new(true, format!("{sets} sets up to n={max_n}, both modes identical"))
}

pub fn integral_sweep(rects: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (97, 61);
    let px: Vec<u8> = (0..w * h).map(|_| rng.gen()).collect();
    let ii = integral_image(&Image::new(w, h, 1, px.clone()).unwrap()).unwrap();
    for k in 0..rects {
        let x = rng.gen_range(0..w);
        let y = rng.gen_range(0..h);
        let rw = rng.gen_range(1..=w - x);
        let rh = rng.gen_range(1..=h - y);
        let mut naive = 0i64;
        for yy in y..y + rh {
            for xx in x..x + rw {
                naive += px[yy * w + xx] as i64;
            }
        }
        let got = rect_sum(&ii, Rect { x, y, w: rw, h: rh }).unwrap();
        if got != naive {
            return Check::new(false, format!("rect {k}: {got} vs {naive}"));
        }
    }
    Check::new(true, format!("{rects} rectangles exact"))
}

/// Distance of a trunk input from the nearest kink: a PReLU input at zero or
/// a tie for the maximum of a pooling window.
fn kink_margin(trunk: &[LayerSpec], x: &Tensor) -> f32 {
    let conv = trunk[0].forward(x).unwrap();
    let act = trunk[1].forward(&conv).unwrap();
    let zero = conv.data().iter().map(|v| v.abs()).fold(f32::MAX, f32::min);
    let (c, h, w) = act.chw().unwrap();
    let mut gap = f32::MAX;
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut v: Vec<f32> = (0..4).map(|k| act.at3(ch, oy * 2 + k / 2, ox * 2 + k % 2)).collect();
                v.sort_by(|a, b| b.total_cmp(a));
                gap = gap.min(v[0] - v[1]);
            }
        }
    }
    zero.min(gap)
}

/// Finite differences are meaningless across a kink, so inputs are redrawn
/// until every kink is at least 0.03 away.
fn smooth_input(trunk: &[LayerSpec], rng: &mut ChaCha8Rng) -> Tensor {
    loop {
        let x = Tensor::uniform(&[2, 6, 6], -0.5, 0.5, rng);
        if kink_margin(trunk, &x) >= 0.03 {
            return x;
        }
    }
}

/// Conv, PReLU and max-pool trunk with dense heads (softmax on the score head).
pub fn gradcheck_net(seed: u64) -> (NetworkSpec, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = |rng: &mut ChaCha8Rng, o: usize| {
        LayerSpec::Dense(Dense {
            weight: Tensor::uniform(&[o, 27], -0.5, 0.5, rng),
            bias: Tensor::uniform(&[o], -0.1, 0.1, rng),
        })
    };
    let trunk = vec![
        LayerSpec::Conv(Conv2d::new(rand_tensor(&mut rng, &[3, 2, 3, 3]), rand_tensor(&mut rng, &[3]), 1, 1).unwrap()),
        LayerSpec::PRelu(PRelu {
            alpha: Tensor::uniform(&[3], 0.1, 0.4, &mut rng),
        }),
        LayerSpec::MaxPool(MaxPool2d { window: 2, stride: 2 }),
    ];
    let heads = vec![
        Head {
            kind: HeadKind::Score,
            layers: vec![dense(&mut rng, 2), LayerSpec::Softmax(Softmax { axis: 0 })],
        },
        Head {
            kind: HeadKind::BoxReg,
            layers: vec![dense(&mut rng, 4)],
        },
        Head {
            kind: HeadKind::Landmarks,
            layers: vec![dense(&mut rng, 10)],
        },
    ];
    let samples = (0..3)
        .map(|i| Sample {
            input: smooth_input(&trunk, &mut rng),
            label: Some(i % 2),
            bbox: Some([0.1, -0.2, 0.05, 0.3]),
            landmarks: (i != 1).then_some([0.2, 0.4, 0.5, 0.3, 0.7, 0.3, 0.3, 0.5, 0.7, 0.7]),
        })
        .collect();
    (NetworkSpec::custom(trunk, heads), samples)
}

/// Norms below this are compared on an absolute scale: the f32 forward pass
/// leaves about 1e-5 of noise in a finite difference, which swamps the
/// relative error of a near-zero gradient.
pub const GRAD_NORM_FLOOR: f64 = 1e-2;

/// Central differences on every parameter; reports the worst norm-wise
/// relative error `|g - n| / max(|g|, |n|, GRAD_NORM_FLOOR)` over parameter tensors.
pub fn gradient_check(seed: u64, eps: f32) -> Check {
    let (net, samples) = gradcheck_net(seed);
    let w = LossWeights::default();
    let (_, grads) = loss_and_gradients(&net, &samples, &w).unwrap();
    let names = ["conv.w", "conv.b", "prelu.a", "score.w", "score.b", "box.w", "box.b", "lmk.w", "lmk.b"];
    let mut worst = (0f64, "");
    for (p, g) in grads.iter().enumerate() {
        let mut num = vec![0f64; g.len()];
        for (k, n) in num.iter_mut().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[k] += eps;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[k] -= eps;
            let lp = loss(&plus, &samples, &w).unwrap();
            let lm = loss(&minus, &samples, &w).unwrap();
            let actual = plus.params()[p].data()[k] as f64 - minus.params()[p].data()[k] as f64;
            *n = (lp - lm) / actual;
        }
        let diff: f64 = g.data().iter().zip(&num).map(|(a, b)| (*a as f64 - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = g.data().iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(GRAD_NORM_FLOOR);
        if rel > worst.0 {
            worst = (rel, names.get(p).copied().unwrap_or("?"));
        }
    }
    Check::new(
        worst.0 <= 1e-3,
        format!("conv/prelu/maxpool/dense/softmax, max rel err {:.2e} ({})", worst.0, worst.1),
    )
}

/// Closed form: levels are `k >= 0` with `m * s0 * f^k >= 12`.
pub fn closed_form_levels(min_side: usize, min_face: f32, factor: f32) -> usize {
    let s0 = 12.0 / min_face as f64;
    let ratio = min_side as f64 * s0 / 12.0;
    if ratio < 1.0 {
        0
    } else {
        (ratio.ln() / -(factor as f64).ln()).floor() as usize + 1
    }
}

pub fn pyramid_sweep(configs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..configs {
        let w = rng.gen_range(8..600);
        let h = rng.gen_range(8..600);
        let cfg = MtcnnConfig {
            min_face_size: rng.gen_range(12.0..80.0),
            scale_factor: rng.gen_range(0.3..0.95),
            ..MtcnnConfig::default()
        };
        let scales = pyramid_scales(w, h, &cfg);
        let min_side = w.min(h);
        if let Some(s) = scales.iter().find(|&&s| (min_side as f32 * s) < 12.0) {
            return Check::new(false, format!("config {k}: level scale {s} gives side < 12"));
        }
        let want = closed_form_levels(min_side, cfg.min_face_size, cfg.scale_factor);
        if scales.len() != want {
            return Check::new(false, format!("config {k}: {} levels vs closed form {want}", scales.len()));
        }
    }
    Check::new(true, format!("{configs} configs, all levels >= 12 and counts match"))
}
