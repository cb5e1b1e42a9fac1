use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::integral::Window;
use crate::error::{Error, Result};

/// Rectangle layouts. `(x, y, w, h)` is the full feature extent; the value
/// is the black-cell sum minus the white-cell sum, with equal black and
/// white areas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RectKind {
    /// white | black
    TwoRectH,
    /// white over black
    TwoRectV,
    /// white | black | white
    ThreeRectH,
    /// white / black / white
    ThreeRectV,
    /// white black / black white
    FourRect,
}

impl RectKind {
    pub const ALL: [RectKind; 5] = [
        RectKind::TwoRectH,
        RectKind::TwoRectV,
        RectKind::ThreeRectH,
        RectKind::ThreeRectV,
        RectKind::FourRect,
    ];

    /// Smallest extent; feature sizes are multiples of it.
    pub fn base(self) -> (usize, usize) {
        match self {
            RectKind::TwoRectH => (2, 1),
            RectKind::TwoRectV => (1, 2),
            RectKind::ThreeRectH => (3, 1),
            RectKind::ThreeRectV => (1, 3),
            RectKind::FourRect => (2, 2),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RectKind::TwoRectH => 0,
            RectKind::TwoRectV => 1,
            RectKind::ThreeRectH => 2,
            RectKind::ThreeRectV => 3,
            RectKind::FourRect => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        RectKind::ALL.get(code as usize).copied()
    }
}

/// Zero-mean oriented Gaussian sampled over the whole window.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFeature {
    pub sigma_x: f32,
    pub sigma_y: f32,
    /// Orientation in degrees.
    pub theta: f32,
    pub cx: f32,
    pub cy: f32,
    pub n: usize,
    kernel: Vec<f64>,
}

impl GaussianFeature {
    pub fn new(n: usize, sigma_x: f32, sigma_y: f32, theta: f32, cx: f32, cy: f32) -> Result<Self> {
        if n == 0 || !(sigma_x > 0.0 && sigma_y > 0.0) {
            return Err(Error::usage("gaussian feature needs a window and positive sigmas"));
        }
        let (sin, cos) = (theta as f64).to_radians().sin_cos();
        let (sx, sy) = (sigma_x as f64, sigma_y as f64);
        let mut kernel: Vec<f64> = (0..n * n)
            .map(|i| {
                let dx = (i % n) as f64 - cx as f64;
                let dy = (i / n) as f64 - cy as f64;
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (-(u * u) / (2.0 * sx * sx) - (v * v) / (2.0 * sy * sy)).exp()
            })
            .collect();
        let mean = kernel.iter().sum::<f64>() / kernel.len() as f64;
        kernel.iter_mut().for_each(|k| *k -= mean);
        Ok(GaussianFeature {
            sigma_x,
            sigma_y,
            theta,
            cx,
            cy,
            n,
            kernel,
        })
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HaarFeature {
    Rect {
        kind: RectKind,
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
    Gaussian(GaussianFeature),
}

impl HaarFeature {
    pub fn rect(kind: RectKind, x: usize, y: usize, w: usize, h: usize, n: usize) -> Result<Self> {
        let (bw, bh) = kind.base();
        if w == 0 || h == 0 || w % bw != 0 || h % bh != 0 {
            return Err(Error::usage(format!("{kind:?} size {w}x{h} not a multiple of {bw}x{bh}")));
        }
        if x + w > n || y + h > n {
            return Err(Error::usage(format!("{kind:?} at ({x},{y}) size {w}x{h} exceeds {n}x{n} window")));
        }
        Ok(HaarFeature::Rect { kind, x, y, w, h })
    }

    /// Whether the feature fits an `n × n` window.
    pub fn fits(&self, n: usize) -> bool {
        match self {
            HaarFeature::Rect { x, y, w, h, .. } => x + w <= n && y + h <= n,
            HaarFeature::Gaussian(g) => g.n == n,
        }
    }

    /// Unnormalized response on a window.
    pub fn raw_value(&self, win: &Window<'_>) -> f64 {
        match *self {
            HaarFeature::Rect { kind, x, y, w, h } => {
                let s = |x, y, w, h| win.rect_sum(x, y, w, h);
                let v = match kind {
                    RectKind::TwoRectH => {
                        let c = w / 2;
                        s(x + c, y, c, h) - s(x, y, c, h)
                    }
                    RectKind::TwoRectV => {
                        let c = h / 2;
                        s(x, y + c, w, c) - s(x, y, w, c)
                    }
                    RectKind::ThreeRectH => {
                        let c = w / 3;
                        2 * s(x + c, y, c, h) - s(x, y, c, h) - s(x + 2 * c, y, c, h)
                    }
                    RectKind::ThreeRectV => {
                        let c = h / 3;
                        2 * s(x, y + c, w, c) - s(x, y, w, c) - s(x, y + 2 * c, w, c)
                    }
                    RectKind::FourRect => {
                        let (cw, ch) = (w / 2, h / 2);
                        s(x + cw, y, cw, ch) + s(x, y + ch, cw, ch) - s(x, y, cw, ch) - s(x + cw, y + ch, cw, ch)
                    }
                };
                v as f64
            }
            HaarFeature::Gaussian(ref g) => {
                let n = g.n;
                let mut acc = 0f64;
                for yy in 0..n {
                    for xx in 0..n {
                        acc += g.kernel[yy * n + xx] * win.pixel(xx, yy) as f64;
                    }
                }
                acc
            }
        }
    }

    /// Response divided by the window's pixel standard deviation, rounded to `f32`.
    ///
    /// Training and detection both compare this exact value against stump thresholds.
    pub fn value(&self, win: &Window<'_>, std_dev: f64) -> f32 {
        (self.raw_value(win) / std_dev) as f32
    }
}

/// Checked evaluation of a feature on a window.
pub fn eval_feature(f: &HaarFeature, win: &Window<'_>) -> Result<f64> {
    if !f.fits(win.n) {
        return Err(Error::usage(format!("feature does not fit a {}x{} window", win.n, win.n)));
    }
    Ok(f.raw_value(win))
}

/// Sigma values for the Gaussian family.
pub const GAUSSIAN_SIGMAS: [f32; 3] = [1.0, 2.0, 4.0];
/// Orientations for the Gaussian family, degrees.
pub const GAUSSIAN_ANGLES: [f32; 4] = [0.0, 45.0, 90.0, 135.0];
/// Grid spacing of Gaussian centers.
pub const GAUSSIAN_CENTER_STEP: usize = 2;

/// Every rectangle feature in an `n × n` window (stride 1 positions, sizes in
/// multiples of each base shape).
pub fn enumerate_rect_features(n: usize) -> Vec<HaarFeature> {
    let mut out = Vec::new();
    for kind in RectKind::ALL {
        let (bw, bh) = kind.base();
        for w in (bw..=n).step_by(bw) {
            for h in (bh..=n).step_by(bh) {
                for y in 0..=n - h {
                    for x in 0..=n - w {
                        out.push(HaarFeature::Rect { kind, x, y, w, h });
                    }
                }
            }
        }
    }
    out
}

pub fn enumerate_gaussian_features(n: usize) -> Vec<HaarFeature> {
    let mut out = Vec::new();
    for &sx in &GAUSSIAN_SIGMAS {
        for &sy in &GAUSSIAN_SIGMAS {
            for &theta in &GAUSSIAN_ANGLES {
                for cy in (GAUSSIAN_CENTER_STEP / 2..n).step_by(GAUSSIAN_CENTER_STEP) {
                    for cx in (GAUSSIAN_CENTER_STEP / 2..n).step_by(GAUSSIAN_CENTER_STEP) {
                        let g = GaussianFeature::new(n, sx, sy, theta, cx as f32, cy as f32).expect("valid sigmas");
                        out.push(HaarFeature::Gaussian(g));
                    }
                }
            }
        }
    }
    out
}

/// Gaussian features first, then rectangle features, capped at `cap` in total.
///
/// When the full pool is larger than the cap, the Gaussian family is kept
/// (up to the cap) and the rectangle features are sampled with `seed`; the
/// sample keeps enumeration order.
pub fn feature_pool(n: usize, cap: usize, seed: u64) -> Vec<HaarFeature> {
    let mut pool = enumerate_gaussian_features(n);
    pool.truncate(cap);
    let rects = enumerate_rect_features(n);
    let room = cap - pool.len();
    if rects.len() <= room {
        pool.extend(rects);
    } else {
        let mut idx: Vec<usize> = (0..rects.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(room);
        idx.sort_unstable();
        pool.extend(idx.into_iter().map(|i| rects[i].clone()));
    }
    pool
}
