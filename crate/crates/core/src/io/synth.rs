//! Deterministic synthetic face-like fixtures.
//!
//! Each image is a cluttered, noisy background with one planted face: a skin
//! ellipse with a dark eye band, two eyes, a nose spot and a mouth line.
//! Masked classes cover the lower face with a light rectangle; the left and
//! right classes shift the features sideways. Every image draws from its own
//! RNG stream, so any image can be regenerated from `(seed, index)` alone.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::annotations::write_annotations;
use crate::error::{Error, Result};
use crate::eval::{Annotation, FaceClass};
use crate::imaging::{crop_with_padding, encode_pnm, Image};
use crate::mtcnn::DetectionBox;

/// Per-class image counts in [`FaceClass::ALL`] order.
pub const DEFAULT_COUNTS: [usize; 4] = [159, 157, 155, 155];
pub const DEFAULT_IMAGE_SIZE: usize = 96;

/// Face side as a fraction of the image side.
const FACE_FRACTION: (f32, f32) = (0.35, 0.6);

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

fn put(img: &mut Image, x: i64, y: i64, rgb: [f32; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        for (c, v) in rgb.iter().enumerate() {
            img.set(x as usize, y as usize, c, v.round().clamp(0.0, 255.0) as u8);
        }
    }
}

fn background<R: Rng>(size: usize, rng: &mut R) -> Image {
    let mut img = Image::filled(size, size, 3, 0).expect("nonzero size");
    let base: [f32; 3] = [rng.gen_range(30.0..220.0), rng.gen_range(30.0..220.0), rng.gen_range(30.0..220.0)];
    let (gx, gy) = (rng.gen_range(-0.6..0.6f32), rng.gen_range(-0.6..0.6f32));
    for y in 0..size {
        for x in 0..size {
            let g = gx * x as f32 + gy * y as f32;
            put(&mut img, x as i64, y as i64, [base[0] + g, base[1] + g, base[2] + g]);
        }
    }
    for _ in 0..rng.gen_range(2..6) {
        let w = rng.gen_range(4..size / 3);
        let h = rng.gen_range(4..size / 3);
        let x0 = rng.gen_range(0..size - w) as i64;
        let y0 = rng.gen_range(0..size - h) as i64;
        let col = [rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)];
        for y in y0..y0 + h as i64 {
            for x in x0..x0 + w as i64 {
                put(&mut img, x, y, col);
            }
        }
    }
    img
}

fn add_noise<R: Rng>(img: &mut Image, amp: i32, rng: &mut R) {
    for p in img.pixels_mut() {
        *p = (*p as i32 + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8;
    }
}

fn disk(img: &mut Image, cx: f32, cy: f32, r: f32, rgb: [f32; 3]) {
    for y in (cy - r).floor() as i64..=(cy + r).ceil() as i64 {
        for x in (cx - r).floor() as i64..=(cx + r).ceil() as i64 {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                put(img, x, y, rgb);
            }
        }
    }
}

/// Draws one face in the square `[x1, x1 + side) × [y1, y1 + side)` and returns its box.
fn draw_face<R: Rng>(img: &mut Image, class: FaceClass, x1: f32, y1: f32, side: f32, rng: &mut R) -> DetectionBox {
    let (cx, cy) = (x1 + side / 2.0, y1 + side / 2.0);
    let (ax, ay) = (0.42 * side, 0.5 * side);
    let skin = [rng.gen_range(170.0..230.0), rng.gen_range(130.0..180.0), rng.gen_range(100.0..150.0)];
    let dark = skin.map(|v| v * 0.45);
    let feature = [30.0, 20.0, 20.0];
    let shift = match class {
        FaceClass::LeftMask => -0.12 * side,
        FaceClass::RightMask => 0.12 * side,
        _ => 0.0,
    };
    let inside = |x: f32, y: f32| ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2) <= 1.0;
    let eye_y = cy - 0.15 * side;
    let band = (eye_y - 0.06 * side, eye_y + 0.06 * side);
    let mask_top = cy + 0.02 * side;
    let mask_col = [rng.gen_range(140.0..170.0), rng.gen_range(180.0..205.0), rng.gen_range(215.0..240.0)];

    for y in y1.floor() as i64..(y1 + side).ceil() as i64 {
        for x in x1.floor() as i64..(x1 + side).ceil() as i64 {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            if !inside(px, py) {
                continue;
            }
            let col = if class.masked() && py >= mask_top {
                mask_col
            } else if py >= band.0 && py < band.1 {
                dark
            } else {
                skin
            };
            put(img, x, y, col);
        }
    }

    let eyes = [(cx - 0.18 * side + shift, eye_y), (cx + 0.18 * side + shift, eye_y)];
    for (ex, ey) in eyes {
        disk(img, ex, ey, 0.07 * side, feature);
    }
    let nose = (cx + shift, cy + 0.05 * side);
    let mouth_y = cy + 0.25 * side;
    let mouth = [(cx - 0.15 * side + shift, mouth_y), (cx + 0.15 * side + shift, mouth_y)];
    if !class.masked() {
        disk(img, nose.0, nose.1, 0.05 * side, dark);
        let thick = (0.04 * side).max(1.0);
        for y in (mouth_y - thick).floor() as i64..(mouth_y + thick).ceil() as i64 {
            for x in mouth[0].0.floor() as i64..mouth[1].0.ceil() as i64 {
                put(img, x, y, feature);
            }
        }
    }

    let mut b = DetectionBox::new(x1, y1, x1 + side, y1 + side, 1.0);
    b.landmarks = Some([
        [eyes[0].0, eyes[0].1],
        [eyes[1].0, eyes[1].1],
        [nose.0, nose.1],
        [mouth[0].0, mouth[0].1],
        [mouth[1].0, mouth[1].1],
    ]);
    b
}

/// One synthetic image of `class` with its ground-truth box, from stream `index`.
pub fn synth_face_image(class: FaceClass, size: usize, seed: u64, index: u64) -> Result<(Image, DetectionBox)> {
    if size < 24 {
        return Err(Error::usage(format!("synthetic image size {size} < 24")));
    }
    let mut rng = rng_for(seed, index);
    let mut img = background(size, &mut rng);
    let s = size as f32;
    let side = rng.gen_range(FACE_FRACTION.0 * s..FACE_FRACTION.1 * s).round();
    let x1 = rng.gen_range(0.0..=s - side).round();
    let y1 = rng.gen_range(0.0..=s - side).round();
    let b = draw_face(&mut img, class, x1, y1, side, &mut rng);
    add_noise(&mut img, 12, &mut rng);
    Ok((img, b))
}

/// A face-free image from stream `index`.
pub fn synth_background_image(size: usize, seed: u64, index: u64) -> Result<Image> {
    if size < 24 {
        return Err(Error::usage(format!("synthetic image size {size} < 24")));
    }
    let mut rng = rng_for(seed, index);
    let mut img = background(size, &mut rng);
    add_noise(&mut img, 12, &mut rng);
    Ok(img)
}

/// Stream index of image `i` of `class`; classes get disjoint ranges.
pub fn stream_index(class: FaceClass, i: usize) -> u64 {
    let c = FaceClass::ALL.iter().position(|&k| k == class).unwrap() as u64;
    (c << 32) | i as u64
}

/// Builds the dataset in memory: annotations (ids `<class>_<nnnn>`) and images.
pub fn synth_dataset(counts: [usize; 4], size: usize, seed: u64) -> Result<Vec<(Annotation, Image)>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (class, &n) in FaceClass::ALL.iter().zip(&counts) {
        for i in 0..n {
            let (img, b) = synth_face_image(*class, size, seed, stream_index(*class, i))?;
            let id = format!("{}_{i:04}", class.name());
            out.push((
                Annotation {
                    path: format!("{id}.ppm"),
                    id,
                    class: class.name().into(),
                    boxes: vec![b],
                },
                img,
            ));
        }
    }
    Ok(out)
}

/// Writes `annotations.jsonl` and one PPM per image into `out_dir`.
pub fn generate_synthetic_dataset(counts: [usize; 4], size: usize, seed: u64, out_dir: &Path) -> Result<Vec<Annotation>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = synth_dataset(counts, size, seed)?;
    for (a, img) in &data {
        let p = out_dir.join(&a.path);
        std::fs::write(&p, encode_pnm(img)).map_err(|e| Error::io(&p, e))?;
    }
    let anns: Vec<Annotation> = data.into_iter().map(|(a, _)| a).collect();
    write_annotations(&anns, &out_dir.join("annotations.jsonl"))?;
    Ok(anns)
}

/// `n × n` face windows: front faces cropped tightly around their boxes.
pub fn face_windows(count: usize, n: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| {
            let (img, b) = synth_face_image(FaceClass::Front, DEFAULT_IMAGE_SIZE, seed, stream_index(FaceClass::Front, i))?;
            crop_with_padding(&img, b.x1, b.y1, b.x2, b.y2, n)
        })
        .collect()
}

/// `n × n` non-face windows cut at random places from face-free backgrounds.
pub fn background_windows(count: usize, n: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = rng_for(seed, u64::MAX);
    (0..count)
        .map(|i| {
            let img = synth_background_image(DEFAULT_IMAGE_SIZE, seed, (1 << 40) | i as u64)?;
            let s = DEFAULT_IMAGE_SIZE as f32;
            let side = rng.gen_range(n as f32..s / 2.0).round();
            let x = rng.gen_range(0.0..=s - side).round();
            let y = rng.gen_range(0.0..=s - side).round();
            crop_with_padding(&img, x, y, x + side, y + side, n)
        })
        .collect()
}
