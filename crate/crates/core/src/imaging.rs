//! 8-bit images: binary PNM decoding and encoding, bilinear resampling,
//! zero-padded crops and the pixel-level preprocessing transforms.

use crate::error::{Error, ImageParseKind, Result};
use crate::tensor::Tensor;

/// Row-major 8-bit image with interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::usage(format!("image extent {width}x{height} must be positive")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::usage(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::shape("Image::new", &[height, width, channels], &[pixels.len()]));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Three-channel copy; gray values are replicated.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels,
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn err(&self, kind: ImageParseKind) -> Error {
        Error::ImageParse {
            offset: self.pos,
            kind,
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let kind = if self.pos >= self.bytes.len() {
                ImageParseKind::Truncated
            } else {
                ImageParseKind::BadHeader
            };
            return Err(self.err(kind));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::ImageParse {
                offset: start,
                kind: ImageParseKind::BadHeader,
            })
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) with maxval 255.
pub fn load_image(bytes: &[u8]) -> Result<Image> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(r.err(ImageParseKind::BadMagic)),
    };
    r.pos = 2;
    r.skip_space_and_comments();
    let width_at = r.pos;
    let width = r.number()? as usize;
    let height = r.number()? as usize;
    if width == 0 || height == 0 {
        return Err(Error::ImageParse {
            offset: width_at,
            kind: ImageParseKind::BadHeader,
        });
    }
    r.skip_space_and_comments();
    let maxval_at = r.pos;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(Error::ImageParse {
            offset: maxval_at,
            kind: ImageParseKind::UnsupportedMaxval(maxval),
        });
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        Some(_) => return Err(r.err(ImageParseKind::BadHeader)),
        None => return Err(r.err(ImageParseKind::Truncated)),
    }
    let needed = width * height * channels;
    let payload = &bytes[r.pos..];
    if payload.len() < needed {
        return Err(Error::ImageParse {
            offset: r.pos + payload.len(),
            kind: ImageParseKind::Truncated,
        });
    }
    Image::new(width, height, channels, payload[..needed].to_vec())
}

/// Encodes with the canonical header `P5|P6\n<w> <h>\n255\n`.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Bilinear resize with half-pixel centers (`src = (dst + 0.5) * scale - 0.5`),
/// sample positions clamped to the border.
pub fn resize_bilinear(img: &Image, new_w: usize, new_h: usize) -> Result<Image> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::usage(format!("resize target {new_w}x{new_h} must be positive")));
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f32 / dst as f32;
        (0..dst)
            .map(|d| {
                let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f32)
            })
            .collect()
    };
    let xs = taps(img.width, new_w);
    let ys = taps(img.height, new_h);
    let ch = img.channels;
    let mut out = Vec::with_capacity(new_w * new_h * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let p = |x: usize, y: usize| img.pixels[(y * img.width + x) * ch + c] as f32;
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
                let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
                let v = top + (bottom - top) * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(new_w, new_h, ch, out)
}

/// Integer pixel rectangle `[x1, x2) × [y1, y2)`; may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl PixelRect {
    /// Rounds real box corners to the nearest pixel edges.
    pub fn from_corners(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        let r = PixelRect {
            x1: x1.round() as i64,
            y1: y1.round() as i64,
            x2: x2.round() as i64,
            y2: y2.round() as i64,
        };
        if r.x2 <= r.x1 || r.y2 <= r.y1 {
            return Err(Error::usage(format!("crop box ({x1}, {y1}, {x2}, {y2}) has no area")));
        }
        Ok(r)
    }

    pub fn width(&self) -> usize {
        (self.x2 - self.x1) as usize
    }

    pub fn height(&self) -> usize {
        (self.y2 - self.y1) as usize
    }
}

/// Copies `rect` out of `img`, filling out-of-bounds pixels with 0.
pub fn crop_padded(img: &Image, rect: PixelRect) -> Result<Image> {
    if rect.x2 <= rect.x1 || rect.y2 <= rect.y1 {
        return Err(Error::usage(format!("crop rect {rect:?} has no area")));
    }
    let (w, h, ch) = (rect.width(), rect.height(), img.channels);
    let mut out = vec![0u8; w * h * ch];
    let x_lo = rect.x1.max(0);
    let x_hi = rect.x2.min(img.width as i64);
    if x_lo < x_hi {
        let n = (x_hi - x_lo) as usize * ch;
        for y in rect.y1.max(0)..rect.y2.min(img.height as i64) {
            let src = (y as usize * img.width + x_lo as usize) * ch;
            let dst = (((y - rect.y1) as usize) * w + (x_lo - rect.x1) as usize) * ch;
            out[dst..dst + n].copy_from_slice(&img.pixels[src..src + n]);
        }
    }
    Image::new(w, h, ch, out)
}

/// Zero-padded crop of a real-valued box, resized to `out_size × out_size`.
pub fn crop_with_padding(img: &Image, x1: f32, y1: f32, x2: f32, y2: f32, out_size: usize) -> Result<Image> {
    let rect = PixelRect::from_corners(x1, y1, x2, y2)?;
    resize_bilinear(&crop_padded(img, rect)?, out_size, out_size)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreprocessOp {
    Brightness { gain: f32, offset: f32 },
    Grayscale,
    Normalize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessed {
    Image(Image),
    Tensor(Tensor),
}

pub fn preprocess_transform(img: &Image, op: PreprocessOp) -> Result<Preprocessed> {
    Ok(match op {
        PreprocessOp::Brightness { gain, offset } => Preprocessed::Image(brightness(img, gain, offset)?),
        PreprocessOp::Grayscale => Preprocessed::Image(grayscale(img)),
        PreprocessOp::Normalize => Preprocessed::Tensor(normalize(img)),
    })
}

/// `v' = clamp(round(gain * v + offset), 0, 255)` on every channel.
pub fn brightness(img: &Image, gain: f32, offset: f32) -> Result<Image> {
    if !(gain >= 0.0) {
        return Err(Error::usage(format!("brightness gain {gain} must be >= 0")));
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&v| (gain as f64 * v as f64 + offset as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(img.width, img.height, img.channels, pixels)
}

/// Luma `round(0.299 R + 0.587 G + 0.114 B)`; gray images are returned unchanged.
pub fn grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round().min(255.0) as u8)
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        pixels,
    }
}

/// CHW tensor with values `(v - 127.5) / 128`.
pub fn normalize(img: &Image) -> Tensor {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut data = vec![0f32; w * h * ch];
    for (i, px) in img.pixels.chunks_exact(ch).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * w * h + i] = (v as f32 - 127.5) / 128.0;
        }
    }
    Tensor::new(vec![ch, h, w], data).expect("extent checked at construction")
}
