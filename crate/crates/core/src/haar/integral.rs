use crate::error::{Error, Result};
use crate::imaging::Image;

/// Summed-area table with a zero guard row and column.
///
/// `table[y * (width + 1) + x]` holds the sum of all pixels strictly above
/// and left of `(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<i64>,
}

impl IntegralImage {
    fn build(width: usize, height: usize, value: impl Fn(usize) -> i64) -> Self {
        let stride = width + 1;
        let mut table = vec![0i64; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0i64;
            for x in 0..width {
                row += value(y * width + x);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        IntegralImage { width, height, table }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> i64 {
        self.table[y * (self.width + 1) + x]
    }

    pub fn total(&self) -> i64 {
        self.at(self.width, self.height)
    }

    /// Corner identity `D - B - C + A`; bounds are the caller's responsibility.
    #[inline]
    pub fn sum_unchecked(&self, x: usize, y: usize, w: usize, h: usize) -> i64 {
        let s = self.width + 1;
        let t = &self.table;
        t[(y + h) * s + x + w] - t[y * s + x + w] - t[(y + h) * s + x] + t[y * s + x]
    }
}

pub fn integral_image(img: &Image) -> Result<IntegralImage> {
    if img.channels() != 1 {
        return Err(Error::usage("integral image needs a 1-channel image"));
    }
    let px = img.pixels();
    Ok(IntegralImage::build(img.width(), img.height(), |i| px[i] as i64))
}

/// Integral of squared pixel values, for per-window variance.
pub fn squared_integral_image(img: &Image) -> Result<IntegralImage> {
    if img.channels() != 1 {
        return Err(Error::usage("integral image needs a 1-channel image"));
    }
    let px = img.pixels();
    Ok(IntegralImage::build(img.width(), img.height(), |i| {
        let v = px[i] as i64;
        v * v
    }))
}

/// Axis-aligned pixel rectangle `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

pub fn rect_sum(ii: &IntegralImage, r: Rect) -> Result<i64> {
    if r.w == 0 || r.h == 0 || r.x + r.w > ii.width || r.y + r.h > ii.height {
        return Err(Error::usage(format!(
            "rect {r:?} outside {}x{} integral image",
            ii.width, ii.height
        )));
    }
    Ok(ii.sum_unchecked(r.x, r.y, r.w, r.h))
}

/// Gray pixels with both integral tables, ready for window scanning.
#[derive(Debug, Clone)]
pub struct ScanImage {
    pub gray: Image,
    pub sum: IntegralImage,
    pub sq_sum: IntegralImage,
}

impl ScanImage {
    pub fn new(img: &Image) -> Self {
        let gray = crate::imaging::grayscale(img);
        let sum = integral_image(&gray).expect("gray");
        let sq_sum = squared_integral_image(&gray).expect("gray");
        ScanImage { gray, sum, sq_sum }
    }

    pub fn window(&self, x: usize, y: usize, n: usize) -> Window<'_> {
        debug_assert!(x + n <= self.gray.width() && y + n <= self.gray.height());
        Window { src: self, x, y, n }
    }
}

/// An `n × n` view into a [`ScanImage`].
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    src: &'a ScanImage,
    pub x: usize,
    pub y: usize,
    pub n: usize,
}

impl Window<'_> {
    #[inline]
    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> i64 {
        self.src.sum.sum_unchecked(self.x + x, self.y + y, w, h)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.src.gray.get(self.x + x, self.y + y, 0)
    }

    /// Pixel standard deviation, floored at 1 so flat windows stay finite.
    pub fn std_dev(&self) -> f64 {
        let count = (self.n * self.n) as f64;
        let s = self.src.sum.sum_unchecked(self.x, self.y, self.n, self.n) as f64;
        let sq = self.src.sq_sum.sum_unchecked(self.x, self.y, self.n, self.n) as f64;
        let var = (sq / count - (s / count).powi(2)).max(0.0);
        var.sqrt().max(1.0)
    }
}
