//! In-memory RGB image buffer.
//!
//! All pixel math in this crate happens on `f64` values in [0,1]; 8-bit
//! quantization is applied only when writing PNG files.

use crate::error::{Error, Result};
use ndarray::{Array3, Array4};
use std::path::Path;

/// Row-major interleaved RGB image, values nominally in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                img.set(y, x, f(y, x));
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, px: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = px[0];
        self.data[i + 1] = px[1];
        self.data[i + 2] = px[2];
    }

    /// Pixel fetch with symmetric (edge-repeating) reflection outside bounds.
    pub fn get_reflect(&self, y: i64, x: i64) -> [f64; 3] {
        let ry = reflect_index(y, self.height);
        let rx = reflect_index(x, self.width);
        self.get(ry, rx)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Replace every pixel with its luma replicated across channels.
    pub fn to_grayscale(&self) -> ImageBuf {
        ImageBuf::from_fn(self.height, self.width, |y, x| {
            let [r, g, b] = self.get(y, x);
            let l = crate::color::luminance(r, g, b);
            [l, l, l]
        })
    }

    /// Copy of the rectangle starting at (y0, x0) with the given size.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageBuf {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop out of bounds");
        ImageBuf::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x))
    }

    /// Write `src` into this image with its top-left corner at (y0, x0).
    pub fn blit(&mut self, y0: usize, x0: usize, src: &ImageBuf) {
        assert!(y0 + src.height <= self.height && x0 + src.width <= self.width);
        for y in 0..src.height {
            for x in 0..src.width {
                self.set(y0 + y, x0 + x, src.get(y, x));
            }
        }
    }

    /// CHW tensor view of the image, shape [3, H, W].
    pub fn to_chw(&self) -> Array3<f64> {
        Array3::from_shape_fn((3, self.height, self.width), |(c, y, x)| self.get(y, x)[c])
    }

    /// Batch-of-one NCHW tensor, shape [1, 3, H, W].
    pub fn to_nchw(&self) -> Array4<f64> {
        self.to_chw().insert_axis(ndarray::Axis(0))
    }

    pub fn from_chw(t: &Array3<f64>) -> Self {
        let (c, h, w) = t.dim();
        assert_eq!(c, 3, "expected 3 channels");
        ImageBuf::from_fn(h, w, |y, x| [t[[0, y, x]], t[[1, y, x]], t[[2, y, x]]])
    }

    /// Save as 8-bit RGB PNG; values are clamped then rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = self.get(y, x);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                out.put_pixel(x as u32, y as u32, image::Rgb([q(px[0]), q(px[1]), q(px[2])]));
            }
        }
        out.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(ImageBuf::from_fn(h, w, |y, x| {
            let p = img.get_pixel(x as u32, y as u32);
            [
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ]
        }))
    }
}

/// Symmetric reflection of an out-of-range index into [0, len).
/// Pattern for len = 4: ... 1 0 | 0 1 2 3 | 3 2 ...
pub fn reflect_index(i: i64, len: usize) -> usize {
    let n = len as i64;
    debug_assert!(n > 0);
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}
