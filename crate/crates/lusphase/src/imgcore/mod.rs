//! Grayscale image container, file I/O, geometric preprocessing, and 2-D
//! spectral transforms shared by every filtering stage.

mod fft;
mod io;

pub use fft::{fft2, ifft2, ComplexSpectrum};
pub use io::{load_image, save_image, ImageFormat};

use crate::{Error, Result};

/// Row-major 2-D grayscale raster of `f64` intensities.
///
/// Values are nominally in `[0, 1]` after normalization; intermediate
/// stages may exceed that range but must stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major data, validating length and finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite intensity {bad}")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Affine rescale of the value range onto `[0, 1]`.
    ///
    /// An image with no value spread (including all-zero images) maps to
    /// all zeros so degenerate inputs stay degenerate.
    pub fn normalize_unit(&self) -> GrayImage {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if span <= 0.0 {
            return GrayImage::zeros(self.width, self.height);
        }
        let data = self.data.iter().map(|&v| (v - lo) / span).collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Source pixel index for `i` under symmetric (edge-repeating)
    /// extension, folding out-of-range indices back into `0..n`.
    #[inline]
    pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
        let n = n as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -1 - i;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    }

    /// Pads the image by `(pad_x, pad_y)` on every side using symmetric
    /// extension.
    pub fn pad_symmetric(&self, pad_x: usize, pad_y: usize) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let out_w = w + 2 * pad_x;
        let out_h = h + 2 * pad_y;
        GrayImage::from_fn(out_w, out_h, |x, y| {
            let sx = Self::reflect_index(x as isize - pad_x as isize, w);
            let sy = Self::reflect_index(y as isize - pad_y as isize, h);
            self.get(sx, sy)
        })
    }

    /// Extracts the `width x height` window whose top-left corner is at
    /// `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, width: usize, height: usize) -> GrayImage {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        GrayImage::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y))
    }
}

/// Centered square crop of side `side`; offsets are `floor((dim - side)/2)`.
pub fn crop_center(img: &GrayImage, side: usize) -> Result<GrayImage> {
    if side == 0 {
        return Err(Error::Dimension("crop side must be positive".into()));
    }
    if side > img.width || side > img.height {
        return Err(Error::Dimension(format!(
            "crop side {side} exceeds source {}x{}",
            img.width, img.height
        )));
    }
    let x0 = (img.width - side) / 2;
    let y0 = (img.height - side) / 2;
    Ok(img.window(x0, y0, side, side))
}

/// Bilinear resampling on a corner-aligned grid.
///
/// Output values are convex combinations of the source, so the range never
/// leaves `[min(img), max(img)]`; resizing to the source size is the
/// identity.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Dimension("resize target must be positive".into()));
    }
    let (w, h) = (img.width, img.height);
    let scale_x = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let scale_y = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    Ok(GrayImage::from_fn(out_w, out_h, |x, y| {
        let sx = x as f64 * scale_x;
        let sy = y as f64 * scale_y;
        let x0 = (sx.floor() as usize).min(w - 1);
        let y0 = (sy.floor() as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
        let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }))
}
