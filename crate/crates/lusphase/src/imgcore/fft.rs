//! 2-D discrete Fourier transform over [`GrayImage`], used to realize the
//! filtering convolutions in the frequency domain.
//!
//! Convention: the forward transform is unnormalized, the inverse divides
//! by `width * height`, and the DC bin sits at index `(0, 0)`.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use super::GrayImage;

/// Frequency-domain raster matching a [`GrayImage`], row-major with DC at
/// `(0, 0)`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum {
    width: usize,
    height: usize,
    data: Vec<Complex<f64>>,
}

impl ComplexSpectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Complex<f64>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.data
    }

    /// Signed frequency bin for index `k` along an axis of length `n`,
    /// in `-n/2+1 ..= n/2` cycles per frame.
    #[inline]
    pub fn signed_bin(k: usize, n: usize) -> isize {
        if k <= n / 2 {
            k as isize
        } else {
            k as isize - n as isize
        }
    }

    /// Angular frequency pair `(wx, wy)` in radians per pixel for the bin
    /// at `(kx, ky)`.
    #[inline]
    pub fn angular_freq(&self, kx: usize, ky: usize) -> (f64, f64) {
        let fx = Self::signed_bin(kx, self.width) as f64 / self.width as f64;
        let fy = Self::signed_bin(ky, self.height) as f64 / self.height as f64;
        (2.0 * std::f64::consts::PI * fx, 2.0 * std::f64::consts::PI * fy)
    }

    /// Multiplies every bin by `f(wx, wy)`.
    pub fn apply_filter(&mut self, mut f: impl FnMut(f64, f64) -> Complex<f64>) {
        for ky in 0..self.height {
            for kx in 0..self.width {
                let (wx, wy) = self.angular_freq(kx, ky);
                self.data[ky * self.width + kx] *= f(wx, wy);
            }
        }
    }
}

fn transform_rows(width: usize, data: &mut [Complex<f64>], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(width, direction);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(width) {
        fft.process_with_scratch(row, &mut scratch);
    }
}

fn transpose(width: usize, height: usize, data: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}

fn fft2_complex(
    width: usize,
    height: usize,
    mut data: Vec<Complex<f64>>,
    direction: FftDirection,
) -> Vec<Complex<f64>> {
    transform_rows(width, &mut data, direction);
    let mut t = transpose(width, height, &data);
    transform_rows(height, &mut t, direction);
    transpose(height, width, &t)
}

/// Forward 2-D transform (unnormalized).
pub fn fft2(img: &GrayImage) -> ComplexSpectrum {
    let data: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let data = fft2_complex(img.width(), img.height(), data, FftDirection::Forward);
    ComplexSpectrum {
        width: img.width(),
        height: img.height(),
        data,
    }
}

/// Inverse 2-D transform; returns the real part scaled by `1/(W*H)`.
pub fn ifft2(spec: &ComplexSpectrum) -> GrayImage {
    let data = fft2_complex(
        spec.width,
        spec.height,
        spec.data.clone(),
        FftDirection::Inverse,
    );
    let norm = 1.0 / (spec.width * spec.height) as f64;
    let real: Vec<f64> = data.iter().map(|c| c.re * norm).collect();
    GrayImage::new(spec.width, spec.height, real).expect("inverse transform stays finite")
}
