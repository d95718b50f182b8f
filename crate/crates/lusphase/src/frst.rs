//! Fast radial symmetry transform.
//!
//! Gradient-voting detector: every pixel with a strong enough gradient
//! casts a vote at the pixel its (unit) gradient points to, one vote per
//! configured radius. Orientation and magnitude accumulators are combined
//! into a per-radius interest map, blurred, and averaged over radii.

use serde::{Deserialize, Serialize};

use crate::imgcore::GrayImage;
use crate::{Error, Result};

/// Which contrast polarity casts votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Vote along the gradient (bright blobs on dark background).
    Bright,
    /// Vote against the gradient (dark blobs on bright background).
    Dark,
    /// Sum of bright and dark votes.
    Both,
}

/// Parameters of the radial symmetry transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FrstParams {
    /// Voting radii in pixels.
    pub radii: Vec<usize>,
    /// Radial strictness exponent.
    pub radial_strictness: f64,
    /// Gradient magnitude threshold as a fraction of the per-image
    /// maximum; only strictly larger magnitudes vote.
    pub gradient_threshold: f64,
    /// Contrast polarity of the voters.
    pub polarity: Polarity,
    /// Orientation normalization constant for radius 1.
    pub kappa_radius_one: f64,
    /// Orientation normalization constant for radii above 1.
    pub kappa: f64,
    /// Blur width per radius: `sigma = sigma_factor * radius`.
    pub sigma_factor: f64,
}

impl Default for FrstParams {
    fn default() -> Self {
        FrstParams {
            radii: vec![2, 4, 6, 8, 10],
            radial_strictness: 2.0,
            gradient_threshold: 0.05,
            polarity: Polarity::Bright,
            kappa_radius_one: 8.0,
            kappa: 9.9,
            sigma_factor: 0.25,
        }
    }
}

impl FrstParams {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.radii.is_empty() {
            return Err(Error::Parameter("radii set must be non-empty".into()));
        }
        if self.radii.iter().any(|&n| n < 1) {
            return Err(Error::Parameter("radii must be >= 1".into()));
        }
        let limit = width.min(height) / 2;
        if let Some(&bad) = self.radii.iter().find(|&&n| n >= limit.max(1)) {
            return Err(Error::Parameter(format!(
                "radius {bad} too large for {width}x{height} image (must be < {limit})"
            )));
        }
        if self.radial_strictness < 1.0 {
            return Err(Error::Parameter("radial strictness must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.gradient_threshold) {
            return Err(Error::Parameter(
                "gradient threshold must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn kappa_for(&self, radius: usize) -> f64 {
        if radius == 1 {
            self.kappa_radius_one
        } else {
            self.kappa
        }
    }
}

/// 3x3 Sobel derivatives with symmetric boundary padding; returns
/// `(horizontal, vertical)`.
pub fn sobel_gradient(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (img.width(), img.height());
    let at = |x: isize, y: isize| {
        img.get(
            GrayImage::reflect_index(x, w),
            GrayImage::reflect_index(y, h),
        )
    };
    let mut gx = GrayImage::zeros(w, h);
    let mut gy = GrayImage::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let tl = at(x - 1, y - 1);
            let tc = at(x, y - 1);
            let tr = at(x + 1, y - 1);
            let ml = at(x - 1, y);
            let mr = at(x + 1, y);
            let bl = at(x - 1, y + 1);
            let bc = at(x, y + 1);
            let br = at(x + 1, y + 1);
            gx.set(
                x as usize,
                y as usize,
                (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl),
            );
            gy.set(
                x as usize,
                y as usize,
                (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr),
            );
        }
    }
    (gx, gy)
}

/// Separable Gaussian blur with symmetric padding; kernel radius `ceil(3*sigma)`.
fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let (w, h) = (img.width(), img.height());
    let mut horiz = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = GrayImage::reflect_index(x + i as isize - radius, w);
                acc += k * img.get(sx, y);
            }
            horiz.set(x as usize, y, acc);
        }
    }
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sy = GrayImage::reflect_index(y + i as isize - radius, h);
                acc += k * horiz.get(x, sy);
            }
            out.set(x, y as usize, acc);
        }
    }
    out
}

/// Radial symmetry interest map, rescaled onto `[0, 1]`.
pub fn frst_transform(img: &GrayImage, params: &FrstParams) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    params.validate(w, h)?;

    let (gx, gy) = sobel_gradient(img);
    let mut mag = vec![0.0f64; w * h];
    let mut max_mag = 0.0f64;
    for ((m, &gx_v), &gy_v) in mag.iter_mut().zip(gx.data()).zip(gy.data()) {
        *m = (gx_v * gx_v + gy_v * gy_v).sqrt();
        max_mag = max_mag.max(*m);
    }
    if max_mag <= 0.0 {
        return Ok(GrayImage::zeros(w, h));
    }
    let threshold = params.gradient_threshold * max_mag;

    let mut mean = GrayImage::zeros(w, h);
    for &radius in &params.radii {
        let mut orientation = vec![0.0f64; w * h];
        let mut magnitude = vec![0.0f64; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let m = mag[i];
                if m <= threshold {
                    continue;
                }
                let ux = gx.data()[i] / m;
                let uy = gy.data()[i] / m;
                let mut vote = |dir: f64| {
                    let vx = x as isize + (dir * radius as f64 * ux).round() as isize;
                    let vy = y as isize + (dir * radius as f64 * uy).round() as isize;
                    if vx >= 0 && vx < w as isize && vy >= 0 && vy < h as isize {
                        let j = vy as usize * w + vx as usize;
                        orientation[j] += 1.0;
                        magnitude[j] += m;
                    }
                };
                match params.polarity {
                    Polarity::Bright => vote(1.0),
                    Polarity::Dark => vote(-1.0),
                    Polarity::Both => {
                        vote(1.0);
                        vote(-1.0);
                    }
                }
            }
        }
        let kappa = params.kappa_for(radius);
        let interest = GrayImage::from_fn(w, h, |x, y| {
            let j = y * w + x;
            let o = orientation[j].clamp(-kappa, kappa);
            o.signum() * (o.abs() / kappa).powf(params.radial_strictness) * (magnitude[j] / kappa)
        });
        let blurred = gaussian_blur(&interest, params.sigma_factor * radius as f64);
        let acc = mean.data_mut();
        for (a, &b) in acc.iter_mut().zip(blurred.data()) {
            *a += b / params.radii.len() as f64;
        }
    }
    Ok(mean.normalize_unit())
}

/// Applies the transform to each image of the enhanced pair.
pub fn radial_symmetry_pair(
    enhanced_one: &GrayImage,
    enhanced_two: &GrayImage,
    params: &FrstParams,
) -> Result<(GrayImage, GrayImage)> {
    Ok((
        frst_transform(enhanced_one, params)?,
        frst_transform(enhanced_two, params)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Anti-aliased bright disc on a dark background.
    pub(crate) fn disc_image(w: usize, h: usize, cx: f64, cy: f64, radius: f64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            (radius - d + 0.5).clamp(0.0, 1.0)
        })
    }

    fn argmax(img: &GrayImage) -> (usize, usize) {
        let mut best = (0, 0);
        let mut val = f64::NEG_INFINITY;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) > val {
                    val = img.get(x, y);
                    best = (x, y);
                }
            }
        }
        best
    }

    #[test]
    fn sobel_of_constant_is_zero() {
        let (gx, gy) = sobel_gradient(&GrayImage::constant(9, 7, 0.4));
        assert!(gx.data().iter().all(|&v| v.abs() < 1e-12));
        assert!(gy.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn sobel_of_ramp_is_constant_in_interior() {
        let w = 12;
        let img = GrayImage::from_fn(w, 8, |x, _| x as f64 / (w - 1) as f64);
        let (gx, gy) = sobel_gradient(&img);
        let expected = 8.0 / (w - 1) as f64;
        for y in 0..8 {
            for x in 1..w - 1 {
                assert!((gx.get(x, y) - expected).abs() < 1e-12);
                assert!(gy.get(x, y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sobel_transpose_swaps_components() {
        let img = GrayImage::from_fn(10, 6, |x, y| ((x * 7 + y * 13) % 11) as f64 / 10.0);
        let transposed = GrayImage::from_fn(6, 10, |x, y| img.get(y, x));
        let (gx, gy) = sobel_gradient(&img);
        let (tx, ty) = sobel_gradient(&transposed);
        for y in 0..6 {
            for x in 0..10 {
                assert!((tx.get(y, x) - gy.get(x, y)).abs() < 1e-12);
                assert!((ty.get(y, x) - gx.get(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_yields_zero_transform() {
        let out = frst_transform(&GrayImage::constant(32, 32, 0.5), &FrstParams::default())
            .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_radius_is_rejected() {
        let mut params = FrstParams::default();
        params.radii = vec![16];
        assert!(matches!(
            frst_transform(&GrayImage::zeros(32, 32), &params),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn bright_disc_peaks_at_center() {
        let mut params = FrstParams::default();
        params.radii = vec![6];
        let img = disc_image(64, 64, 32.0, 32.0, 6.0);
        let out = frst_transform(&img, &params).unwrap();
        let (x, y) = argmax(&out);
        assert!(
            (x as f64 - 32.0).abs() <= 1.0 && (y as f64 - 32.0).abs() <= 1.0,
            "peak at ({x}, {y})"
        );
    }

    #[test]
    fn dark_polarity_pushes_votes_outward() {
        let mut params = FrstParams::default();
        params.radii = vec![6];
        params.polarity = Polarity::Dark;
        let img = disc_image(64, 64, 32.0, 32.0, 6.0);
        let out = frst_transform(&img, &params).unwrap();
        let (x, y) = argmax(&out);
        let dist = ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt();
        assert!(dist > 1.0, "dark-polarity peak unexpectedly at center");
    }

    #[test]
    fn zero_pair_maps_to_zero_pair() {
        let z = GrayImage::zeros(24, 24);
        let (s1, s2) = radial_symmetry_pair(&z, &z, &FrstParams::default()).unwrap();
        assert!(s1.data().iter().all(|&v| v == 0.0));
        assert!(s2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_matches_individual_transforms() {
        let params = FrstParams::default();
        let a = disc_image(48, 48, 20.0, 24.0, 5.0);
        let b = disc_image(48, 48, 30.0, 18.0, 7.0);
        let (s1, s2) = radial_symmetry_pair(&a, &b, &params).unwrap();
        assert_eq!(s1, frst_transform(&a, &params).unwrap());
        assert_eq!(s2, frst_transform(&b, &params).unwrap());
    }

    #[test]
    fn transform_is_deterministic() {
        let params = FrstParams::default();
        let img = disc_image(40, 40, 17.0, 23.0, 6.0);
        let a = frst_transform(&img, &params).unwrap();
        let b = frst_transform(&img, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_equivariance_in_interior() {
        // Content supported well inside the frame, shifted with zero fill.
        let mut params = FrstParams::default();
        params.radii = vec![4];
        let (w, h, dx, dy) = (48usize, 48usize, 3usize, 2usize);
        let base = disc_image(w, h, 22.0, 23.0, 4.0);
        let shifted = GrayImage::from_fn(w, h, |x, y| {
            if x >= dx && y >= dy {
                base.get(x - dx, y - dy)
            } else {
                0.0
            }
        });
        let sa = frst_transform(&base, &params).unwrap();
        let sb = frst_transform(&shifted, &params).unwrap();
        let margin = 10;
        for y in margin..h - margin {
            for x in margin..w - margin {
                let diff = (sb.get(x, y) - sa.get(x - dx, y - dy)).abs();
                assert!(diff <= 1e-6, "diff {diff} at ({x}, {y})");
            }
        }
    }

    #[test]
    fn quarter_rotation_equivariance_in_interior() {
        let mut params = FrstParams::default();
        params.radii = vec![4];
        let (n, cx, cy) = (48usize, 20.0, 26.0);
        let base = disc_image(n, n, cx, cy, 4.0);
        // Rotate the raster by 90 degrees counterclockwise.
        let rotated = GrayImage::from_fn(n, n, |x, y| base.get(n - 1 - y, x));
        let sa = frst_transform(&base, &params).unwrap();
        let sb = frst_transform(&rotated, &params).unwrap();
        let margin = 10;
        for y in margin..n - margin {
            for x in margin..n - margin {
                let diff = (sb.get(x, y) - sa.get(n - 1 - y, x)).abs();
                assert!(diff <= 1e-6, "diff {diff} at ({x}, {y})");
            }
        }
    }
}
