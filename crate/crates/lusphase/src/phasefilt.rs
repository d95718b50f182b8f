//! Quadrature band-pass filtering, the monogenic signal, and local phase
//! energy extraction.
//!
//! The band-pass stage multiplies the spectrum by an isotropic alpha-scale
//! space derivative profile with unit peak gain and zero DC response. The
//! two odd monogenic components come from the Riesz transform pair
//! `H1 = -i*wx/|w|`, `H2 = -i*wy/|w|`. Local phase energy accumulates, per
//! scale, the positive part of `|even| - sqrt(odd_x^2 + odd_y^2)` and is
//! rescaled onto `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::imgcore::{fft2, ifft2, GrayImage};
use crate::{Error, Result};

/// Parameters of the alpha-scale space derivative band-pass bank.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AssdParams {
    /// Number of filter scales.
    pub num_scales: usize,
    /// Center wavelength of the first scale, in pixels.
    pub center_wavelength: f64,
    /// Wavelength multiplier between consecutive scales.
    pub scale_multiplier: f64,
    /// Shape exponent of the exponential envelope.
    pub shape_alpha: f64,
    /// Derivative order controlling the low-frequency rolloff.
    pub bandwidth_order: f64,
}

impl Default for AssdParams {
    fn default() -> Self {
        AssdParams {
            num_scales: 2,
            center_wavelength: 25.0,
            scale_multiplier: 2.0,
            shape_alpha: 1.0,
            bandwidth_order: 1.0,
        }
    }
}

impl AssdParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales < 1 {
            return Err(Error::Parameter("num_scales must be >= 1".into()));
        }
        if self.center_wavelength <= 2.0 {
            return Err(Error::Parameter(
                "center_wavelength must exceed 2 pixels (Nyquist)".into(),
            ));
        }
        if self.scale_multiplier <= 1.0 {
            return Err(Error::Parameter("scale_multiplier must exceed 1".into()));
        }
        if self.shape_alpha <= 0.0 || self.bandwidth_order <= 0.0 {
            return Err(Error::Parameter(
                "shape_alpha and bandwidth_order must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Wavelength of the given scale, in pixels.
    pub fn wavelength(&self, scale_index: usize) -> f64 {
        self.center_wavelength * self.scale_multiplier.powi(scale_index as i32)
    }

    /// Unit-peak radial response at angular frequency `w`.
    ///
    /// The unnormalized profile is `u^p * exp(-p * u^a)` with `u = w/ws`;
    /// its maximum sits at `u = a^(-1/a)`, which the normalization maps
    /// to exactly 1.
    pub fn radial_response(&self, w: f64, scale_index: usize) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let ws = 2.0 * std::f64::consts::PI / self.wavelength(scale_index);
        let u = w / ws;
        let a = self.shape_alpha;
        let p = self.bandwidth_order;
        (p * u.ln() + (p / a) * a.ln() + p / a - p * u.powf(a)).exp()
    }
}

/// The three monogenic component images of one scale.
#[derive(Debug, Clone)]
pub struct MonogenicTriple {
    /// Even (band-pass) component.
    pub even: GrayImage,
    /// Odd component from the horizontal Riesz kernel.
    pub odd_x: GrayImage,
    /// Odd component from the vertical Riesz kernel.
    pub odd_y: GrayImage,
}

/// Band-pass filters the image at the requested scale.
pub fn assd_bandpass(
    img: &GrayImage,
    params: &AssdParams,
    scale_index: usize,
) -> Result<GrayImage> {
    params.validate()?;
    if scale_index >= params.num_scales {
        return Err(Error::Parameter(format!(
            "scale index {scale_index} out of range for {} scales",
            params.num_scales
        )));
    }
    let mut spec = fft2(img);
    spec.apply_filter(|wx, wy| {
        let w = (wx * wx + wy * wy).sqrt();
        params.radial_response(w, scale_index).into()
    });
    Ok(ifft2(&spec))
}

/// Applies the Riesz kernel pair, producing the two odd components.
pub fn riesz_transform(band_passed: &GrayImage) -> (GrayImage, GrayImage) {
    let spec = fft2(band_passed);
    let mut spec_x = spec.clone();
    spec_x.apply_filter(|wx, wy| {
        let norm = (wx * wx + wy * wy).sqrt();
        if norm == 0.0 {
            0.0.into()
        } else {
            rustfft::num_complex::Complex::new(0.0, -wx / norm)
        }
    });
    let mut spec_y = spec;
    spec_y.apply_filter(|wx, wy| {
        let norm = (wx * wx + wy * wy).sqrt();
        if norm == 0.0 {
            0.0.into()
        } else {
            rustfft::num_complex::Complex::new(0.0, -wy / norm)
        }
    });
    (ifft2(&spec_x), ifft2(&spec_y))
}

/// Computes the monogenic triple for one scale.
pub fn monogenic(
    img: &GrayImage,
    params: &AssdParams,
    scale_index: usize,
) -> Result<MonogenicTriple> {
    let even = assd_bandpass(img, params, scale_index)?;
    let (odd_x, odd_y) = riesz_transform(&even);
    Ok(MonogenicTriple { even, odd_x, odd_y })
}

/// Local phase energy feature image, rescaled onto `[0, 1]`.
///
/// The image is symmetrically padded by the largest scale wavelength
/// before filtering to suppress FFT wrap-around, then cropped back.
/// All-zero (or constant) inputs yield an all-zero output.
pub fn local_phase_energy(img: &GrayImage, params: &AssdParams) -> Result<GrayImage> {
    params.validate()?;
    let longest = params.wavelength(params.num_scales - 1).ceil() as usize;
    // Symmetric extension folds at most one image span per reflection pass;
    // larger pads only repeat content, so cap at the image size.
    let pad_x = longest.min(img.width());
    let pad_y = longest.min(img.height());
    let padded = img.pad_symmetric(pad_x, pad_y);

    let mut energy = GrayImage::zeros(padded.width(), padded.height());
    for scale in 0..params.num_scales {
        let triple = monogenic(&padded, params, scale)?;
        let out = energy.data_mut();
        for (i, ((&even, &ox), &oy)) in triple
            .even
            .data()
            .iter()
            .zip(triple.odd_x.data())
            .zip(triple.odd_y.data())
            .enumerate()
        {
            let term = even.abs() - (ox * ox + oy * oy).sqrt();
            if term > 0.0 {
                out[i] += term;
            }
        }
    }
    let cropped = energy.window(pad_x, pad_y, img.width(), img.height());
    // Constant inputs leave only FFT round-off in the accumulator; treat
    // energy below the round-off floor as exactly zero so normalization
    // cannot inflate noise. The floor scales with the input so positive
    // rescaling invariance is preserved.
    let input_scale = img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (_, hi) = cropped.min_max();
    if hi <= 1e-12 * input_scale {
        return Ok(GrayImage::zeros(img.width(), img.height()));
    }
    Ok(cropped.normalize_unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_abs(img: &GrayImage) -> f64 {
        img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn max_abs_diff(a: &GrayImage, b: &GrayImage) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        GrayImage::from_fn(w, h, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn params_validation_rejects_bad_values() {
        let mut p = AssdParams::default();
        p.num_scales = 0;
        assert!(p.validate().is_err());
        p = AssdParams::default();
        p.center_wavelength = 2.0;
        assert!(p.validate().is_err());
        p = AssdParams::default();
        p.scale_multiplier = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn bandpass_suppresses_constant_image() {
        let img = GrayImage::constant(32, 32, 0.8);
        let out = assd_bandpass(&img, &AssdParams::default(), 0).unwrap();
        assert!(max_abs(&out) < 1e-12);
    }

    #[test]
    fn bandpass_rejects_out_of_range_scale() {
        let img = GrayImage::zeros(8, 8);
        assert!(matches!(
            assd_bandpass(&img, &AssdParams::default(), 2),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn cosine_at_peak_frequency_passes_with_unit_gain() {
        // Width 100 puts the scale-0 peak (wavelength 25) exactly on bin 4.
        let params = AssdParams::default();
        let w0 = 2.0 * PI / params.center_wavelength;
        let img = GrayImage::from_fn(100, 100, |x, _| (w0 * x as f64).cos());
        let out = assd_bandpass(&img, &params, 0).unwrap();
        assert!(max_abs_diff(&img, &out) < 1e-3);
    }

    #[test]
    fn bandpass_shrinks_white_noise_variance() {
        let img = noise_image(64, 64, 5);
        let out = assd_bandpass(&img, &AssdParams::default(), 0).unwrap();
        let var = |g: &GrayImage| {
            let n = g.data().len() as f64;
            let mean = g.data().iter().sum::<f64>() / n;
            g.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        };
        assert!(var(&out) < var(&img));
    }

    #[test]
    fn riesz_of_zero_is_zero() {
        let (ox, oy) = riesz_transform(&GrayImage::zeros(16, 12));
        assert!(max_abs(&ox) < 1e-15 && max_abs(&oy) < 1e-15);
    }

    #[test]
    fn riesz_turns_horizontal_cosine_into_quadrature_sine() {
        let (w, h) = (64usize, 32usize);
        let w0 = 2.0 * PI * 5.0 / w as f64;
        let img = GrayImage::from_fn(w, h, |x, _| (w0 * x as f64).cos());
        let expected = GrayImage::from_fn(w, h, |x, _| (w0 * x as f64).sin());
        let (ox, oy) = riesz_transform(&img);
        assert!(max_abs_diff(&ox, &expected) < 1e-6);
        assert!(max_abs(&oy) < 1e-6);
    }

    #[test]
    fn riesz_kernels_preserve_energy_off_dc() {
        let img = noise_image(24, 18, 9);
        let spec = fft2(&img);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for ky in 0..18 {
            for kx in 0..24 {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let (wx, wy) = spec.angular_freq(kx, ky);
                let norm2 = wx * wx + wy * wy;
                let x2 = spec.data()[ky * 24 + kx].norm_sqr();
                lhs += x2 * (wx * wx / norm2) + x2 * (wy * wy / norm2);
                rhs += x2;
            }
        }
        assert!((lhs - rhs).abs() / rhs < 1e-6);
    }

    #[test]
    fn riesz_flip_antisymmetry() {
        let img = noise_image(20, 14, 21);
        let flipped = GrayImage::from_fn(20, 14, |x, y| img.get(19 - x, y));
        let (ox, oy) = riesz_transform(&img);
        let (fx, fy) = riesz_transform(&flipped);
        for y in 0..14 {
            for x in 0..20 {
                assert!((fx.get(x, y) + ox.get(19 - x, y)).abs() < 1e-6);
                assert!((fy.get(x, y) - oy.get(19 - x, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn monogenic_constant_is_zero_triple() {
        let triple =
            monogenic(&GrayImage::constant(20, 20, 0.3), &AssdParams::default(), 0).unwrap();
        assert!(max_abs(&triple.even) < 1e-12);
        assert!(max_abs(&triple.odd_x) < 1e-12);
        assert!(max_abs(&triple.odd_y) < 1e-12);
    }

    #[test]
    fn monogenic_horizontal_wave_has_no_vertical_component() {
        let params = AssdParams::default();
        let w0 = 2.0 * PI / params.center_wavelength;
        let img = GrayImage::from_fn(100, 100, |x, _| (w0 * x as f64).cos());
        let triple = monogenic(&img, &params, 0).unwrap();
        assert!(max_abs(&triple.odd_y) <= 1e-6 * max_abs(&triple.even));
    }

    #[test]
    fn monogenic_shapes_match_input() {
        let img = noise_image(30, 22, 2);
        let triple = monogenic(&img, &AssdParams::default(), 1).unwrap();
        for part in [&triple.even, &triple.odd_x, &triple.odd_y] {
            assert_eq!((part.width(), part.height()), (30, 22));
        }
    }

    #[test]
    fn lpe_of_constant_image_is_zero() {
        let out =
            local_phase_energy(&GrayImage::constant(48, 48, 0.6), &AssdParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lpe_range_and_peak() {
        let img = noise_image(48, 48, 77);
        let out = local_phase_energy(&img, &AssdParams::default()).unwrap();
        let (lo, hi) = out.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lpe_invariant_to_positive_rescale() {
        let img = noise_image(40, 40, 13);
        let scaled = GrayImage::from_fn(40, 40, |x, y| 3.7 * img.get(x, y));
        let a = local_phase_energy(&img, &AssdParams::default()).unwrap();
        let b = local_phase_energy(&scaled, &AssdParams::default()).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-6);
    }

    #[test]
    fn lpe_invariant_to_constant_offset() {
        let img = noise_image(40, 40, 29);
        let offset = GrayImage::from_fn(40, 40, |x, y| img.get(x, y) + 0.35);
        let a = local_phase_energy(&img, &AssdParams::default()).unwrap();
        let b = local_phase_energy(&offset, &AssdParams::default()).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn lpe_peaks_sit_on_even_symmetric_crests() {
        // Axis-aligned wave at the scale-0 peak frequency, phase-aligned so
        // symmetric padding continues it exactly. Every crest of the
        // intensity must carry an LPE local maximum within one pixel.
        let params = AssdParams::default();
        let (w, h) = (100usize, 60usize);
        let w0 = 2.0 * PI / params.center_wavelength;
        let img = GrayImage::from_fn(w, h, |x, _| 0.5 + 0.5 * (w0 * (x as f64 + 0.5)).cos());
        let out = local_phase_energy(&img, &params).unwrap();
        let mid = h / 2;
        for x in 2..w - 2 {
            let here = (w0 * (x as f64 + 0.5)).rem_euclid(2.0 * PI);
            let prev = (w0 * (x as f64 - 0.5)).rem_euclid(2.0 * PI);
            // A crest lies between x-1 and x when the phase wraps past 0.
            if prev <= here {
                continue;
            }
            let window = [
                out.get(x - 2, mid),
                out.get(x - 1, mid),
                out.get(x, mid),
                out.get(x + 1, mid),
            ];
            let peak = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let inner_peak = window[1].max(window[2]);
            assert!(
                inner_peak >= peak - 1e-9,
                "no LPE maximum within 1 px of the crest between x={} and x={}",
                x - 1,
                x
            );
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]
            #[test]
            fn lpe_scale_invariance(seed in 0u64..1000, factor in 0.05f64..20.0) {
                let img = noise_image(32, 32, seed);
                let scaled = GrayImage::from_fn(32, 32, |x, y| factor * img.get(x, y));
                let a = local_phase_energy(&img, &AssdParams::default()).unwrap();
                let b = local_phase_energy(&scaled, &AssdParams::default()).unwrap();
                prop_assert!(max_abs_diff(&a, &b) < 1e-6);
            }

            #[test]
            fn lpe_is_non_negative_and_finite(seed in 0u64..1000) {
                let img = noise_image(24, 24, seed);
                let out = local_phase_energy(&img, &AssdParams::default()).unwrap();
                prop_assert!(out.is_finite());
                prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn quadrature_energy_bound_holds() {
        let img = noise_image(36, 36, 41);
        let params = AssdParams::default();
        for scale in 0..params.num_scales {
            let t = monogenic(&img, &params, scale).unwrap();
            let amp_max = t
                .even
                .data()
                .iter()
                .zip(t.odd_x.data())
                .zip(t.odd_y.data())
                .map(|((&m1, &m2), &m3)| (m1 * m1 + m2 * m2 + m3 * m3).sqrt())
                .fold(0.0f64, f64::max);
            for ((_, &m2), &m3) in t.even.data().iter().zip(t.odd_x.data()).zip(t.odd_y.data()) {
                assert!((m2 * m2 + m3 * m3).sqrt() <= amp_max + 1e-12);
            }
        }
    }
}
