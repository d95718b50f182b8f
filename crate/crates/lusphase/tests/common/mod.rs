//! Shared fixtures and independent oracles for the integration suites.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use lusphase::frst::{FrstParams, Polarity};
use lusphase::imgcore::{save_image, GrayImage, ImageFormat};

/// Deterministic xorshift-style noise in `[0, 1)`.
pub fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
    GrayImage::from_fn(w, h, |_, _| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    })
}

/// Anti-aliased bright disc on a dark background.
pub fn disc_image(w: usize, h: usize, cx: f64, cy: f64, radius: f64) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        (radius - d + 0.5).clamp(0.0, 1.0)
    })
}

/// Vertical stripe pattern with configurable phase.
pub fn stripe_image(w: usize, h: usize, period: usize, phase: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, _| {
        if ((x + phase) / period) % 2 == 0 {
            0.85
        } else {
            0.15
        }
    })
}

pub fn max_abs_diff(a: &GrayImage, b: &GrayImage) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

/// Writes a synthetic dataset: `subjects` patients with `per_subject`
/// frames each, even-indexed subjects carrying bright discs (covid) and
/// odd-indexed ones stripes (regular). Returns the manifest path.
pub fn synthetic_dataset(
    dir: &Path,
    subjects: usize,
    per_subject: usize,
    side: usize,
) -> PathBuf {
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).unwrap();
    let mut csv = String::from("id,image_path,subject_id,source_label\n");
    for s in 0..subjects {
        let covid = s % 2 == 0;
        for i in 0..per_subject {
            let id = format!("img{s}_{i}");
            let img = if covid {
                let cx = side as f64 / 2.0 + (i as f64 - per_subject as f64 / 2.0) * 2.0;
                let cy = side as f64 / 2.0 + (s % 3) as f64 * 2.0 - 2.0;
                disc_image(side, side, cx, cy, side as f64 / 6.0)
            } else {
                stripe_image(side, side, side / 8, i + s)
            };
            // Mix in a deterministic speckle floor so features are not
            // exactly flat away from the structures.
            let noise = noise_image(side, side, (s * 31 + i) as u64);
            let img = GrayImage::from_fn(side, side, |x, y| {
                (0.9 * img.get(x, y) + 0.1 * noise.get(x, y)).clamp(0.0, 1.0)
            });
            let file = format!("{id}.png");
            save_image(&img, frames.join(&file), ImageFormat::Png8).unwrap();
            let label = if covid { "covid" } else { "regular" };
            csv.push_str(&format!("{id},{file},subj{s},{label}\n"));
        }
    }
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, csv).unwrap();
    manifest
}

fn reflect(i: isize, n: usize) -> usize {
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

/// Brute-force radial symmetry transform written directly from the
/// voting description; independent of the library implementation.
pub fn frst_oracle(img: &GrayImage, params: &FrstParams) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let at = |x: isize, y: isize| img.get(reflect(x, w), reflect(y, h));

    // 3x3 Sobel pair, direct evaluation.
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            gy[i] = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
        }
    }
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    let gmax = mag.iter().cloned().fold(0.0f64, f64::max);
    if gmax <= 0.0 {
        return GrayImage::zeros(w, h);
    }
    let threshold = params.gradient_threshold * gmax;

    let mut mean = vec![0.0f64; w * h];
    for &radius in &params.radii {
        let mut orientation = vec![0.0f64; w * h];
        let mut magnitude = vec![0.0f64; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if mag[i] <= threshold {
                    continue;
                }
                let ux = gx[i] / mag[i];
                let uy = gy[i] / mag[i];
                let directions: &[f64] = match params.polarity {
                    Polarity::Bright => &[1.0],
                    Polarity::Dark => &[-1.0],
                    Polarity::Both => &[1.0, -1.0],
                };
                for &dir in directions {
                    let vx = x as isize + (dir * radius as f64 * ux).round() as isize;
                    let vy = y as isize + (dir * radius as f64 * uy).round() as isize;
                    if vx >= 0 && vx < w as isize && vy >= 0 && vy < h as isize {
                        let j = vy as usize * w + vx as usize;
                        orientation[j] += 1.0;
                        magnitude[j] += mag[i];
                    }
                }
            }
        }
        let kappa = if radius == 1 {
            params.kappa_radius_one
        } else {
            params.kappa
        };
        let mut interest = vec![0.0f64; w * h];
        for i in 0..w * h {
            let o = orientation[i].clamp(-kappa, kappa);
            interest[i] =
                o.signum() * (o.abs() / kappa).powf(params.radial_strictness) * (magnitude[i] / kappa);
        }
        // Direct (non-separable) Gaussian blur; the 2-D weight is the
        // product of per-axis normalized kernels.
        let sigma = params.sigma_factor * radius as f64;
        let blurred = if sigma <= 0.0 {
            interest
        } else {
            let kr = (3.0 * sigma).ceil() as isize;
            let mut axis = Vec::new();
            for d in -kr..=kr {
                axis.push((-0.5 * (d as f64 / sigma).powi(2)).exp());
            }
            let axis_sum: f64 = axis.iter().sum();
            let mut out = vec![0.0f64; w * h];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for dy in -kr..=kr {
                        for dx in -kr..=kr {
                            let weight = axis[(dx + kr) as usize] * axis[(dy + kr) as usize]
                                / (axis_sum * axis_sum);
                            let sx = reflect(x + dx, w);
                            let sy = reflect(y + dy, h);
                            acc += weight * interest[sy * w + sx];
                        }
                    }
                    out[y as usize * w + x as usize] = acc;
                }
            }
            out
        };
        for (m, b) in mean.iter_mut().zip(&blurred) {
            *m += b / params.radii.len() as f64;
        }
    }
    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return GrayImage::zeros(w, h);
    }
    GrayImage::from_fn(w, h, |x, y| (mean[y * w + x] - lo) / (hi - lo))
}

/// Direct convolution + relu + global average pooling of a single-channel
/// input through one stride-2 conv layer, evaluated from raw weights.
pub fn naive_stem_gap(
    img: &[f64],
    side: usize,
    weight: &[f64],
    bias: &[f64],
    depth: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let out_side = side.div_ceil(stride);
    let mut pooled = vec![0.0f64; depth];
    for d in 0..depth {
        let mut sum = 0.0;
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut acc = bias[d];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = reflect((oy * stride + ky) as isize - pad as isize, side);
                        let ix = reflect((ox * stride + kx) as isize - pad as isize, side);
                        acc += weight[(d * kernel + ky) * kernel + kx] * img[iy * side + ix];
                    }
                }
                sum += acc.max(0.0);
            }
        }
        pooled[d] = sum / (out_side * out_side) as f64;
    }
    pooled
}
