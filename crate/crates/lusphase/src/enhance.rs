//! Signal-transmission-map estimation and attenuation-inverting contrast
//! enhancement of the local phase energy image.
//!
//! The transmission map follows the Beer-Lambert exponential decay along
//! the axial (row) direction; the enhancement divides the deviation from
//! the echogenicity constant `beta` by the attenuated transmission and
//! re-centers, amplifying contrast where the acoustic signal has decayed.

use serde::{Deserialize, Serialize};

use crate::imgcore::GrayImage;
use crate::{Error, Result};

/// How the optical depth feeding the Beer-Lambert decay is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthModel {
    /// Normalized axial depth `y/(H-1)`.
    DepthOnly,
    /// Exclusive column-wise prefix sum of the input, normalized per
    /// column; falls back to pure depth on empty columns.
    CumulativeIntensity,
}

/// Parameters of the enhancement stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceParams {
    /// Attenuation coefficient of the exponential decay.
    pub eta: f64,
    /// Division guard for near-zero transmission.
    pub epsilon: f64,
    /// Enhancement exponent applied to the transmission map.
    pub delta: f64,
    /// Fractions of the input maximum used for the two echogenicity
    /// constants.
    pub beta_fractions: (f64, f64),
    /// Optical-depth model; pure depth by default.
    pub depth_model: DepthModel,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        EnhanceParams {
            eta: 0.85,
            epsilon: 1e-4,
            delta: 0.85,
            beta_fractions: (0.60, 0.90),
            depth_model: DepthModel::DepthOnly,
        }
    }
}

impl EnhanceParams {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || self.eta <= 0.0 || self.delta <= 0.0 {
            return Err(Error::Parameter(
                "eta, epsilon and delta must be positive".into(),
            ));
        }
        let (b1, b2) = self.beta_fractions;
        for b in [b1, b2] {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Parameter(format!("beta fraction {b} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-pixel acoustic transmission estimate in `(0, 1]`; 1 at the
/// transducer face (row 0) and non-increasing with depth.
#[derive(Debug, Clone)]
pub struct TransmissionMap(GrayImage);

impl TransmissionMap {
    pub fn image(&self) -> &GrayImage {
        &self.0
    }

    pub fn into_image(self) -> GrayImage {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_image(img: GrayImage) -> Self {
        TransmissionMap(img)
    }
}

/// Estimates the transmission map for an input of the given geometry.
pub fn transmission_map(lpe: &GrayImage, params: &EnhanceParams) -> Result<TransmissionMap> {
    params.validate()?;
    let (w, h) = (lpe.width(), lpe.height());
    if h < 2 {
        return Err(Error::Dimension(
            "transmission map needs at least 2 rows of axial extent".into(),
        ));
    }
    let img = match params.depth_model {
        DepthModel::DepthOnly => GrayImage::from_fn(w, h, |_, y| {
            (-params.eta * y as f64 / (h - 1) as f64).exp()
        }),
        DepthModel::CumulativeIntensity => {
            let mut depth = vec![0.0f64; w * h];
            for x in 0..w {
                let total: f64 = (0..h).map(|y| lpe.get(x, y)).sum();
                if total <= 0.0 {
                    for y in 0..h {
                        depth[y * w + x] = y as f64 / (h - 1) as f64;
                    }
                } else {
                    let mut acc = 0.0;
                    for y in 0..h {
                        depth[y * w + x] = acc / total;
                        acc += lpe.get(x, y);
                    }
                }
            }
            GrayImage::from_fn(w, h, |x, y| (-params.eta * depth[y * w + x]).exp())
        }
    };
    Ok(TransmissionMap(img))
}

/// Inverts the attenuation model around the echogenicity constant `beta`.
///
/// Returns the raw enhanced image, which may exceed `[0, 1]`; callers
/// normalize before display or network ingestion.
pub fn enhance_image(
    lpe: &GrayImage,
    transmission: &TransmissionMap,
    beta: f64,
    params: &EnhanceParams,
) -> Result<GrayImage> {
    params.validate()?;
    if beta < 0.0 {
        return Err(Error::Parameter(format!("beta {beta} must be >= 0")));
    }
    let tm = transmission.image();
    if (tm.width(), tm.height()) != (lpe.width(), lpe.height()) {
        return Err(Error::Shape(format!(
            "transmission map {}x{} does not match image {}x{}",
            tm.width(),
            tm.height(),
            lpe.width(),
            lpe.height()
        )));
    }
    let data = lpe
        .data()
        .iter()
        .zip(tm.data())
        .map(|(&l, &a)| (l - beta) / a.max(params.epsilon).powf(params.delta) + beta)
        .collect();
    GrayImage::new(lpe.width(), lpe.height(), data)
}

/// Produces the two enhanced images at the configured beta fractions of
/// the input maximum, each rescaled onto `[0, 1]`.
///
/// An all-zero input yields two all-zero images.
pub fn enhanced_pair(lpe: &GrayImage, params: &EnhanceParams) -> Result<(GrayImage, GrayImage)> {
    params.validate()?;
    let (_, hi) = lpe.min_max();
    if hi <= 0.0 {
        return Ok((
            GrayImage::zeros(lpe.width(), lpe.height()),
            GrayImage::zeros(lpe.width(), lpe.height()),
        ));
    }
    let tm = transmission_map(lpe, params)?;
    let (f1, f2) = params.beta_fractions;
    let e1 = enhance_image(lpe, &tm, f1 * hi, params)?.normalize_unit();
    let e2 = enhance_image(lpe, &tm, f2 * hi, params)?.normalize_unit();
    Ok((e1, e2))
}
