//! Image file I/O.
//!
//! Inputs: 8-bit grayscale PNG, PGM (P5), and 32-bit float PFM
//! (grayscale `Pf`, negative scale = little-endian). Outputs: PNG8 for
//! inspection and PFM for lossless stage hand-off.
//!
//! 8-bit intensities are mapped to `[0, 1]` by dividing by 255; PFM values
//! pass through unchanged (the header scale magnitude is not applied).

use std::fs;
use std::io::Write;
use std::path::Path;

use image::DynamicImage;

use super::GrayImage;
use crate::{Error, Result};

/// Output encodings supported by [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// 8-bit grayscale PNG; values are clamped to `[0, 1]` and quantized
    /// with round-half-up.
    Png8,
    /// 32-bit float PFM, little-endian, scale field `-1.0`; bit-exact for
    /// `f32`-representable values.
    Pfm,
}

/// Loads a grayscale image, detecting the container from its magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"Pf") {
        return decode_pfm(&bytes).map_err(|e| prefix_path(e, path));
    }
    if bytes.starts_with(b"PF") {
        return Err(Error::Format(format!(
            "{}: color PFM has 3 channels, expected grayscale",
            path.display()
        )));
    }
    let dynimg = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match dynimg {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            let data = gray.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
            GrayImage::new(w, h, data)
        }
        other => {
            let color = other.color();
            Err(Error::Format(format!(
                "{}: expected 8-bit grayscale, got {} channels at {} bits per channel",
                path.display(),
                color.channel_count(),
                color.bits_per_pixel() / color.channel_count() as u16,
            )))
        }
    }
}

/// Saves an image in the requested format.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Pfm => encode_pfm(img),
        ImageFormat::Png8 => encode_png8(img)?,
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn prefix_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn encode_png8(img: &GrayImage) -> Result<Vec<u8>> {
    use image::codecs::png::PngEncoder;
    use image::{ExtendedColorType, ImageEncoder};
    let pixels: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            &pixels,
            img.width() as u32,
            img.height() as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(out)
}

// PFM scanlines run bottom-to-top per the format convention.
fn encode_pfm(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + img.data().len() * 4);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", img.width(), img.height()).as_bytes());
    for y in (0..img.height()).rev() {
        for &v in img.row(y) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn decode_pfm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 2; // past "Pf"
    let width = read_header_token(bytes, &mut pos)?
        .parse::<usize>()
        .map_err(|_| Error::Format("invalid PFM width".into()))?;
    let height = read_header_token(bytes, &mut pos)?
        .parse::<usize>()
        .map_err(|_| Error::Format("invalid PFM height".into()))?;
    let scale = read_header_token(bytes, &mut pos)?
        .parse::<f64>()
        .map_err(|_| Error::Format("invalid PFM scale".into()))?;
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("malformed PFM header".into()));
    }
    pos += 1;
    let little_endian = scale < 0.0;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PFM dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < count * 4 {
        return Err(Error::Format(format!(
            "PFM raster truncated: expected {} bytes, found {}",
            count * 4,
            raster.len()
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(height);
    for y in 0..height {
        let mut row = Vec::with_capacity(width);
        for x in 0..width {
            let off = (y * width + x) * 4;
            let quad: [u8; 4] = raster[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(quad)
            } else {
                f32::from_be_bytes(quad)
            };
            row.push(v as f64);
        }
        rows.push(row);
    }
    // Undo the bottom-to-top scanline order.
    let mut data = Vec::with_capacity(count);
    for row in rows.into_iter().rev() {
        data.extend(row);
    }
    GrayImage::new(width, height, data)
}

fn read_header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::Format("non-ascii PFM header".into()))
}
