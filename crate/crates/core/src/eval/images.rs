//! PNG output and image grids.

use super::EvalError;
use crate::data::ImageDims;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a row-major `H × W × C` image with values in `[0, 1]`;
/// `C` must be 1 (grey) or 3 (RGB).
pub fn encode_png(pixels: &[f64], dims: ImageDims) -> Result<Vec<u8>, EvalError> {
    let color = match dims.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(EvalError::Invalid(format!("PNG output supports 1 or 3 channels, got {c}"))),
    };
    if pixels.len() != dims.pixels() {
        return Err(EvalError::Dimension {
            what: "image",
            expected: dims.pixels(),
            got: pixels.len(),
        });
    }
    let bytes: Vec<u8> = pixels.iter().map(|&v| to_byte(v)).collect();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, dims.width as u32, dims.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let invalid = |e: png::EncodingError| EvalError::Invalid(format!("PNG encoding: {e}"));
    let mut writer = enc.write_header().map_err(invalid)?;
    writer.write_image_data(&bytes).map_err(invalid)?;
    writer.finish().map_err(invalid)?;
    Ok(out)
}

/// Tiles rows of equally sized images into one image with a one-pixel
/// separator of value `gap`. Short rows are padded with `gap`.
pub fn image_grid(rows: &[Vec<Vec<f64>>], dims: ImageDims, gap: f64) -> Result<(Vec<f64>, ImageDims), EvalError> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(EvalError::Invalid("image grid has no images".into()));
    }
    let (h, w, c) = (dims.height, dims.width, dims.channels);
    let out_dims = ImageDims::new(rows.len() * (h + 1) - 1, cols * (w + 1) - 1, c);
    let mut out = vec![gap; out_dims.pixels()];
    for (gr, images) in rows.iter().enumerate() {
        for (gc, img) in images.iter().enumerate() {
            if img.len() != dims.pixels() {
                return Err(EvalError::Dimension {
                    what: "grid image",
                    expected: dims.pixels(),
                    got: img.len(),
                });
            }
            for r in 0..h {
                let dst = ((gr * (h + 1) + r) * out_dims.width + gc * (w + 1)) * c;
                out[dst..dst + w * c].copy_from_slice(&img[r * w * c..(r + 1) * w * c]);
            }
        }
    }
    Ok((out, out_dims))
}

pub fn save_png(path: &std::path::Path, pixels: &[f64], dims: ImageDims) -> Result<(), EvalError> {
    let bytes = encode_png(pixels, dims)?;
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::write(path, bytes).map_err(io)
}
