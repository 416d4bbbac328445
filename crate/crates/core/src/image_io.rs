//! 8-bit raster I/O (binary PGM and PNG).
//!
//! Grayscale images load as `[H, W]` fields, RGB images as channel-first
//! `[3, H, W]` fields. Intensities map linearly to `[0, 1]`.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::TensorField;

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" => Ok(ImageFormat::Pnm),
        other => Err(Error::Image(format!(
            "unsupported raster extension {other:?} (expected .png or .pgm)"
        ))),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<TensorField> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let img = {
        let mut reader = reader;
        reader.set_format(format);
        reader
            .decode()
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Image(format!("{}: zero-sized image", path.display())));
    }
    match img {
        DynamicImage::ImageLuma8(buf) => TensorField::new(
            vec![h, w],
            buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageRgb8(buf) => {
            let raw = buf.into_raw();
            let plane = h * w;
            let mut data = vec![0.0; 3 * plane];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = px[c] as f64 / 255.0;
                }
            }
            TensorField::new(vec![3, h, w], data)
        }
        other => Err(Error::Image(format!(
            "{}: unsupported pixel layout {:?} (need 8-bit gray or RGB)",
            path.display(),
            other.color()
        ))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `field` as an 8-bit image, clamping to `[0, 1]` first.
pub fn save_image(field: &TensorField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let to_err = |e: image::ImageError| Error::Image(format!("{}: {e}", path.display()));
    match *field.shape() {
        [h, w] | [1, h, w] => {
            let bytes: Vec<u8> = field.data().iter().map(|&v| quantize(v)).collect();
            let img = GrayImage::from_raw(w as u32, h as u32, bytes)
                .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
            match format {
                ImageFormat::Pnm => {
                    let file = std::fs::File::create(path)?;
                    let enc = PnmEncoder::new(std::io::BufWriter::new(file))
                        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
                    img.write_with_encoder(enc).map_err(to_err)
                }
                _ => img.save_with_format(path, format).map_err(to_err),
            }
        }
        [3, h, w] => {
            if format == ImageFormat::Pnm {
                return Err(Error::Image("PGM output supports grayscale only".into()));
            }
            let plane = h * w;
            let d = field.data();
            let mut bytes = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                for c in 0..3 {
                    bytes.push(quantize(d[c * plane + i]));
                }
            }
            let img = RgbImage::from_raw(w as u32, h as u32, bytes)
                .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
            img.save_with_format(path, format).map_err(to_err)
        }
        _ => Err(Error::Image(format!(
            "cannot save field of shape {:?} as an image",
            field.shape()
        ))),
    }
}
