//! Image decoding, downscaling, cropping and drawing primitives.

use std::io::Cursor;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::imageops::FilterType;
use image::{DynamicImage, ImageFormat, Rgba, RgbaImage};
use thiserror::Error;

use super::geometry::{CropRegion, PixelRect};
use crate::gateway::MediaType;

/// Longest side sent to the model.
pub const MAX_DIMENSION: u32 = 2048;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("image could not be decoded: {0}")]
pub struct ImageDecodeError(pub String);

/// A decoded image together with the exact bytes sent to the model.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub image: DynamicImage,
    pub bytes: Vec<u8>,
    pub media_type: MediaType,
}

impl PreparedImage {
    /// Decodes PNG or JPEG bytes. Images larger than [`MAX_DIMENSION`] are
    /// downscaled with their aspect ratio kept and re-encoded as PNG.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageDecodeError> {
        let format = image::guess_format(bytes).map_err(|e| ImageDecodeError(e.to_string()))?;
        let media_type = match format {
            ImageFormat::Png => MediaType::Png,
            ImageFormat::Jpeg => MediaType::Jpeg,
            other => return Err(ImageDecodeError(format!("unsupported format {other:?}"))),
        };
        let image = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| ImageDecodeError(e.to_string()))?;
        if image.width() == 0 || image.height() == 0 {
            return Err(ImageDecodeError("image has zero size".into()));
        }
        if image.width().max(image.height()) <= MAX_DIMENSION {
            return Ok(Self { image, bytes: bytes.to_vec(), media_type });
        }
        let image = image.resize(MAX_DIMENSION, MAX_DIMENSION, FilterType::Triangle);
        Ok(Self {
            bytes: encode_png(&image),
            image,
            media_type: MediaType::Png,
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

pub fn encode_png(image: &DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory");
    out.into_inner()
}

/// Crops `rect` grown by `margin` and returns the crop with its region.
pub fn crop_with_margin(image: &DynamicImage, rect: &PixelRect, margin: f64) -> (DynamicImage, CropRegion) {
    let region = CropRegion::around(rect, image.width(), image.height(), margin);
    let r = region.rect;
    (image.crop_imm(r.x0, r.y0, r.width(), r.height()), region)
}

/// Draws a rectangle outline of `stroke` pixels inside `rect`.
pub fn draw_rect(canvas: &mut RgbaImage, rect: &PixelRect, stroke: u32, color: Rgba<u8>) {
    let x1 = rect.x1.min(canvas.width());
    let y1 = rect.y1.min(canvas.height());
    for y in rect.y0..y1 {
        for x in rect.x0..x1 {
            let edge = x < rect.x0 + stroke
                || x + stroke >= x1
                || y < rect.y0 + stroke
                || y + stroke >= y1;
            if edge {
                canvas.put_pixel(x, y, color);
            }
        }
    }
}

pub fn fill_rect(canvas: &mut RgbaImage, rect: &PixelRect, color: Rgba<u8>) {
    for y in rect.y0..rect.y1.min(canvas.height()) {
        for x in rect.x0..rect.x1.min(canvas.width()) {
            canvas.put_pixel(x, y, color);
        }
    }
}

pub const GLYPH: u32 = 8;

/// Width in pixels of `text` at `scale`.
pub fn text_width(text: &str, scale: u32) -> u32 {
    text.chars().count() as u32 * GLYPH * scale
}

/// Draws `text` with its top-left at `(x, y)`, clipping at the canvas edge.
/// Characters outside the basic Latin set render as `?`.
pub fn draw_text(canvas: &mut RgbaImage, x: u32, y: u32, text: &str, scale: u32, color: Rgba<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = BASIC_FONTS
            .get(ch)
            .or_else(|| BASIC_FONTS.get('?'))
            .expect("basic font has '?'");
        let gx = x + i as u32 * GLYPH * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8u32 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = gx + col * scale + dx;
                        let py = y + row as u32 * scale + dy;
                        if px < canvas.width() && py < canvas.height() {
                            canvas.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
    }
}
