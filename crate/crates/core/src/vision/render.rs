use image::{DynamicImage, Rgba};

use super::geometry::{ratio_to_pixels, PixelRect};
use super::raster::{draw_rect, draw_text, encode_png, fill_rect, text_width, GLYPH};
use super::Annotation;
use crate::taxonomy::{FamilyId, Taxonomy};

pub const STROKE: u32 = 3;

const PALETTE: [[u8; 3]; 9] = [
    [230, 25, 75],
    [245, 130, 48],
    [255, 225, 25],
    [60, 180, 75],
    [70, 240, 240],
    [0, 130, 200],
    [145, 30, 180],
    [240, 50, 230],
    [128, 128, 0],
];

pub fn family_color(family: FamilyId) -> Rgba<u8> {
    let [r, g, b] = PALETTE[(family.saturating_sub(1) as usize) % PALETTE.len()];
    Rgba([r, g, b, 255])
}

fn ink_for(bg: Rgba<u8>) -> Rgba<u8> {
    let [r, g, b, _] = bg.0;
    let luma = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    if luma > 140_000 {
        Rgba([0, 0, 0, 255])
    } else {
        Rgba([255, 255, 255, 255])
    }
}

/// Draws every annotation's box and category label; returns PNG bytes.
pub fn annotate_image(image: &DynamicImage, annotations: &[Annotation], taxonomy: &Taxonomy) -> Vec<u8> {
    let mut canvas = image.to_rgba8();
    let (w, h) = canvas.dimensions();
    let scale = (w.min(h) / 500).max(1);
    for a in annotations {
        let rect = ratio_to_pixels(&a.bbox, w, h);
        let (name, family) = match taxonomy.resolve(a.finding.category_id as i64) {
            Ok(c) => (c.name.as_str(), c.family_id),
            Err(_) => ("?", 0),
        };
        let color = family_color(family);
        draw_rect(&mut canvas, &rect, STROKE, color);

        let pad = scale;
        let label_h = GLYPH * scale + 2 * pad;
        let label_w = text_width(name, scale) + 2 * pad;
        let y0 = if rect.y0 >= label_h { rect.y0 - label_h } else { rect.y0 };
        let label = PixelRect {
            x0: rect.x0,
            y0,
            x1: (rect.x0 + label_w).min(w),
            y1: (y0 + label_h).min(h),
        };
        fill_rect(&mut canvas, &label, color);
        draw_text(&mut canvas, rect.x0 + pad, y0 + pad, name, scale, ink_for(color));
    }
    encode_png(&DynamicImage::ImageRgba8(canvas))
}
