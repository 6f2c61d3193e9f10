//! Ratio-space boxes, their pixel projection, crop mapping and IoU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum GeometryError {
    #[error("box coordinate is not a finite number")]
    NonFinite,
    #[error("box has zero or negative extent (w={w}, h={h})")]
    Degenerate { w: f64, h: f64 },
}

/// Center and size as fractions of image width/height. Always lies inside
/// the unit square with positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl RatioBBox {
    /// Clamps a model-supplied box into the unit square: center into [0,1],
    /// size capped at 1, then the edges cut at the square's border. A
    /// non-positive size is rejected rather than repaired.
    pub fn clamped(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate { w, h });
        }
        let (cx, cy) = (cx.clamp(0.0, 1.0), cy.clamp(0.0, 1.0));
        let (w, h) = (w.min(1.0), h.min(1.0));
        let inside = |c: f64, s: f64| c - s / 2.0 >= 0.0 && c + s / 2.0 <= 1.0;
        if inside(cx, w) && inside(cy, h) {
            return Ok(Self { cx, cy, w, h });
        }
        let x0 = (cx - w / 2.0).max(0.0);
        let x1 = (cx + w / 2.0).min(1.0);
        let y0 = (cy - h / 2.0).max(0.0);
        let y1 = (cy + h / 2.0).min(1.0);
        Ok(Self::from_edges(x0, y0, x1, y1))
    }

    pub fn from_edges(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)` in ratio units.
    pub fn edges(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn iou(&self, other: &RatioBBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.edges();
        let (bx0, by0, bx1, by1) = other.edges();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let area_a = (ax1 - ax0).max(0.0) * (ay1 - ay0).max(0.0);
        let area_b = (bx1 - bx0).max(0.0) * (by1 - by0).max(0.0);
        let union = area_a + area_b - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Pixel rectangle, half-open: covers columns `x0..x1` and rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    /// `0 <= x0 < x1 <= width` and likewise vertically.
    pub fn is_valid_in(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height
    }

    pub fn iou(&self, other: &PixelRect) -> f64 {
        let iw = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0)) as f64;
        let ih = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0)) as f64;
        let inter = iw * ih;
        let a = self.width() as f64 * self.height() as f64;
        let b = other.width() as f64 * other.height() as f64;
        let union = a + b - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

fn project(lo: f64, hi: f64, extent: u32) -> (u32, u32) {
    let ext = extent as f64;
    let a = (lo * ext).round().clamp(0.0, ext) as u32;
    let b = (hi * ext).round().clamp(0.0, ext) as u32;
    if b > a {
        (a, b)
    } else if a >= extent {
        (extent - 1, extent)
    } else {
        (a, a + 1)
    }
}

/// Rounds the box edges to pixels and clamps to the image, keeping at least
/// one pixel of extent on each axis. `width` and `height` must be >= 1.
pub fn ratio_to_pixels(bbox: &RatioBBox, width: u32, height: u32) -> PixelRect {
    assert!(width >= 1 && height >= 1, "image must be at least 1x1");
    let (x0, y0, x1, y1) = bbox.edges();
    let (x0, x1) = project(x0, x1, width);
    let (y0, y1) = project(y0, y1, height);
    PixelRect { x0, y0, x1, y1 }
}

/// A crop window inside a full image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub rect: PixelRect,
    pub image_width: u32,
    pub image_height: u32,
}

impl CropRegion {
    /// `rect` grown by `margin * rect extent` on every side, clamped to the image.
    pub fn around(rect: &PixelRect, width: u32, height: u32, margin: f64) -> Self {
        let mx = (margin.max(0.0) * rect.width() as f64).round() as u32;
        let my = (margin.max(0.0) * rect.height() as f64).round() as u32;
        Self {
            rect: PixelRect {
                x0: rect.x0.saturating_sub(mx),
                y0: rect.y0.saturating_sub(my),
                x1: rect.x1.saturating_add(mx).min(width),
                y1: rect.y1.saturating_add(my).min(height),
            },
            image_width: width,
            image_height: height,
        }
    }

    /// Top-left of the crop in full-image pixels.
    pub fn offset(&self) -> (u32, u32) {
        (self.rect.x0, self.rect.y0)
    }

    /// Crop-relative ratio box to full-image ratio space.
    pub fn to_full(&self, b: &RatioBBox) -> RatioBBox {
        let (cw, ch) = (self.rect.width() as f64, self.rect.height() as f64);
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        RatioBBox {
            cx: (self.rect.x0 as f64 + b.cx * cw) / w,
            cy: (self.rect.y0 as f64 + b.cy * ch) / h,
            w: b.w * cw / w,
            h: b.h * ch / h,
        }
    }

    /// Full-image ratio box to crop-relative ratio space.
    pub fn to_crop(&self, b: &RatioBBox) -> RatioBBox {
        let (cw, ch) = (self.rect.width() as f64, self.rect.height() as f64);
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        RatioBBox {
            cx: (b.cx * w - self.rect.x0 as f64) / cw,
            cy: (b.cy * h - self.rect.y0 as f64) / ch,
            w: b.w * w / cw,
            h: b.h * h / ch,
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> RatioBBox {
        RatioBBox::clamped(cx, cy, w, h).unwrap()
    }

    #[test]
    fn centered_box() {
        let r = ratio_to_pixels(&b(0.5, 0.5, 0.2, 0.2), 1000, 800);
        assert_eq!(r, PixelRect { x0: 400, y0: 320, x1: 600, y1: 480 });
    }

    #[test]
    fn corner_box() {
        let raw = RatioBBox { cx: 0.0, cy: 0.0, w: 0.2, h: 0.2 };
        let expect = PixelRect { x0: 0, y0: 0, x1: 100, y1: 80 };
        assert_eq!(ratio_to_pixels(&raw, 1000, 800), expect);
        assert_eq!(ratio_to_pixels(&b(0.0, 0.0, 0.2, 0.2), 1000, 800), expect);
    }

    #[test]
    fn full_extent() {
        for (w, h) in [(1, 1), (640, 480), (3, 4096)] {
            let r = ratio_to_pixels(&b(0.5, 0.5, 1.0, 1.0), w, h);
            assert_eq!(r, PixelRect { x0: 0, y0: 0, x1: w, y1: h });
        }
    }

    #[test]
    fn clamp_right_edge() {
        let c = b(1.3, 0.5, 0.2, 0.2);
        let (_, _, x1, _) = c.edges();
        assert!((x1 - 1.0).abs() < 1e-12);
        assert!((c.w - 0.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rejected() {
        assert!(matches!(
            RatioBBox::clamped(0.5, 0.5, 0.0, 0.2),
            Err(GeometryError::Degenerate { .. })
        ));
        assert!(matches!(
            RatioBBox::clamped(f64::NAN, 0.5, 0.1, 0.2),
            Err(GeometryError::NonFinite)
        ));
    }

    #[test]
    fn tiny_box_gets_one_pixel() {
        let r = ratio_to_pixels(&b(1.0, 1.0, 1e-9, 1e-9), 10, 10);
        assert_eq!(r, PixelRect { x0: 9, y0: 9, x1: 10, y1: 10 });
    }

    #[test]
    fn crop_margin() {
        let rect = PixelRect { x0: 400, y0: 320, x1: 600, y1: 480 };
        let c = CropRegion::around(&rect, 1000, 800, 0.5);
        assert_eq!(c.rect, PixelRect { x0: 300, y0: 240, x1: 700, y1: 560 });
        assert_eq!(CropRegion::around(&rect, 1000, 800, 0.0).rect, rect);
        let corner = PixelRect { x0: 0, y0: 0, x1: 100, y1: 80 };
        let c = CropRegion::around(&corner, 1000, 800, 0.5);
        assert_eq!(c.rect, PixelRect { x0: 0, y0: 0, x1: 150, y1: 120 });
        assert_eq!(c.offset(), (0, 0));
    }

    #[test]
    fn half_width_shift_iou() {
        // oracle: boxes [0.4,0.6]x[0.4,0.6] and [0.5,0.7]x[0.4,0.6]
        // intersection 0.1*0.2 = 0.02, union 0.04+0.04-0.02 = 0.06
        let a = b(0.5, 0.5, 0.2, 0.2);
        let s = b(0.6, 0.5, 0.2, 0.2);
        assert!((a.iou(&s) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }

    proptest! {
        #[test]
        fn pixel_rect_always_valid(
            cx in -0.5f64..1.5, cy in -0.5f64..1.5,
            w in 1e-6f64..1.5, h in 1e-6f64..1.5,
            width in 1u32..5000, height in 1u32..5000,
        ) {
            let bb = RatioBBox::clamped(cx, cy, w, h).unwrap();
            let r = ratio_to_pixels(&bb, width, height);
            prop_assert!(r.is_valid_in(width, height), "{r:?} in {width}x{height}");
        }

        #[test]
        fn iou_symmetric_bounded(
            a in (0.0f64..1.0, 0.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0),
            c in (0.0f64..1.0, 0.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0),
        ) {
            let a = b(a.0, a.1, a.2, a.3);
            let c = b(c.0, c.1, c.2, c.3);
            let (x, y) = (a.iou(&c), c.iou(&a));
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        }
    }
}
