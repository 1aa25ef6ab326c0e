use alloc::format;

use crate::error::{invalid, Result};

/// Axis-aligned box in pixels, stored by center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(invalid(format!("box ({x}, {y}, {w}, {h}) is not finite")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(invalid(format!("box size must be positive, got {w}x{h}")));
        }
        Ok(BBox { x, y, w, h })
    }

    /// From MOTChallenge's top-left convention.
    pub fn from_top_left(left: f64, top: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn left(&self) -> f64 {
        self.x - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.y - self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox { x: self.x * s, y: self.y * s, w: self.w * s, h: self.h * s }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox { x: self.x + dx, y: self.y + dy, ..*self }
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (f64::min(a.x + a.w / 2.0, b.x + b.w / 2.0) - f64::max(a.left(), b.left())).max(0.0);
    let iy = (f64::min(a.y + a.h / 2.0, b.y + b.h / 2.0) - f64::max(a.top(), b.top())).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Self {
        Detection { bbox, confidence }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        let far = BBox::new(10.0, 10.0, 2.0, 2.0).unwrap();
        assert_eq!(iou(&a, &far), 0.0);
        let b = BBox::new(1.0, 0.0, 2.0, 2.0).unwrap();
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn top_left_conversion() {
        let b = BBox::from_top_left(10.0, 20.0, 30.0, 40.0).unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (25.0, 40.0, 30.0, 40.0));
        assert_eq!((b.left(), b.top()), (10.0, 20.0));
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }
}
