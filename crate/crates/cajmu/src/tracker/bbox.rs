use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in frame pixel coordinates, center + extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::DegenerateBox { w, h });
        }
        Ok(BBox { cx, cy, w, h })
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection over union with another box.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let ih = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return 0.0;
        }
        // Corner arithmetic can overshoot 1 by an ulp for identical boxes.
        (inter / union).clamp(0.0, 1.0)
    }

    /// Box mapped into a feature lattice with the given stride.
    pub fn to_feature(&self, stride: f64) -> BBox {
        BBox {
            cx: self.cx / stride,
            cy: self.cy / stride,
            w: self.w / stride,
            h: self.h / stride,
        }
    }

    /// Clamp the center so the whole box stays inside `[0, w] x [0, h]`.
    pub fn clamp_inside(&self, frame_w: f64, frame_h: f64) -> BBox {
        let half_w = (self.w / 2.0).min(frame_w / 2.0);
        let half_h = (self.h / 2.0).min(frame_h / 2.0);
        BBox {
            cx: self.cx.clamp(half_w, frame_w - half_w),
            cy: self.cy.clamp(half_h, frame_h - half_h),
            w: half_w * 2.0,
            h: half_h * 2.0,
        }
    }

    pub fn inside(&self, frame_w: f64, frame_h: f64) -> bool {
        self.x0() >= 0.0 && self.y0() >= 0.0 && self.x1() <= frame_w && self.y1() <= frame_h
    }
}
