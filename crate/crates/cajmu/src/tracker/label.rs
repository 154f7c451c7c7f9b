use crate::error::{Error, Result};
use crate::tensor::TensorData;

use super::bbox::BBox;
use super::model::LabelConfig;

/// Gaussian score label peaking at 1.0 on the lattice cell nearest the box
/// center. The box is expected in feature-lattice coordinates.
pub fn gaussian_label(box_: &BBox, map_shape: (usize, usize), cfg: &LabelConfig) -> Result<TensorData> {
    let (h, w) = map_shape;
    let r0 = box_.cy.round();
    let c0 = box_.cx.round();
    if r0 < 0.0 || r0 >= h as f64 || c0 < 0.0 || c0 >= w as f64 {
        return Err(Error::invalid(format!(
            "label center ({c0}, {r0}) outside {h}x{w} map"
        )));
    }
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
            values.push((-d2 * inv).exp());
        }
    }
    TensorData::new(vec![h, w], values)
}
