use serde::Serialize;

use crate::error::{Error, Result};
use crate::tracker::BBox;

use super::protocol::TrajectoryResult;

/// Overlap threshold grid: 21 points, 0.00 to 1.00 in steps of 0.05.
pub const SUCCESS_THRESHOLDS: usize = 21;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OPEMetrics {
    pub success_auc: f64,
    pub precision_at_20: f64,
    pub normalized_precision: f64,
    pub mean_iou: f64,
}

pub fn per_frame_iou(traj: &TrajectoryResult) -> Vec<f64> {
    traj.predicted
        .iter()
        .zip(&traj.gt)
        .map(|(p, g)| p.iou(g))
        .collect()
}

/// Mean over the threshold grid of the fraction of frames with overlap
/// strictly above the threshold.
pub fn success_auc(overlaps: &[f64]) -> Result<f64> {
    if overlaps.is_empty() {
        return Err(Error::Empty("success_auc on empty trajectory".to_string()));
    }
    let n = overlaps.len() as f64;
    let mut total = 0.0;
    for i in 0..SUCCESS_THRESHOLDS {
        let t = i as f64 * 0.05;
        let frac = overlaps.iter().filter(|&&o| o > t).count() as f64 / n;
        total += frac;
    }
    Ok(total / SUCCESS_THRESHOLDS as f64)
}

fn center_errors(traj: &TrajectoryResult) -> Result<Vec<(BBox, BBox)>> {
    if traj.predicted.is_empty() {
        return Err(Error::Empty("precision on empty trajectory".to_string()));
    }
    Ok(traj.predicted.iter().copied().zip(traj.gt.iter().copied()).collect())
}

/// Fraction of frames whose predicted center is within `pixel_threshold`
/// of the ground-truth center.
pub fn precision(traj: &TrajectoryResult, pixel_threshold: f64) -> Result<f64> {
    let pairs = center_errors(traj)?;
    let n = pairs.len() as f64;
    let hits = pairs
        .iter()
        .filter(|(p, g)| ((p.cx - g.cx).powi(2) + (p.cy - g.cy).powi(2)).sqrt() <= pixel_threshold)
        .count();
    Ok(hits as f64 / n)
}

/// Precision with the per-axis center error divided by the ground-truth box
/// size before the Euclidean norm.
pub fn normalized_precision(traj: &TrajectoryResult, threshold: f64) -> Result<f64> {
    let pairs = center_errors(traj)?;
    let n = pairs.len() as f64;
    let hits = pairs
        .iter()
        .filter(|(p, g)| {
            let ex = (p.cx - g.cx) / g.w;
            let ey = (p.cy - g.cy) / g.h;
            (ex * ex + ey * ey).sqrt() <= threshold
        })
        .count();
    Ok(hits as f64 / n)
}

pub fn ope_metrics(traj: &TrajectoryResult) -> Result<OPEMetrics> {
    let overlaps = per_frame_iou(traj);
    let mean_iou = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
    Ok(OPEMetrics {
        success_auc: success_auc(&overlaps)?,
        precision_at_20: precision(traj, 20.0)?,
        normalized_precision: normalized_precision(traj, 0.2)?,
        mean_iou,
    })
}
