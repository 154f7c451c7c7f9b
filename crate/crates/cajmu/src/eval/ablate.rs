use serde::Serialize;

use crate::error::Result;
use crate::meta::MetaConfig;
use crate::online::Variant;
use crate::sim::SequenceRecord;
use crate::tensor::ParamSet;
use crate::tracker::TrackerConfig;

use super::metrics::{ope_metrics, per_frame_iou};
use super::protocol::{run_ope, LiveTracker};

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean_iou: f64,
    pub success_auc: f64,
    pub precision_at_20: f64,
    pub normalized_precision: f64,
    /// Per-sequence mean overlap, kept for paired comparisons.
    pub per_sequence_iou: Vec<f64>,
}

/// One-pass evaluation of each requested variant over the corpus,
/// aggregated into one row per variant.
pub fn ablate(
    params: &ParamSet,
    variants: &[Variant],
    corpus: &[SequenceRecord],
    tcfg: &TrackerConfig,
    mcfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut per_sequence_iou = Vec::with_capacity(corpus.len());
        let mut auc = 0.0;
        let mut prec = 0.0;
        let mut nprec = 0.0;
        for (i, seq) in corpus.iter().enumerate() {
            let mut tracker = LiveTracker::new(params, tcfg, mcfg, variant, seed ^ i as u64);
            let traj = run_ope(&mut tracker, seq)?;
            let overlaps = per_frame_iou(&traj);
            per_sequence_iou.push(overlaps.iter().sum::<f64>() / overlaps.len() as f64);
            let m = ope_metrics(&traj)?;
            auc += m.success_auc;
            prec += m.precision_at_20;
            nprec += m.normalized_precision;
        }
        let n = corpus.len() as f64;
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            mean_iou: per_sequence_iou.iter().sum::<f64>() / n,
            success_auc: auc / n,
            precision_at_20: prec / n,
            normalized_precision: nprec / n,
            per_sequence_iou,
        });
    }
    Ok(rows)
}
