//! Metric and protocol layer: IoU-based overlap metrics, one-pass
//! evaluation, the reset-based protocol, and the ablation runner.

mod ablate;
mod metrics;
mod protocol;

pub use ablate::{ablate, AblationRow};
pub use metrics::{
    normalized_precision, ope_metrics, per_frame_iou, precision, success_auc, OPEMetrics,
    SUCCESS_THRESHOLDS,
};
pub use protocol::{
    run_ope, run_vot_reset, FrameStatus, LiveTracker, MetricReport, Tracker, TrajectoryResult,
    VOTMetrics, REINIT_GAP,
};
