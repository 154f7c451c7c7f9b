use serde::Serialize;

use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::online::{TrackerSession, Variant};
use crate::sim::SequenceRecord;
use crate::tensor::{ParamSet, TensorData};
use crate::tracker::{BBox, TrackerConfig};

/// Frames skipped after a failure before the tracker is reinitialized from
/// ground truth.
pub const REINIT_GAP: usize = 5;

/// Anything the protocol runners can drive: initialized on a ground-truth
/// box, then stepped frame by frame.
pub trait Tracker {
    fn init(&mut self, frame: &TensorData, box_: &BBox) -> Result<()>;
    fn step(&mut self, frame: &TensorData) -> Result<BBox>;
}

/// The real tracking session behind the `Tracker` interface. Every `init`
/// call restarts from the stored parameters and seed, so reinitializations
/// inside the reset protocol are reproducible.
pub struct LiveTracker<'a> {
    params: &'a ParamSet,
    tcfg: &'a TrackerConfig,
    mcfg: &'a MetaConfig,
    variant: Variant,
    seed: u64,
    session: Option<TrackerSession>,
}

impl<'a> LiveTracker<'a> {
    pub fn new(
        params: &'a ParamSet,
        tcfg: &'a TrackerConfig,
        mcfg: &'a MetaConfig,
        variant: Variant,
        seed: u64,
    ) -> Self {
        LiveTracker {
            params,
            tcfg,
            mcfg,
            variant,
            seed,
            session: None,
        }
    }
}

impl Tracker for LiveTracker<'_> {
    fn init(&mut self, frame: &TensorData, box_: &BBox) -> Result<()> {
        self.session = Some(TrackerSession::init(
            self.params,
            frame,
            box_,
            self.variant,
            self.tcfg,
            self.mcfg,
            self.seed,
        )?);
        Ok(())
    }

    fn step(&mut self, frame: &TensorData) -> Result<BBox> {
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| Error::invalid("tracker stepped before init".to_string()))?;
        Ok(session.track(frame)?.bbox)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FrameStatus {
    Tracked,
    Skipped,
    Failure,
}

#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    pub predicted: Vec<BBox>,
    pub gt: Vec<BBox>,
    pub reset_events: Vec<usize>,
    pub status: Vec<FrameStatus>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VOTMetrics {
    pub accuracy: f64,
    pub robustness: usize,
    pub tracked_frames: usize,
    pub skipped_frames: usize,
}

/// Machine-readable evaluation report.
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub sequence_id: String,
    pub protocol: String,
    pub per_frame_iou: Vec<f64>,
    pub metrics: serde_json::Value,
    pub reset_events: Vec<usize>,
    pub config_hash: String,
    pub seed: u64,
}

/// One-pass evaluation: initialize on frame 0 ground truth, track every
/// later frame, never reset. A failing step keeps the previous box so the
/// trajectory stays aligned.
pub fn run_ope<T: Tracker>(tracker: &mut T, seq: &SequenceRecord) -> Result<TrajectoryResult> {
    if seq.frames.is_empty() {
        return Err(Error::Empty("empty sequence".to_string()));
    }
    tracker.init(&seq.frames[0], &seq.gt[0])?;
    let mut predicted = vec![seq.gt[0]];
    for frame in &seq.frames[1..] {
        let prev = *predicted.last().unwrap();
        predicted.push(tracker.step(frame).unwrap_or(prev));
    }
    let status = vec![FrameStatus::Tracked; predicted.len()];
    Ok(TrajectoryResult {
        predicted,
        gt: seq.gt.clone(),
        reset_events: Vec::new(),
        status,
    })
}

/// Reset protocol: a frame with exactly zero overlap is a failure; the next
/// `REINIT_GAP` frames are skipped (the last of them reinitializes the
/// tracker from ground truth) and excluded from accuracy. Accuracy is the
/// mean overlap over tracked frames; robustness is the failure count.
pub fn run_vot_reset<T: Tracker>(
    tracker: &mut T,
    seq: &SequenceRecord,
) -> Result<(TrajectoryResult, VOTMetrics)> {
    let n = seq.frames.len();
    if n == 0 {
        return Err(Error::Empty("empty sequence".to_string()));
    }
    let mut predicted = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut reset_events = Vec::new();

    tracker.init(&seq.frames[0], &seq.gt[0])?;
    predicted.push(seq.gt[0]);
    status.push(FrameStatus::Tracked);

    let mut i = 1;
    while i < n {
        let prev = *predicted.last().unwrap();
        let pred = tracker.step(&seq.frames[i]).unwrap_or(prev);
        if pred.iou(&seq.gt[i]) == 0.0 {
            predicted.push(pred);
            status.push(FrameStatus::Failure);
            let reinit = i + REINIT_GAP;
            if reinit < n {
                for j in i + 1..=reinit {
                    predicted.push(seq.gt[j]);
                    status.push(FrameStatus::Skipped);
                }
                tracker.init(&seq.frames[reinit], &seq.gt[reinit])?;
                reset_events.push(reinit);
                i = reinit + 1;
            } else {
                for j in i + 1..n {
                    predicted.push(seq.gt[j]);
                    status.push(FrameStatus::Skipped);
                }
                i = n;
            }
        } else {
            predicted.push(pred);
            status.push(FrameStatus::Tracked);
            i += 1;
        }
    }

    let mut overlap_sum = 0.0;
    let mut tracked = 0usize;
    let mut skipped = 0usize;
    let mut failures = 0usize;
    for (k, s) in status.iter().enumerate() {
        match s {
            FrameStatus::Tracked => {
                overlap_sum += predicted[k].iou(&seq.gt[k]);
                tracked += 1;
            }
            FrameStatus::Skipped => skipped += 1,
            FrameStatus::Failure => failures += 1,
        }
    }
    let accuracy = if tracked > 0 { overlap_sum / tracked as f64 } else { 0.0 };
    Ok((
        TrajectoryResult {
            predicted,
            gt: seq.gt.clone(),
            reset_events,
            status,
        },
        VOTMetrics {
            accuracy,
            robustness: failures,
            tracked_frames: tracked,
            skipped_frames: skipped,
        },
    ))
}
