use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorData;
use crate::tracker::BBox;

/// Meta-training hyperparameters: inner-loop depth, outer weighting, and
/// the per-group outer learning rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Inner-loop steps.
    pub k: usize,
    /// Branch balance between classification and IoU losses.
    pub lambda: f64,
    /// Outer weights, one per trajectory point (length k+1, nondecreasing).
    pub v: Vec<f64>,
    pub batch_episodes: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    /// Learning rate for the per-layer-per-step inner rates; defaults to
    /// the context-aware rate.
    pub lr_alpha: f64,
    pub lr_stage1: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub alpha_init: f64,
    pub support_fraction: f64,
    pub episode_len: usize,
    pub proposals_per_sample: usize,
    /// Gradient-descent steps for the per-episode constant filter.
    pub episode_filter_steps: usize,
    /// Global-norm clip for the numeric first-frame adaptation steps. The
    /// augmented-support loss occasionally spikes; without a clip one inner
    /// step can move theta far outside the meta-trained basin.
    pub online_grad_clip: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            k: 5,
            lambda: 1.0,
            v: vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            batch_episodes: 4,
            lr_theta: 5e-5,
            lr_phi: 1e-5,
            lr_alpha: 5e-5,
            lr_stage1: 1e-4,
            epochs_stage1: 3,
            epochs_stage2: 3,
            alpha_init: 0.01,
            support_fraction: 0.5,
            episode_len: 6,
            proposals_per_sample: 8,
            episode_filter_steps: 20,
            online_grad_clip: 1.0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v.len() != self.k + 1 {
            return Err(Error::invalid(format!(
                "outer weights must have length k+1 = {}, got {}",
                self.k + 1,
                self.v.len()
            )));
        }
        if self.v.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::invalid("outer weights must be nondecreasing".to_string()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::invalid("lambda must be positive".to_string()));
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return Err(Error::invalid("support fraction must be in (0,1)".to_string()));
        }
        if self.online_grad_clip <= 0.0 {
            return Err(Error::invalid("online grad clip must be positive".to_string()));
        }
        Ok(())
    }
}

/// A support/target split of samples from one sequence.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Vec<(TensorData, BBox)>,
    pub target: Vec<(TensorData, BBox)>,
    pub sequence_id: u64,
}

/// Deterministic seeded disjoint split of one sequence's samples.
pub fn split_episode(
    samples: &[(TensorData, BBox)],
    support_fraction: f64,
    sequence_id: u64,
    seed: u64,
) -> Result<Episode> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "episode needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sequence_id.rotate_left(17));
    order.shuffle(&mut rng);
    let n_support = ((samples.len() as f64 * support_fraction).round() as usize)
        .clamp(1, samples.len() - 1);
    let (sup, tgt) = order.split_at(n_support);
    Ok(Episode {
        support: sup.iter().map(|&i| samples[i].clone()).collect(),
        target: tgt.iter().map(|&i| samples[i].clone()).collect(),
        sequence_id,
    })
}

/// Seeded jittered box proposals with their true IoU against the ground
/// truth, used by the IoU-branch regression loss.
pub fn make_proposals(
    gt: &BBox,
    count: usize,
    frame_size: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<([f64; 4], f64)> {
    (0..count)
        .map(|_| {
            let b = BBox {
                cx: gt.cx + rng.gen_range(-0.2..=0.2) * gt.w,
                cy: gt.cy + rng.gen_range(-0.2..=0.2) * gt.h,
                w: gt.w * (rng.gen_range(-0.2f64..=0.2)).exp(),
                h: gt.h * (rng.gen_range(-0.2f64..=0.2)).exp(),
            }
            .clamp_inside(frame_size.0, frame_size.1);
            ([b.x0(), b.y0(), b.x1(), b.y1()], b.iou(gt))
        })
        .collect()
}
