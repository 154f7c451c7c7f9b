use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{ParamSet, TensorData};

/// Gaussian label shape and the hinge threshold used by the classification
/// loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub sigma: f64,
    pub threshold_t: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            sigma: 1.0,
            threshold_t: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub c_cls: usize,
    pub c_mod: usize,
    pub label: LabelConfig,
    /// Candidate boxes drawn around the localized center.
    pub n_cand: usize,
    /// Gradient-ascent steps per candidate during box refinement.
    pub n_asc: usize,
    /// Ascent step size, normalized to box size.
    pub ascent_step: f64,
    pub top_k: usize,
    /// Candidate size jitter as a fraction of box extents.
    pub jitter_scale: f64,
    pub init_filter_steps: usize,
    pub init_filter_lr: f64,
    pub online_filter_steps: usize,
    pub online_filter_lr: f64,
    pub augment_count: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            c_cls: 32,
            c_mod: 16,
            label: LabelConfig::default(),
            n_cand: 10,
            n_asc: 5,
            ascent_step: 0.01,
            top_k: 3,
            jitter_scale: 0.1,
            init_filter_steps: 60,
            init_filter_lr: 0.003,
            online_filter_steps: 2,
            online_filter_lr: 0.003,
            augment_count: 15,
        }
    }
}

impl TrackerConfig {
    /// Stride of the first feature level (classification + regression).
    pub fn stride_a(&self) -> usize {
        4
    }

    /// Stride of the second regression level.
    pub fn stride_b(&self) -> usize {
        8
    }

    pub fn total_stride(&self) -> usize {
        self.stride_b()
    }
}

pub(crate) fn randn_tensor(shape: Vec<usize>, scale: f64, rng: &mut ChaCha8Rng) -> TensorData {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n: usize = shape.iter().product();
    TensorData::new(shape, (0..n).map(|_| scale * normal.sample(rng)).collect()).unwrap()
}

fn conv_init(out_c: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> TensorData {
    let fan_in = (in_c * k * k) as f64;
    randn_tensor(vec![out_c, in_c, k, k], (2.0 / fan_in).sqrt(), rng)
}

fn linear_init(out_d: usize, in_d: usize, rng: &mut ChaCha8Rng) -> TensorData {
    randn_tensor(vec![out_d, in_d], (1.0 / in_d as f64).sqrt(), rng)
}

/// Backbone and IoU-head parameters. The backbone is bias-free: two strided
/// stages to the first level (stride 4) and one more to the second (stride 8).
pub fn init_tracker_params(cfg: &TrackerConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6163_6b65_7231);
    let mid = cfg.c_cls / 2;
    let mut p = ParamSet::new();
    p.insert("backbone.conv1", conv_init(mid, 3, 3, &mut rng));
    p.insert("backbone.conv2", conv_init(cfg.c_cls, mid, 3, &mut rng));
    p.insert("backbone.conv3", conv_init(cfg.c_mod, cfg.c_cls, 3, &mut rng));
    p.insert(
        "iou.proj0",
        linear_init(cfg.c_mod, cfg.c_cls * 9, &mut rng),
    );
    p.insert(
        "iou.proj1",
        linear_init(cfg.c_mod, cfg.c_mod * 9, &mut rng),
    );
    let hidden = 2 * cfg.c_mod;
    p.insert("iou.w1", linear_init(hidden, 2 * cfg.c_mod, &mut rng));
    p.insert("iou.b1", TensorData::zeros(vec![hidden]));
    p.insert("iou.w2", linear_init(1, hidden, &mut rng));
    p.insert("iou.b2", TensorData::zeros(vec![1]));
    p
}
