use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::SequenceRecord;
use crate::tensor::{Graph, ParamSet, TensorData};
use crate::tracker::{augment_initial, BBox, TrackerConfig};
use crate::updater::{phi_paths, theta_paths, update_running_stats, BnMode};

use super::episode::{split_episode, MetaConfig};
use super::inner::{inner_loop, AlphaMap};
use super::loss::{bind_set, prepare_episode, set_loss, EpisodeData};

const ALPHA_MIN: f64 = 1e-8;

/// Meta-trained state: every parameter (including the per-layer-per-step
/// inner rates under `alpha.*`) plus the outer trajectory weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub params: ParamSet,
    pub v: Vec<f64>,
}

pub fn alpha_path(step: usize, theta_path: &str) -> String {
    format!("alpha.{step}.{theta_path}")
}

/// Scalar inner learning rates, one per adapted layer per inner step.
pub fn init_alpha_params(mcfg: &MetaConfig) -> ParamSet {
    let mut p = ParamSet::new();
    for step in 0..mcfg.k {
        for path in theta_paths() {
            p.insert(alpha_path(step, &path), TensorData::scalar(mcfg.alpha_init));
        }
    }
    p
}

#[derive(Debug, Clone, Serialize)]
pub struct LogLine {
    pub epoch: usize,
    pub batch: usize,
    pub loss_cls: f64,
    pub loss_iou: f64,
    pub loss_total: f64,
    pub grad_norm: f64,
    pub seed: u64,
}

/// Hand-rolled adaptive-moment optimizer with per-path learning rates.
pub struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new() -> Self {
        Adam {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// One step over every path for which `lr_of` yields a rate.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, TensorData>,
        lr_of: impl Fn(&str) -> Option<f64>,
    ) {
        self.t += 1;
        let t = self.t as f64;
        for (path, grad) in grads {
            let Some(lr) = lr_of(path) else { continue };
            let p = params.get_mut(path).expect("gradient for unknown parameter");
            let m = self.m.entry(path.clone()).or_insert_with(|| vec![0.0; grad.values.len()]);
            let v = self.v.entry(path.clone()).or_insert_with(|| vec![0.0; grad.values.len()]);
            for i in 0..grad.values.len() {
                let g = grad.values[i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                let mh = m[i] / (1.0 - Self::BETA1.powf(t));
                let vh = v[i] / (1.0 - Self::BETA2.powf(t));
                p.values[i] -= lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

fn outer_lr(mcfg: &MetaConfig) -> impl Fn(&str) -> Option<f64> + '_ {
    let theta: Vec<String> = theta_paths();
    let phi: Vec<String> = phi_paths();
    move |path: &str| {
        if path.starts_with("alpha.") {
            Some(mcfg.lr_alpha)
        } else if theta.iter().any(|p| p == path) {
            Some(mcfg.lr_theta)
        } else if phi.iter().any(|p| p == path) {
            Some(mcfg.lr_phi)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuterStats {
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_iou: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

/// One outer step of Alg.-style meta-training: unrolled K-step inner loops
/// per episode, weighted multi-step test loss, and an optimizer step on
/// {theta_0, phi, alpha}. Non-finite gradients skip the step.
pub fn outer_update(
    state: &mut MetaState,
    adam: &mut Adam,
    episodes: &[EpisodeData],
    tcfg: &TrackerConfig,
    mcfg: &MetaConfig,
) -> Result<OuterStats> {
    if episodes.is_empty() {
        return Err(Error::Empty("outer_update episode batch".to_string()));
    }
    mcfg.validate()?;
    let tpaths = theta_paths();
    let mut acc: BTreeMap<String, TensorData> = BTreeMap::new();
    let mut stats = OuterStats {
        loss_total: 0.0,
        loss_cls: 0.0,
        loss_iou: 0.0,
        grad_norm: 0.0,
        skipped: false,
    };
    for ep in episodes {
        let g = Graph::new();
        let bound = g.bind(&state.params);
        let (sup_ctx, sup_samples) = bind_set(&g, &ep.support);
        let (_, tgt_samples) = bind_set(&g, &ep.target);
        let filter = g.constant(&ep.filter);

        let support_fn = |b: &crate::tensor::BoundParams| {
            set_loss(b, &sup_ctx, &sup_samples, &filter, mcfg.lambda, tcfg, BnMode::Eval)
                .map(|r| r.0)
        };
        let alphas: Vec<AlphaMap> = (0..mcfg.k)
            .map(|step| {
                tpaths
                    .iter()
                    .map(|p| Ok((p.clone(), bound.get(&alpha_path(step, p))?)))
                    .collect::<Result<AlphaMap>>()
            })
            .collect::<Result<_>>()?;
        let trajectory = inner_loop(&bound, &tpaths, &alphas, support_fn)?;

        let mut test_total: Option<crate::tensor::Tensor> = None;
        for (theta, &vk) in trajectory.iter().zip(&mcfg.v) {
            let mut b = bound.clone();
            for (p, t) in theta {
                b.insert(p.clone(), t.clone());
            }
            let (loss, cls_v, iou_v, _) = set_loss(
                &b,
                &sup_ctx,
                &tgt_samples,
                &filter,
                mcfg.lambda,
                tcfg,
                BnMode::Eval,
            )?;
            stats.loss_cls += vk * cls_v / episodes.len() as f64;
            stats.loss_iou += vk * iou_v / episodes.len() as f64;
            let term = loss.mul_scalar(vk);
            test_total = Some(match test_total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
        let test = test_total.unwrap();
        stats.loss_total += test.item()? / episodes.len() as f64;
        let rec = g.backward(&test, &bound)?;
        for (path, grad) in rec.iter() {
            let slot = acc.entry(path.clone()).or_insert_with(|| {
                TensorData::zeros(grad.shape.clone())
            });
            for (a, v) in slot.values.iter_mut().zip(&grad.values) {
                *a += v / episodes.len() as f64;
            }
        }
    }
    stats.grad_norm = acc
        .values()
        .map(|g| g.values.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if !acc.values().all(|g| g.is_finite()) || !stats.grad_norm.is_finite() {
        stats.skipped = true;
        return Ok(stats);
    }
    adam.step(&mut state.params, &acc, outer_lr(mcfg));
    for path in state.params.paths().cloned().collect::<Vec<_>>() {
        if path.starts_with("alpha.") {
            let t = state.params.get_mut(&path).unwrap();
            for v in t.values.iter_mut() {
                *v = v.max(ALPHA_MIN);
            }
        }
    }
    Ok(stats)
}

fn pick_frames(
    seq: &SequenceRecord,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(TensorData, BBox)> {
    let mut idx: Vec<usize> = (0..seq.frames.len()).collect();
    idx.shuffle(rng);
    idx.truncate(count.min(seq.frames.len()));
    idx.sort_unstable();
    idx.iter()
        .map(|&i| (seq.frames[i].clone(), seq.gt[i]))
        .collect()
}

/// Stage 1: end-to-end minimization of the joint loss over per-sequence
/// batches, no inner loops. Every parameter group trains, including the
/// backbone and IoU head.
pub fn stage1_train(
    params: &mut ParamSet,
    dataset: &[SequenceRecord],
    tcfg: &TrackerConfig,
    mcfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<LogLine>> {
    if dataset.is_empty() {
        return Err(Error::Empty("stage-1 dataset".to_string()));
    }
    let mut adam = Adam::new();
    let mut log = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7374_6167_6531_0000);
    for epoch in 0..mcfg.epochs_stage1 {
        for (batch, seq) in dataset.iter().enumerate() {
            let samples = pick_frames(seq, mcfg.episode_len, &mut rng);
            if samples.len() < 2 {
                continue;
            }
            let (h, w) = (seq.frames[0].shape[1] as f64, seq.frames[0].shape[2] as f64);
            // The constant filter for this batch comes from current numeric
            // features.
            let ep = super::episode::Episode {
                support: samples.clone(),
                target: Vec::new(),
                sequence_id: batch as u64,
            };
            let data = prepare_episode(params, &ep, (w, h), tcfg, mcfg, seed)?;

            let g = Graph::new();
            let bound = g.bind(params);
            // End-to-end: features built in-graph from the frames.
            let mut ctx = Vec::new();
            let mut set = Vec::new();
            for ((frame, b), (_, _, _, props)) in samples.iter().zip(&data.support) {
                let f = g.constant(frame);
                let feats = crate::tracker::extract_features(&bound, &f, tcfg)?;
                ctx.push((feats.cls.clone(), feats.reg2.clone(), *b));
                set.push(super::loss::SetSample {
                    cls: feats.cls,
                    reg2: feats.reg2,
                    bbox: *b,
                    proposals: props.clone(),
                });
            }
            let filter = g.constant(&data.filter);
            let (loss, cls_v, iou_v, bn_stats) =
                set_loss(&bound, &ctx, &set, &filter, mcfg.lambda, tcfg, BnMode::Train)?;
            let total = loss.item()?;
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "stage-1 loss became non-finite at epoch {epoch} batch {batch}"
                )));
            }
            let rec = g.backward(&loss, &bound)?;
            let grads: BTreeMap<String, TensorData> =
                rec.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            adam.step(params, &grads, |path| {
                if path.starts_with("agg.bn_mean")
                    || path.starts_with("agg.bn_var")
                    || path.starts_with("alpha.")
                {
                    None
                } else {
                    Some(mcfg.lr_stage1)
                }
            });
            update_running_stats(params, &bn_stats);
            log.push(LogLine {
                epoch,
                batch,
                loss_cls: cls_v,
                loss_iou: iou_v,
                loss_total: total,
                grad_norm: rec.norm(),
                seed,
            });
        }
    }
    Ok(log)
}

/// Stage 2: episodic meta-training of {theta, phi, alpha} on top of a
/// stage-1 checkpoint.
pub fn stage2_meta_train(
    params: ParamSet,
    dataset: &[SequenceRecord],
    tcfg: &TrackerConfig,
    mcfg: &MetaConfig,
    seed: u64,
) -> Result<(MetaState, Vec<LogLine>)> {
    if dataset.is_empty() {
        return Err(Error::Empty("stage-2 dataset".to_string()));
    }
    mcfg.validate()?;
    let mut state = MetaState {
        params,
        v: mcfg.v.clone(),
    };
    if !state.params.contains(&alpha_path(0, &theta_paths()[0])) {
        state.params.merge(init_alpha_params(mcfg));
    }
    let mut adam = Adam::new();
    let mut log = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7374_6167_6532_0000);
    for epoch in 0..mcfg.epochs_stage2 {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(mcfg.batch_episodes).enumerate() {
            let mut episodes = Vec::new();
            for &i in chunk {
                let seq = &dataset[i];
                let samples = pick_frames(seq, mcfg.episode_len, &mut rng);
                if samples.len() < 2 {
                    continue;
                }
                let ep = split_episode(&samples, mcfg.support_fraction, i as u64, seed)?;
                let (h, w) = (seq.frames[0].shape[1] as f64, seq.frames[0].shape[2] as f64);
                episodes.push(prepare_episode(&state.params, &ep, (w, h), tcfg, mcfg, seed)?);
            }
            if episodes.is_empty() {
                continue;
            }
            let stats = outer_update(&mut state, &mut adam, &episodes, tcfg, mcfg)?;
            log.push(LogLine {
                epoch,
                batch,
                loss_cls: stats.loss_cls,
                loss_iou: stats.loss_iou,
                loss_total: stats.loss_total,
                grad_norm: stats.grad_norm,
                seed,
            });
        }
    }
    Ok((state, log))
}

/// First-frame adaptation: K numeric inner steps of the context-aware
/// parameters on the augmented initial samples, using the learned alpha.
/// Returns the adapted parameter set and the support-loss trace; the
/// aggregation module is untouched.
pub fn online_init(
    state_params: &ParamSet,
    frame: &TensorData,
    box_: &BBox,
    tcfg: &TrackerConfig,
    mcfg: &MetaConfig,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>)> {
    let augmented = augment_initial(frame, box_, tcfg.augment_count, seed)?;
    let (h, w) = (frame.shape[1] as f64, frame.shape[2] as f64);
    let ep = super::episode::Episode {
        support: augmented,
        target: Vec::new(),
        sequence_id: 0,
    };
    let data = prepare_episode(state_params, &ep, (w, h), tcfg, mcfg, seed)?;
    let mut params = state_params.clone();
    let tpaths = theta_paths();
    let mut losses = Vec::with_capacity(mcfg.k + 1);
    for step in 0..=mcfg.k {
        let g = Graph::new();
        let bound = g.bind(&params);
        let (ctx, samples) = bind_set(&g, &data.support);
        let filter = g.constant(&data.filter);
        let (loss, _, _, _) =
            set_loss(&bound, &ctx, &samples, &filter, mcfg.lambda, tcfg, BnMode::Eval)?;
        losses.push(loss.item()?);
        if step == mcfg.k {
            break;
        }
        let rec = g.backward(&loss, &bound)?;
        let norm = tpaths
            .iter()
            .map(|p| Ok(rec.get(p)?.values.iter().map(|v| v * v).sum::<f64>()))
            .sum::<Result<f64>>()?
            .sqrt();
        let clip = (mcfg.online_grad_clip / norm.max(1e-12)).min(1.0);
        for path in &tpaths {
            let alpha = params.get(&alpha_path(step, path))?.values[0];
            let grad = rec.get(path)?.clone();
            let slot = params.get_mut(path)?;
            for (p, d) in slot.values.iter_mut().zip(&grad.values) {
                *p -= alpha * clip * d;
            }
        }
    }
    Ok((params, losses))
}
