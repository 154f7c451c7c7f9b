use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Graph, ParamSet, Tensor, TensorData};

use super::bbox::BBox;
use super::model::TrackerConfig;

const POOL_BINS: (usize, usize) = (3, 3);

fn pool_level(
    feat: &Tensor,
    coords: &[&Tensor; 4],
    stride: f64,
    proj: &Tensor,
) -> Result<Tensor> {
    let s = 1.0 / stride;
    let scaled: Vec<Tensor> = coords.iter().map(|c| c.mul_scalar(s)).collect();
    let pooled = feat.prpool(&scaled[0], &scaled[1], &scaled[2], &scaled[3], POOL_BINS)?;
    let n = pooled.numel();
    proj.matvec(&pooled.reshape(vec![n])?)
}

/// Pool the target box on both regression levels and project each to a
/// modulation vector.
pub fn extract_modulation(
    bound: &BoundParams,
    feat_reg1: &Tensor,
    feat_reg2: &Tensor,
    box_: &BBox,
    cfg: &TrackerConfig,
) -> Result<(Tensor, Tensor)> {
    let g = feat_reg1.graph();
    let coords: Vec<Tensor> = [box_.x0(), box_.y0(), box_.x1(), box_.y1()]
        .iter()
        .map(|&v| g.scalar(v))
        .collect();
    let c = [&coords[0], &coords[1], &coords[2], &coords[3]];
    let m0 = pool_level(feat_reg1, &c, cfg.stride_a() as f64, &bound.get("iou.proj0")?)?;
    let m1 = pool_level(feat_reg2, &c, cfg.stride_b() as f64, &bound.get("iou.proj1")?)?;
    Ok((m0, m1))
}

/// IoU head: pooled candidate features fused with the modulation vectors by
/// channel-wise product, concatenated, then a two-layer feed-forward net.
/// Differentiable w.r.t. the candidate corner coordinates.
pub fn predict_iou(
    bound: &BoundParams,
    feat_reg1: &Tensor,
    feat_reg2: &Tensor,
    coords: &[&Tensor; 4],
    m0: &Tensor,
    m1: &Tensor,
    cfg: &TrackerConfig,
) -> Result<Tensor> {
    let z0 = pool_level(feat_reg1, coords, cfg.stride_a() as f64, &bound.get("iou.proj0")?)?;
    let z1 = pool_level(feat_reg2, coords, cfg.stride_b() as f64, &bound.get("iou.proj1")?)?;
    let fused = z0.mul(m0)?.concat(&z1.mul(m1)?)?;
    let hidden = fused
        .linear(&bound.get("iou.w1")?, &bound.get("iou.b1")?)?
        .relu();
    hidden
        .linear(&bound.get("iou.w2")?, &bound.get("iou.b2")?)?
        .reshape(vec![1])
}

/// One numeric evaluation of the IoU head with gradients w.r.t. the corner
/// coordinates.
pub fn iou_value_and_grads(
    params: &ParamSet,
    feat_reg1: &TensorData,
    feat_reg2: &TensorData,
    m0: &TensorData,
    m1: &TensorData,
    coords: [f64; 4],
    cfg: &TrackerConfig,
) -> Result<(f64, [f64; 4])> {
    if !(coords[2] > coords[0] && coords[3] > coords[1]) {
        return Err(Error::DegenerateBox {
            w: coords[2] - coords[0],
            h: coords[3] - coords[1],
        });
    }
    let g = Graph::new();
    let bound = g.bind_frozen(params);
    let f1 = g.constant(feat_reg1);
    let f2 = g.constant(feat_reg2);
    let cs: Vec<Tensor> = coords
        .iter()
        .map(|&v| g.leaf(&TensorData::scalar(v)))
        .collect();
    let iou = predict_iou(
        &bound,
        &f1,
        &f2,
        &[&cs[0], &cs[1], &cs[2], &cs[3]],
        &g.constant(m0),
        &g.constant(m1),
        cfg,
    )?;
    let value = iou.item()?;
    let grads = g.grad(&iou, &cs)?;
    let mut out = [0.0; 4];
    for (o, t) in out.iter_mut().zip(&grads) {
        *o = t.item()?;
    }
    Ok((value, out))
}

fn corners(b: &BBox) -> [f64; 4] {
    [b.x0(), b.y0(), b.x1(), b.y1()]
}

fn from_corners(c: [f64; 4]) -> Result<BBox> {
    BBox::new(
        (c[0] + c[2]) / 2.0,
        (c[1] + c[3]) / 2.0,
        c[2] - c[0],
        c[3] - c[1],
    )
}

/// Candidate generation plus per-candidate gradient ascent on the predicted
/// IoU, returning the mean of the top-k candidates. The boolean flag marks
/// the fallback path where every candidate collapsed.
#[allow(clippy::too_many_arguments)]
pub fn refine_box(
    params: &ParamSet,
    feat_reg1: &TensorData,
    feat_reg2: &TensorData,
    m0: &TensorData,
    m1: &TensorData,
    center: (usize, usize),
    prev_box: &BBox,
    frame_size: (f64, f64),
    cfg: &TrackerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(BBox, bool)> {
    let stride = cfg.stride_a() as f64;
    let recentered = BBox {
        cx: center.1 as f64 * stride,
        cy: center.0 as f64 * stride,
        w: prev_box.w,
        h: prev_box.h,
    }
    .clamp_inside(frame_size.0, frame_size.1);

    let mut candidates = vec![recentered];
    for _ in 1..cfg.n_cand {
        let b = BBox {
            cx: recentered.cx + rng.gen_range(-1.0..=1.0) * stride,
            cy: recentered.cy + rng.gen_range(-1.0..=1.0) * stride,
            w: recentered.w * (1.0 + rng.gen_range(-cfg.jitter_scale..=cfg.jitter_scale)),
            h: recentered.h * (1.0 + rng.gen_range(-cfg.jitter_scale..=cfg.jitter_scale)),
        };
        candidates.push(b.clamp_inside(frame_size.0, frame_size.1));
    }

    let mut finished: Vec<([f64; 4], f64)> = Vec::new();
    for cand in &candidates {
        let mut cur = corners(cand);
        let mut best: Option<([f64; 4], f64)> = None;
        for step in 0..=cfg.n_asc {
            let (value, grads) = match iou_value_and_grads(
                params, feat_reg1, feat_reg2, m0, m1, cur, cfg,
            ) {
                Ok(vg) => vg,
                Err(_) => break,
            };
            if best.map(|(_, bv)| value > bv).unwrap_or(true) {
                best = Some((cur, value));
            }
            if step == cfg.n_asc {
                break;
            }
            let w = cur[2] - cur[0];
            let h = cur[3] - cur[1];
            cur[0] += cfg.ascent_step * w * grads[0];
            cur[2] += cfg.ascent_step * w * grads[2];
            cur[1] += cfg.ascent_step * h * grads[1];
            cur[3] += cfg.ascent_step * h * grads[3];
            if !(cur[2] > cur[0] && cur[3] > cur[1]) {
                break;
            }
        }
        if let Some(b) = best {
            finished.push(b);
        }
    }

    if finished.is_empty() {
        return Ok((recentered, true));
    }
    finished.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let k = cfg.top_k.min(finished.len());
    let mut mean = [0.0; 4];
    for (c, _) in &finished[..k] {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / k as f64;
        }
    }
    Ok((from_corners(mean)?, false))
}
