use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorData};

use super::bbox::BBox;
use super::label::gaussian_label;
use super::model::{LabelConfig, TrackerConfig};

/// Hinge regression residual: `s - z` where the label exceeds the
/// threshold, `max(0, s)` elsewhere.
pub fn hinge_residual(score: &Tensor, label: &TensorData, t: f64) -> Result<Tensor> {
    if score.shape() != label.shape {
        return Err(Error::shape(format!(
            "score {:?} vs label {:?}",
            score.shape(),
            label.shape
        )));
    }
    let g = score.graph();
    let mask = TensorData::new(
        label.shape.clone(),
        label
            .values
            .iter()
            .map(|&z| if z > t { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let inv_mask = TensorData::new(
        mask.shape.clone(),
        mask.values.iter().map(|&m| 1.0 - m).collect(),
    )?;
    let z = g.constant(label);
    let keep = score.sub(&z)?.mul(&g.constant(&mask))?;
    let clamp = score.relu().mul(&g.constant(&inv_mask))?;
    keep.add(&clamp)
}

/// Classification loss: weighted mean over samples of the squared norm of
/// the hinge residual on affinity-adapted score maps.
pub fn cls_loss(
    samples: &[(Tensor, BBox)],
    weights: Option<&[f64]>,
    filter: &Tensor,
    affinity: &Tensor,
    label_cfg: &LabelConfig,
    stride: f64,
) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::Empty("cls_loss sample list".to_string()));
    }
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::invalid("weight/sample length mismatch".to_string()));
        }
        if w.iter().any(|&x| x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("weights must be nonnegative, not all zero".to_string()));
        }
    }
    let g = filter.graph();
    let total_w: f64 = weights
        .map(|w| w.iter().sum())
        .unwrap_or(samples.len() as f64);
    let mut total: Option<Tensor> = None;
    for (i, (feat, b)) in samples.iter().enumerate() {
        let shape = feat.shape();
        let label = gaussian_label(&b.to_feature(stride), (shape[1], shape[2]), label_cfg)?;
        let score = feat.channel_scale(affinity)?.cross_correlate(filter)?;
        let res = hinge_residual(&score, &label, label_cfg.threshold_t)?;
        let w = weights.map(|w| w[i]).unwrap_or(1.0);
        let term = res.mul(&res)?.sum_all().mul_scalar(w / total_w);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let _ = g;
    Ok(total.unwrap())
}

fn descend_filter(
    samples: &[(&TensorData, BBox)],
    weights: Option<&[f64]>,
    start: TensorData,
    steps: usize,
    lr: f64,
    affinity: &TensorData,
    cfg: &TrackerConfig,
) -> Result<(TensorData, Vec<f64>)> {
    let mut filter = start;
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let g = Graph::new();
        let filt = g.leaf(&filter);
        let aff = g.constant(affinity);
        let graph_samples: Vec<(Tensor, BBox)> = samples
            .iter()
            .map(|(f, b)| (g.constant(f), *b))
            .collect();
        let loss = cls_loss(
            &graph_samples,
            weights,
            &filt,
            &aff,
            &cfg.label,
            cfg.stride_a() as f64,
        )?;
        losses.push(loss.item()?);
        if step == steps {
            break;
        }
        let grad = g.grad(&loss, &[filt])?.remove(0).data();
        for (p, d) in filter.values.iter_mut().zip(&grad.values) {
            *p -= lr * d;
        }
    }
    Ok((filter, losses))
}

/// Train a filter from zero on the augmented first-frame samples.
pub fn init_filter(
    samples: &[(&TensorData, BBox)],
    steps: usize,
    lr: f64,
    affinity: &TensorData,
    cfg: &TrackerConfig,
) -> Result<(TensorData, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("init_filter sample list".to_string()));
    }
    let c = samples[0].0.shape[0];
    descend_filter(
        samples,
        None,
        TensorData::zeros(vec![c, 3, 3]),
        steps,
        lr,
        affinity,
        cfg,
    )
}

/// Refine an existing filter on buffered samples, weighting each by its
/// stored confidence. The samples themselves are never mutated.
pub fn optimize_filter(
    samples: &[(&TensorData, BBox)],
    confidences: &[f64],
    filter: &TensorData,
    steps: usize,
    lr: f64,
    affinity: &TensorData,
    cfg: &TrackerConfig,
) -> Result<(TensorData, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("optimize_filter buffer".to_string()));
    }
    descend_filter(
        samples,
        Some(confidences),
        filter.clone(),
        steps,
        lr,
        affinity,
        cfg,
    )
}

/// Argmax cell of a score map with row-major tie-breaking.
pub fn localize(score: &TensorData) -> Result<((usize, usize), f64)> {
    if score.shape.len() != 2 || score.numel() == 0 {
        return Err(Error::shape(format!("localize on {:?}", score.shape)));
    }
    let w = score.shape[1];
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in score.values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = (i / w, i % w);
        }
    }
    Ok((best, best_v))
}
