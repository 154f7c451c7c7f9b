use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamSet, Tensor, TensorData};
use crate::tracker::{
    cls_loss, extract_features_data, extract_modulation, init_filter, predict_iou, BBox,
    TrackerConfig,
};
use crate::updater::{
    adapt_modulation, localization_context, make_affinity, regression_context, BnMode,
};

use super::episode::{make_proposals, Episode, MetaConfig};

/// One sample inside a loss set: both feature levels, the ground-truth box,
/// and the jittered proposals scored by the IoU branch.
pub struct SetSample {
    pub cls: Tensor,
    pub reg2: Tensor,
    pub bbox: BBox,
    pub proposals: Vec<([f64; 4], f64)>,
}

/// Fixed per-episode tensors: numeric features per sample and the constant
/// classification filter trained on the support set.
pub struct EpisodeData {
    pub support: Vec<(TensorData, TensorData, BBox, Vec<([f64; 4], f64)>)>,
    pub target: Vec<(TensorData, TensorData, BBox, Vec<([f64; 4], f64)>)>,
    pub filter: TensorData,
}

pub fn prepare_episode(
    params: &ParamSet,
    episode: &Episode,
    frame_size: (f64, f64),
    tcfg: &TrackerConfig,
    mcfg: &MetaConfig,
    seed: u64,
) -> Result<EpisodeData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ episode.sequence_id.rotate_left(29));
    let mut convert = |set: &[(TensorData, BBox)]| -> Result<Vec<_>> {
        set.iter()
            .map(|(frame, b)| {
                let (cls, reg2) = extract_features_data(params, frame, tcfg)?;
                let props = make_proposals(b, mcfg.proposals_per_sample, frame_size, &mut rng);
                Ok((cls, reg2, *b, props))
            })
            .collect()
    };
    let support = convert(&episode.support)?;
    let target = convert(&episode.target)?;
    let ones = TensorData::new(vec![tcfg.c_cls], vec![1.0; tcfg.c_cls])?;
    let filter_samples: Vec<(&TensorData, BBox)> =
        support.iter().map(|(c, _, b, _)| (c, *b)).collect();
    let (filter, _) = init_filter(
        &filter_samples,
        mcfg.episode_filter_steps,
        tcfg.init_filter_lr,
        &ones,
        tcfg,
    )?;
    Ok(EpisodeData {
        support,
        target,
        filter,
    })
}

/// The per-set tracking loss of Eq. 10: lambda times the hinge
/// classification loss plus the squared-error IoU loss, both evaluated
/// through the affinity-adapted branches. The context (buffer stand-in) is
/// always the support set; modulation vectors come from its first sample.
pub fn set_loss(
    bound: &BoundParams,
    context: &[(Tensor, Tensor, BBox)],
    samples: &[SetSample],
    filter: &Tensor,
    lambda: f64,
    tcfg: &TrackerConfig,
    mode: BnMode,
) -> Result<(Tensor, f64, f64, Vec<(TensorData, TensorData)>)> {
    if context.is_empty() {
        return Err(Error::Empty("loss context".to_string()));
    }
    if samples.is_empty() {
        return Err(Error::Empty("loss sample set".to_string()));
    }
    let g = filter.graph();
    let ctx_cls: Vec<(Tensor, BBox)> = context.iter().map(|(c, _, b)| (c.clone(), *b)).collect();
    let (per_sample_l, pooled_l, stats) = localization_context(bound, &ctx_cls, tcfg, mode)?;
    let boxes: Vec<BBox> = context.iter().map(|(_, _, b)| *b).collect();
    let pooled_r = regression_context(bound, &per_sample_l, &boxes, tcfg)?;
    let affinity = make_affinity(bound, &pooled_l, &pooled_r)?;

    let cls_samples: Vec<(Tensor, BBox)> =
        samples.iter().map(|s| (s.cls.clone(), s.bbox)).collect();
    let l_cls = cls_loss(
        &cls_samples,
        None,
        filter,
        &affinity.a_loc,
        &tcfg.label,
        tcfg.stride_a() as f64,
    )?;

    let (m0, m1) = extract_modulation(bound, &context[0].0, &context[0].1, &context[0].2, tcfg)?;
    let (am0, am1) = adapt_modulation(&m0, &m1, &affinity)?;
    let mut l_iou: Option<Tensor> = None;
    let mut n_props = 0usize;
    for s in samples {
        for (corners, true_iou) in &s.proposals {
            let cs: Vec<Tensor> = corners.iter().map(|&v| g.scalar(v)).collect();
            let pred = predict_iou(
                bound,
                &s.cls,
                &s.reg2,
                &[&cs[0], &cs[1], &cs[2], &cs[3]],
                &am0,
                &am1,
                tcfg,
            )?;
            let err = pred.add_scalar(-true_iou);
            let sq = err.mul(&err)?;
            l_iou = Some(match l_iou {
                Some(acc) => acc.add(&sq)?,
                None => sq,
            });
            n_props += 1;
        }
    }
    let l_iou = l_iou
        .ok_or_else(|| Error::Empty("no proposals in loss set".to_string()))?
        .mul_scalar(1.0 / n_props as f64);

    let cls_v = l_cls.item()?;
    let iou_v = l_iou.item()?;
    let total = l_cls.mul_scalar(lambda).add(&l_iou)?;
    Ok((total, cls_v, iou_v, stats))
}

/// Graph inputs for a prepared set under a given bound parameter view.
pub fn bind_set(
    bound_graph: &crate::tensor::Graph,
    set: &[(TensorData, TensorData, BBox, Vec<([f64; 4], f64)>)],
) -> (Vec<(Tensor, Tensor, BBox)>, Vec<SetSample>) {
    let mut ctx = Vec::with_capacity(set.len());
    let mut samples = Vec::with_capacity(set.len());
    for (cls, reg2, b, props) in set {
        let c = bound_graph.constant(cls);
        let r = bound_graph.constant(reg2);
        ctx.push((c.clone(), r.clone(), *b));
        samples.push(SetSample {
            cls: c,
            reg2: r,
            bbox: *b,
            proposals: props.clone(),
        });
    }
    (ctx, samples)
}
