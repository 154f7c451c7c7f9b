use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{nn, BoundParams, ParamSet, Tensor, TensorData};
use crate::tracker::{randn_tensor, BBox, TrackerConfig};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-statistics mode for the aggregation batchnorm. Running statistics
/// are frozen after offline training, so online tracking always uses `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone)]
pub struct AffinityVectors {
    pub a_loc: Tensor,
    pub a_reg0: Tensor,
    pub a_reg1: Tensor,
}

/// Parameter paths adapted by the inner loop (the context-aware module).
pub fn theta_paths() -> Vec<String> {
    [
        "aware.loc_w",
        "aware.loc_b",
        "aware.trunk_w",
        "aware.trunk_b",
        "aware.reg0_w",
        "aware.reg0_b",
        "aware.reg1_w",
        "aware.reg1_b",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Parameter paths of the context-aggregation module (meta-trained, frozen
/// during online adaptation). Running batchnorm statistics are bookkeeping,
/// not trainable parameters, and are excluded.
pub fn phi_paths() -> Vec<String> {
    ["agg.conv_u", "agg.bn_gamma", "agg.bn_beta", "agg.conv_g"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn init_updater_params(cfg: &TrackerConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7570_6461_7465_7231);
    let mut p = ParamSet::new();
    let he = |out_c: usize, in_c: usize, rng: &mut ChaCha8Rng| {
        randn_tensor(
            vec![out_c, in_c, 3, 3],
            (2.0 / (in_c * 9) as f64).sqrt(),
            rng,
        )
    };
    p.insert("agg.conv_u", he(cfg.c_cls, cfg.c_cls, &mut rng));
    p.insert("agg.conv_g", he(cfg.c_mod, cfg.c_cls, &mut rng));
    p.insert(
        "agg.bn_gamma",
        TensorData::new(vec![cfg.c_cls], vec![1.0; cfg.c_cls]).unwrap(),
    );
    p.insert("agg.bn_beta", TensorData::zeros(vec![cfg.c_cls]));
    p.insert("agg.bn_mean", TensorData::zeros(vec![cfg.c_cls]));
    p.insert(
        "agg.bn_var",
        TensorData::new(vec![cfg.c_cls], vec![1.0; cfg.c_cls]).unwrap(),
    );
    let lin = |out_d: usize, in_d: usize, rng: &mut ChaCha8Rng| {
        randn_tensor(vec![out_d, in_d], (1.0 / in_d as f64).sqrt(), rng)
    };
    p.insert("aware.loc_w", lin(cfg.c_cls, cfg.c_cls, &mut rng));
    p.insert("aware.loc_b", TensorData::zeros(vec![cfg.c_cls]));
    p.insert("aware.trunk_w", lin(cfg.c_mod, cfg.c_mod, &mut rng));
    p.insert("aware.trunk_b", TensorData::zeros(vec![cfg.c_mod]));
    p.insert("aware.reg0_w", lin(cfg.c_mod, cfg.c_mod, &mut rng));
    p.insert("aware.reg0_b", TensorData::zeros(vec![cfg.c_mod]));
    p.insert("aware.reg1_w", lin(cfg.c_mod, cfg.c_mod, &mut rng));
    p.insert("aware.reg1_b", TensorData::zeros(vec![cfg.c_mod]));
    p
}

fn pool_box(x: &Tensor, b: &BBox, stride: f64) -> Result<Tensor> {
    let g = x.graph();
    let fb = b.to_feature(stride);
    let pooled = x.prpool(
        &g.scalar(fb.x0()),
        &g.scalar(fb.y0()),
        &g.scalar(fb.x1()),
        &g.scalar(fb.y1()),
        (1, 1),
    )?;
    let c = pooled.shape()[0];
    pooled.reshape(vec![c])
}

fn mean_of(vs: Vec<Tensor>) -> Result<Tensor> {
    let n = vs.len() as f64;
    let mut it = vs.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::Empty("mean over empty list".to_string()))?;
    for v in it {
        acc = acc.add(&v)?;
    }
    Ok(acc.mul_scalar(1.0 / n))
}

/// Per-sample localization context maps `x_i^L = ReLU(BN(conv_u(x_i)))`
/// plus their box-pooled mean. In `Train` mode batch statistics are used
/// and returned for running-stat updates.
pub fn localization_context(
    bound: &BoundParams,
    samples: &[(Tensor, BBox)],
    cfg: &TrackerConfig,
    mode: BnMode,
) -> Result<(Vec<Tensor>, Tensor, Vec<(TensorData, TensorData)>)> {
    if samples.is_empty() {
        return Err(Error::Empty("localization_context buffer".to_string()));
    }
    let gamma = bound.get("agg.bn_gamma")?;
    let beta = bound.get("agg.bn_beta")?;
    let conv_u = bound.get("agg.conv_u")?;
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut pooled = Vec::with_capacity(samples.len());
    let mut stats = Vec::new();
    for (x, b) in samples {
        let u = x.conv2d(&conv_u)?;
        let normed = match mode {
            BnMode::Train => {
                let (y, mu, var) = nn::batchnorm_train(&u, &gamma, &beta, BN_EPS)?;
                stats.push((mu, var));
                y
            }
            BnMode::Eval => nn::batchnorm_eval(
                &u,
                &gamma,
                &beta,
                &bound.get("agg.bn_mean")?.data(),
                &bound.get("agg.bn_var")?.data(),
                BN_EPS,
            )?,
        };
        let xl = normed.relu();
        pooled.push(pool_box(&xl, b, cfg.stride_a() as f64)?);
        per_sample.push(xl);
    }
    Ok((per_sample, mean_of(pooled)?, stats))
}

/// Regression context: `x_i^R = conv_g(x_i^L)`, box-pooled and averaged.
pub fn regression_context(
    bound: &BoundParams,
    per_sample_l: &[Tensor],
    boxes: &[BBox],
    cfg: &TrackerConfig,
) -> Result<Tensor> {
    if per_sample_l.is_empty() {
        return Err(Error::Empty("regression_context sample list".to_string()));
    }
    if per_sample_l.len() != boxes.len() {
        return Err(Error::invalid(format!(
            "{} context maps vs {} boxes",
            per_sample_l.len(),
            boxes.len()
        )));
    }
    let conv_g = bound.get("agg.conv_g")?;
    let mut pooled = Vec::with_capacity(boxes.len());
    for (xl, b) in per_sample_l.iter().zip(boxes) {
        let xr = xl.conv2d(&conv_g)?;
        pooled.push(pool_box(&xr, b, cfg.stride_a() as f64)?);
    }
    mean_of(pooled)
}

/// Sigmoid affinity heads: one for localization from the pooled
/// localization context, and a shared trunk with two output layers for the
/// regression modulation vectors.
pub fn make_affinity(
    bound: &BoundParams,
    pooled_l: &Tensor,
    pooled_r: &Tensor,
) -> Result<AffinityVectors> {
    let a_loc = pooled_l
        .linear(&bound.get("aware.loc_w")?, &bound.get("aware.loc_b")?)?
        .sigmoid();
    let trunk = pooled_r
        .linear(&bound.get("aware.trunk_w")?, &bound.get("aware.trunk_b")?)?
        .relu();
    let a_reg0 = trunk
        .linear(&bound.get("aware.reg0_w")?, &bound.get("aware.reg0_b")?)?
        .sigmoid();
    let a_reg1 = trunk
        .linear(&bound.get("aware.reg1_w")?, &bound.get("aware.reg1_b")?)?
        .sigmoid();
    Ok(AffinityVectors {
        a_loc,
        a_reg0,
        a_reg1,
    })
}

/// Affinity-adapted score map: channel-scaled features correlated with the
/// filter.
pub fn adapt_localization(feature: &Tensor, a_loc: &Tensor, filter: &Tensor) -> Result<Tensor> {
    feature.channel_scale(a_loc)?.cross_correlate(filter)
}

/// Affinity-adapted modulation vectors.
pub fn adapt_modulation(
    m0: &Tensor,
    m1: &Tensor,
    affinity: &AffinityVectors,
) -> Result<(Tensor, Tensor)> {
    Ok((m0.mul(&affinity.a_reg0)?, m1.mul(&affinity.a_reg1)?))
}

/// Fold fresh batch statistics into the stored running statistics.
pub fn update_running_stats(params: &mut ParamSet, stats: &[(TensorData, TensorData)]) {
    for (mu, var) in stats {
        for (key, fresh) in [("agg.bn_mean", mu), ("agg.bn_var", var)] {
            let run = params.get_mut(key).unwrap();
            for (r, f) in run.values.iter_mut().zip(&fresh.values) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * f;
            }
        }
    }
}
