use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Tensor};

/// A concrete assignment of the adapted parameter group: path -> node.
pub type ThetaMap = BTreeMap<String, Tensor>;

/// Per-layer inner learning rates for one step: path -> positive scalar node.
pub type AlphaMap = BTreeMap<String, Tensor>;

fn override_bound(bound: &BoundParams, theta: &ThetaMap) -> BoundParams {
    let mut b = bound.clone();
    for (p, t) in theta {
        b.insert(p.clone(), t.clone());
    }
    b
}

/// One gradient-descent step on the adapted group, recorded as ordinary
/// graph operations so the outer backward pass sees every second-order
/// pathway.
pub fn inner_step<F>(
    bound: &BoundParams,
    theta: &ThetaMap,
    alpha: &AlphaMap,
    loss_fn: F,
) -> Result<ThetaMap>
where
    F: Fn(&BoundParams) -> Result<Tensor>,
{
    let b = override_bound(bound, theta);
    let loss = loss_fn(&b)?;
    let graph = loss.graph().clone();
    let wrt: Vec<Tensor> = theta.values().cloned().collect();
    let grads = graph.grad(&loss, &wrt)?;
    let mut next = ThetaMap::new();
    for ((path, t), grad) in theta.iter().zip(grads) {
        let a = alpha
            .get(path)
            .ok_or_else(|| Error::UnknownParam(format!("alpha for {path}")))?;
        next.insert(path.clone(), t.sub(&grad.scale_by(a)?)?);
    }
    Ok(next)
}

/// Unrolled inner loop: the full trajectory [theta_0 ... theta_K]. Only the
/// listed paths are adapted; everything else in `bound` stays untouched.
pub fn inner_loop<F>(
    bound: &BoundParams,
    paths: &[String],
    alphas: &[AlphaMap],
    loss_fn: F,
) -> Result<Vec<ThetaMap>>
where
    F: Fn(&BoundParams) -> Result<Tensor>,
{
    let mut theta = ThetaMap::new();
    for p in paths {
        theta.insert(p.clone(), bound.get(p)?);
    }
    let mut trajectory = vec![theta.clone()];
    for alpha in alphas {
        theta = inner_step(bound, &theta, alpha, &loss_fn)?;
        trajectory.push(theta.clone());
    }
    Ok(trajectory)
}

/// Weighted multi-step test loss: sum over trajectory points of
/// `v_k * loss(theta_k)`.
pub fn weighted_test_loss<F>(
    bound: &BoundParams,
    trajectory: &[ThetaMap],
    v: &[f64],
    loss_fn: F,
) -> Result<Tensor>
where
    F: Fn(&BoundParams) -> Result<Tensor>,
{
    if trajectory.len() != v.len() {
        return Err(Error::invalid(format!(
            "{} trajectory points vs {} weights",
            trajectory.len(),
            v.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (theta, &vk) in trajectory.iter().zip(v) {
        let term = loss_fn(&override_bound(bound, theta))?.mul_scalar(vk);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Empty("empty trajectory".to_string()))
}
