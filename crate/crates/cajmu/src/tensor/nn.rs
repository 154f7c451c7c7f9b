//! Composite layers built from the primitive op set, so their gradients
//! (including gradients of gradients) come from the engine for free.

use crate::error::{Error, Result};

use super::data::TensorData;
use super::graph::Tensor;

/// Per-channel batch normalization over the spatial extent of `[C,H,W]`,
/// using batch statistics. Returns the normalized tensor together with
/// the batch mean and (biased) variance per channel for running-stat
/// bookkeeping.
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, TensorData, TensorData)> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("batchnorm on {shape:?}")));
    }
    if shape[1] * shape[2] == 0 {
        return Err(Error::Empty("batchnorm train batch".to_string()));
    }
    check_channels(&shape, gamma, beta)?;
    let (h, w) = (shape[1], shape[2]);
    let mu = x.channel_mean()?;
    let centered = x.sub(&mu.broadcast_channel(h, w)?)?;
    let var = centered.mul(&centered)?.channel_mean()?;
    let inv_std = var.add_scalar(eps).sqrt().recip();
    let y = centered
        .mul(&inv_std.broadcast_channel(h, w)?)?
        .channel_scale(gamma)?
        .add(&beta.broadcast_channel(h, w)?)?;
    Ok((y, mu.data(), var.data()))
}

/// Batch normalization with frozen running statistics.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &TensorData,
    running_var: &TensorData,
    eps: f64,
) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("batchnorm on {shape:?}")));
    }
    check_channels(&shape, gamma, beta)?;
    let (h, w) = (shape[1], shape[2]);
    let g = x.graph();
    let mu = g.constant(running_mean);
    let inv_std = g.constant(running_var).add_scalar(eps).sqrt().recip();
    x.sub(&mu.broadcast_channel(h, w)?)?
        .mul(&inv_std.broadcast_channel(h, w)?)?
        .channel_scale(gamma)?
        .add(&beta.broadcast_channel(h, w)?)
}

fn check_channels(shape: &[usize], gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != vec![shape[0]] || beta.shape() != vec![shape[0]] {
        return Err(Error::shape(format!(
            "batchnorm: {} channels, gamma {:?}, beta {:?}",
            shape[0],
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}
