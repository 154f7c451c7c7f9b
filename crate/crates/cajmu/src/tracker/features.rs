use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Graph, Tensor, TensorData};

use super::model::TrackerConfig;

/// Two feature levels from the bias-free backbone: `cls` at stride 4 (also
/// the first regression level) and `reg2` at stride 8.
pub struct Features {
    pub cls: Tensor,
    pub reg2: Tensor,
}

pub fn extract_features(
    bound: &BoundParams,
    frame: &Tensor,
    cfg: &TrackerConfig,
) -> Result<Features> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(format!("frame must be [3,H,W], got {shape:?}")));
    }
    let stride = cfg.total_stride();
    if shape[1] % stride != 0 || shape[2] % stride != 0 {
        return Err(Error::invalid(format!(
            "frame {}x{} not divisible by total stride {stride}",
            shape[1], shape[2]
        )));
    }
    let x1 = frame
        .conv2d(&bound.get("backbone.conv1")?)?
        .relu()
        .avgpool2()?;
    let cls = x1
        .conv2d(&bound.get("backbone.conv2")?)?
        .relu()
        .avgpool2()?;
    let reg2 = cls
        .conv2d(&bound.get("backbone.conv3")?)?
        .relu()
        .avgpool2()?;
    Ok(Features { cls, reg2 })
}

/// Numeric feature maps for a frame under fixed parameters.
pub fn extract_features_data(
    params: &crate::tensor::ParamSet,
    frame: &TensorData,
    cfg: &TrackerConfig,
) -> Result<(TensorData, TensorData)> {
    let g = Graph::new();
    let bound = g.bind_frozen(params);
    let f = g.constant(frame);
    let feats = extract_features(&bound, &f, cfg)?;
    Ok((feats.cls.data(), feats.reg2.data()))
}
