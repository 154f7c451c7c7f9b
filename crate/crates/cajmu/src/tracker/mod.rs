//! Two-branch base tracker: bias-free convolutional features, online
//! ridge-regression localization with a hinge residual, and modulation-vector
//! IoU box estimation with gradient-ascent refinement.

mod augment;
mod bbox;
mod features;
mod filter;
mod iou;
mod label;
mod model;


pub use augment::augment_initial;
pub use bbox::BBox;
pub use features::{extract_features, extract_features_data, Features};
pub use filter::{cls_loss, hinge_residual, init_filter, localize, optimize_filter};
pub use iou::{extract_modulation, iou_value_and_grads, predict_iou, refine_box};
pub use label::gaussian_label;
pub use model::{init_tracker_params, LabelConfig, TrackerConfig};
pub(crate) use model::randn_tensor;
