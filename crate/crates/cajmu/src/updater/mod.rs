//! Context aggregation over the online sample buffer and channel-affinity
//! generation/application for both tracker branches.

mod buffer;
mod context;

#[cfg(test)]
mod tests;

pub use buffer::{BufferEntry, SampleBuffer};
pub use context::{
    adapt_localization, adapt_modulation, init_updater_params, localization_context,
    make_affinity, phi_paths, regression_context, theta_paths, update_running_stats,
    AffinityVectors, BnMode, BN_EPS, BN_MOMENTUM,
};
