//! Two-stage offline training and online meta-initialization: episodic
//! support/target splits, an unrolled K-step inner loop on the
//! context-aware parameters, a weighted multi-step outer loss, and outer
//! optimization of {theta, phi, alpha}.

mod episode;
mod inner;
mod loss;
mod train;

#[cfg(test)]
mod tests;

pub use episode::{make_proposals, split_episode, Episode, MetaConfig};
pub use inner::{inner_loop, inner_step, weighted_test_loss, AlphaMap, ThetaMap};
pub use loss::{bind_set, prepare_episode, set_loss, EpisodeData, SetSample};
pub use train::{
    alpha_path, init_alpha_params, online_init, outer_update, stage1_train, stage2_meta_train,
    Adam, LogLine, MetaState, OuterStats,
};
