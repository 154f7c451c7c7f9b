//! Context-aware joint meta-updating tracker.
//!
//! A two-branch tracker (online localization filter + IoU-based box
//! estimation) whose branches are adapted jointly at test time through
//! learned per-channel affinity vectors. The affinity generator is
//! meta-initialized offline with an unrolled inner-loop scheme so that a
//! handful of gradient steps on first-frame samples suffice to specialize
//! it to a new target.
//!
//! Everything runs in 64-bit precision on a small fixed-op tensor engine
//! so all gradients (including meta-gradients through the unrolled inner
//! loop) can be checked against finite differences.

pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod meta;
pub mod online;
pub mod sim;
pub mod tensor;
pub mod tracker;
pub mod updater;

pub use error::{Error, Result};
