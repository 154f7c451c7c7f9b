//! Deterministic synthetic sequence generator: a drifting-appearance blob
//! target, similar-looking distractors, seeded motion, and a bit-exact
//! on-disk format.

mod generate;
mod io;

#[cfg(test)]
mod tests;

pub use generate::{generate, SequenceConfig, SequenceRecord};
pub use io::{load_sequence, save_sequence};
