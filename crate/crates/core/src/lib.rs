//! Online keyframe extraction with a learnable threshold gate, key-shot
//! summarization under a duration budget, and keyframe-based
//! classification with an iteratively refined semantic-vector plugin.
//!
//! The crate is organized around the streaming contract: frames are
//! consumed one at a time with O(1) state, and every decision at frame `t`
//! depends only on frames up to `t`.

pub mod error;
pub mod io;
pub mod recognizer;
pub mod stream;
pub mod summarize;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
