//! Text-to-video retrieval over precomputed frame and caption embeddings.
//!
//! Videos are encoded per caption by a dual cross-modal encoder: one branch
//! for English captions and one for every other language, trained with a
//! symmetric contrastive loss on both branches.

pub mod autograd;
pub mod data;
pub mod dcm;
pub mod error;
pub mod eval;
pub mod loss;
pub mod seeding;
pub mod tensor;
pub mod train;
pub mod translate;

#[cfg(feature = "cli")]
pub mod cli;
mod fsutil;

pub use error::{Error, Result};
