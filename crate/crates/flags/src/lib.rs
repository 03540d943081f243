//! Dual-subspace contrastive learning at desk scale: a momentum-encoder
//! pipeline with separate global/local projection heads, two negative
//! queues, a multi-positive contrastive loss, cosine-similarity pair
//! mining, and a linear-evaluation probe.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod numeric;
pub mod pairs;
pub mod queue;
pub mod train;

pub use error::{FlagsError, Result};
