//! Memory and weight transfer for memory-based temporal graph networks.
//!
//! The crate trains a memory-based temporal graph network on a data-rich
//! source interaction graph, maps its per-node memory onto a data-scarce
//! target graph through a feature-decoupled graph transformation and a
//! four-phase attention encoder, fine-tunes, and evaluates future link
//! prediction.

pub mod checkpoint;
mod error;
pub mod fgat;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod tgn;
pub mod transfer;
pub mod transform;
pub mod vocab;

pub use error::{Error, Result};
