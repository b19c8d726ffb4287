//! Memory-based temporal graph network.

mod checkpoint;
mod config;
mod memory;
mod model;
mod train;

pub use checkpoint::TgnCheckpoint;
pub use config::TgnConfig;
pub use memory::{MemoryState, RawMessage};
pub use model::{PendingUpdate, Query, TgnContext, TgnModel};
pub use train::{observe, train, train_epoch, update_memory, TrainLog};
