use serde::{Deserialize, Serialize};

use crate::numerics::OptimizerKind;
use crate::{Error, Result};

/// Architecture and training hyperparameters of the temporal graph network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TgnConfig {
    pub memory_dim: usize,
    pub time_dim: usize,
    /// Width of the learned attribute-token embeddings before projection.
    pub feature_dim: usize,
    pub message_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_neighbors: usize,
    pub decoder_hidden: usize,
    /// Width of per-event edge features.
    pub edge_dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TgnConfig {
    fn default() -> Self {
        Self {
            memory_dim: 32,
            time_dim: 16,
            feature_dim: 16,
            message_dim: 32,
            n_layers: 1,
            n_heads: 2,
            n_neighbors: 10,
            decoder_hidden: 32,
            edge_dim: 0,
            batch_size: 200,
            lr: 3e-3,
            optimizer: OptimizerKind::adam(),
        }
    }
}

impl TgnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("memory_dim", self.memory_dim),
            ("time_dim", self.time_dim),
            ("feature_dim", self.feature_dim),
            ("message_dim", self.message_dim),
            ("n_heads", self.n_heads),
            ("decoder_hidden", self.decoder_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if !self.memory_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Invalid(format!(
                "memory_dim {} not divisible by {} heads",
                self.memory_dim, self.n_heads
            )));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Architecture fields only; training knobs may differ between two
    /// compatible models.
    pub fn same_architecture(&self, other: &TgnConfig) -> bool {
        (
            self.memory_dim,
            self.time_dim,
            self.feature_dim,
            self.message_dim,
            self.n_layers,
            self.n_heads,
            self.decoder_hidden,
            self.edge_dim,
        ) == (
            other.memory_dim,
            other.time_dim,
            other.feature_dim,
            other.message_dim,
            other.n_layers,
            other.n_heads,
            other.decoder_hidden,
            other.edge_dim,
        )
    }
}
