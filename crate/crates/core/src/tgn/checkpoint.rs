use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use super::config::TgnConfig;
use super::memory::MemoryState;
use super::model::TgnModel;
use crate::checkpoint::{meta_field, Container};
use crate::numerics::{Optimizer, OptimizerKind, ParameterSet, Tensor};
use crate::transform::{read_from, write_into, TransformedGraph};
use crate::vocab::Vocab;
use crate::{Error, Result};

const KIND: &str = "tgn";

/// Everything needed to resume training or to transfer a trained model.
#[derive(Clone, Debug)]
pub struct TgnCheckpoint {
    pub model: TgnModel,
    pub state: MemoryState,
    pub optimizer: Optimizer,
    /// Name of the graph the memory belongs to.
    pub graph: String,
    pub n_users: usize,
    /// Transformed training graph, kept so that memory can later be mapped
    /// onto other graphs.
    pub source: Option<TransformedGraph>,
}

impl TgnCheckpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            KIND,
            json!({
                "config": self.model.config,
                "vocab": self.model.vocab,
                "graph": self.graph,
                "n_users": self.n_users,
                "optimizer": {
                    "kind": self.optimizer.kind,
                    "lr": self.optimizer.lr,
                    "step": self.optimizer.step,
                },
            }),
        );
        for (name, t) in self.model.params.iter() {
            c.push(format!("param/{name}"), t.clone());
        }
        c.push("memory/vectors", self.state.memory().clone());
        c.push("memory/initial", self.state.initial().clone());
        c.push("memory/last_update", Tensor::row(self.state.last_updates()));
        for (name, t) in &self.optimizer.first_moment {
            c.push(format!("adam_m/{name}"), t.clone());
        }
        for (name, t) in &self.optimizer.second_moment {
            c.push(format!("adam_v/{name}"), t.clone());
        }
        if let Some(g) = &self.source {
            write_into(g, &mut c, "source/");
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: TgnConfig = meta_field(&c.meta, "config")?;
        let vocab: Vocab = meta_field(&c.meta, "vocab")?;
        let graph: String = meta_field(&c.meta, "graph")?;
        let n_users: usize = meta_field(&c.meta, "n_users")?;
        let opt_meta = c
            .meta
            .get("optimizer")
            .ok_or_else(|| Error::Checkpoint("missing optimizer metadata".into()))?;
        let kind: OptimizerKind = meta_field(opt_meta, "kind")?;
        let mut optimizer = Optimizer::new(kind, meta_field(opt_meta, "lr")?);
        optimizer.step = meta_field(opt_meta, "step")?;
        let collect = |prefix| -> BTreeMap<String, Tensor> {
            c.arrays_with_prefix(prefix)
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect()
        };
        optimizer.first_moment = collect("adam_m/");
        optimizer.second_moment = collect("adam_v/");
        let mut params = ParameterSet::new();
        for (name, t) in c.arrays_with_prefix("param/") {
            params.insert(name, t.clone());
        }
        let memory = c.array("memory/vectors")?.clone();
        let initial = c.array("memory/initial")?.clone();
        let last_update = c.array("memory/last_update")?.data().to_vec();
        if memory.rows() != last_update.len() || memory.shape() != initial.shape() {
            return Err(Error::Checkpoint("inconsistent memory arrays".into()));
        }
        if memory.cols() != config.memory_dim {
            return Err(Error::Checkpoint(format!(
                "memory width {} but config says {}",
                memory.cols(),
                config.memory_dim
            )));
        }
        Ok(Self {
            model: TgnModel {
                config,
                params,
                vocab,
            },
            state: MemoryState::from_parts(memory, last_update, initial),
            optimizer,
            graph,
            n_users,
            source: match c.meta.get("source/graph") {
                Some(_) => Some(read_from(c, "source/")?),
                None => None,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, KIND)?)
    }
}
