use crate::graph::{Event, NodeId};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Latest not-yet-applied interaction of a node.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMessage {
    pub other: NodeId,
    pub time: f64,
    pub edge: Vec<f64>,
}

/// Per-node memory vectors with their last update times.
///
/// Memory only changes through events: interactions are first buffered as raw
/// messages (the latest per node wins) and then applied by the model's GRU
/// update.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    memory: Tensor,
    last_update: Vec<f64>,
    pending: Vec<Option<RawMessage>>,
    /// State restored by [`MemoryState::reset`].
    initial: Tensor,
}

impl MemoryState {
    pub fn zeros(n_nodes: usize, dim: usize) -> Self {
        Self {
            memory: Tensor::zeros(&[n_nodes, dim]),
            last_update: vec![0.0; n_nodes],
            pending: vec![None; n_nodes],
            initial: Tensor::zeros(&[n_nodes, dim]),
        }
    }

    /// Memory initialised (and reset) to the given vectors.
    pub fn from_initial(initial: Tensor) -> Self {
        let n = initial.rows();
        Self {
            memory: initial.clone(),
            last_update: vec![0.0; n],
            pending: vec![None; n],
            initial,
        }
    }

    pub(crate) fn from_parts(memory: Tensor, last_update: Vec<f64>, initial: Tensor) -> Self {
        let n = memory.rows();
        Self {
            memory,
            last_update,
            pending: vec![None; n],
            initial,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.last_update.len()
    }

    pub fn dim(&self) -> usize {
        self.memory.cols()
    }

    pub fn memory(&self) -> &Tensor {
        &self.memory
    }

    pub fn initial(&self) -> &Tensor {
        &self.initial
    }

    pub fn vector(&self, node: NodeId) -> &[f64] {
        self.memory.row_slice(node.index())
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node.index()]
    }

    pub fn last_updates(&self) -> &[f64] {
        &self.last_update
    }

    pub fn pending(&self) -> &[Option<RawMessage>] {
        &self.pending
    }

    pub fn has_pending(&self) -> bool {
        self.pending.iter().any(Option::is_some)
    }

    /// Back to the initial memory, zero timestamps and no pending messages.
    pub fn reset(&mut self) {
        self.memory = self.initial.clone();
        self.last_update.iter_mut().for_each(|t| *t = 0.0);
        self.pending.iter_mut().for_each(|p| *p = None);
    }

    /// Replaces both the current and the initial memory.
    pub fn set_initial(&mut self, initial: Tensor) {
        self.memory = initial.clone();
        self.initial = initial;
    }

    /// Buffers both endpoint messages of each event; later events overwrite
    /// earlier ones for the same node.
    pub fn push_events(&mut self, events: &[Event]) -> Result<()> {
        for e in events {
            for (node, other) in [(e.user, e.item), (e.item, e.user)] {
                if node.index() >= self.n_nodes() {
                    return Err(Error::UnknownNode(node.0));
                }
                if e.time < self.last_update[node.index()] {
                    return Err(Error::TimeRegression(format!(
                        "event at {} precedes last update {} of node {}",
                        e.time,
                        self.last_update[node.index()],
                        node.0
                    )));
                }
                self.pending[node.index()] = Some(RawMessage {
                    other,
                    time: e.time,
                    edge: e.features.clone(),
                });
            }
        }
        Ok(())
    }

    /// Pending messages in node order.
    pub fn pending_list(&self) -> Vec<(NodeId, RawMessage)> {
        self.pending
            .iter()
            .enumerate()
            .filter_map(|(n, p)| p.clone().map(|m| (NodeId(n as u32), m)))
            .collect()
    }

    /// Stores updated rows and clears the corresponding pending messages.
    pub(crate) fn commit(&mut self, nodes: &[NodeId], rows: &Tensor, times: &[f64]) {
        for (k, (&n, &t)) in nodes.iter().zip(times).enumerate() {
            self.memory
                .row_slice_mut(n.index())
                .copy_from_slice(rows.row_slice(k));
            self.last_update[n.index()] = t;
            self.pending[n.index()] = None;
        }
    }

    pub fn clear_pending(&mut self) {
        self.pending.iter_mut().for_each(|p| *p = None);
    }
}
