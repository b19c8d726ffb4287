use super::{Event, NodeId};
use crate::{Error, Result};

/// One past interaction of a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborEntry {
    pub neighbor: NodeId,
    pub time: f64,
    /// Position of the event in the indexed sequence.
    pub ordinal: u32,
}

/// Per-node time-ordered adjacency supporting "k most recent before t"
/// queries.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    adjacency: Vec<Vec<NeighborEntry>>,
    edge_features: Vec<f64>,
    edge_dim: usize,
}

impl NeighborIndex {
    /// `events` must be chronological.
    pub fn build(events: &[Event], n_nodes: usize) -> Self {
        let mut adjacency = vec![Vec::new(); n_nodes];
        let edge_dim = events.first().map_or(0, |e| e.features.len());
        let mut edge_features = Vec::with_capacity(events.len() * edge_dim);
        for (k, e) in events.iter().enumerate() {
            let ordinal = k as u32;
            adjacency[e.user.index()].push(NeighborEntry {
                neighbor: e.item,
                time: e.time,
                ordinal,
            });
            adjacency[e.item.index()].push(NeighborEntry {
                neighbor: e.user,
                time: e.time,
                ordinal,
            });
            edge_features.extend_from_slice(&e.features);
        }
        Self {
            adjacency,
            edge_features,
            edge_dim,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn edge_features(&self, ordinal: u32) -> &[f64] {
        let s = ordinal as usize * self.edge_dim;
        &self.edge_features[s..s + self.edge_dim]
    }

    /// The `k` most recent interactions of `u` strictly before `t`, newest
    /// first.
    pub fn temporal_neighbors(&self, u: NodeId, t: f64, k: usize) -> Result<Vec<NeighborEntry>> {
        let adj = self
            .adjacency
            .get(u.index())
            .ok_or(Error::UnknownNode(u.0))?;
        let end = adj.partition_point(|e| e.time < t);
        let start = end.saturating_sub(k);
        Ok(adj[start..end].iter().rev().copied().collect())
    }

    pub fn history_len(&self, u: NodeId) -> usize {
        self.adjacency.get(u.index()).map_or(0, Vec::len)
    }
}
