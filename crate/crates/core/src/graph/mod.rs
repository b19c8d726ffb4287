//! Temporal bipartite interaction graphs: events, node tables, chronological
//! splits, temporal neighbourhoods and negative sampling.
//!
//! Nodes share one id space. Users occupy `0..n_users` and items
//! `n_users..n_users + n_items`, so the two partitions never overlap.

mod io;
mod neighbors;
mod sampling;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use io::{load_events, load_graph_cache, parse_events, save_graph_cache, write_events_csv};
pub use neighbors::{NeighborEntry, NeighborIndex};
pub use sampling::{sample_negatives, sample_negatives_with};

use crate::vocab::Vocab;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    User,
    Item,
}

/// One timestamped user–item interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub user: NodeId,
    pub item: NodeId,
    pub time: f64,
    pub features: Vec<f64>,
}

/// Node metadata shared by a graph and all of its splits.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTable {
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    /// Per node, sorted ids into `vocab`.
    pub features: Vec<Vec<u32>>,
    pub vocab: Vocab,
}

impl NodeTable {
    pub fn n_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.user_keys.len() + self.item_keys.len()
    }
}

/// Chronologically ordered interaction log over a bipartite node set.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    name: String,
    nodes: Arc<NodeTable>,
    events: Vec<Event>,
    edge_dim: usize,
}

impl TemporalGraph {
    /// Builds a graph, stably sorting events by time.
    pub fn new(name: impl Into<String>, nodes: NodeTable, mut events: Vec<Event>) -> Result<Self> {
        let n_users = nodes.n_users() as u32;
        let n_nodes = nodes.n_nodes() as u32;
        if nodes.features.len() != nodes.n_nodes() {
            return Err(Error::Invalid(format!(
                "{} feature sets for {} nodes",
                nodes.features.len(),
                nodes.n_nodes()
            )));
        }
        if let Some(bad) = nodes
            .features
            .iter()
            .flatten()
            .find(|&&f| f as usize >= nodes.vocab.len())
        {
            return Err(Error::Invalid(format!(
                "feature id {bad} outside vocabulary"
            )));
        }
        let edge_dim = events.first().map_or(0, |e| e.features.len());
        for e in &events {
            if e.user.0 >= n_users {
                return Err(Error::Invalid(format!("{:?} is not a user", e.user)));
            }
            if e.item.0 < n_users || e.item.0 >= n_nodes {
                return Err(Error::Invalid(format!("{:?} is not an item", e.item)));
            }
            if !(e.time >= 0.0 && e.time.is_finite()) {
                return Err(Error::Invalid(format!("bad timestamp {}", e.time)));
            }
            if e.features.len() != edge_dim {
                return Err(Error::Invalid("inconsistent edge feature width".into()));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            name: name.into(),
            nodes: Arc::new(nodes),
            events,
            edge_dim,
        })
    }

    fn with_events(&self, events: Vec<Event>) -> Self {
        Self {
            name: self.name.clone(),
            nodes: Arc::clone(&self.nodes),
            events,
            edge_dim: self.edge_dim,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn nodes(&self) -> &NodeTable {
        &self.nodes
    }

    pub fn vocab(&self) -> &Vocab {
        &self.nodes.vocab
    }

    pub fn n_users(&self) -> usize {
        self.nodes.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.nodes.n_items()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.n_nodes()
    }

    pub fn users(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_users() as u32).map(NodeId)
    }

    pub fn items(&self) -> impl Iterator<Item = NodeId> {
        (self.n_users() as u32..self.n_nodes() as u32).map(NodeId)
    }

    pub fn partition(&self, node: NodeId) -> Result<Partition> {
        if node.index() < self.n_users() {
            Ok(Partition::User)
        } else if node.index() < self.n_nodes() {
            Ok(Partition::Item)
        } else {
            Err(Error::UnknownNode(node.0))
        }
    }

    pub fn node_features(&self, node: NodeId) -> &[u32] {
        &self.nodes.features[node.index()]
    }

    pub fn node_key(&self, node: NodeId) -> &str {
        let n = node.index();
        if n < self.n_users() {
            &self.nodes.user_keys[n]
        } else {
            &self.nodes.item_keys[n - self.n_users()]
        }
    }

    /// Splits at `floor(N·f_train)` and `floor(N·(f_train + f_val))`.
    pub fn chronological_split(&self, fractions: (f64, f64, f64)) -> Result<(Self, Self, Self)> {
        let (a, b, c) = fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "split fractions {fractions:?} must be positive and sum to 1"
            )));
        }
        let n = self.events.len();
        if n < 3 {
            return Err(Error::Empty(format!("cannot split {n} events three ways")));
        }
        let i = (n as f64 * a).floor() as usize;
        let j = ((n as f64 * (a + b)).floor() as usize).max(i);
        Ok((
            self.with_events(self.events[..i].to_vec()),
            self.with_events(self.events[i..j].to_vec()),
            self.with_events(self.events[j..].to_vec()),
        ))
    }

    /// Events `start..end` as a graph over the same nodes.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        self.with_events(self.events[start..end].to_vec())
    }

    /// Earliest `floor(p·N)` events.
    pub fn scarcity_subsample(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Invalid(format!("fraction {fraction} not in (0, 1]")));
        }
        let k = (self.events.len() as f64 * fraction).floor() as usize;
        if k == 0 {
            return Err(Error::Empty(format!(
                "fraction {fraction} of {} events keeps nothing",
                self.events.len()
            )));
        }
        Ok(self.slice(0, k))
    }

    /// Concatenation of graphs over the same node table, kept chronological.
    pub fn concat(parts: &[&TemporalGraph]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("nothing to concatenate".into()))?;
        if parts
            .iter()
            .any(|p| !Arc::ptr_eq(&p.nodes, &first.nodes) && p.nodes != first.nodes)
        {
            return Err(Error::Invalid("graphs do not share a node table".into()));
        }
        let mut events: Vec<Event> = parts
            .iter()
            .flat_map(|p| p.events.iter().cloned())
            .collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(first.with_events(events))
    }

    /// Chronological batches; the last may be short.
    pub fn batches(&self, batch_size: usize) -> Result<std::slice::Chunks<'_, Event>> {
        if batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        Ok(self.events.chunks(batch_size))
    }

    /// Number of events each node takes part in.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes()];
        for e in &self.events {
            deg[e.user.index()] += 1;
            deg[e.item.index()] += 1;
        }
        deg
    }

    /// Drops events whose user has fewer than `min_user` interactions or whose
    /// item has fewer than `min_item`, then removes nodes left without events.
    /// Remaining nodes keep their relative order.
    pub fn filter_min_degree(&self, min_user: usize, min_item: usize) -> Result<Self> {
        let deg = self.degrees();
        let keep: Vec<&Event> = self
            .events
            .iter()
            .filter(|e| deg[e.user.index()] >= min_user && deg[e.item.index()] >= min_item)
            .collect();
        if keep.is_empty() {
            return Err(Error::Empty("degree filter removed every event".into()));
        }
        let mut used = vec![false; self.n_nodes()];
        for e in &keep {
            used[e.user.index()] = true;
            used[e.item.index()] = true;
        }
        let mut remap = vec![u32::MAX; self.n_nodes()];
        let mut user_keys = Vec::new();
        let mut item_keys = Vec::new();
        let mut features = Vec::new();
        for u in self.users() {
            if used[u.index()] {
                remap[u.index()] = user_keys.len() as u32;
                user_keys.push(self.node_key(u).to_string());
                features.push(self.node_features(u).to_vec());
            }
        }
        let n_users = user_keys.len() as u32;
        for i in self.items() {
            if used[i.index()] {
                remap[i.index()] = n_users + item_keys.len() as u32;
                item_keys.push(self.node_key(i).to_string());
                features.push(self.node_features(i).to_vec());
            }
        }
        let events = keep
            .into_iter()
            .map(|e| Event {
                user: NodeId(remap[e.user.index()]),
                item: NodeId(remap[e.item.index()]),
                time: e.time,
                features: e.features.clone(),
            })
            .collect();
        let table = NodeTable {
            user_keys,
            item_keys,
            features,
            vocab: self.nodes.vocab.clone(),
        };
        Self::new(self.name.clone(), table, events)
    }
}
