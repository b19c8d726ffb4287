//! Static transformation of a temporal interaction graph.
//!
//! Repeated interactions collapse into directed edges weighted by
//! `a_uv = #(u, v) / #(u, ·)`, and every categorical attribute becomes a
//! virtual feature node linked to the graph nodes that carry it. The result
//! has no timestamps; feature nodes are identified by their vocabulary token,
//! which is what makes them common to different graphs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{meta_field, Container};
use crate::graph::{NodeId, TemporalGraph};
use crate::numerics::Tensor;
use crate::vocab::Vocab;
use crate::{Error, Result};

/// Directed weighted graph over users and items.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGraph {
    pub n_users: usize,
    pub n_items: usize,
    /// Outgoing `(target, a_uv)` per node, sorted by target id.
    pub adjacency: Vec<Vec<(u32, f64)>>,
}

/// Interaction multiplicities of distinct user–item pairs.
pub type PairCounts = BTreeMap<(u32, u32), usize>;

pub fn pair_counts(g: &TemporalGraph) -> PairCounts {
    let mut counts = PairCounts::new();
    for e in g.events() {
        *counts.entry((e.user.0, e.item.0)).or_default() += 1;
    }
    counts
}

impl StaticGraph {
    pub fn from_counts(n_users: usize, n_items: usize, counts: &PairCounts) -> Self {
        let n = n_users + n_items;
        let mut totals = vec![0usize; n];
        for (&(u, i), &c) in counts {
            totals[u as usize] += c;
            totals[i as usize] += c;
        }
        let mut adjacency = vec![Vec::new(); n];
        for (&(u, i), &c) in counts {
            adjacency[u as usize].push((i, c as f64 / totals[u as usize] as f64));
            adjacency[i as usize].push((u, c as f64 / totals[i as usize] as f64));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(v, _)| v);
        }
        Self {
            n_users,
            n_items,
            adjacency,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn weight(&self, u: u32, v: u32) -> Option<f64> {
        let adj = self.adjacency.get(u as usize)?;
        adj.binary_search_by_key(&v, |&(t, _)| t)
            .ok()
            .map(|k| adj[k].1)
    }
}

/// Frequency-weighted directed graph of all interactions in `g`.
pub fn build_static(g: &TemporalGraph) -> StaticGraph {
    StaticGraph::from_counts(g.n_users(), g.n_items(), &pair_counts(g))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    User,
    Item,
    UserFeature,
    ItemFeature,
}

/// Graph nodes plus virtual feature nodes.
///
/// Node ids: users `0..n_users`, items up to `n_graph_nodes()`, then one node
/// per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedGraph {
    pub name: String,
    pub static_graph: StaticGraph,
    pub vocab: Vocab,
    /// Per graph node: attached feature ids, sorted.
    pub node_features: Vec<Vec<u32>>,
    /// Per feature: attached graph nodes, sorted.
    pub feature_members: Vec<Vec<u32>>,
}

/// Neighbourhoods of a transformed-graph node. Weights are the `a` terms fed
/// to the attention block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Neighborhoods {
    pub graph: Vec<(u32, f64)>,
    pub feature: Vec<(u32, f64)>,
}

impl TransformedGraph {
    pub fn n_users(&self) -> usize {
        self.static_graph.n_users
    }

    pub fn n_items(&self) -> usize {
        self.static_graph.n_items
    }

    pub fn n_graph_nodes(&self) -> usize {
        self.static_graph.n_nodes()
    }

    pub fn n_features(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_graph_nodes() + self.n_features()
    }

    pub fn feature_node(&self, f: u32) -> u32 {
        (self.n_graph_nodes() + f as usize) as u32
    }

    pub fn n_feature_edges(&self) -> usize {
        self.node_features.iter().map(Vec::len).sum()
    }

    pub fn kind(&self, node: u32) -> Result<NodeKind> {
        let n = node as usize;
        if n < self.n_users() {
            Ok(NodeKind::User)
        } else if n < self.n_graph_nodes() {
            Ok(NodeKind::Item)
        } else if n < self.n_nodes() {
            let tok = self
                .vocab
                .token((n - self.n_graph_nodes()) as u32)
                .unwrap_or("");
            if tok.starts_with("i:") {
                Ok(NodeKind::ItemFeature)
            } else {
                Ok(NodeKind::UserFeature)
            }
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    /// Graph and feature neighbourhoods of any node.
    ///
    /// Feature edge weights are `1/|F_u|` from a graph node and `1/|N_f|` from
    /// a feature node, so weights out of every node sum to one.
    pub fn neighborhoods(&self, node: u32) -> Result<Neighborhoods> {
        let n = node as usize;
        if n < self.n_graph_nodes() {
            let feats = &self.node_features[n];
            let w = 1.0 / feats.len().max(1) as f64;
            Ok(Neighborhoods {
                graph: self.static_graph.adjacency[n].clone(),
                feature: feats.iter().map(|&f| (self.feature_node(f), w)).collect(),
            })
        } else if n < self.n_nodes() {
            let members = &self.feature_members[n - self.n_graph_nodes()];
            let w = 1.0 / members.len().max(1) as f64;
            Ok(Neighborhoods {
                graph: members.iter().map(|&v| (v, w)).collect(),
                feature: Vec::new(),
            })
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    /// Same graph with a different set of static edges.
    pub fn with_static(&self, static_graph: StaticGraph) -> Self {
        Self {
            static_graph,
            ..self.clone()
        }
    }
}

/// Adds feature nodes and feature edges to a static graph.
pub fn build_transformed(
    name: &str,
    s: &StaticGraph,
    node_features: &[Vec<u32>],
    vocab: &Vocab,
) -> Result<TransformedGraph> {
    if node_features.len() != s.n_nodes() {
        return Err(Error::Invalid(format!(
            "{} feature sets for {} nodes",
            node_features.len(),
            s.n_nodes()
        )));
    }
    let mut feature_members = vec![Vec::new(); vocab.len()];
    let mut sorted = Vec::with_capacity(node_features.len());
    for (v, feats) in node_features.iter().enumerate() {
        let mut fs = feats.clone();
        fs.sort_unstable();
        fs.dedup();
        for &f in &fs {
            feature_members
                .get_mut(f as usize)
                .ok_or_else(|| Error::Invalid(format!("feature id {f} outside vocabulary")))?
                .push(v as u32);
        }
        sorted.push(fs);
    }
    Ok(TransformedGraph {
        name: name.to_string(),
        static_graph: s.clone(),
        vocab: vocab.clone(),
        node_features: sorted,
        feature_members,
    })
}

/// Static transformation of a whole temporal graph.
pub fn transform(g: &TemporalGraph) -> Result<TransformedGraph> {
    if g.is_empty() {
        return Err(Error::Empty(format!(
            "{}: no events to transform",
            g.name()
        )));
    }
    build_transformed(g.name(), &build_static(g), &g.nodes().features, g.vocab())
}

/// Checks that `v` is a graph node of `g`.
pub fn graph_node(g: &TransformedGraph, v: NodeId) -> Result<u32> {
    if v.index() < g.n_graph_nodes() {
        Ok(v.0)
    } else {
        Err(Error::UnknownNode(v.0))
    }
}

const KIND: &str = "transformed_graph";

pub fn save_transformed(g: &TransformedGraph, path: &Path) -> Result<()> {
    let mut c = Container::new(KIND, json!({}));
    write_into(g, &mut c, "");
    c.save(path)
}

pub fn load_transformed(path: &Path) -> Result<TransformedGraph> {
    read_from(&Container::load(path, KIND)?, "")
}

/// Stores `g` in `c` under array-name and meta-key prefix `prefix`.
pub(crate) fn write_into(g: &TransformedGraph, c: &mut Container, prefix: &str) {
    c.meta[format!("{prefix}graph")] = json!({
        "name": g.name,
        "n_users": g.n_users(),
        "n_items": g.n_items(),
        "vocab": g.vocab,
    });
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    for (u, adj) in g.static_graph.adjacency.iter().enumerate() {
        for &(v, a) in adj {
            src.push(u as f64);
            dst.push(v as f64);
            w.push(a);
        }
    }
    let (fv, ff): (Vec<f64>, Vec<f64>) = g
        .node_features
        .iter()
        .enumerate()
        .flat_map(|(v, fs)| fs.iter().map(move |&f| (v as f64, f as f64)))
        .unzip();
    for (name, data) in [
        ("static.src", src),
        ("static.dst", dst),
        ("static.weight", w),
        ("feature.node", fv),
        ("feature.id", ff),
    ] {
        c.push(format!("{prefix}{name}"), Tensor::row(&data));
    }
}

pub(crate) fn read_from(c: &Container, prefix: &str) -> Result<TransformedGraph> {
    let meta = c
        .meta
        .get(format!("{prefix}graph"))
        .ok_or_else(|| Error::Checkpoint("missing transformed-graph metadata".into()))?;
    let n_users: usize = meta_field(meta, "n_users")?;
    let n_items: usize = meta_field(meta, "n_items")?;
    let vocab: Vocab = meta_field(meta, "vocab")?;
    let name: String = meta_field(meta, "name")?;
    let array = |n: &str| c.array(&format!("{prefix}{n}"));
    let n_nodes = n_users + n_items;
    let index = |x: f64| -> Result<usize> {
        let i = x as usize;
        if x < 0.0 || x.fract() != 0.0 || i >= n_nodes {
            return Err(Error::Checkpoint(format!("node index {x} out of range")));
        }
        Ok(i)
    };
    let mut adjacency = vec![Vec::new(); n_nodes];
    let (src, dst, w) = (
        array("static.src")?,
        array("static.dst")?,
        array("static.weight")?,
    );
    if src.len() != dst.len() || src.len() != w.len() {
        return Err(Error::Checkpoint(
            "static edge arrays differ in length".into(),
        ));
    }
    for k in 0..src.len() {
        adjacency[index(src.data()[k])?].push((index(dst.data()[k])? as u32, w.data()[k]));
    }
    let mut node_features = vec![Vec::new(); n_nodes];
    let (fv, ff) = (array("feature.node")?, array("feature.id")?);
    if fv.len() != ff.len() {
        return Err(Error::Checkpoint(
            "feature edge arrays differ in length".into(),
        ));
    }
    for k in 0..fv.len() {
        node_features[index(fv.data()[k])?].push(ff.data()[k] as u32);
    }
    let s = StaticGraph {
        n_users,
        n_items,
        adjacency,
    };
    build_transformed(&name, &s, &node_features, &vocab)
}
