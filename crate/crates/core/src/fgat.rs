//! Feature graph attention network over transformed graphs.
//!
//! Graph nodes start from zero vectors and feature nodes from a learned
//! embedding table. Every layer runs four attention phases in a fixed order:
//! features → graph nodes, items → users, users → items, graph nodes →
//! features. Because node identity never enters the computation, one trained
//! encoder embeds any graph whose attribute tokens it knows.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{meta_field, Container};
use crate::numerics::{
    offsets_from_lengths, sigmoid, Activation, Mlp, Optimizer, OptimizerKind, ParameterSet, Tape,
    Tensor, Var,
};
use crate::transform::{StaticGraph, TransformedGraph};
use crate::vocab::Vocab;
use crate::{Error, Result};

const EMBEDDING: &str = "fgat.emb";
const KIND: &str = "fgat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FgatConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Share of static user–item edges hidden from message passing and used
    /// as positives during training.
    pub mask_fraction: f64,
}

impl Default for FgatConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            n_layers: 2,
            lr: 5e-3,
            optimizer: OptimizerKind::adam(),
            mask_fraction: 0.5,
        }
    }
}

/// The four message-passing phases of a layer, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    FeaturesToGraph,
    ItemsToUsers,
    UsersToItems,
    GraphToFeatures,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::FeaturesToGraph,
        Phase::ItemsToUsers,
        Phase::UsersToItems,
        Phase::GraphToFeatures,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Targets and sorted weighted neighbour lists of one phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhasePlan {
    pub targets: Vec<usize>,
    pub lengths: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Precomputed index structures for encoding one transformed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FgatPlan {
    pub n_nodes: usize,
    pub n_graph_nodes: usize,
    /// Embedding-table row of each feature node.
    pub feature_rows: Vec<usize>,
    pub phases: [PhasePlan; 4],
}

impl FgatPlan {
    pub fn new(model: &FgatModel, tg: &TransformedGraph) -> Result<Self> {
        let unknown = model.vocab.len();
        let feature_rows = tg
            .vocab
            .tokens()
            .iter()
            .map(|tok| model.vocab.get(tok).map_or(unknown, |r| r as usize))
            .collect();
        let mut phases: [PhasePlan; 4] = Default::default();
        let n_users = tg.n_users();
        let n_graph = tg.n_graph_nodes();
        for node in 0..tg.n_nodes() {
            let nb = tg.neighborhoods(node as u32)?;
            let mut push = |p: Phase, list: &[(u32, f64)]| {
                let plan = &mut phases[p.index()];
                let mut list = list.to_vec();
                list.sort_by_key(|&(v, _)| v);
                plan.targets.push(node);
                plan.lengths.push(list.len());
                plan.neighbors.extend(list.iter().map(|&(v, _)| v as usize));
                plan.weights.extend(list.iter().map(|&(_, a)| a));
            };
            if node < n_graph {
                push(Phase::FeaturesToGraph, &nb.feature);
                let phase = if node < n_users {
                    Phase::ItemsToUsers
                } else {
                    Phase::UsersToItems
                };
                push(phase, &nb.graph);
            } else {
                push(Phase::GraphToFeatures, &nb.graph);
            }
        }
        Ok(Self {
            n_nodes: tg.n_nodes(),
            n_graph_nodes: n_graph,
            feature_rows,
            phases,
        })
    }
}

/// Trainable encoder with its attribute vocabulary.
#[derive(Clone, Debug)]
pub struct FgatModel {
    pub config: FgatConfig,
    pub params: ParameterSet,
    /// Tokens with their own embedding row; others share the final row.
    pub vocab: Vocab,
}

/// Attention weights of every phase of every layer, for inspection.
#[derive(Clone, Debug, Default)]
pub struct FgatTrace {
    /// `[layer][phase]` → per-neighbour weights in plan order.
    pub attention: Vec<[Vec<f64>; 4]>,
}

fn block(layer: usize, phase: Phase, part: &str) -> String {
    format!("fgat.l{layer}.p{}.{part}", phase.index() + 1)
}

impl FgatModel {
    pub fn new(config: FgatConfig, vocab: Vocab, rng: &mut impl Rng) -> Result<Self> {
        if config.dim == 0 || config.n_layers == 0 {
            return Err(Error::Invalid(
                "F-GAT needs positive width and depth".into(),
            ));
        }
        if !(config.mask_fraction > 0.0 && config.mask_fraction < 1.0) {
            return Err(Error::Invalid("mask fraction must lie in (0, 1)".into()));
        }
        let d = config.dim;
        let mut params = ParameterSet::new();
        params.init_xavier(EMBEDDING, vocab.len() + 1, d, rng);
        for l in 0..config.n_layers {
            for p in Phase::ALL {
                for w in ["w1", "w2", "w5", "w6"] {
                    params.init_xavier(block(l, p, w), d, d, rng);
                }
                params.init_xavier(block(l, p, "w3"), 1, d, rng);
                params.init_xavier(block(l, p, "w4"), 3 * d, 1, rng);
                Mlp::init(
                    &mut params,
                    &block(l, p, "mlp"),
                    &[2 * d, d, d],
                    Activation::LeakyRelu,
                    rng,
                );
            }
        }
        Ok(Self {
            config,
            params,
            vocab,
        })
    }

    /// Vocabulary is the union of the pool's attribute tokens.
    pub fn for_pool(
        config: FgatConfig,
        pool: &[TransformedGraph],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let tokens: BTreeSet<&String> = pool.iter().flat_map(|g| g.vocab.tokens()).collect();
        let mut vocab = Vocab::new();
        for t in tokens {
            vocab.intern(t);
        }
        Self::new(config, vocab, rng)
    }

    pub fn with_params(&self, params: ParameterSet) -> Self {
        Self {
            config: self.config.clone(),
            params,
            vocab: self.vocab.clone(),
        }
    }

    /// Layer-0 matrix: zeros for graph nodes, embedding rows for features.
    pub fn init_embeddings(&self, tape: &mut Tape, plan: &FgatPlan) -> Result<Var> {
        let d = self.config.dim;
        let zeros = tape.constant(Tensor::zeros(&[plan.n_graph_nodes, d]))?;
        if plan.feature_rows.is_empty() {
            return Ok(zeros);
        }
        let emb = tape.param(&self.params, EMBEDDING)?;
        let feats = tape.gather_rows(emb, plan.feature_rows.clone().into())?;
        Ok(tape.concat_rows(&[zeros, feats])?)
    }

    /// The attention block: targets `h_u` (`[n, d]`) attend over their
    /// neighbour segments `h_v` (`[Σ lengths, d]`) with edge weights `a`.
    /// Returns the new target rows and the attention weights.
    #[allow(clippy::too_many_arguments)]
    pub fn g_theta(
        &self,
        tape: &mut Tape,
        layer: usize,
        phase: Phase,
        h_u: Var,
        h_v: Var,
        a: &[f64],
        lengths: &[usize],
    ) -> Result<(Var, Option<Var>)> {
        let d = self.config.dim;
        let p = |tape: &mut Tape, part: &str| tape.param(&self.params, &block(layer, phase, part));
        let w5 = p(tape, "w5")?;
        let own = tape.matmul(h_u, w5)?;
        let n_pairs: usize = lengths.iter().sum();
        let (agg, alpha) = if n_pairs == 0 {
            (tape.constant(Tensor::zeros(&[lengths.len(), d]))?, None)
        } else {
            let seg: Vec<usize> = lengths
                .iter()
                .enumerate()
                .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
                .collect();
            let seg: Rc<[usize]> = seg.into();
            let (w1, w2, w3, w4, w6) = (
                p(tape, "w1")?,
                p(tape, "w2")?,
                p(tape, "w3")?,
                p(tape, "w4")?,
                p(tape, "w6")?,
            );
            let hu_rep = tape.gather_rows(h_u, seg)?;
            let m1 = tape.matmul(hu_rep, w1)?;
            let m2 = tape.matmul(h_v, w2)?;
            let a_col = tape.constant(Tensor::column(a))?;
            let m3 = tape.matmul(a_col, w3)?;
            let msg = tape.concat_cols(&[m1, m2, m3])?;
            let msg = tape.leaky_relu(msg, crate::numerics::nn::LEAKY_SLOPE)?;
            let score = tape.matmul(msg, w4)?;
            let offsets = offsets_from_lengths(lengths.iter().copied());
            let alpha = tape.segment_softmax(score, offsets.clone())?;
            let values = tape.matmul(h_v, w6)?;
            (
                tape.segment_weighted_sum(alpha, values, offsets)?,
                Some(alpha),
            )
        };
        let x = tape.concat_cols(&[own, agg])?;
        let mlp = Mlp::named(
            &block(layer, phase, "mlp"),
            &[2 * d, d, d],
            Activation::LeakyRelu,
        );
        Ok((mlp.forward(tape, &self.params, x)?, alpha))
    }

    /// Runs one phase against the current matrix `h`, returning the matrix
    /// with the phase's target rows replaced.
    #[allow(clippy::too_many_arguments)]
    fn run_phase(
        &self,
        tape: &mut Tape,
        plan: &FgatPlan,
        h: Var,
        sources: Var,
        layer: usize,
        phase: Phase,
        trace: Option<&mut Vec<f64>>,
    ) -> Result<Var> {
        let pp = &plan.phases[phase.index()];
        if pp.targets.is_empty() {
            return Ok(h);
        }
        let targets: Rc<[usize]> = pp.targets.clone().into();
        let h_u = tape.gather_rows(h, targets.clone())?;
        let h_v = tape.gather_rows(sources, pp.neighbors.clone().into())?;
        let (out, alpha) = self.g_theta(tape, layer, phase, h_u, h_v, &pp.weights, &pp.lengths)?;
        if let (Some(t), Some(a)) = (trace, alpha) {
            *t = tape.value(a).data().to_vec();
        }
        Ok(tape.scatter_rows(h, out, targets)?)
    }

    /// One layer: phase 1 reads the previous layer's matrix, phases 2–4 read
    /// the matrix as updated so far within this layer.
    pub fn forward_layer(
        &self,
        tape: &mut Tape,
        plan: &FgatPlan,
        h_prev: Var,
        layer: usize,
        mut trace: Option<&mut [Vec<f64>; 4]>,
    ) -> Result<Var> {
        let mut h = h_prev;
        for phase in Phase::ALL {
            let sources = if phase == Phase::FeaturesToGraph {
                h_prev
            } else {
                h
            };
            let slot = trace.as_deref_mut().map(|t| &mut t[phase.index()]);
            h = self.run_phase(tape, plan, h, sources, layer, phase, slot)?;
        }
        Ok(h)
    }

    /// Final-layer matrix on the tape, `[n_nodes, dim]`.
    pub fn encode_on(
        &self,
        tape: &mut Tape,
        plan: &FgatPlan,
        mut trace: Option<&mut FgatTrace>,
    ) -> Result<Var> {
        let mut h = self.init_embeddings(tape, plan)?;
        for l in 0..self.config.n_layers {
            let mut slots: [Vec<f64>; 4] = Default::default();
            h = self.forward_layer(tape, plan, h, l, trace.is_some().then_some(&mut slots))?;
            if let Some(t) = trace.as_deref_mut() {
                t.attention.push(slots);
            }
        }
        Ok(h)
    }

    pub fn encode(&self, tg: &TransformedGraph) -> Result<NodeEmbeddings> {
        let plan = FgatPlan::new(self, tg)?;
        let mut tape = Tape::new();
        let h = self.encode_on(&mut tape, &plan, None)?;
        Ok(NodeEmbeddings {
            graph: tg.name.clone(),
            n_users: tg.n_users(),
            n_items: tg.n_items(),
            vectors: tape.value(h).clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new(KIND, json!({"config": self.config, "vocab": self.vocab}));
        for (name, t) in self.params.iter() {
            c.push(name.clone(), t.clone());
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path, KIND)?;
        let config: FgatConfig = meta_field(&c.meta, "config")?;
        let vocab: Vocab = meta_field(&c.meta, "vocab")?;
        let mut params = ParameterSet::new();
        for (name, t) in &c.arrays {
            params.insert(name.clone(), t.clone());
        }
        let emb = params
            .get(EMBEDDING)
            .ok_or_else(|| Error::Checkpoint("missing embedding table".into()))?;
        if emb.rows() != vocab.len() + 1 {
            return Err(Error::Checkpoint(
                "embedding rows do not match vocabulary".into(),
            ));
        }
        Ok(Self {
            config,
            params,
            vocab,
        })
    }
}

/// Final-layer vectors of every transformed-graph node (graph nodes first,
/// then features).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub graph: String,
    pub n_users: usize,
    pub n_items: usize,
    pub vectors: Tensor,
}

impl NodeEmbeddings {
    pub fn n_graph_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn vector(&self, node: usize) -> &[f64] {
        self.vectors.row_slice(node)
    }
}

/// `σ(h_u · h_v)`.
pub fn score_link(h_u: &[f64], h_v: &[f64]) -> Result<f64> {
    if h_u.len() != h_v.len() {
        return Err(Error::Invalid(format!(
            "embedding widths differ: {} vs {}",
            h_u.len(),
            h_v.len()
        )));
    }
    Ok(sigmoid(h_u.iter().zip(h_v).map(|(a, b)| a * b).sum()))
}

/// A transformed graph with a share of its user–item edges hidden.
#[derive(Clone, Debug)]
pub struct MaskedGraph {
    pub visible: TransformedGraph,
    /// Hidden `(user, item)` pairs.
    pub masked: Vec<(u32, u32)>,
}

/// Hides `fraction` of the distinct user–item pairs (at least one, leaving at
/// least one) and renormalises the remaining weights per source node.
pub fn mask_edges(tg: &TransformedGraph, fraction: f64, rng: &mut impl Rng) -> Result<MaskedGraph> {
    let s = &tg.static_graph;
    let mut pairs: Vec<(u32, u32)> = (0..s.n_users as u32)
        .flat_map(|u| s.adjacency[u as usize].iter().map(move |&(v, _)| (u, v)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Invalid(format!(
            "graph {} has {} static edges, masking needs at least 2",
            tg.name,
            pairs.len()
        )));
    }
    pairs.shuffle(rng);
    let n_mask = ((pairs.len() as f64 * fraction).round() as usize).clamp(1, pairs.len() - 1);
    let masked: Vec<(u32, u32)> = pairs[..n_mask].to_vec();
    let hidden: BTreeSet<(u32, u32)> = masked.iter().copied().collect();
    let mut adjacency = vec![Vec::new(); s.n_nodes()];
    for (u, adj) in s.adjacency.iter().enumerate() {
        let u = u as u32;
        let kept: Vec<(u32, f64)> = adj
            .iter()
            .copied()
            .filter(|&(v, _)| !hidden.contains(&(u.min(v), u.max(v))))
            .collect();
        let total: f64 = kept.iter().map(|&(_, a)| a).sum();
        adjacency[u as usize] = kept.into_iter().map(|(v, a)| (v, a / total)).collect();
    }
    let visible = tg.with_static(StaticGraph {
        n_users: s.n_users,
        n_items: s.n_items,
        adjacency,
    });
    Ok(MaskedGraph { visible, masked })
}

/// Uniform user–item pairs that are not edges of `s`, one per requested.
pub fn sample_non_edges(
    s: &StaticGraph,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(u32, u32)>> {
    let edges: BTreeSet<(u32, u32)> = (0..s.n_users as u32)
        .flat_map(|u| s.adjacency[u as usize].iter().map(move |&(v, _)| (u, v)))
        .collect();
    if edges.len() >= s.n_users * s.n_items {
        return Err(Error::Invalid(
            "complete bipartite graph has no non-edges".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..s.n_users as u32);
        let v = s.n_users as u32 + rng.gen_range(0..s.n_items as u32);
        if !edges.contains(&(u, v)) {
            out.push((u, v));
        }
    }
    Ok(out)
}

/// One masked-link step on `tg`; returns the loss.
pub fn train_step(
    model: &mut FgatModel,
    optimizer: &mut Optimizer,
    tg: &TransformedGraph,
    rng: &mut impl Rng,
) -> Result<f64> {
    let MaskedGraph { visible, masked } = mask_edges(tg, model.config.mask_fraction, rng)?;
    let negatives = sample_non_edges(&tg.static_graph, masked.len(), rng)?;
    let plan = FgatPlan::new(model, &visible)?;
    let mut tape = Tape::new();
    let h = model.encode_on(&mut tape, &plan, None)?;
    let pairs: Vec<(u32, u32)> = masked.iter().chain(&negatives).copied().collect();
    let left: Rc<[usize]> = pairs
        .iter()
        .map(|p| p.0 as usize)
        .collect::<Vec<_>>()
        .into();
    let right: Rc<[usize]> = pairs
        .iter()
        .map(|p| p.1 as usize)
        .collect::<Vec<_>>()
        .into();
    let hl = tape.gather_rows(h, left)?;
    let hr = tape.gather_rows(h, right)?;
    let prod = tape.mul(hl, hr)?;
    let dot = tape.group_row_sum(prod, 1)?;
    let prob = tape.sigmoid(dot)?;
    let labels: Vec<f64> = (0..pairs.len())
        .map(|k| if k < masked.len() { 1.0 } else { 0.0 })
        .collect();
    let loss = tape.bce(prob, labels.into())?;
    let grads = tape.backward(loss)?;
    let mut all: BTreeMap<String, Tensor> =
        grads.iter().map(|(n, g)| (n.clone(), g.clone())).collect();
    for (name, t) in model.params.iter() {
        all.entry(name.clone())
            .or_insert_with(|| Tensor::zeros(t.shape()));
    }
    optimizer.step(
        &mut model.params,
        &crate::numerics::Gradients::from_map(all),
    )?;
    Ok(tape.value(loss).data()[0])
}

/// Trains on a pool of graphs, drawing one graph uniformly per epoch.
/// Returns the per-epoch losses.
pub fn train_fgat(
    model: &mut FgatModel,
    optimizer: &mut Optimizer,
    pool: &[TransformedGraph],
    epochs: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::Empty("F-GAT training pool is empty".into()));
    }
    (0..epochs)
        .map(|_| {
            let g = &pool[rng.gen_range(0..pool.len())];
            train_step(model, optimizer, g, rng)
        })
        .collect()
}

/// Rejects a pool that contains any of the named graphs.
pub fn check_pool_excludes(pool: &[TransformedGraph], excluded: &[&str]) -> Result<()> {
    match pool.iter().find(|g| excluded.contains(&g.name.as_str())) {
        Some(g) => Err(Error::Invalid(format!(
            "graph {} may not be in the F-GAT pool",
            g.name
        ))),
        None => Ok(()),
    }
}
