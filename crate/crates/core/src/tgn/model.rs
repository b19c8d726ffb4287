use std::rc::Rc;

use rand::Rng;

use super::config::TgnConfig;
use super::memory::{MemoryState, RawMessage};
use crate::graph::{NeighborIndex, NodeId, TemporalGraph};
use crate::numerics::{
    offsets_from_lengths, Activation, GruCell, Linear, Mlp, ParameterSet, Tape, Tensor, Var,
};
use crate::vocab::Vocab;
use crate::{Error, Result};

const FEATURE_EMB: &str = "tgn.feat.emb";
const FEATURE_PROJ: &str = "tgn.feat.proj";
const TIME_FREQ: &str = "tgn.time.freq";
const TIME_PHASE: &str = "tgn.time.phase";

/// Temporal graph network: per-node memory, a GRU memory updater, temporal
/// multi-head attention over recent neighbours and an MLP link decoder.
#[derive(Clone, Debug)]
pub struct TgnModel {
    pub config: TgnConfig,
    pub params: ParameterSet,
    /// Attribute tokens with an embedding row; unseen tokens share the extra
    /// final row.
    pub vocab: Vocab,
}

/// A query for the embedding of `node` as of time `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query {
    pub node: NodeId,
    pub time: f64,
}

/// Per-graph lookup structures used by the forward pass.
#[derive(Clone, Debug)]
pub struct TgnContext {
    pub index: NeighborIndex,
    n_users: usize,
    n_items: usize,
    /// Model embedding rows of every node's attributes, flattened.
    feature_rows: Vec<usize>,
    feature_lengths: Vec<usize>,
}

impl TgnContext {
    /// `history` is every event the model may look back on, chronological.
    pub fn new(model: &TgnModel, history: &TemporalGraph) -> Self {
        let nodes = history.nodes();
        let unknown = model.vocab.len();
        let mut feature_rows = Vec::new();
        let mut feature_lengths = Vec::with_capacity(nodes.n_nodes());
        for feats in &nodes.features {
            feature_lengths.push(feats.len());
            feature_rows.extend(feats.iter().map(|&f| {
                nodes
                    .vocab
                    .token(f)
                    .and_then(|tok| model.vocab.get(tok))
                    .map_or(unknown, |r| r as usize)
            }));
        }
        Self {
            index: NeighborIndex::build(history.events(), nodes.n_nodes()),
            n_users: nodes.n_users(),
            n_items: nodes.n_items(),
            feature_rows,
            feature_lengths,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }
}

fn rc(v: Vec<usize>) -> Rc<[usize]> {
    v.into()
}

fn node_rows(nodes: impl IntoIterator<Item = NodeId>) -> Rc<[usize]> {
    nodes
        .into_iter()
        .map(NodeId::index)
        .collect::<Vec<_>>()
        .into()
}

impl TgnModel {
    pub fn new(config: TgnConfig, vocab: Vocab, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParameterSet::new();
        params.init_xavier(FEATURE_EMB, vocab.len() + 1, c.feature_dim, rng);
        Linear::init(
            &mut params,
            FEATURE_PROJ,
            c.feature_dim,
            c.memory_dim,
            false,
            rng,
        );
        // geometric frequency ladder from 1 down to 1e-4
        let freq: Vec<f64> = (0..c.time_dim)
            .map(|i| {
                let span = (c.time_dim.max(2) - 1) as f64;
                10f64.powf(-4.0 * i as f64 / span)
            })
            .collect();
        params.insert(TIME_FREQ, Tensor::row(&freq));
        params.init_zeros(TIME_PHASE, &[1, c.time_dim]);
        let msg_in = 2 * c.memory_dim + c.time_dim + c.edge_dim;
        Mlp::init(
            &mut params,
            "tgn.msg",
            &[msg_in, c.message_dim, c.message_dim],
            Activation::LeakyRelu,
            rng,
        );
        GruCell::init(&mut params, "tgn.gru", c.message_dim, c.memory_dim, rng);
        for l in 0..c.n_layers {
            let q_in = c.memory_dim + c.time_dim;
            let kv_in = c.memory_dim + c.time_dim + c.edge_dim;
            Linear::init(
                &mut params,
                &format!("tgn.attn{l}.q"),
                q_in,
                c.memory_dim,
                false,
                rng,
            );
            Linear::init(
                &mut params,
                &format!("tgn.attn{l}.k"),
                kv_in,
                c.memory_dim,
                false,
                rng,
            );
            Linear::init(
                &mut params,
                &format!("tgn.attn{l}.v"),
                kv_in,
                c.memory_dim,
                false,
                rng,
            );
            Mlp::init(
                &mut params,
                &format!("tgn.combine{l}"),
                &[2 * c.memory_dim, c.memory_dim, c.memory_dim],
                Activation::Relu,
                rng,
            );
        }
        Mlp::init(
            &mut params,
            "tgn.decoder",
            &[2 * c.memory_dim, c.decoder_hidden, 1],
            Activation::Relu,
            rng,
        );
        Ok(Self {
            config,
            params,
            vocab,
        })
    }

    /// Same architecture with different parameter values.
    pub fn with_params(&self, params: ParameterSet) -> Self {
        Self {
            config: self.config.clone(),
            params,
            vocab: self.vocab.clone(),
        }
    }

    fn msg_mlp(&self) -> Mlp {
        let c = &self.config;
        Mlp::named(
            "tgn.msg",
            &[
                2 * c.memory_dim + c.time_dim + c.edge_dim,
                c.message_dim,
                c.message_dim,
            ],
            Activation::LeakyRelu,
        )
    }

    fn gru(&self) -> GruCell {
        GruCell::named("tgn.gru", self.config.message_dim, self.config.memory_dim)
    }

    fn decoder(&self) -> Mlp {
        let c = &self.config;
        Mlp::named(
            "tgn.decoder",
            &[2 * c.memory_dim, c.decoder_hidden, 1],
            Activation::Relu,
        )
    }

    fn combine(&self, layer: usize) -> Mlp {
        let d = self.config.memory_dim;
        Mlp::named(
            &format!("tgn.combine{layer}"),
            &[2 * d, d, d],
            Activation::Relu,
        )
    }

    /// `cos(Δt·ω + φ)` for each entry of `dt`, shape `[len, time_dim]`.
    pub fn time_encode(&self, tape: &mut Tape, dt: &[f64]) -> Result<Var> {
        let col = tape.constant(Tensor::column(dt))?;
        let w = tape.param(&self.params, TIME_FREQ)?;
        let phase = tape.param(&self.params, TIME_PHASE)?;
        let x = tape.matmul(col, w)?;
        let x = tape.add(x, phase)?;
        Ok(tape.cos(x)?)
    }

    /// Projected mean attribute embedding of every node, `[n_nodes, memory_dim]`.
    /// Nodes without attributes get zeros.
    pub fn node_features(&self, tape: &mut Tape, ctx: &TgnContext) -> Result<Var> {
        let emb = tape.param(&self.params, FEATURE_EMB)?;
        let proj = Linear::named(
            FEATURE_PROJ,
            self.config.feature_dim,
            self.config.memory_dim,
            false,
        );
        if ctx.feature_rows.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[ctx.n_nodes(), self.config.memory_dim]))?);
        }
        let rows = tape.gather_rows(emb, rc(ctx.feature_rows.clone()))?;
        let weights: Vec<f64> = ctx
            .feature_lengths
            .iter()
            .flat_map(|&n| std::iter::repeat_n(1.0 / n as f64, n))
            .collect();
        let weights = tape.constant(Tensor::column(&weights))?;
        let offsets = offsets_from_lengths(ctx.feature_lengths.iter().copied());
        let mean = tape.segment_weighted_sum(weights, rows, offsets)?;
        Ok(proj.forward(tape, &self.params, mean)?)
    }

    /// Raw-message encodings `MSG(m_u ‖ m_v ‖ φ(Δt) ‖ x_uv)` for
    /// `(node, raw message)` pairs against the memory matrix `memory`
    /// (`[n_nodes, memory_dim]`), in input order.
    pub fn messages(
        &self,
        tape: &mut Tape,
        memory: Var,
        last_update: &[f64],
        pending: &[(NodeId, RawMessage)],
    ) -> Result<Var> {
        let c = &self.config;
        for (n, m) in pending {
            if m.edge.len() != c.edge_dim {
                return Err(Error::Invalid(format!(
                    "edge features of width {} but model expects {}",
                    m.edge.len(),
                    c.edge_dim
                )));
            }
            if m.time < last_update[n.index()] {
                return Err(Error::TimeRegression(format!(
                    "message at {} precedes last update {} of node {}",
                    m.time,
                    last_update[n.index()],
                    n.0
                )));
            }
        }
        let own = tape.gather_rows(memory, node_rows(pending.iter().map(|p| p.0)))?;
        let other = tape.gather_rows(memory, node_rows(pending.iter().map(|p| p.1.other)))?;
        let dt: Vec<f64> = pending
            .iter()
            .map(|(n, m)| m.time - last_update[n.index()])
            .collect();
        let te = self.time_encode(tape, &dt)?;
        let mut parts = vec![own, other, te];
        if c.edge_dim > 0 {
            let edges: Vec<f64> = pending
                .iter()
                .flat_map(|p| p.1.edge.iter().copied())
                .collect();
            parts.push(tape.constant(Tensor::new(&[pending.len(), c.edge_dim], edges)?)?);
        }
        let msg_in = tape.concat_cols(&parts)?;
        Ok(self.msg_mlp().forward(tape, &self.params, msg_in)?)
    }

    /// GRU update of each pending node's memory row with its message.
    pub fn update_rows(
        &self,
        tape: &mut Tape,
        memory: Var,
        last_update: &[f64],
        pending: &[(NodeId, RawMessage)],
    ) -> Result<Var> {
        let msg = self.messages(tape, memory, last_update, pending)?;
        let own = tape.gather_rows(memory, node_rows(pending.iter().map(|p| p.0)))?;
        Ok(self.gru().forward(tape, &self.params, msg, own)?)
    }

    /// Full memory matrix on the tape with all pending messages of `state`
    /// applied. Also returns the updated nodes, their new rows and times, for
    /// committing after the step.
    pub fn apply_pending(
        &self,
        tape: &mut Tape,
        state: &MemoryState,
    ) -> Result<(Var, PendingUpdate)> {
        let base = tape.constant(state.memory().clone())?;
        let pending = state.pending_list();
        if pending.is_empty() {
            return Ok((base, PendingUpdate::default()));
        }
        let rows = self.update_rows(tape, base, state.last_updates(), &pending)?;
        let nodes: Vec<NodeId> = pending.iter().map(|p| p.0).collect();
        let full = tape.scatter_rows(base, rows, node_rows(nodes.iter().copied()))?;
        let times = pending.iter().map(|p| p.1.time).collect();
        Ok((
            full,
            PendingUpdate {
                nodes,
                rows: Some(rows),
                times,
            },
        ))
    }

    /// Applies and commits pending messages without building gradients.
    pub fn flush(&self, state: &mut MemoryState) -> Result<()> {
        if !state.has_pending() {
            return Ok(());
        }
        let mut tape = Tape::new();
        let (_, upd) = self.apply_pending(&mut tape, state)?;
        upd.commit(&tape, state);
        Ok(())
    }

    /// Layer-0 representations `memory + projected attributes` for all nodes.
    pub fn base_embeddings(&self, tape: &mut Tape, memory: Var, ctx: &TgnContext) -> Result<Var> {
        let x = self.node_features(tape, ctx)?;
        Ok(tape.add(memory, x)?)
    }

    /// Embeddings at layer `layer` for each query, `[queries, memory_dim]`.
    /// `h0` holds the layer-0 rows of all nodes.
    pub fn embed(
        &self,
        tape: &mut Tape,
        h0: Var,
        ctx: &TgnContext,
        queries: &[Query],
        layer: usize,
    ) -> Result<Var> {
        if layer == 0 {
            return Ok(tape.gather_rows(h0, node_rows(queries.iter().map(|q| q.node)))?);
        }
        let c = &self.config;
        let l = layer - 1;
        let h_self = self.embed(tape, h0, ctx, queries, l)?;
        let mut lengths = Vec::with_capacity(queries.len());
        let mut nbr_queries = Vec::new();
        let mut pair_query = Vec::new();
        let mut dts = Vec::new();
        let mut edges = Vec::new();
        for (qi, q) in queries.iter().enumerate() {
            let nbrs = ctx
                .index
                .temporal_neighbors(q.node, q.time, c.n_neighbors)?;
            lengths.push(nbrs.len());
            for e in nbrs {
                nbr_queries.push(Query {
                    node: e.neighbor,
                    time: q.time,
                });
                pair_query.push(qi);
                dts.push(q.time - e.time);
                edges.extend_from_slice(ctx.index.edge_features(e.ordinal));
            }
        }
        let agg = if nbr_queries.is_empty() {
            tape.constant(Tensor::zeros(&[queries.len(), c.memory_dim]))?
        } else {
            if ctx.index.edge_dim() != c.edge_dim {
                return Err(Error::Invalid(format!(
                    "graph has {} edge features but model expects {}",
                    ctx.index.edge_dim(),
                    c.edge_dim
                )));
            }
            let h_nbr = self.embed(tape, h0, ctx, &nbr_queries, l)?;
            let te_nbr = self.time_encode(tape, &dts)?;
            let te_self = self.time_encode(tape, &vec![0.0; queries.len()])?;
            let q_in = tape.concat_cols(&[h_self, te_self])?;
            let mut kv = vec![h_nbr, te_nbr];
            if c.edge_dim > 0 {
                kv.push(tape.constant(Tensor::new(&[nbr_queries.len(), c.edge_dim], edges)?)?);
            }
            let kv_in = tape.concat_cols(&kv)?;
            let d = c.memory_dim;
            let wq = Linear::named(&format!("tgn.attn{l}.q"), d + c.time_dim, d, false);
            let wk = Linear::named(
                &format!("tgn.attn{l}.k"),
                d + c.time_dim + c.edge_dim,
                d,
                false,
            );
            let wv = Linear::named(
                &format!("tgn.attn{l}.v"),
                d + c.time_dim + c.edge_dim,
                d,
                false,
            );
            let q = wq.forward(tape, &self.params, q_in)?;
            let k = wk.forward(tape, &self.params, kv_in)?;
            let v = wv.forward(tape, &self.params, kv_in)?;
            let qg = tape.gather_rows(q, rc(pair_query))?;
            let qk = tape.mul(qg, k)?;
            let scores = tape.group_row_sum(qk, c.n_heads)?;
            let scores = tape.scale(scores, 1.0 / ((d / c.n_heads) as f64).sqrt())?;
            let offsets = offsets_from_lengths(lengths);
            let alpha = tape.segment_softmax(scores, offsets.clone())?;
            tape.segment_weighted_sum(alpha, v, offsets)?
        };
        let x = tape.concat_cols(&[h_self, agg])?;
        Ok(self.combine(l).forward(tape, &self.params, x)?)
    }

    /// Link probabilities for row pairs of `a` and `b`, shape `[n, 1]`.
    pub fn decode(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        let x = tape.concat_cols(&[a, b])?;
        let logit = self.decoder().forward(tape, &self.params, x)?;
        Ok(tape.sigmoid(logit)?)
    }

    /// Probability of a `u`–`v` interaction at time `t` given the stored
    /// memory. Pending messages are not applied and `state` is not changed.
    pub fn predict_link(
        &self,
        state: &MemoryState,
        ctx: &TgnContext,
        u: NodeId,
        v: NodeId,
        t: f64,
    ) -> Result<f64> {
        Ok(self.score_pairs(state, ctx, &[(u, v)], t)?[0])
    }

    /// Probabilities for several pairs at a common time.
    pub fn score_pairs(
        &self,
        state: &MemoryState,
        ctx: &TgnContext,
        pairs: &[(NodeId, NodeId)],
        t: f64,
    ) -> Result<Vec<f64>> {
        let timed: Vec<(NodeId, NodeId, f64)> = pairs.iter().map(|&(u, v)| (u, v, t)).collect();
        self.score_timed(state, ctx, &timed)
    }

    /// Probabilities for `(u, v, t)` triples, each at its own time.
    pub fn score_timed(
        &self,
        state: &MemoryState,
        ctx: &TgnContext,
        pairs: &[(NodeId, NodeId, f64)],
    ) -> Result<Vec<f64>> {
        for &(u, v, _) in pairs {
            for n in [u, v] {
                if n.index() >= ctx.n_nodes() {
                    return Err(Error::UnknownNode(n.0));
                }
            }
        }
        let mut tape = Tape::new();
        let mem = tape.constant(state.memory().clone())?;
        let h0 = self.base_embeddings(&mut tape, mem, ctx)?;
        let queries: Vec<Query> = pairs
            .iter()
            .flat_map(|&(u, v, time)| [Query { node: u, time }, Query { node: v, time }])
            .collect();
        let h = self.embed(&mut tape, h0, ctx, &queries, self.config.n_layers)?;
        let n = pairs.len();
        let a = tape.gather_rows(h, rc((0..n).map(|k| 2 * k).collect()))?;
        let b = tape.gather_rows(h, rc((0..n).map(|k| 2 * k + 1).collect()))?;
        let p = self.decode(&mut tape, a, b)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Scores of one source against many destinations at time `t`.
    pub fn score_against(
        &self,
        state: &MemoryState,
        ctx: &TgnContext,
        u: NodeId,
        candidates: &[NodeId],
        t: f64,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mem = tape.constant(state.memory().clone())?;
        let h0 = self.base_embeddings(&mut tape, mem, ctx)?;
        let mut queries = vec![Query { node: u, time: t }];
        queries.extend(candidates.iter().map(|&v| Query { node: v, time: t }));
        let h = self.embed(&mut tape, h0, ctx, &queries, self.config.n_layers)?;
        let a = tape.gather_rows(h, rc(vec![0; candidates.len()]))?;
        let b = tape.gather_rows(h, rc((1..=candidates.len()).collect()))?;
        let p = self.decode(&mut tape, a, b)?;
        Ok(tape.value(p).data().to_vec())
    }
}

/// Memory rows produced on a tape, waiting to be written back.
#[derive(Clone, Debug, Default)]
pub struct PendingUpdate {
    pub nodes: Vec<NodeId>,
    pub rows: Option<Var>,
    pub times: Vec<f64>,
}

impl PendingUpdate {
    pub fn commit(&self, tape: &Tape, state: &mut MemoryState) {
        if let Some(rows) = self.rows {
            state.commit(&self.nodes, tape.value(rows), &self.times);
        }
    }
}
