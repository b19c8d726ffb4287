//! Memory and weight transfer from a trained source model to a scarce
//! target graph, plus the no-transfer and weight-only baselines.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fgat::{FgatModel, NodeEmbeddings};
use crate::graph::TemporalGraph;
use crate::metrics::{evaluate, EvalOptions, MetricsReport};
use crate::numerics::{Optimizer, Tensor};
use crate::tgn::{observe, train, MemoryState, TgnCheckpoint, TgnConfig, TgnContext, TgnModel};
use crate::transform::transform;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Train from scratch on the target graph.
    Nt,
    /// Fine-tune the source weights, memory starts at zero.
    Wt,
    /// Fine-tune the source weights starting from mapped source memory.
    Mintt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Nt, Variant::Wt, Variant::Mintt];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Nt => "NT-TGN",
            Variant::Wt => "WT-TGN",
            Variant::Mintt => "MINTT",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Nt => "nt",
            Variant::Wt => "wt",
            Variant::Mintt => "mintt",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt" | "nt-tgn" => Ok(Variant::Nt),
            "wt" | "wt-tgn" => Ok(Variant::Wt),
            "mintt" => Ok(Variant::Mintt),
            other => Err(Error::Invalid(format!(
                "unknown variant {other:?} (expected nt, wt or mintt)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub target_id: u32,
    pub source_id: u32,
    pub similarity: f64,
}

/// The source node chosen for every target graph node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryMapping {
    pub entries: Vec<MappingEntry>,
}

impl MemoryMapping {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .map(|e| (e.target_id as usize, e.source_id as usize))
            .collect()
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Assigns every target graph node the source node of the same partition
/// with the highest cosine similarity (ties go to the smaller id), and builds
/// the target memory from the chosen rows of `source_memory`.
pub fn map_memory(
    source: &NodeEmbeddings,
    target: &NodeEmbeddings,
    source_memory: &Tensor,
) -> Result<(MemoryMapping, MemoryState)> {
    if source_memory.rows() != source.n_graph_nodes() {
        return Err(Error::Invalid(format!(
            "{} memory rows for {} source nodes",
            source_memory.rows(),
            source.n_graph_nodes()
        )));
    }
    if source.vectors.cols() != target.vectors.cols() {
        return Err(Error::Invalid(
            "source and target embeddings differ in width".into(),
        ));
    }
    if source.n_users == 0 || source.n_items == 0 {
        return Err(Error::Empty("source graph lacks users or items".into()));
    }
    let src: Vec<Vec<f64>> = (0..source.n_graph_nodes())
        .map(|v| normalized(source.vector(v)))
        .collect();
    let mut entries = Vec::with_capacity(target.n_graph_nodes());
    let mut memory = Tensor::zeros(&[target.n_graph_nodes(), source_memory.cols()]);
    for u in 0..target.n_graph_nodes() {
        let h = normalized(target.vector(u));
        let range = if u < target.n_users {
            0..source.n_users
        } else {
            source.n_users..source.n_graph_nodes()
        };
        let mut best = (range.start, f64::NEG_INFINITY);
        for v in range {
            let sim: f64 = h.iter().zip(&src[v]).map(|(a, b)| a * b).sum();
            if sim > best.1 {
                best = (v, sim);
            }
        }
        memory
            .row_slice_mut(u)
            .copy_from_slice(source_memory.row_slice(best.0));
        entries.push(MappingEntry {
            target_id: u as u32,
            source_id: best.0 as u32,
            similarity: best.1,
        });
    }
    Ok((MemoryMapping { entries }, MemoryState::from_initial(memory)))
}

/// A copy of the source model's weights for a target model with
/// `target` hyperparameters; the architectures must agree.
pub fn transfer_weights(source: &TgnModel, target: &TgnConfig) -> Result<TgnModel> {
    if !source.config.same_architecture(target) {
        return Err(Error::Architecture(format!(
            "source {:?} vs target {:?}",
            source.config, target
        )));
    }
    let mut model = source.clone();
    model.config = target.clone();
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub tgn: TgnConfig,
    pub nt_epochs: usize,
    pub ft_epochs: usize,
    pub eval: EvalOptions,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            tgn: TgnConfig::default(),
            nt_epochs: 30,
            ft_epochs: 5,
            eval: EvalOptions::default(),
        }
    }
}

/// Chronological train/validation/test parts of a target graph.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: TemporalGraph,
    pub val: TemporalGraph,
    pub test: TemporalGraph,
}

impl Splits {
    pub fn new(g: &TemporalGraph, fractions: (f64, f64, f64)) -> Result<Self> {
        let (train, val, test) = g.chronological_split(fractions)?;
        Ok(Self { train, val, test })
    }

    /// Training on the earliest `fraction` of events, with validation and
    /// test windows fixed at `[0.5, 0.7)` and `[0.7, 1.0]` of the timeline.
    pub fn scarcity(g: &TemporalGraph, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 0.5) {
            return Err(Error::Invalid(format!(
                "training fraction {fraction} not in (0, 0.5]"
            )));
        }
        let (head, val, test) = g.chronological_split((0.5, 0.2, 0.3))?;
        let n = g.len() as f64;
        let start = (n * (0.5 - fraction)).floor() as usize;
        let train = head.slice(start.min(head.len()), head.len());
        if train.is_empty() {
            return Err(Error::Empty(format!(
                "training fraction {fraction} keeps no events"
            )));
        }
        Ok(Self { train, val, test })
    }

    /// Every split in time order, for neighbour lookups.
    pub fn history(&self) -> Result<TemporalGraph> {
        TemporalGraph::concat(&[&self.train, &self.val, &self.test])
    }
}

/// Trains a source model and packages it with its transformed graph.
pub fn pretrain_source(
    g_train: &TemporalGraph,
    config: &TgnConfig,
    epochs: usize,
    seed: u64,
) -> Result<(TgnCheckpoint, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = config.clone();
    config.edge_dim = g_train.edge_dim();
    let mut model = TgnModel::new(config.clone(), g_train.vocab().clone(), &mut rng)?;
    let ctx = TgnContext::new(&model, g_train);
    let mut state = MemoryState::zeros(g_train.n_nodes(), config.memory_dim);
    let mut optimizer = Optimizer::new(config.optimizer, config.lr);
    let losses = if epochs == 0 {
        Vec::new()
    } else {
        train(
            &mut model,
            &mut optimizer,
            &mut state,
            &ctx,
            g_train.events(),
            epochs,
            &mut rng,
        )?
        .losses
    };
    let ckpt = TgnCheckpoint {
        model,
        state,
        optimizer,
        graph: g_train.name().to_string(),
        n_users: g_train.n_users(),
        source: Some(transform(g_train)?),
    };
    Ok((ckpt, losses))
}

/// Source artefacts a variant may draw on.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sources<'a> {
    pub tgn: Option<&'a TgnCheckpoint>,
    pub fgat: Option<&'a FgatModel>,
}

/// A target model ready for training.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: TgnModel,
    pub state: MemoryState,
    pub mapping: Option<MemoryMapping>,
}

pub fn prepare(
    variant: Variant,
    sources: Sources<'_>,
    target_train: &TemporalGraph,
    cfg: &TransferConfig,
    seed: u64,
) -> Result<Prepared> {
    let n_target = target_train.n_nodes();
    let need_tgn = || {
        sources
            .tgn
            .ok_or_else(|| Error::Invalid(format!("variant {variant} needs a source checkpoint")))
    };
    match variant {
        Variant::Nt => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut config = cfg.tgn.clone();
            config.edge_dim = target_train.edge_dim();
            let model = TgnModel::new(config, target_train.vocab().clone(), &mut rng)?;
            let state = MemoryState::zeros(n_target, model.config.memory_dim);
            Ok(Prepared {
                model,
                state,
                mapping: None,
            })
        }
        Variant::Wt => {
            let src = need_tgn()?;
            let model = transfer_weights(&src.model, &training_config(&src.model.config, cfg))?;
            let state = MemoryState::zeros(n_target, model.config.memory_dim);
            Ok(Prepared {
                model,
                state,
                mapping: None,
            })
        }
        Variant::Mintt => {
            let src = need_tgn()?;
            let fgat = sources
                .fgat
                .ok_or_else(|| Error::Invalid("variant mintt needs an F-GAT checkpoint".into()))?;
            let src_graph = src.source.as_ref().ok_or_else(|| {
                Error::Checkpoint("source checkpoint carries no transformed graph".into())
            })?;
            let h_src = fgat.encode(src_graph)?;
            let h_tgt = fgat.encode(&transform(target_train)?)?;
            let (mapping, state) = map_memory(&h_src, &h_tgt, src.state.memory())?;
            let model = transfer_weights(&src.model, &training_config(&src.model.config, cfg))?;
            Ok(Prepared {
                model,
                state,
                mapping: Some(mapping),
            })
        }
    }
}

/// Source architecture with the target run's training knobs.
fn training_config(source: &TgnConfig, cfg: &TransferConfig) -> TgnConfig {
    TgnConfig {
        batch_size: cfg.tgn.batch_size,
        lr: cfg.tgn.lr,
        optimizer: cfg.tgn.optimizer,
        n_neighbors: cfg.tgn.n_neighbors,
        ..source.clone()
    }
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub model: TgnModel,
    pub state: MemoryState,
    pub mapping: Option<MemoryMapping>,
    pub losses: Vec<f64>,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Trains a prepared model on the target training split and evaluates on
/// validation then test, streaming memory through both.
pub fn train_and_evaluate(
    variant: Variant,
    prepared: Prepared,
    splits: &Splits,
    epochs: usize,
    cfg: &TransferConfig,
    seed: u64,
) -> Result<VariantRun> {
    let Prepared {
        mut model,
        mut state,
        mapping,
    } = prepared;
    let history = splits.history()?;
    let ctx = TgnContext::new(&model, &history);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut optimizer = Optimizer::new(model.config.optimizer, model.config.lr);
    let losses = if epochs == 0 {
        state.reset();
        observe(
            &model,
            &mut state,
            splits.train.events(),
            model.config.batch_size,
        )?;
        Vec::new()
    } else {
        train(
            &mut model,
            &mut optimizer,
            &mut state,
            &ctx,
            splits.train.events(),
            epochs,
            &mut rng,
        )?
        .losses
    };
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let label = |mut r: MetricsReport| {
        r.variant = variant.label().to_string();
        r.pair = history.name().to_string();
        r.seed = seed;
        r
    };
    let val = label(evaluate(
        &model,
        &mut state,
        &ctx,
        splits.val.events(),
        &cfg.eval,
        &mut eval_rng,
    )?);
    let test = label(evaluate(
        &model,
        &mut state,
        &ctx,
        splits.test.events(),
        &cfg.eval,
        &mut eval_rng,
    )?);
    Ok(VariantRun {
        variant,
        model,
        state,
        mapping,
        losses,
        val,
        test,
    })
}

/// `prepare` followed by `train_and_evaluate` with the variant's epoch count.
pub fn run_variant(
    variant: Variant,
    sources: Sources<'_>,
    splits: &Splits,
    cfg: &TransferConfig,
    seed: u64,
) -> Result<VariantRun> {
    let prepared = prepare(variant, sources, &splits.train, cfg, seed)?;
    let epochs = match variant {
        Variant::Nt => cfg.nt_epochs,
        Variant::Wt | Variant::Mintt => cfg.ft_epochs,
    };
    train_and_evaluate(variant, prepared, splits, epochs, cfg, seed)
}
