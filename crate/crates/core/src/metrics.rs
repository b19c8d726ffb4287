//! Link-prediction metrics and the evaluation protocol.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{sample_negatives_with, Event, NodeId};
use crate::tgn::{MemoryState, TgnContext, TgnModel};
use crate::{Error, Result};

/// Precision-weighted recall increments over the ranking by descending score
/// (ties keep input order).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::Invalid(
            "average precision needs a positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

/// Probability that a positive outscores a negative, ties counting half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // walk tie groups in ascending score order, counting negatives below
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end < order.len()
            && scores[order[end]].total_cmp(&scores[order[k]]) == Ordering::Equal
        {
            end += 1;
        }
        let group = &order[k..end];
        let pos = group.iter().filter(|&&i| labels[i]).count();
        let neg = group.len() - pos;
        wins += pos as f64 * neg_below as f64 + 0.5 * (pos * neg) as f64;
        neg_below += neg;
        k = end;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// 1-based rank of `candidates[truth]`: candidates scoring strictly higher
/// come first, equal scores are ordered by node id.
pub fn rank_of(scores: &[f64], candidates: &[NodeId], truth: usize) -> usize {
    let s = scores[truth];
    let id = candidates[truth];
    1 + scores
        .iter()
        .zip(candidates)
        .filter(|&(&x, &c)| x > s || (x == s && c < id))
        .count()
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("no ranks to average".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("no ranks to average".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Whether evaluation feeds the true events back into memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Score a batch, then update memory with its true events.
    #[default]
    Streaming,
    /// Keep memory fixed at its state before evaluation.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Compute MRR and Recall@k (one full candidate ranking per event).
    pub ranking: bool,
    /// Rank against this many uniformly drawn items plus the true one
    /// instead of the full item set.
    pub candidate_sample: Option<usize>,
    pub k: usize,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Streaming,
            ranking: true,
            candidate_sample: None,
            k: 20,
            batch_size: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub pair: String,
    pub seed: u64,
    pub ap: f64,
    pub auc: f64,
    pub mrr: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub k: usize,
    pub n_test_events: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "variant,pair,seed,ap,auc,mrr,recall@20";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{},{},{:.6},{:.6},{},{}",
            self.variant,
            self.pair,
            self.seed,
            self.ap,
            self.auc,
            opt(self.mrr),
            opt(self.recall_at_k)
        )
    }
}

/// Scores `events` (chronological, following whatever `state` has seen)
/// against one uniformly drawn negative item each, and optionally ranks
/// each true item among the candidates.
pub fn evaluate(
    model: &TgnModel,
    state: &mut MemoryState,
    ctx: &TgnContext,
    events: &[Event],
    opts: &EvalOptions,
    rng: &mut impl Rng,
) -> Result<MetricsReport> {
    if events.is_empty() {
        return Err(Error::Empty("evaluation split has no events".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let first_item = ctx.n_users() as u32;
    let all_items: Vec<NodeId> = (0..ctx.n_items() as u32)
        .map(|i| NodeId(first_item + i))
        .collect();
    let frozen = (opts.mode == EvalMode::Frozen).then(|| state.clone());
    model.flush(state)?;
    let mut scores = Vec::with_capacity(2 * events.len());
    let mut labels = Vec::with_capacity(2 * events.len());
    let mut ranks = Vec::new();
    for batch in events.chunks(opts.batch_size) {
        model.flush(state)?;
        let negatives = sample_negatives_with(first_item, ctx.n_items(), batch, rng)?;
        let triples: Vec<(NodeId, NodeId, f64)> = batch
            .iter()
            .zip(&negatives)
            .flat_map(|(e, &neg)| [(e.user, e.item, e.time), (e.user, neg, e.time)])
            .collect();
        scores.extend(model.score_timed(state, ctx, &triples)?);
        labels.extend(batch.iter().flat_map(|_| [true, false]));
        if opts.ranking {
            for e in batch {
                let candidates = match opts.candidate_sample {
                    None => all_items.clone(),
                    Some(n) => {
                        let mut c: Vec<NodeId> = (0..n)
                            .map(|_| NodeId(first_item + rng.gen_range(0..ctx.n_items() as u32)))
                            .filter(|&c| c != e.item)
                            .collect();
                        c.push(e.item);
                        c
                    }
                };
                let truth = candidates
                    .iter()
                    .position(|&c| c == e.item)
                    .ok_or(Error::UnknownNode(e.item.0))?;
                let s = model.score_against(state, ctx, e.user, &candidates, e.time)?;
                ranks.push(rank_of(&s, &candidates, truth));
            }
        }
        if opts.mode == EvalMode::Streaming {
            state.push_events(batch)?;
        }
    }
    model.flush(state)?;
    if let Some(s) = frozen {
        *state = s;
    }
    Ok(MetricsReport {
        variant: String::new(),
        pair: String::new(),
        seed: 0,
        ap: average_precision(&scores, &labels)?,
        auc: auc(&scores, &labels)?,
        mrr: if opts.ranking {
            Some(mrr(&ranks)?)
        } else {
            None
        },
        recall_at_k: if opts.ranking {
            Some(recall_at_k(&ranks, opts.k)?)
        } else {
            None
        },
        k: opts.k,
        n_test_events: events.len(),
    })
}

/// Mean and sample standard deviation; deviations below 0.001 are reported
/// as exactly zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    (mean, if std < 1e-3 { 0.0 } else { std })
}

/// `mean ± std` with four decimals.
pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.4} ± {s:.4}")
}
