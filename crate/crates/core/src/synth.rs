//! Synthetic source/target interaction graphs with planted correspondences.
//!
//! Users and items belong to communities. Each community owns a signature
//! subset of the attribute tokens, and nodes draw their attributes mostly
//! from it. Users prefer items of their own community. Source and target
//! graphs are independent samples of the same model, so nodes in the same
//! community are each other's analogs without sharing any identity.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Event, NodeId, NodeTable, Partition, TemporalGraph};
use crate::vocab::{item_feature_key, user_feature_key, Vocab};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Source graph size; the target is scaled by `target_scale`.
    pub n_users: usize,
    pub n_items: usize,
    pub n_events: usize,
    /// Tokens per partition (user tokens and item tokens are distinct).
    pub n_feature_tokens: usize,
    pub features_per_node: usize,
    pub n_communities: usize,
    /// Log-odds boost of a user's own community when choosing items;
    /// infinity means users never leave their community.
    pub sharpness: f64,
    /// Probability that an attribute is drawn from the node's community
    /// signature rather than uniformly.
    pub signature_strength: f64,
    pub target_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 200,
            n_events: 4000,
            n_feature_tokens: 24,
            features_per_node: 3,
            n_communities: 8,
            sharpness: 4.0,
            signature_strength: 0.95,
            target_scale: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let target = |n: usize| (n as f64 * self.target_scale).round() as usize;
        if self.n_communities == 0 || self.n_events == 0 || self.features_per_node == 0 {
            return Err(Error::Invalid("synthetic counts must be positive".into()));
        }
        if !(self.target_scale > 0.0 && self.target_scale <= 1.0) {
            return Err(Error::Invalid("target scale must lie in (0, 1]".into()));
        }
        for (what, n) in [
            ("users", self.n_users),
            ("items", self.n_items),
            ("target users", target(self.n_users)),
            ("target items", target(self.n_items)),
        ] {
            if n < self.n_communities {
                return Err(Error::Invalid(format!(
                    "{n} {what} cannot cover {} communities",
                    self.n_communities
                )));
            }
        }
        if self.n_feature_tokens < self.n_communities {
            return Err(Error::Invalid(
                "fewer attribute tokens than communities".into(),
            ));
        }
        if self.features_per_node > self.n_feature_tokens {
            return Err(Error::Invalid(
                "more attributes per node than tokens".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signature_strength)
            || self.sharpness.is_nan()
            || self.sharpness < 0.0
        {
            return Err(Error::Invalid(
                "signature strength or sharpness out of range".into(),
            ));
        }
        Ok(())
    }

    /// Tokens of a community's signature: every `n_communities`-th token.
    fn signature(&self, community: usize) -> Vec<usize> {
        (community..self.n_feature_tokens)
            .step_by(self.n_communities)
            .collect()
    }
}

/// Community of every node of a generated graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Communities {
    pub n_users: usize,
    pub of_node: Vec<usize>,
}

/// Intended analogs: a target node corresponds to every source node of the
/// same partition and community.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedMapping {
    pub source: Communities,
    pub target: Communities,
}

impl PlantedMapping {
    fn partition(c: &Communities, node: usize) -> Partition {
        if node < c.n_users {
            Partition::User
        } else {
            Partition::Item
        }
    }

    pub fn is_analog(&self, target: usize, source: usize) -> bool {
        Self::partition(&self.target, target) == Self::partition(&self.source, source)
            && self.target.of_node[target] == self.source.of_node[source]
    }

    /// Share of `(target, source)` assignments that hit an analog.
    pub fn recovery(&self, assignments: &[(usize, usize)]) -> f64 {
        let hits = assignments
            .iter()
            .filter(|&&(t, s)| self.is_analog(t, s))
            .count();
        hits as f64 / assignments.len().max(1) as f64
    }

    /// Expected recovery of a uniformly random partition-respecting
    /// assignment of every target node.
    pub fn chance(&self) -> f64 {
        let n_target = self.target.of_node.len();
        let src = &self.source;
        let mut total = 0.0;
        for t in 0..n_target {
            let same_part: Vec<usize> = (0..src.of_node.len())
                .filter(|&s| Self::partition(src, s) == Self::partition(&self.target, t))
                .collect();
            let hits = same_part.iter().filter(|&&s| self.is_analog(t, s)).count();
            total += hits as f64 / same_part.len() as f64;
        }
        total / n_target as f64
    }
}

#[derive(Clone, Debug)]
pub struct SynthPair {
    pub source: TemporalGraph,
    pub target: TemporalGraph,
    pub mapping: PlantedMapping,
}

/// Unit-rate exponential draw.
fn exp1(rng: &mut impl Rng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

/// The shared vocabulary: all user tokens, then all item tokens.
pub fn shared_vocab(cfg: &SynthConfig) -> Vocab {
    let mut v = Vocab::new();
    for j in 0..cfg.n_feature_tokens {
        v.intern(&user_feature_key(&format!("t{j}")));
    }
    for j in 0..cfg.n_feature_tokens {
        v.intern(&item_feature_key(&format!("t{j}")));
    }
    v
}

/// One graph of the community model with `n_users`/`n_items`/`n_events`.
pub fn generate_graph(
    cfg: &SynthConfig,
    name: &str,
    n_users: usize,
    n_items: usize,
    n_events: usize,
    rng: &mut impl Rng,
) -> Result<(TemporalGraph, Communities)> {
    cfg.validate()?;
    let c = cfg.n_communities;
    // round-robin communities keep every community populated
    let user_comm: Vec<usize> = (0..n_users).map(|u| u % c).collect();
    let item_comm: Vec<usize> = (0..n_items).map(|i| i % c).collect();
    let tokens_for = |comm: usize, rng: &mut dyn rand::RngCore| -> Vec<usize> {
        let sig = cfg.signature(comm);
        let mut chosen: Vec<usize> = Vec::with_capacity(cfg.features_per_node);
        while chosen.len() < cfg.features_per_node {
            let tok = if rng.gen_bool(cfg.signature_strength) {
                sig[rng.gen_range(0..sig.len())]
            } else {
                rng.gen_range(0..cfg.n_feature_tokens)
            };
            if !chosen.contains(&tok) {
                chosen.push(tok);
            }
            // a tiny signature may be exhausted; fall back to uniform draws
            if sig.iter().all(|t| chosen.contains(t)) && chosen.len() < cfg.features_per_node {
                let rest: Vec<usize> = (0..cfg.n_feature_tokens)
                    .filter(|t| !chosen.contains(t))
                    .collect();
                chosen.push(rest[rng.gen_range(0..rest.len())]);
            }
        }
        chosen
    };
    let vocab = shared_vocab(cfg);
    let mut features = Vec::with_capacity(n_users + n_items);
    for &comm in &user_comm {
        let mut f: Vec<u32> = tokens_for(comm, rng)
            .into_iter()
            .map(|t| t as u32)
            .collect();
        f.sort_unstable();
        features.push(f);
    }
    let offset = cfg.n_feature_tokens as u32;
    for &comm in &item_comm {
        let mut f: Vec<u32> = tokens_for(comm, rng)
            .into_iter()
            .map(|t| offset + t as u32)
            .collect();
        f.sort_unstable();
        features.push(f);
    }
    let table = NodeTable {
        user_keys: (0..n_users).map(|u| format!("{name}-u{u}")).collect(),
        item_keys: (0..n_items).map(|i| format!("{name}-i{i}")).collect(),
        features,
        vocab,
    };

    // item popularity within each community, and user activity
    let popularity: Vec<f64> = (0..n_items).map(|_| exp1(rng) + 0.1).collect();
    let activity: Vec<f64> = (0..n_users).map(|_| exp1(rng) + 0.1).collect();
    let users = WeightedIndex::new(&activity).expect("positive weights");
    let members: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..n_items).filter(|&i| item_comm[i] == k).collect())
        .collect();
    let within: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&i| popularity[i])).expect("non-empty community"))
        .collect();
    let stay = if cfg.sharpness.is_infinite() {
        1.0
    } else {
        let boost = cfg.sharpness.exp();
        boost / (boost + (c - 1) as f64)
    };
    let mut time = 0.0;
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        time += exp1(rng);
        let u = users.sample(rng);
        let own = user_comm[u];
        let comm = if c == 1 || rng.gen_bool(stay) {
            own
        } else {
            let k = rng.gen_range(0..c - 1);
            if k >= own {
                k + 1
            } else {
                k
            }
        };
        let i = members[comm][within[comm].sample(rng)];
        events.push(Event {
            user: NodeId(u as u32),
            item: NodeId((n_users + i) as u32),
            time,
            features: vec![],
        });
    }
    let g = TemporalGraph::new(name, table, events)?;
    let mut of_node = user_comm;
    of_node.extend(item_comm);
    Ok((g, Communities { n_users, of_node }))
}

/// Source and smaller target graph from the same community model.
pub fn generate_pair(cfg: &SynthConfig) -> Result<SynthPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = |n: usize| ((n as f64 * cfg.target_scale).round() as usize).max(1);
    let (source, src_comm) = generate_graph(
        cfg,
        "source",
        cfg.n_users,
        cfg.n_items,
        cfg.n_events,
        &mut rng,
    )?;
    let (target, tgt_comm) = generate_graph(
        cfg,
        "target",
        scale(cfg.n_users),
        scale(cfg.n_items),
        scale(cfg.n_events),
        &mut rng,
    )?;
    Ok(SynthPair {
        source,
        target,
        mapping: PlantedMapping {
            source: src_comm,
            target: tgt_comm,
        },
    })
}

/// Further source-sized graphs for encoder pre-training, independent of
/// any pair generated with the same seed.
pub fn generate_pool(cfg: &SynthConfig, n_graphs: usize) -> Result<Vec<TemporalGraph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_9001);
    (0..n_graphs)
        .map(|k| {
            generate_graph(
                cfg,
                &format!("pool{k}"),
                cfg.n_users,
                cfg.n_items,
                cfg.n_events,
                &mut rng,
            )
            .map(|(g, _)| g)
        })
        .collect()
}
