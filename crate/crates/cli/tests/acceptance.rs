//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p memxfer-cli --test acceptance`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use memxfer::fgat::{FgatConfig, FgatModel, FgatPlan, Phase};
use memxfer::graph::{Event, NodeId, NodeTable, TemporalGraph};
use memxfer::metrics::{auc, average_precision, mean_std};
use memxfer::numerics::gradcheck::{check, random_tensor, GradCheckReport};
use memxfer::numerics::{GruCell, NumericsError, ParameterSet};
use memxfer::pipeline::{PipelineConfig, SeedArtifacts};
use memxfer::synth::SynthConfig;
use memxfer::tgn::{Query, TgnConfig, TgnContext, TgnModel};
use memxfer::transfer::{prepare, train_and_evaluate, Splits, TransferConfig, Variant};
use memxfer::transform::transform;
use memxfer::vocab::{item_feature_key, user_feature_key, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SCARCITY: [f64; 3] = [0.5, 0.3, 0.1];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Outcome {
    pass: bool,
    detail: String,
}

struct Suite {
    start: Instant,
    failed: usize,
}

impl Suite {
    fn report(
        &mut self,
        id: u32,
        name: &str,
        limit: Option<Duration>,
        elapsed: Duration,
        o: Outcome,
    ) {
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = o.pass && in_time;
        if !pass {
            self.failed += 1;
        }
        let limit = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
        let late = if in_time { "" } else { "; over time limit" };
        println!(
            "{} criterion {id} {name}: {}{late} [{:.1}s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

/// Random bipartite graph with namespaced attribute tokens.
fn random_graph(seed: u64, n_users: usize, n_items: usize, n_events: usize) -> TemporalGraph {
    let mut r = rng(seed);
    let mut vocab = Vocab::new();
    let n_tok = r.gen_range(1..5);
    let user_tok: Vec<u32> = (0..n_tok)
        .map(|j| vocab.intern(&user_feature_key(&format!("a{j}"))))
        .collect();
    let item_tok: Vec<u32> = (0..n_tok)
        .map(|j| vocab.intern(&item_feature_key(&format!("b{j}"))))
        .collect();
    let features = (0..n_users + n_items)
        .map(|v| {
            let pool = if v < n_users { &user_tok } else { &item_tok };
            pool.iter().copied().filter(|_| r.gen_bool(0.4)).collect()
        })
        .collect();
    let table = NodeTable {
        user_keys: (0..n_users).map(|u| format!("u{u}")).collect(),
        item_keys: (0..n_items).map(|i| format!("i{i}")).collect(),
        features,
        vocab,
    };
    let mut t = 0.0;
    let events = (0..n_events)
        .map(|_| {
            t += r.gen_range(0.0..3.0);
            Event {
                user: NodeId(r.gen_range(0..n_users as u32)),
                item: NodeId((n_users + r.gen_range(0..n_items)) as u32),
                time: t,
                features: vec![],
            }
        })
        .collect();
    TemporalGraph::new("rand", table, events).unwrap()
}

fn numerics(e: memxfer::Error) -> NumericsError {
    NumericsError::Shape(e.to_string())
}

/// Moves parameters off zero-initialised biases, where ReLU-type kinks make
/// central differences one-sided.
fn jitter(params: &ParameterSet, r: &mut ChaCha8Rng) -> ParameterSet {
    let mut p = params.clone();
    let names: Vec<String> = p.names().cloned().collect();
    for n in names {
        for x in p.get_mut(&n).unwrap().data_mut() {
            *x += r.gen_range(-0.3..0.3);
        }
    }
    p
}

fn tgn_config() -> TgnConfig {
    TgnConfig {
        memory_dim: 6,
        time_dim: 4,
        feature_dim: 4,
        message_dim: 5,
        n_neighbors: 3,
        decoder_hidden: 6,
        ..TgnConfig::default()
    }
}

fn gradients() -> Outcome {
    const N: u64 = 100;
    let mut per_module: Vec<(&str, GradCheckReport)> = Vec::new();

    let mut gru = GradCheckReport::default();
    for k in 0..N {
        let mut r = rng(k);
        let mut ps = ParameterSet::new();
        let cell = GruCell::init(&mut ps, "gru", 4, 5, &mut r);
        let ps = jitter(&ps, &mut r);
        let inputs = [
            random_tensor(&[3, 4], 1.0, &mut r),
            random_tensor(&[3, 5], 1.0, &mut r),
        ];
        let w = random_tensor(&[3, 5], 1.0, &mut r);
        let rep = check(
            &ps,
            &inputs,
            |t, p, v| {
                let h = cell.forward(t, p, v[0], v[1])?;
                let w = t.constant(w.clone())?;
                let s = t.mul(h, w)?;
                t.sum(s)
            },
            Some(4),
            &mut r,
        )
        .unwrap();
        gru.merge(rep);
    }
    per_module.push(("GRU", gru));

    let fgat_cfg = FgatConfig {
        dim: 4,
        n_layers: 1,
        ..FgatConfig::default()
    };
    let mut g_theta = GradCheckReport::default();
    for k in 0..N {
        let mut r = rng(1000 + k);
        let m = FgatModel::new(fgat_cfg.clone(), Vocab::new(), &mut r).unwrap();
        let m = m.with_params(jitter(&m.params, &mut r));
        let phase = Phase::ALL[r.gen_range(0..4)];
        let lengths: Vec<usize> = (0..r.gen_range(1..4)).map(|_| r.gen_range(1..4)).collect();
        let mut a = Vec::new();
        for &len in &lengths {
            let raw: Vec<f64> = (0..len).map(|_| r.gen_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            a.extend(raw.iter().map(|x| x / s));
        }
        let n_pairs: usize = lengths.iter().sum();
        let inputs = [
            random_tensor(&[lengths.len(), 4], 1.0, &mut r),
            random_tensor(&[n_pairs, 4], 1.0, &mut r),
        ];
        let w = random_tensor(&[lengths.len(), 4], 1.0, &mut r);
        let rep = check(
            &m.params,
            &inputs,
            |t, p, v| {
                let mm = m.with_params(p.clone());
                let (out, _) = mm
                    .g_theta(t, 0, phase, v[0], v[1], &a, &lengths)
                    .map_err(numerics)?;
                let w = t.constant(w.clone())?;
                let s = t.mul(out, w)?;
                t.sum(s)
            },
            Some(4),
            &mut r,
        )
        .unwrap();
        g_theta.merge(rep);
    }
    per_module.push(("g_theta", g_theta));

    let mut layer = GradCheckReport::default();
    for k in 0..N {
        let mut r = rng(2000 + k);
        let tg = transform(&random_graph(
            2000 + k,
            r.gen_range(2..5),
            r.gen_range(2..5),
            r.gen_range(4..14),
        ))
        .unwrap();
        let m = FgatModel::for_pool(fgat_cfg.clone(), std::slice::from_ref(&tg), &mut r).unwrap();
        let m = m.with_params(jitter(&m.params, &mut r));
        let plan = FgatPlan::new(&m, &tg).unwrap();
        let w = random_tensor(&[tg.n_nodes(), 4], 1.0, &mut r);
        let rep = check(
            &m.params,
            &[],
            |t, p, _| {
                let mm = m.with_params(p.clone());
                let h = mm.encode_on(t, &plan, None).map_err(numerics)?;
                let w = t.constant(w.clone())?;
                let s = t.mul(h, w)?;
                t.sum(s)
            },
            Some(3),
            &mut r,
        )
        .unwrap();
        layer.merge(rep);
    }
    per_module.push(("F-GAT layer", layer));

    let mut attention = GradCheckReport::default();
    let mut decoder = GradCheckReport::default();
    for k in 0..N {
        let mut r = rng(3000 + k);
        let g = random_graph(3000 + k, 4, 4, 30);
        let model = TgnModel::new(tgn_config(), g.vocab().clone(), &mut r).unwrap();
        let model = model.with_params(jitter(&model.params, &mut r));
        let ctx = TgnContext::new(&model, &g);
        let t_end = g.events().last().unwrap().time;
        let queries: Vec<Query> = (0..4)
            .map(|_| Query {
                node: NodeId(r.gen_range(0..g.n_nodes() as u32)),
                time: t_end + r.gen_range(0.0..5.0),
            })
            .collect();
        let h0 = random_tensor(&[g.n_nodes(), 6], 1.0, &mut r);
        let w = random_tensor(&[queries.len(), 6], 1.0, &mut r);
        let rep = check(
            &model.params,
            &[h0],
            |t, p, v| {
                let m = model.with_params(p.clone());
                let h = m.embed(t, v[0], &ctx, &queries, 1).map_err(numerics)?;
                let w = t.constant(w.clone())?;
                let s = t.mul(h, w)?;
                t.sum(s)
            },
            Some(3),
            &mut r,
        )
        .unwrap();
        attention.merge(rep);

        let n = 5;
        let inputs = [
            random_tensor(&[n, 6], 1.0, &mut r),
            random_tensor(&[n, 6], 1.0, &mut r),
        ];
        let labels: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(r.gen_bool(0.5))))
            .collect();
        let rep = check(
            &model.params,
            &inputs,
            |t, p, v| {
                let m = model.with_params(p.clone());
                let prob = m.decode(t, v[0], v[1]).map_err(numerics)?;
                t.bce(prob, labels.clone().into())
            },
            Some(4),
            &mut r,
        )
        .unwrap();
        decoder.merge(rep);
    }
    per_module.push(("TGN attention", attention));
    per_module.push(("decoder", decoder));

    // a handful of coordinates may sit on a ReLU kink; more would point at a
    // broken check rather than bad luck
    let pass = per_module.iter().all(|(_, rep)| {
        rep.max_rel_err < 1e-4 && rep.checked > 0 && rep.kinks * 100 <= rep.checked + rep.kinks
    });
    let detail = per_module
        .iter()
        .map(|(name, rep)| {
            format!(
                "{name} {:.1e} ({} coords, {} on kinks)",
                rep.max_rel_err, rep.checked, rep.kinks
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass,
        detail: format!("{N} instances per module, max relative error: {detail}"),
    }
}

fn ap_oracle(s: &[f64], l: &[bool]) -> f64 {
    let before = |j: usize, i: usize| s[j] > s[i] || (s[j] == s[i] && j <= i);
    let (mut total, mut n_pos) = (0.0, 0);
    for i in (0..s.len()).filter(|&i| l[i]) {
        n_pos += 1;
        let at_or_before = (0..s.len()).filter(|&j| before(j, i)).count();
        let pos_before = (0..s.len()).filter(|&j| l[j] && before(j, i)).count();
        total += pos_before as f64 / at_or_before as f64;
    }
    total / n_pos as f64
}

fn auc_oracle(s: &[f64], l: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..s.len()).filter(|&i| l[i]) {
        for j in (0..s.len()).filter(|&j| !l[j]) {
            pairs += 1.0;
            wins += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn metrics() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let mut r = rng(k);
        let n = r.gen_range(2..=2000);
        // coarse score grid so ties are frequent
        let s: Vec<f64> = (0..n).map(|_| r.gen_range(0..40) as f64 / 40.0).collect();
        let mut l: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        l[0] = true;
        l[1] = false;
        worst = worst
            .max((average_precision(&s, &l).unwrap() - ap_oracle(&s, &l)).abs())
            .max((auc(&s, &l).unwrap() - auc_oracle(&s, &l)).abs());
    }
    Outcome {
        pass: worst < 1e-9,
        detail: format!("200 instances, max |AP/AUC - oracle| = {worst:.1e}"),
    }
}

fn transform_checks() -> Outcome {
    let mut problems = Vec::new();
    for k in 0..50 {
        let mut r = rng(5000 + k);
        let g = random_graph(
            5000 + k,
            r.gen_range(1..12),
            r.gen_range(1..12),
            r.gen_range(1..80),
        );
        let tg = transform(&g).unwrap();
        for v in 0..tg.n_nodes() as u32 {
            let nb = tg.neighborhoods(v).unwrap();
            for part in [&nb.graph, &nb.feature] {
                let s: f64 = part.iter().map(|&(_, a)| a).sum();
                if !part.is_empty() && (s - 1.0).abs() > 1e-9 {
                    problems.push(format!("graph {k} node {v}: weights sum to {s}"));
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for e in g.events() {
            pairs.insert((e.user.0, e.item.0));
            pairs.insert((e.item.0, e.user.0));
        }
        let got: BTreeSet<(u32, u32)> = tg
            .static_graph
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, adj)| adj.iter().map(move |&(v, _)| (u as u32, v)))
            .collect();
        if got != pairs {
            problems.push(format!("graph {k}: static edge set differs"));
        }
        let feat: BTreeSet<(u32, u32)> = (0..g.n_nodes() as u32)
            .flat_map(|v| g.node_features(NodeId(v)).iter().map(move |&f| (v, f)))
            .collect();
        let got_f: BTreeSet<(u32, u32)> = tg
            .node_features
            .iter()
            .enumerate()
            .flat_map(|(v, fs)| fs.iter().map(move |&f| (v as u32, f)))
            .collect();
        if got_f != feat || tg.n_nodes() != g.n_nodes() + g.vocab().len() {
            problems.push(format!("graph {k}: feature nodes or edges differ"));
        }
        let retimed: Vec<Event> = g
            .events()
            .iter()
            .map(|e| Event {
                time: 7.0 + 3.5 * e.time,
                ..e.clone()
            })
            .collect();
        let retimed = TemporalGraph::new("rand", g.nodes().clone(), retimed).unwrap();
        if transform(&retimed).unwrap() != tg {
            problems.push(format!("graph {k}: result depends on timestamps"));
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            "50 graphs: weights sum to 1, edge and feature sets match brute force, re-timing leaves the graph unchanged"
                .into()
        } else {
            problems.join("; ")
        },
    }
}

fn mean(xs: &[f64]) -> f64 {
    mean_std(xs).0
}

fn fmt(xs: &[f64]) -> String {
    let (m, s) = mean_std(xs);
    format!("{m:.4}±{s:.4}")
}

/// Recovery with no community signal in the attributes: the 5-seed mean must
/// sit within three standard errors of the chance level, where the standard
/// error is the larger of the binomial one (all target nodes pooled) and the
/// empirical one across seeds.
fn recovery_at_zero_strength(cfg: &PipelineConfig) -> Outcome {
    {
        let cfg = PipelineConfig {
            synth: SynthConfig {
                signature_strength: 0.0,
                ..cfg.synth.clone()
            },
            source_epochs: 0,
            ..cfg.clone()
        };
        let mut rec = Vec::new();
        let mut chance = Vec::new();
        let mut n_nodes = 0;
        for &seed in &SEEDS {
            let art = SeedArtifacts::build(&cfg, seed).unwrap();
            let splits = art.target_splits(cfg.target_split).unwrap();
            rec.push(art.mapping_recovery(&splits).unwrap());
            chance.push(art.pair.mapping.chance());
            n_nodes += art.pair.target.n_nodes();
        }
        let p = mean(&chance);
        let binom = (p * (1.0 - p) / n_nodes as f64).sqrt();
        let empirical = mean_std(&rec).1 / (rec.len() as f64).sqrt();
        let se = binom.max(empirical);
        let z = (mean(&rec) - p) / se;
        Outcome {
            pass: z.abs() < 3.0,
            detail: format!(
                "strength 0 recovery {} vs chance {p:.4} (z = {z:.2})",
                fmt(&rec)
            ),
        }
    }
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_memxfer"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

/// Runs the full command chain twice in separate directories and compares
/// every artifact byte for byte.
fn determinism() -> Outcome {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut outputs = Vec::new();
        let steps: [&[&str]; 5] = [
            &[
                "--run-dir",
                "r/gen",
                "generate",
                "--out-dir",
                "data",
                "--seed",
                "11",
            ],
            &[
                "--run-dir",
                "r/src",
                "train-tgn",
                "--graph",
                "data/source.csv",
                "--epochs",
                "2",
                "--train-fraction",
                "0.7",
                "--seed",
                "11",
                "--out",
                "src.ckpt",
            ],
            &[
                "--run-dir",
                "r/fgat",
                "train-fgat",
                "--pool",
                "data/pool",
                "--epochs",
                "10",
                "--seed",
                "11",
                "--out",
                "fgat.ckpt",
            ],
            &[
                "--run-dir",
                "r/xfer",
                "transfer",
                "--variant",
                "mintt",
                "--src-ckpt",
                "src.ckpt",
                "--fgat-ckpt",
                "fgat.ckpt",
                "--target",
                "data/target.csv",
                "--ft-epochs",
                "2",
                "--seeds",
                "0..1",
            ],
            &[
                "--run-dir",
                "r/sweep",
                "sweep",
                "--src-ckpt",
                "src.ckpt",
                "--fgat-ckpt",
                "fgat.ckpt",
                "--target",
                "data/target.csv",
                "--nt-epochs",
                "2",
                "--ft-epochs",
                "1",
                "--fractions",
                "0.3",
            ],
        ];
        for (k, args) in steps.iter().enumerate() {
            outputs.push((format!("stdout of step {k}"), cli(dir, args)?));
        }
        for f in [
            "data/source.csv",
            "data/target.csv",
            "data/pool/pool0.csv",
            "src.ckpt",
            "fgat.ckpt",
            "r/src/losses.csv",
            "r/fgat/losses.csv",
            "r/xfer/report.json",
            "r/xfer/mapping-seed1.json",
            "r/sweep/sweep.csv",
        ] {
            outputs.push((
                f.to_string(),
                std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?,
            ));
        }
        Ok(outputs)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (run(a.path()), run(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&str> = x
                .iter()
                .zip(&y)
                .filter(|(p, q)| p.1 != q.1)
                .map(|(p, _)| p.0.as_str())
                .collect();
            Outcome {
                pass: differing.is_empty(),
                detail: if differing.is_empty() {
                    format!("{} artifacts (checkpoints, metrics, reports) byte-identical across two runs", x.len())
                } else {
                    format!("differs: {}", differing.join(", "))
                },
            }
        }
        (Err(e), _) | (_, Err(e)) => Outcome {
            pass: false,
            detail: e,
        },
    }
}

fn main() {
    let mut suite = Suite {
        start: Instant::now(),
        failed: 0,
    };

    let (o, t) = timed(gradients);
    suite.report(1, "gradient fidelity", Some(Duration::from_secs(60)), t, o);
    let (o, t) = timed(metrics);
    suite.report(2, "metric oracles", Some(Duration::from_secs(60)), t, o);
    let (o, t) = timed(transform_checks);
    suite.report(3, "transformation", None, t, o);

    let cfg = PipelineConfig::default();
    let (built, t_build) = timed(|| {
        SEEDS
            .iter()
            .map(|&s| SeedArtifacts::build(&cfg, s).unwrap())
            .collect::<Vec<_>>()
    });
    let (recovery, t_rec) = timed(|| {
        built
            .iter()
            .map(|a| {
                a.mapping_recovery(&a.target_splits(cfg.target_split).unwrap())
                    .unwrap()
            })
            .collect::<Vec<f64>>()
    });
    let (zero, t_zero) = timed(|| recovery_at_zero_strength(&cfg));
    let pass = recovery.iter().all(|&x| x >= 0.95) && zero.pass;
    suite.report(
        4,
        "mapping recovery",
        Some(Duration::from_secs(180)),
        t_build + t_rec + t_zero,
        Outcome {
            pass,
            detail: format!(
                "strength {} per-seed recovery [{}]; {}",
                cfg.synth.signature_strength,
                recovery
                    .iter()
                    .map(|x| format!("{x:.3}"))
                    .collect::<Vec<_>>()
                    .join(", "),
                zero.detail
            ),
        },
    );

    let (aps, t) = timed(|| {
        let mut aps = [vec![], vec![], vec![]];
        for art in &built {
            let splits = art.target_splits(cfg.target_split).unwrap();
            for (k, v) in [Variant::Nt, Variant::Wt, Variant::Mintt]
                .into_iter()
                .enumerate()
            {
                aps[k].push(art.run(v, &splits, &cfg.transfer).unwrap().test.ap);
            }
        }
        aps
    });
    let (nt, wt, mintt) = (mean(&aps[0]), mean(&aps[1]), mean(&aps[2]));
    suite.report(
        5,
        "transfer ordering",
        Some(Duration::from_secs(300)),
        t,
        Outcome {
            pass: mintt >= wt && wt >= nt && mintt - nt >= 0.03,
            detail: format!(
                "test AP NT {}, WT {}, MINTT {}; MINTT - NT = {:.4}",
                fmt(&aps[0]),
                fmt(&aps[1]),
                fmt(&aps[2]),
                mintt - nt
            ),
        },
    );

    let (rows, t) = timed(|| {
        [0usize, 5]
            .into_iter()
            .map(|ft| {
                let tc = TransferConfig {
                    ft_epochs: ft,
                    ..cfg.transfer.clone()
                };
                let (mut full, mut zeroed) = (vec![], vec![]);
                for art in &built {
                    let splits = art.target_splits(cfg.target_split).unwrap();
                    full.push(art.run(Variant::Mintt, &splits, &tc).unwrap().test.ap);
                    let mut p =
                        prepare(Variant::Mintt, art.sources(), &splits.train, &tc, art.seed)
                            .unwrap();
                    p.state = memxfer::tgn::MemoryState::zeros(
                        p.state.memory().rows(),
                        p.model.config.memory_dim,
                    );
                    zeroed.push(
                        train_and_evaluate(Variant::Mintt, p, &splits, ft, &tc, art.seed)
                            .unwrap()
                            .test
                            .ap,
                    );
                }
                (ft, full, zeroed)
            })
            .collect::<Vec<_>>()
    });
    suite.report(
        6,
        "memory ablation",
        None,
        t,
        Outcome {
            pass: rows
                .iter()
                .all(|(_, full, zeroed)| mean(zeroed) < mean(full)),
            detail: rows
                .iter()
                .map(|(ft, full, zeroed)| {
                    format!("ft {ft}: mapped {} vs zeroed {}", fmt(full), fmt(zeroed))
                })
                .collect::<Vec<_>>()
                .join("; "),
        },
    );

    let (curves, t) = timed(|| {
        let mut curves = [vec![], vec![]];
        for &f in &SCARCITY {
            let (mut nt, mut mintt) = (vec![], vec![]);
            for art in &built {
                let splits = Splits::scarcity(&art.pair.target, f).unwrap();
                nt.push(
                    art.run(Variant::Nt, &splits, &cfg.transfer)
                        .unwrap()
                        .test
                        .ap,
                );
                mintt.push(
                    art.run(Variant::Mintt, &splits, &cfg.transfer)
                        .unwrap()
                        .test
                        .ap,
                );
            }
            curves[0].push(mean(&nt));
            curves[1].push(mean(&mintt));
        }
        curves
    });
    let drop = |c: &[f64]| c[0] - c[2];
    let show = |c: &[f64]| {
        c.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    suite.report(
        7,
        "scarcity",
        None,
        t,
        Outcome {
            pass: drop(&curves[0]) > drop(&curves[1]),
            detail: format!(
                "mean AP at 0.5/0.3/0.1: NT {}, MINTT {}; drop NT {:.4} vs MINTT {:.4}",
                show(&curves[0]),
                show(&curves[1]),
                drop(&curves[0]),
                drop(&curves[1])
            ),
        },
    );

    let (o, t) = timed(determinism);
    suite.report(8, "determinism", None, t, o);

    let total = suite.start.elapsed();
    suite.report(
        9,
        "suite runtime",
        Some(Duration::from_secs(900)),
        total,
        Outcome {
            pass: true,
            detail: format!("acceptance suite finished in {:.1}s", total.as_secs_f64()),
        },
    );

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
}
