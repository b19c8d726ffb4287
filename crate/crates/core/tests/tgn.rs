use memxfer::graph::{Event, NodeId, NodeTable, TemporalGraph};
use memxfer::numerics::gradcheck::check;
use memxfer::numerics::{
    sigmoid, Activation, GruCell, Mlp, NumericsError, Optimizer, Tape, Tensor,
};
use memxfer::tgn::{
    observe, train, train_epoch, update_memory, MemoryState, Query, RawMessage, TgnCheckpoint,
    TgnConfig, TgnContext, TgnModel,
};
use memxfer::vocab::Vocab;
use memxfer::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_config() -> TgnConfig {
    TgnConfig {
        memory_dim: 8,
        time_dim: 4,
        feature_dim: 4,
        message_dim: 6,
        n_neighbors: 3,
        decoder_hidden: 8,
        batch_size: 20,
        lr: 0.01,
        ..TgnConfig::default()
    }
}

/// Users and items split into two groups by parity; users interact with
/// their own group with probability `purity`.
fn structured_graph(
    n_users: u32,
    n_items: u32,
    n_events: usize,
    purity: f64,
    seed: u64,
) -> TemporalGraph {
    let mut vocab = Vocab::new();
    let tokens = [
        vocab.intern("u:even"),
        vocab.intern("u:odd"),
        vocab.intern("i:even"),
        vocab.intern("i:odd"),
    ];
    let mut features = Vec::new();
    for u in 0..n_users {
        features.push(vec![tokens[(u % 2) as usize]]);
    }
    for i in 0..n_items {
        features.push(vec![tokens[2 + (i % 2) as usize]]);
    }
    let table = NodeTable {
        user_keys: (0..n_users).map(|u| format!("u{u}")).collect(),
        item_keys: (0..n_items).map(|i| format!("i{i}")).collect(),
        features,
        vocab,
    };
    let mut r = rng(seed);
    let events = (0..n_events)
        .map(|k| {
            let u = r.gen_range(0..n_users);
            let group = if r.gen_bool(purity) { u % 2 } else { 1 - u % 2 };
            let i = 2 * r.gen_range(0..n_items / 2) + group;
            Event {
                user: NodeId(u),
                item: NodeId(n_users + i),
                time: (k + 1) as f64,
                features: vec![],
            }
        })
        .collect();
    TemporalGraph::new("structured", table, events).unwrap()
}

fn setup(seed: u64) -> (TemporalGraph, TgnModel, TgnContext, MemoryState) {
    let g = structured_graph(6, 6, 60, 0.9, seed);
    let model = TgnModel::new(small_config(), g.vocab().clone(), &mut rng(seed)).unwrap();
    let ctx = TgnContext::new(&model, &g);
    let state = MemoryState::zeros(g.n_nodes(), model.config.memory_dim);
    (g, model, ctx, state)
}

fn ev(u: u32, i: u32, t: f64) -> Event {
    Event {
        user: NodeId(u),
        item: NodeId(i),
        time: t,
        features: vec![],
    }
}

fn zero_params(model: &mut TgnModel, prefix: &str) {
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| n.starts_with(prefix))
        .cloned()
        .collect();
    for n in names {
        model
            .params
            .get_mut(&n)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
}

fn numerics(e: Error) -> NumericsError {
    match e {
        Error::Numerics(n) => n,
        other => panic!("{other}"),
    }
}

/// Plain-loop message + GRU update for one endpoint, used as an oracle.
fn oracle_update(model: &TgnModel, own: &[f64], other: &[f64], dt: f64) -> Vec<f64> {
    let p = &model.params;
    let freq = p.get("tgn.time.freq").unwrap().data();
    let phase = p.get("tgn.time.phase").unwrap().data();
    let mut x: Vec<f64> = own.iter().chain(other).copied().collect();
    x.extend(freq.iter().zip(phase).map(|(w, b)| (w * dt + b).cos()));
    let dense = |x: &[f64], name: &str| -> Vec<f64> {
        let w = p.get(&format!("{name}.w")).unwrap();
        let b = p.get(&format!("{name}.b")).unwrap();
        (0..w.cols())
            .map(|j| b.data()[j] + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
            .collect()
    };
    let h1: Vec<f64> = dense(&x, "tgn.msg.l0")
        .into_iter()
        .map(|v| if v > 0.0 { v } else { 0.2 * v })
        .collect();
    let msg = dense(&h1, "tgn.msg.l1");
    let xh: Vec<f64> = msg.iter().chain(own).copied().collect();
    let z: Vec<f64> = dense(&xh, "tgn.gru.z").into_iter().map(sigmoid).collect();
    let r: Vec<f64> = dense(&xh, "tgn.gru.r").into_iter().map(sigmoid).collect();
    let xrh: Vec<f64> = msg
        .iter()
        .copied()
        .chain(own.iter().zip(&r).map(|(h, r)| h * r))
        .collect();
    let cand: Vec<f64> = dense(&xrh, "tgn.gru.h")
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..own.len())
        .map(|k| (1.0 - z[k]) * cand[k] + z[k] * own[k])
        .collect()
}

#[test]
fn zero_message_mlp_gives_zero_messages() {
    let (_, mut model, _, mut state) = setup(1);
    zero_params(&mut model, "tgn.msg");
    state.set_initial(Tensor::filled(&[12, 8], 0.3));
    let mut tape = Tape::new();
    let mem = tape.constant(state.memory().clone()).unwrap();
    let pending = vec![(
        NodeId(0),
        RawMessage {
            other: NodeId(7),
            time: 4.0,
            edge: vec![],
        },
    )];
    let m = model
        .messages(&mut tape, mem, state.last_updates(), &pending)
        .unwrap();
    assert!(tape.value(m).data().iter().all(|&x| x == 0.0));
}

#[test]
fn message_depends_on_concatenation_order() {
    let (_, model, _, mut state) = setup(2);
    let mut init = Tensor::zeros(&[12, 8]);
    init.row_slice_mut(0).iter_mut().for_each(|x| *x = 1.0);
    init.row_slice_mut(7).iter_mut().for_each(|x| *x = -1.0);
    state.set_initial(init);
    let msg = |a: u32, b: u32| {
        let mut tape = Tape::new();
        let mem = tape.constant(state.memory().clone()).unwrap();
        let p = vec![(
            NodeId(a),
            RawMessage {
                other: NodeId(b),
                time: 1.0,
                edge: vec![],
            },
        )];
        let m = model
            .messages(&mut tape, mem, state.last_updates(), &p)
            .unwrap();
        tape.value(m).clone()
    };
    assert!(msg(0, 7).max_abs_diff(&msg(7, 0)) > 1e-6);
}

#[test]
fn one_event_touches_exactly_its_endpoints() {
    let (_, model, _, mut state) = setup(3);
    update_memory(&model, &mut state, &ev(1, 8, 5.0)).unwrap();
    for n in 0..12 {
        let touched = n == 1 || n == 8;
        assert_eq!(
            state.last_update(NodeId(n)),
            if touched { 5.0 } else { 0.0 }
        );
        let moved = state.vector(NodeId(n)).iter().any(|&x| x != 0.0);
        assert_eq!(moved, touched, "node {n}");
    }
    assert!(!state.has_pending());
}

#[test]
fn zero_parameters_keep_zero_memory() {
    let (_, mut model, _, mut state) = setup(4);
    zero_params(&mut model, "tgn.");
    update_memory(&model, &mut state, &ev(0, 6, 1.0)).unwrap();
    update_memory(&model, &mut state, &ev(0, 7, 2.0)).unwrap();
    assert!(state.memory().data().iter().all(|&x| x == 0.0));
    assert_eq!(state.last_update(NodeId(0)), 2.0);
}

#[test]
fn time_regression_is_rejected() {
    let (_, model, _, mut state) = setup(5);
    update_memory(&model, &mut state, &ev(0, 6, 3.0)).unwrap();
    let err = update_memory(&model, &mut state, &ev(0, 7, 2.0)).unwrap_err();
    assert!(matches!(err, Error::TimeRegression(_)));
}

#[test]
fn sequential_updates_match_plain_loop_oracle() {
    let (_, model, _, mut state) = setup(6);
    let events = [ev(0, 6, 1.5), ev(0, 7, 4.0), ev(2, 7, 4.5)];
    let mut mem: Vec<Vec<f64>> = vec![vec![0.0; 8]; 12];
    let mut last = [0.0; 12];
    for e in &events {
        let (u, i) = (e.user.index(), e.item.index());
        let new_u = oracle_update(&model, &mem[u], &mem[i], e.time - last[u]);
        let new_i = oracle_update(&model, &mem[i], &mem[u], e.time - last[i]);
        mem[u] = new_u;
        mem[i] = new_i;
        last[u] = e.time;
        last[i] = e.time;
    }
    for e in &events {
        update_memory(&model, &mut state, e).unwrap();
    }
    for n in 0..12 {
        for (a, b) in state.vector(NodeId(n as u32)).iter().zip(&mem[n]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(state.last_update(NodeId(n as u32)), last[n]);
    }
}

#[test]
fn batching_matters_only_when_nodes_repeat() {
    let (_, model, _, state) = setup(7);
    let disjoint = [ev(0, 6, 1.0), ev(1, 7, 2.0), ev(2, 8, 3.0)];
    let mut a = state.clone();
    let mut b = state.clone();
    observe(&model, &mut a, &disjoint, 1).unwrap();
    observe(&model, &mut b, &disjoint, 3).unwrap();
    assert!(a.memory().max_abs_diff(b.memory()) < 1e-12);
    assert_eq!(a.last_updates(), b.last_updates());

    let repeated = [ev(0, 6, 1.0), ev(0, 7, 2.0), ev(2, 6, 3.0)];
    let mut a = state.clone();
    let mut b = state.clone();
    observe(&model, &mut a, &repeated, 1).unwrap();
    observe(&model, &mut b, &repeated, 3).unwrap();
    assert!(a.memory().max_abs_diff(b.memory()) > 1e-6);
    // timestamps agree either way
    assert_eq!(a.last_updates(), b.last_updates());
}

#[test]
fn zero_layer_embedding_is_memory_plus_projected_features() {
    let (g, model, ctx, mut state) = setup(8);
    let mut r = rng(80);
    let init = Tensor::new(&[12, 8], (0..96).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    state.set_initial(init);
    let mut tape = Tape::new();
    let mem = tape.constant(state.memory().clone()).unwrap();
    let h0 = model.base_embeddings(&mut tape, mem, &ctx).unwrap();
    let q = [Query {
        node: NodeId(3),
        time: 10.0,
    }];
    let h = model.embed(&mut tape, h0, &ctx, &q, 0).unwrap();
    // node 3 has the single token "u:odd"
    let tok = g.vocab().get("u:odd").unwrap() as usize;
    let emb = model.params.get("tgn.feat.emb").unwrap().row_slice(tok);
    let proj = model.params.get("tgn.feat.proj.w").unwrap();
    let expected: Vec<f64> = (0..8)
        .map(|j| state.vector(NodeId(3))[j] + (0..4).map(|i| emb[i] * proj.get(i, j)).sum::<f64>())
        .collect();
    for (a, b) in tape.value(h).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn isolated_featureless_node_embeds_as_combine_of_zeros() {
    let mut vocab = Vocab::new();
    vocab.intern("u:a");
    let table = NodeTable {
        user_keys: vec!["u".into(), "lonely".into()],
        item_keys: vec!["x".into(), "y".into()],
        features: vec![vec![0], vec![], vec![], vec![]],
        vocab: vocab.clone(),
    };
    let g = TemporalGraph::new("iso", table, vec![ev(0, 2, 1.0), ev(0, 3, 2.0)]).unwrap();
    let model = TgnModel::new(small_config(), vocab, &mut rng(9)).unwrap();
    let ctx = TgnContext::new(&model, &g);
    let state = MemoryState::zeros(4, 8);
    let mut tape = Tape::new();
    let mem = tape.constant(state.memory().clone()).unwrap();
    let h0 = model.base_embeddings(&mut tape, mem, &ctx).unwrap();
    let q = [Query {
        node: NodeId(1),
        time: 5.0,
    }];
    let h = model.embed(&mut tape, h0, &ctx, &q, 1).unwrap();
    let h = tape.value(h).clone();

    let mut t2 = Tape::new();
    let zeros = t2.constant(Tensor::zeros(&[1, 16])).unwrap();
    let combine = Mlp::named("tgn.combine0", &[16, 8, 8], Activation::Relu);
    let expected = combine.forward(&mut t2, &model.params, zeros).unwrap();
    assert!(h.max_abs_diff(t2.value(expected)) < 1e-15);
}

#[test]
fn single_neighbor_receives_full_attention() {
    // with one neighbour the context is exactly that neighbour's value vector
    let mut vocab = Vocab::new();
    vocab.intern("u:a");
    let table = NodeTable {
        user_keys: vec!["u".into()],
        item_keys: vec!["x".into(), "y".into()],
        features: vec![vec![0], vec![], vec![]],
        vocab: vocab.clone(),
    };
    let g = TemporalGraph::new("one", table, vec![ev(0, 1, 1.0)]).unwrap();
    let model = TgnModel::new(small_config(), vocab, &mut rng(10)).unwrap();
    let ctx = TgnContext::new(&model, &g);
    let mut r = rng(11);
    let mem = Tensor::new(&[3, 8], (0..24).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let t = 4.0;

    let mut tape = Tape::new();
    let m = tape.constant(mem.clone()).unwrap();
    let h0 = model.base_embeddings(&mut tape, m, &ctx).unwrap();
    let h = model
        .embed(
            &mut tape,
            h0,
            &ctx,
            &[Query {
                node: NodeId(0),
                time: t,
            }],
            1,
        )
        .unwrap();
    let h = tape.value(h).clone();

    let mut t2 = Tape::new();
    let m = t2.constant(mem).unwrap();
    let h0 = model.base_embeddings(&mut t2, m, &ctx).unwrap();
    let own = t2.gather_rows(h0, vec![0usize].into()).unwrap();
    let nbr = t2.gather_rows(h0, vec![1usize].into()).unwrap();
    let te = model.time_encode(&mut t2, &[t - 1.0]).unwrap();
    let kv = t2.concat_cols(&[nbr, te]).unwrap();
    let wv = t2.param(&model.params, "tgn.attn0.v.w").unwrap();
    let v = t2.matmul(kv, wv).unwrap();
    let x = t2.concat_cols(&[own, v]).unwrap();
    let combine = Mlp::named("tgn.combine0", &[16, 8, 8], Activation::Relu);
    let expected = combine.forward(&mut t2, &model.params, x).unwrap();
    assert!(h.max_abs_diff(t2.value(expected)) < 1e-12);
}

#[test]
fn time_encoding_of_zero_is_cos_phase() {
    let (_, mut model, _, _) = setup(12);
    let phase = Tensor::row(&[0.1, -0.4, 2.0, 0.0]);
    *model.params.get_mut("tgn.time.phase").unwrap() = phase.clone();
    let mut tape = Tape::new();
    let te = model.time_encode(&mut tape, &[0.0]).unwrap();
    assert!(tape.value(te).max_abs_diff(&phase.map(f64::cos)) < 1e-15);
    assert_eq!(tape.value(te).shape(), &[1, 4]);
}

#[test]
fn predictions_are_probabilities_and_pure() {
    let (g, mut model, ctx, mut state) = setup(13);
    observe(&model, &mut state, &g.events()[..30], 10).unwrap();
    let before = state.clone();
    let p1 = model
        .predict_link(&state, &ctx, NodeId(0), NodeId(7), 40.0)
        .unwrap();
    let p2 = model
        .predict_link(&state, &ctx, NodeId(0), NodeId(7), 40.0)
        .unwrap();
    assert!(p1 > 0.0 && p1 < 1.0);
    assert_eq!(p1.to_bits(), p2.to_bits());
    assert_eq!(state, before);
    assert!(model
        .predict_link(&state, &ctx, NodeId(0), NodeId(99), 40.0)
        .is_err());

    zero_params(&mut model, "tgn.decoder");
    let scores = model
        .score_against(
            &state,
            &ctx,
            NodeId(2),
            &[NodeId(6), NodeId(9), NodeId(11)],
            50.0,
        )
        .unwrap();
    assert!(scores.iter().all(|&p| p == 0.5));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let g = structured_graph(10, 10, 200, 0.95, 14);
    let run = || {
        let mut model = TgnModel::new(small_config(), g.vocab().clone(), &mut rng(14)).unwrap();
        let ctx = TgnContext::new(&model, &g);
        let mut state = MemoryState::zeros(g.n_nodes(), 8);
        let mut opt = Optimizer::adam(0.01);
        let log = train(
            &mut model,
            &mut opt,
            &mut state,
            &ctx,
            g.events(),
            10,
            &mut rng(15),
        )
        .unwrap();
        (log, state)
    };
    let (a, state) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    assert!(a.losses.last().unwrap() < &a.losses[0], "{:?}", a.losses);
    let degrees = g.degrees();
    for (n, &deg) in degrees.iter().enumerate() {
        if deg > 0 {
            assert!(state.last_update(NodeId(n as u32)) > 0.0);
        }
    }
}

#[test]
fn empty_training_graph_is_error() {
    let (_, mut model, ctx, mut state) = setup(16);
    let mut opt = Optimizer::adam(0.01);
    let err = train_epoch(&mut model, &mut opt, &mut state, &ctx, &[], &mut rng(1)).unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (g, mut model, ctx, mut state) = setup(17);
    let mut opt = Optimizer::adam(0.01);
    train_epoch(
        &mut model,
        &mut opt,
        &mut state,
        &ctx,
        g.events(),
        &mut rng(2),
    )
    .unwrap();
    let ckpt = TgnCheckpoint {
        model,
        state,
        optimizer: opt,
        graph: g.name().to_string(),
        n_users: g.n_users(),
        source: Some(memxfer::transform::transform(&g).unwrap()),
    };
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    ckpt.save(&p1).unwrap();
    let back = TgnCheckpoint::load(&p1).unwrap();
    back.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(back.state.memory().rows(), g.n_nodes());
    assert_eq!(back.optimizer, ckpt.optimizer);
    assert_eq!(back.source, ckpt.source);
    let q = |c: &TgnCheckpoint| {
        c.model
            .predict_link(&c.state, &ctx, NodeId(1), NodeId(9), 70.0)
            .unwrap()
    };
    assert_eq!(q(&ckpt).to_bits(), q(&back).to_bits());
}

#[test]
fn memory_reset_restores_initial_vectors() {
    let (g, model, _, _) = setup(18);
    let init = Tensor::filled(&[12, 8], 0.25);
    let mut state = MemoryState::from_initial(init.clone());
    observe(&model, &mut state, &g.events()[..10], 5).unwrap();
    assert!(state.memory().max_abs_diff(&init) > 0.0);
    state.reset();
    assert_eq!(state.memory(), &init);
    assert!(state.last_updates().iter().all(|&t| t == 0.0));
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let (g, model, ctx, _) = setup(19);
    let mut state = MemoryState::zeros(g.n_nodes(), 8);
    observe(&model, &mut state, &g.events()[..20], 20).unwrap();
    state.push_events(&g.events()[20..30]).unwrap();
    let batch: Vec<Event> = g.events()[30..40].to_vec();
    let report = check(
        &model.params,
        &[],
        |tape, params, _| {
            let m = model.with_params(params.clone());
            let (mem, _) = m.apply_pending(tape, &state).map_err(numerics)?;
            let h0 = m.base_embeddings(tape, mem, &ctx).map_err(numerics)?;
            let mut q: Vec<Query> = batch
                .iter()
                .map(|e| Query {
                    node: e.user,
                    time: e.time,
                })
                .collect();
            q.extend(batch.iter().map(|e| Query {
                node: e.item,
                time: e.time,
            }));
            let h = m.embed(tape, h0, &ctx, &q, 1).map_err(numerics)?;
            let n = batch.len();
            let a = tape.gather_rows(h, (0..n).collect::<Vec<_>>().into())?;
            let b = tape.gather_rows(h, (n..2 * n).collect::<Vec<_>>().into())?;
            let p = m.decode(tape, a, b).map_err(numerics)?;
            tape.bce(p, vec![1.0; n].into())
        },
        Some(6),
        &mut rng(20),
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
    assert!(report.checked > 50);
}

#[test]
fn gru_names_match_model_layout() {
    // the oracle above relies on these parameter names
    let (_, model, _, _) = setup(21);
    let gru = GruCell::named("tgn.gru", 6, 8);
    for name in [
        &gru.update_gate.weight,
        &gru.reset_gate.weight,
        &gru.candidate.weight,
    ] {
        assert!(model.params.contains(name));
    }
}
