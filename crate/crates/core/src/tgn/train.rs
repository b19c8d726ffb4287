use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;

use super::memory::MemoryState;
use super::model::{Query, TgnContext, TgnModel};
use crate::graph::{sample_negatives_with, Event};
use crate::numerics::{Gradients, Optimizer, ParameterSet, Tape, Tensor};
use crate::{Error, Result};

/// One pass over `events` in chronological batches. Each batch is scored
/// against the memory as of the batch start (pending messages from the
/// previous batch are applied on the tape so gradients reach the updater),
/// the loss is back-propagated, and the batch's events become the new
/// pending messages. The memory is reset before the first batch.
///
/// Returns the mean batch loss.
pub fn train_epoch(
    model: &mut TgnModel,
    optimizer: &mut Optimizer,
    state: &mut MemoryState,
    ctx: &TgnContext,
    events: &[Event],
    rng: &mut impl Rng,
) -> Result<f64> {
    if events.is_empty() {
        return Err(Error::Empty("training graph has no events".into()));
    }
    state.reset();
    let mut total = 0.0;
    let mut batches = 0usize;
    for batch in events.chunks(model.config.batch_size) {
        total += train_batch(model, optimizer, state, ctx, batch, rng)?;
        batches += 1;
    }
    // leave the memory reflecting every training event
    model.flush(state)?;
    Ok(total / batches as f64)
}

fn train_batch(
    model: &mut TgnModel,
    optimizer: &mut Optimizer,
    state: &mut MemoryState,
    ctx: &TgnContext,
    batch: &[Event],
    rng: &mut impl Rng,
) -> Result<f64> {
    let negatives = sample_negatives_with(ctx.n_users() as u32, ctx.n_items(), batch, rng)?;
    let b = batch.len();
    let mut tape = Tape::new();
    let (memory, update) = model.apply_pending(&mut tape, state)?;
    let h0 = model.base_embeddings(&mut tape, memory, ctx)?;
    let mut queries: Vec<Query> = Vec::with_capacity(3 * b);
    queries.extend(batch.iter().map(|e| Query {
        node: e.user,
        time: e.time,
    }));
    queries.extend(batch.iter().map(|e| Query {
        node: e.item,
        time: e.time,
    }));
    queries.extend(negatives.iter().zip(batch).map(|(&n, e)| Query {
        node: n,
        time: e.time,
    }));
    let h = model.embed(&mut tape, h0, ctx, &queries, model.config.n_layers)?;
    let src: Rc<[usize]> = (0..b).chain(0..b).collect::<Vec<_>>().into();
    let dst: Rc<[usize]> = (b..3 * b).collect::<Vec<_>>().into();
    let hs = tape.gather_rows(h, src)?;
    let hd = tape.gather_rows(h, dst)?;
    let prob = model.decode(&mut tape, hs, hd)?;
    let labels: Vec<f64> = (0..2 * b).map(|k| if k < b { 1.0 } else { 0.0 }).collect();
    let loss = tape.bce(prob, labels.into())?;
    let grads = complete(tape.backward(loss)?, &model.params);
    optimizer.step(&mut model.params, &grads)?;
    update.commit(&tape, state);
    state.push_events(batch)?;
    Ok(tape.value(loss).data()[0])
}

/// Zero gradients for parameters the batch never touched, e.g. the memory
/// updater on the first batch of an epoch.
fn complete(grads: Gradients, params: &ParameterSet) -> Gradients {
    let mut map: BTreeMap<String, Tensor> =
        grads.iter().map(|(n, g)| (n.clone(), g.clone())).collect();
    for (name, t) in params.iter() {
        map.entry(name.clone())
            .or_insert_with(|| Tensor::zeros(t.shape()));
    }
    Gradients::from_map(map)
}

/// Feeds events through the memory updater without training, `batch_size`
/// events at a time (last message per node within a batch wins).
pub fn observe(
    model: &TgnModel,
    state: &mut MemoryState,
    events: &[Event],
    batch_size: usize,
) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    model.flush(state)?;
    for batch in events.chunks(batch_size) {
        state.push_events(batch)?;
        model.flush(state)?;
    }
    Ok(())
}

/// Applies a single event to both endpoint memories.
pub fn update_memory(model: &TgnModel, state: &mut MemoryState, event: &Event) -> Result<()> {
    observe(model, state, std::slice::from_ref(event), 1)
}

/// Per-epoch mean losses of a full training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

pub fn train(
    model: &mut TgnModel,
    optimizer: &mut Optimizer,
    state: &mut MemoryState,
    ctx: &TgnContext,
    events: &[Event],
    epochs: usize,
    rng: &mut impl Rng,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    for _ in 0..epochs {
        log.losses
            .push(train_epoch(model, optimizer, state, ctx, events, rng)?);
    }
    Ok(log)
}
