use rand::Rng;

use super::{Event, NodeId, TemporalGraph};
use crate::{Error, Result};

/// One uniformly drawn item per event, never equal to the event's own item.
pub fn sample_negatives(
    g: &TemporalGraph,
    batch: &[Event],
    rng: &mut impl Rng,
) -> Result<Vec<NodeId>> {
    let first_item = g.n_users() as u32;
    sample_negatives_with(first_item, g.n_items(), batch, rng)
}

/// Same as [`sample_negatives`] over the item range
/// `first_item..first_item + n_items`.
pub fn sample_negatives_with(
    first_item: u32,
    n_items: usize,
    batch: &[Event],
    rng: &mut impl Rng,
) -> Result<Vec<NodeId>> {
    if n_items < 2 {
        return Err(Error::Invalid(format!(
            "negative sampling needs at least two items, have {n_items}"
        )));
    }
    Ok(batch
        .iter()
        .map(|e| loop {
            let cand = NodeId(first_item + rng.gen_range(0..n_items as u32));
            if cand != e.item {
                break cand;
            }
        })
        .collect())
}
