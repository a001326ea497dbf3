//! Sign-preserving sparse rewiring.
//!
//! A synapse whose weight crosses to the wrong side of zero for its row is
//! made dormant, and the same number of dormant synapses in sign-constrained
//! rows are revived with a small weight of the right sign. The number of
//! active synapses in the block never changes.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{ParamBlock, Sign};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewireStats {
    pub deactivated: usize,
    pub reactivated: usize,
}

/// Rewires `block` in place. `magnitude` is the absolute weight given to
/// revived synapses. Returns the flat indices that changed state, for
/// optimizer resets, alongside the counts.
pub fn rewire_sparse(block: &mut ParamBlock, magnitude: f64, seed_value: u64) -> Result<(RewireStats, Vec<usize>)> {
    let Some(signs) = block.row_signs.clone() else {
        return Ok((RewireStats::default(), Vec::new()));
    };
    let cols = block.cols() as usize;
    let len = block.len();
    let mask = block.mask.get_or_insert_with(|| vec![true; len]);
    let sign_of = |k: usize| signs[k / cols];

    let mut dead = Vec::new();
    for k in 0..len {
        if mask[k] && !sign_of(k).admits(block.weights[k]) {
            dead.push(k);
        }
    }
    let dormant: Vec<usize> = (0..len).filter(|&k| !mask[k] && sign_of(k) != Sign::Free).collect();
    for &k in &dead {
        mask[k] = false;
        block.weights[k] = 0.0;
    }
    // candidates include the synapses just removed so a fully dense row
    // can still rewire
    let mut pool = dormant;
    pool.extend(&dead);
    let mut rng = seed::stream(seed_value, "rewire");
    let revive = dead.len().min(pool.len());
    let picks = sample(&mut rng, pool.len(), revive);
    let mut changed = dead.clone();
    for p in picks {
        let k = pool[p];
        mask[k] = true;
        let jitter: f64 = rng.random_range(0.5..1.0);
        block.weights[k] = match sign_of(k) {
            Sign::Inhibitory => -magnitude * jitter,
            _ => magnitude * jitter,
        };
        changed.push(k);
    }
    changed.sort_unstable();
    changed.dedup();
    Ok((RewireStats { deactivated: dead.len(), reactivated: revive }, changed))
}

/// Clamps wrong-signed weights to zero without rewiring.
pub fn project_signs(block: &mut ParamBlock) {
    let Some(signs) = block.row_signs.clone() else { return };
    let cols = block.cols() as usize;
    for (k, w) in block.weights.iter_mut().enumerate() {
        *w = signs[k / cols].project(*w);
    }
}
