use rand::seq::index;

use super::{Conformer3D, MoleculePair};
use crate::seeding::{self, stream};
use crate::{Error, Result};

/// `floor(fraction * larger * smaller)`. Products that land within rounding
/// noise of an integer are snapped to it, so that e.g. `0.2 * 1368 * 290`
/// yields 79,344 rather than 79,343.
pub fn pretrain_pair_count(larger: usize, smaller: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("fraction", format!("must lie in (0, 1], got {fraction}")));
    }
    let total = larger * smaller;
    let x = fraction * total as f64;
    let nearest = x.round();
    let count = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.floor()
    };
    Ok((count as usize).min(total))
}

/// Distinct `(larger, smaller)` index tuples drawn uniformly without
/// replacement from the cross product, in ascending order.
pub fn sample_pair_indices(larger: usize, smaller: usize, fraction: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    if larger == 0 || smaller == 0 {
        return Err(Error::config("pretrain_pairs", "both molecule sets must be non-empty"));
    }
    let count = pretrain_pair_count(larger, smaller, fraction)?;
    let mut rng = seeding::rng_from(&[seed, stream::PAIR_SAMPLING]);
    let mut flat = index::sample(&mut rng, larger * smaller, count).into_vec();
    flat.sort_unstable();
    Ok(flat.into_iter().map(|k| (k / smaller, k % smaller)).collect())
}

/// Samples a fraction of the cross product of two molecule sets as
/// unlabelled pre-training pairs.
pub fn sample_pretrain_pairs(
    larger_set: &[Conformer3D],
    smaller_set: &[Conformer3D],
    fraction: f64,
    seed: u64,
) -> Result<Vec<MoleculePair>> {
    let idx = sample_pair_indices(larger_set.len(), smaller_set.len(), fraction, seed)?;
    Ok(idx
        .into_iter()
        .map(|(i, j)| MoleculePair::new(larger_set[i].clone(), smaller_set[j].clone(), None, "pretrain"))
        .collect())
}
