use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One time-ordered tuple of frame indices used by a relation of `scale` frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSubset {
    pub scale: usize,
    pub indices: Vec<usize>,
    pub subset_id: usize,
}

/// All strictly increasing `scale`-tuples of `0..frames` in lexicographic order,
/// or a seeded sample of `max_per_scale` of them (kept in lexicographic order)
/// when there are more.
pub fn enumerate_subsets(frames: usize, scale: usize, max_per_scale: usize, seed: u64) -> Result<Vec<RelationSubset>> {
    if scale < 2 || scale > frames {
        return Err(Error::invalid(format!("relation scale {scale} outside [2, {frames}]")));
    }
    if max_per_scale == 0 {
        return Err(Error::invalid("max_per_scale must be positive"));
    }
    let all = combinations(frames, scale);
    let chosen: Vec<Vec<usize>> = if all.len() <= max_per_scale {
        all
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (scale as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut picked = sample(&mut rng, all.len(), max_per_scale).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| all[i].clone()).collect()
    };
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(subset_id, indices)| RelationSubset { scale, indices, subset_id })
        .collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // rightmost position that can still be incremented
        let Some(pos) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            return out;
        };
        current[pos] += 1;
        for j in pos + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}
