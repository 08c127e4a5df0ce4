//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a reverse topological
//! order because a node can only consume nodes created before it.

mod params;
mod tape;
mod tensor;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use params::ParamStore;
pub use tape::{Axis, Bound, GrlConfig, OpKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{entropy_unchecked, log_sum_exp, softmax};

use crate::error::{Error, Result};

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Base-2 entropy of a probability vector, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::invalid("entropy of an empty distribution"));
    }
    if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    Ok(entropy_unchecked(p))
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", logits.len())));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Compares the tape gradient of `loss_fn` against central differences.
///
/// `loss_fn` must build the same scalar loss from the bound parameters every
/// time it is called. At most `max_coords` coordinates are checked; when the
/// store is larger they are drawn without replacement using `seed`. Returns
/// the largest `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1e-2], got {epsilon}")));
    }
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = loss_fn(&mut tape, &bound)?;
    tape.backward(loss)?;
    let analytic = tape.grads(&bound);

    let coords: Vec<(usize, usize)> =
        params.iter().enumerate().flat_map(|(pi, (_, t))| (0..t.len()).map(move |ci| (pi, ci))).collect();
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, coords.len(), max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tape.bind(store);
        let loss = loss_fn(&mut tape, &bound)?;
        Ok(tape.value(loss).data()[0])
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for idx in chosen {
        let (pi, ci) = coords[idx];
        let name = &names[pi];
        let original = params.get(name).expect("name from store").data()[ci];
        probe.get_mut(name).expect("cloned").data_mut()[ci] = original + epsilon;
        let up = eval(&probe)?;
        probe.get_mut(name).expect("cloned").data_mut()[ci] = original - epsilon;
        let down = eval(&probe)?;
        probe.get_mut(name).expect("cloned").data_mut()[ci] = original;

        let numeric = (up - down) / (2.0 * epsilon);
        let exact = analytic.get(name).expect("same layout").data()[ci];
        worst = worst.max((exact - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
