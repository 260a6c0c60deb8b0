use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::graph::{DiffGraph, NodeId};
use super::tensor::Tensor4;
use crate::error::Result;
use crate::rng::seeded;

/// Coordinates checked before falling back to a random subsample.
pub const FULL_CHECK_LIMIT: usize = 400;
/// Subsample size for larger graphs.
pub const SUBSAMPLE: usize = 200;

/// Central-difference check of every trainable parameter coordinate (or a
/// seeded subsample of [`SUBSAMPLE`] when there are more than
/// [`FULL_CHECK_LIMIT`]). Returns the maximum of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// Parameter values are restored before returning.
pub fn gradcheck(
    g: &mut DiffGraph<f64>,
    inputs: &BTreeMap<String, Tensor4<f64>>,
    loss: NodeId,
    eps: f64,
) -> Result<f64> {
    gradcheck_seeded(g, inputs, loss, eps, 0)
}

pub fn gradcheck_seeded(
    g: &mut DiffGraph<f64>,
    inputs: &BTreeMap<String, Tensor4<f64>>,
    loss: NodeId,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    g.forward(inputs)?;
    g.backward(loss)?;
    let coords: Vec<(usize, usize)> = g
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(pi, p)| (0..p.value.numel()).map(move |k| (pi, k)))
        .collect();
    let analytic: Vec<f64> = coords.iter().map(|&(pi, k)| g.params()[pi].grad.data()[k]).collect();

    let chosen: Vec<usize> = if coords.len() > FULL_CHECK_LIMIT {
        let mut rng = seeded(seed, "gradcheck");
        let mut idx = sample(&mut rng, coords.len(), SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..coords.len()).collect()
    };

    let loss_at = |g: &mut DiffGraph<f64>, pi: usize, k: usize, value: f64| -> Result<f64> {
        g.params_mut()[pi].value.data_mut()[k] = value;
        g.forward(inputs)?;
        Ok(g.value(loss).expect("forward ran").item())
    };

    let mut worst = 0.0f64;
    for c in chosen {
        let (pi, k) = coords[c];
        let orig = g.params()[pi].value.data()[k];
        let plus = loss_at(g, pi, k, orig + eps)?;
        let minus = loss_at(g, pi, k, orig - eps)?;
        g.params_mut()[pi].value.data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    g.forward(inputs)?;
    Ok(worst)
}
