//! Reconstruction and residual losses, as plain functions over fields and as
//! graph nodes. The two forms agree to rounding.

use crate::autodiff::{DiffGraph, NodeId, Real, Tensor4};
use crate::error::{mismatch, Error, Result};
use crate::grid::{FrameSequence, StencilSpec, VectorField};
use crate::operators::ParamMaps;
use crate::pde::residual_sq_norm;

/// Sum over frames of the mean (over cells and channels) squared error.
pub fn loss_data(pred: &FrameSequence, truth: &FrameSequence) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(mismatch("loss_data frame count", truth.len(), pred.len()));
    }
    if pred.channels() != truth.channels() {
        return Err(mismatch("loss_data channels", truth.channels(), pred.channels()));
    }
    let mut total = 0.0;
    for (p, t) in pred.frames().iter().zip(truth.frames()) {
        let mut sq = 0.0;
        let mut n = 0usize;
        for (pf, tf) in p.iter().zip(t) {
            pf.ensure_same_dims(tf, "loss_data")?;
            sq += pf.values().iter().zip(tf.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n += pf.values().len();
        }
        total += sq / n as f64;
    }
    Ok(total)
}

/// Squared residual summed over consecutive pairs of `frames`; `v_hat[t]`
/// drives frame `t` to frame `t + 1`.
pub fn loss_pde(frames: &FrameSequence, v_hat: &[VectorField], maps: &ParamMaps) -> Result<f64> {
    if frames.len() != v_hat.len() + 1 {
        return Err(mismatch("loss_pde velocity count", frames.len().saturating_sub(1), v_hat.len()));
    }
    residual_sq_norm(frames, v_hat, &maps.to_pde_params()?)
}

/// `loss_data(pred, truth) + alpha · loss_pde(pred, v_hat, maps)`.
pub fn loss_total(
    pred: &FrameSequence,
    truth: &FrameSequence,
    v_hat: &[VectorField],
    maps: &ParamMaps,
    alpha: f64,
) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    Ok(loss_data(pred, truth)? + alpha * loss_pde(pred, v_hat, maps)?)
}

/// `s · mean_square(pred − target)`: per-frame MSE summed over `s` frames.
pub fn data_loss_node<T: Real>(g: &mut DiffGraph<T>, pred: NodeId, target: NodeId, s: usize) -> Result<NodeId> {
    let diff = g.sub(pred, target)?;
    let ms = g.mean_square(diff);
    Ok(g.scale(ms, s as f64))
}

/// Block-diagonal `(n, n, 3, 3)` kernel applying `k` to each channel alone.
fn diagonal<T: Real>(k: &[f64; 9], n: usize) -> Tensor4<T> {
    let mut data = vec![0.0; n * n * 9];
    for i in 0..n {
        let off = (i * n + i) * 9;
        data[off..off + 9].copy_from_slice(k);
    }
    Tensor4::from_f64([n, n, 3, 3], &data).expect("kernel dims")
}

/// Differentiable residual loss.
///
/// `frames` stacks `K + 1` frames of `channels` channels, frame-major;
/// `fields` interleaves `K` velocity fields, field `t` driving frame `t` to
/// `t + 1`; `d` and `r` are single-channel maps broadcast over batch and
/// channels. The stencils are frozen convolutions with the same kernels as
/// the field operators. The result averages over the batch.
pub fn pde_loss_node<T: Real>(
    g: &mut DiffGraph<T>,
    frames: NodeId,
    fields: NodeId,
    d: NodeId,
    r: NodeId,
    channels: usize,
) -> Result<NodeId> {
    let fc = g.shape(frames)[0];
    let vc = g.shape(fields)[0];
    let k = vc / 2;
    if vc % 2 != 0 || channels == 0 || fc != (k + 1) * channels {
        return Err(mismatch("residual loss frames/fields", (k + 1) * channels, fc));
    }
    if k == 0 {
        return Ok(g.constant(Tensor4::scalar(T::zero())));
    }
    let n = k * channels;
    let [kx, ky, kl] = StencilSpec::default().kernels();

    let u = g.slice_channels(frames, 0, n)?;
    let u_next = g.slice_channels(frames, channels, n)?;
    let (klap, kdx, kdy) = (g.constant(diagonal(&kl, n)), g.constant(diagonal(&kx, n)), g.constant(diagonal(&ky, n)));
    let lap = g.conv2d(u, klap, None)?;
    let gx = g.conv2d(u, kdx, None)?;
    let gy = g.conv2d(u, kdy, None)?;

    let vx_parts = (0..k).map(|t| g.slice_channels(fields, 2 * t, 1)).collect::<Result<Vec<_>>>()?;
    let vy_parts = (0..k).map(|t| g.slice_channels(fields, 2 * t + 1, 1)).collect::<Result<Vec<_>>>()?;
    let vx = g.concat(&vx_parts)?;
    let vy = g.concat(&vy_parts)?;
    let (vdx, vdy) = (g.constant(diagonal(&kx, k)), g.constant(diagonal(&ky, k)));
    let dvx = g.conv2d(vx, vdx, None)?;
    let dvy = g.conv2d(vy, vdy, None)?;
    let div = g.add(dvx, dvy)?;

    // one copy per channel of each transition's field
    let expand = |g: &mut DiffGraph<T>, x: NodeId| -> Result<NodeId> {
        if channels == 1 {
            return Ok(x);
        }
        let mut parts = Vec::with_capacity(n);
        for t in 0..k {
            let one = g.slice_channels(x, t, 1)?;
            parts.extend(std::iter::repeat_n(one, channels));
        }
        g.concat(&parts)
    };
    let vx = expand(g, vx)?;
    let vy = expand(g, vy)?;
    let div = expand(g, div)?;

    let ax = g.mul(vx, gx)?;
    let ay = g.mul(vy, gy)?;
    let advect = g.add(ax, ay)?;
    let diffuse = g.mul(lap, d)?;
    let compress = g.mul(u, div)?;
    let mut step = g.add(u, diffuse)?;
    step = g.sub(step, advect)?;
    step = g.sub(step, compress)?;
    step = g.add(step, r)?;
    let res = g.sub(u_next, step)?;
    let ms = g.mean_square(res);
    Ok(g.scale(ms, n as f64))
}
