//! Shared encoder-decoder body and tensor/frame conversions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffGraph, NodeId, ParamSet, Real, Tensor4};
use crate::error::{mismatch, Error, Result};
use crate::grid::{FrameSequence, ScalarField, VectorField};

/// Channel widths and convolutions per level of an encoder-decoder.
#[derive(Debug, Clone)]
pub(crate) struct Body<'a> {
    pub prefix: &'a str,
    pub out_channels: usize,
    pub widths: &'a [usize],
    pub depth: usize,
}

fn uniform_init<T: Real>(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4<T> {
    let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let data = (0..dims.iter().product())
        .map(|_| T::cast_from(rng.random_range(-bound..bound)))
        .collect();
    Tensor4::new(dims, data).expect("init dims")
}

fn conv_block<T: Real>(
    g: &mut DiffGraph<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    x: NodeId,
    out: usize,
) -> Result<NodeId> {
    let cin = g.shape(x)[0];
    let w = g.param(&format!("{name}.w"), uniform_init(rng, [out, cin, 3, 3]))?;
    let b = g.param(&format!("{name}.b"), Tensor4::zeros([1, out, 1, 1]))?;
    let y = g.conv2d(x, w, Some(b))?;
    Ok(g.leaky_relu(y))
}

/// Encoder-decoder with skip concatenations. Level `l` runs `depth` 3×3
/// convolutions at `widths[l]` channels; levels are separated by 2× average
/// pooling on the way down and nearest upsampling on the way up. The head
/// sees the last decoder level and `x` itself, and starts at zero so the
/// body initially outputs exactly zero.
pub(crate) fn encoder_decoder<T: Real>(
    g: &mut DiffGraph<T>,
    rng: &mut ChaCha8Rng,
    x: NodeId,
    body: &Body<'_>,
) -> Result<NodeId> {
    let levels = body.widths.len();
    let [_, h, w] = g.shape(x);
    let factor = 1usize << (levels - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Dimension(format!(
            "grid {h}x{w} must be divisible by {factor} for a {levels}-level network"
        )));
    }
    let p = body.prefix;
    let mut cur = x;
    let mut skips = Vec::with_capacity(levels);
    for (l, &width) in body.widths.iter().enumerate() {
        if l > 0 {
            cur = g.downsample2(cur)?;
        }
        for k in 0..body.depth {
            cur = conv_block(g, rng, &format!("{p}.enc{l}.{k}"), cur, width)?;
        }
        skips.push(cur);
    }
    for l in (0..levels - 1).rev() {
        let up = g.upsample2(cur);
        cur = g.concat(&[up, skips[l]])?;
        for k in 0..body.depth {
            cur = conv_block(g, rng, &format!("{p}.dec{l}.{k}"), cur, body.widths[l])?;
        }
    }
    let cat = g.concat(&[cur, x])?;
    let cin = g.shape(cat)[0];
    let hw = g.param(&format!("{p}.head.w"), Tensor4::zeros([body.out_channels, cin, 3, 3]))?;
    let hb = g.param(&format!("{p}.head.b"), Tensor4::zeros([1, body.out_channels, 1, 1]))?;
    g.conv2d(cat, hw, Some(hb))
}

/// Frozen per-channel `scale`/`shift` parameters followed by the affine map.
pub(crate) fn normalize<T: Real>(g: &mut DiffGraph<T>, prefix: &str, x: NodeId, stats: &[(f64, f64)]) -> Result<NodeId> {
    let c = g.shape(x)[0];
    if stats.len() != c {
        return Err(mismatch(format!("{prefix} normalization channels"), c, stats.len()));
    }
    let scale: Vec<f64> = stats.iter().map(|&(_, sd)| 1.0 / sd).collect();
    let shift: Vec<f64> = stats.iter().map(|&(m, sd)| -m / sd).collect();
    let a = g.frozen_param(&format!("{prefix}.norm.scale"), Tensor4::from_f64([1, c, 1, 1], &scale)?)?;
    let b = g.frozen_param(&format!("{prefix}.norm.shift"), Tensor4::from_f64([1, c, 1, 1], &shift)?)?;
    g.channel_affine(x, a, b)
}

/// Frames `range` of `seq` stacked as channels `[t0c0, t0c1, …, t1c0, …]`
/// of a batch-of-one tensor.
pub fn frames_to_tensor<T: Real>(seq: &FrameSequence, start: usize, len: usize) -> Result<Tensor4<T>> {
    if start + len > seq.len() {
        return Err(mismatch("frame range", seq.len(), start + len));
    }
    let (h, w) = seq.dims().ok_or_else(|| Error::Dimension("empty sequence".into()))?;
    let c = seq.channels();
    let mut data = Vec::with_capacity(len * c * h * w);
    for frame in &seq.frames()[start..start + len] {
        for f in frame {
            data.extend(f.values().iter().map(|&v| T::cast_from(v)));
        }
    }
    Tensor4::new([1, len * c, h, w], data)
}

pub fn field_to_tensor<T: Real>(f: &ScalarField) -> Tensor4<T> {
    let (h, w) = f.dims();
    Tensor4::from_f64([1, 1, h, w], f.values()).expect("field dims")
}

/// Inverse of [`frames_to_tensor`] for sample `n` of `t`.
pub fn tensor_to_frames<T: Real>(
    t: &Tensor4<T>,
    n: usize,
    labels: &[String],
    timestamps: Vec<i64>,
) -> Result<FrameSequence> {
    let [_, ch, h, w] = t.dims();
    let c = labels.len();
    if c == 0 || ch % c != 0 || ch / c != timestamps.len() {
        return Err(mismatch("tensor channels", timestamps.len() * c, ch));
    }
    let frames = (0..ch / c)
        .map(|k| {
            (0..c)
                .map(|ci| {
                    let v = t.channel(n, k * c + ci).iter().map(|x| x.as_f64()).collect();
                    ScalarField::new(h, w, v)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, timestamps, labels.to_vec())
}

/// Splits interleaved `[vx0, vy0, vx1, vy1, …]` channels of sample `n`.
pub fn tensor_to_velocities<T: Real>(t: &Tensor4<T>, n: usize) -> Result<Vec<VectorField>> {
    let [_, ch, h, w] = t.dims();
    (0..ch / 2)
        .map(|k| {
            let vx = t.channel(n, 2 * k).iter().map(|x| x.as_f64()).collect();
            let vy = t.channel(n, 2 * k + 1).iter().map(|x| x.as_f64()).collect();
            VectorField::new(h, w, vx, vy)
        })
        .collect()
}

pub fn velocities_to_tensor<T: Real>(vs: &[VectorField]) -> Result<Tensor4<T>> {
    let (h, w) = vs.first().map(VectorField::dims).ok_or_else(|| Error::Dimension("no velocity fields".into()))?;
    let mut data = Vec::with_capacity(vs.len() * 2 * h * w);
    for v in vs {
        if v.dims() != (h, w) {
            return Err(mismatch("velocity dims", (h, w), v.dims()));
        }
        data.extend(v.vx().iter().map(|&x| T::cast_from(x)));
        data.extend(v.vy().iter().map(|&x| T::cast_from(x)));
    }
    Tensor4::new([1, 2 * vs.len(), h, w], data)
}

/// Entries of `params` under `prefix`, checked name-by-name and dim-by-dim
/// against `template`.
pub(crate) fn select(template: &ParamSet<f64>, params: &ParamSet<f64>, prefix: &str) -> Result<ParamSet<f64>> {
    let subset = params.with_prefix(prefix);
    for (name, t) in template.iter() {
        let got = subset.get(name)?;
        if got.dims() != t.dims() {
            return Err(mismatch(format!("parameter `{name}`"), t.dims(), got.dims()));
        }
    }
    if subset.len() != template.len() {
        return Err(mismatch(format!("`{prefix}*` parameter count"), template.len(), subset.len()));
    }
    Ok(subset)
}
