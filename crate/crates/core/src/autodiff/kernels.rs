//! Forward and adjoint kernels for the graph primitives.
//!
//! Parallel loops split work by sample or output plane, and every reduction
//! inside a work item runs in a fixed order, so results do not depend on the
//! thread count. Convolutions go through a patch matrix and a dense matrix
//! product.

use rayon::prelude::*;

use super::tensor::{Real, Tensor4};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Replicate-padded copy of every `(n, c)` plane; returns `(data, hp, wp)`.
fn pad_replicate<T: Real>(x: &Tensor4<T>, p: usize) -> (Vec<T>, usize, usize) {
    let [n, c, h, w] = x.dims();
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); n * c * hp * wp];
    out.par_chunks_mut(hp * wp)
        .zip(x.data().par_chunks(h * w))
        .for_each(|(dst, src)| {
            for pi in 0..hp {
                let si = pi.saturating_sub(p).min(h - 1);
                let row = &src[si * w..(si + 1) * w];
                let drow = &mut dst[pi * wp..(pi + 1) * wp];
                for (pj, d) in drow.iter_mut().enumerate() {
                    *d = row[pj.saturating_sub(p).min(w - 1)];
                }
            }
        });
    (out, hp, wp)
}

/// `(Ci·k·k, H·W)` patch matrix of one replicate-padded sample.
fn im2col<T: Real>(padded: &[T], ci: usize, (hp, wp): (usize, usize), (h, w): (usize, usize), k: usize) -> Vec<T> {
    let plane = h * w;
    let mut col = vec![T::zero(); ci * k * k * plane];
    for (r, row) in col.chunks_mut(plane).enumerate() {
        let (c, di, dj) = (r / (k * k), r / k % k, r % k);
        let src = &padded[c * hp * wp..(c + 1) * hp * wp];
        for i in 0..h {
            row[i * w..(i + 1) * w].copy_from_slice(&src[(i + di) * wp + dj..(i + di) * wp + dj + w]);
        }
    }
    col
}

/// Stride-1 cross-correlation with replicate padding. `w` is `(Co, Ci, k, k)`
/// with odd `k`; `b`, when present, holds `Co` values.
pub fn conv2d_forward<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>, b: Option<&Tensor4<T>>) -> Tensor4<T> {
    let [n, ci, h, wd] = x.dims();
    let [co, _, k, _] = w.dims();
    let (padded, hp, wp) = pad_replicate(x, k / 2);
    let plane = h * wd;
    let mut out = Tensor4::zeros([n, co, h, wd]);
    out.data_mut()
        .par_chunks_mut(co * plane)
        .enumerate()
        .for_each(|(nn, dst)| {
            let src = &padded[nn * ci * hp * wp..(nn + 1) * ci * hp * wp];
            let col = im2col(src, ci, (hp, wp), (h, wd), k);
            if let Some(b) = b {
                for (o, p) in dst.chunks_mut(plane).enumerate() {
                    p.fill(b.data()[o]);
                }
            }
            T::gemm(co, ci * k * k, plane, w.data(), false, &col, false, dst, T::one());
        });
    out
}

pub struct ConvGrads<T> {
    pub x: Option<Tensor4<T>>,
    pub w: Option<Tensor4<T>>,
    pub b: Option<Tensor4<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    gout: &Tensor4<T>,
    need: [bool; 3],
) -> ConvGrads<T> {
    let [n, ci, h, wd] = x.dims();
    let [co, _, k, _] = w.dims();
    let p = k / 2;
    let plane = h * wd;
    let ckk = ci * k * k;
    let g = gout.data();

    let gw = need[1].then(|| {
        let (padded, hp, wp) = pad_replicate(x, p);
        let mut gw = Tensor4::zeros(w.dims());
        for nn in 0..n {
            let src = &padded[nn * ci * hp * wp..(nn + 1) * ci * hp * wp];
            let col = im2col(src, ci, (hp, wp), (h, wd), k);
            let gs = &g[nn * co * plane..(nn + 1) * co * plane];
            T::gemm(co, plane, ckk, gs, false, &col, true, gw.data_mut(), T::one());
        }
        gw
    });

    let gb = need[2].then(|| {
        let mut gb = Tensor4::zeros([1, co, 1, 1]);
        for (o, slot) in gb.data_mut().iter_mut().enumerate() {
            for nn in 0..n {
                *slot += g[(nn * co + o) * plane..(nn * co + o + 1) * plane].iter().copied().sum::<T>();
            }
        }
        gb
    });

    let gx = need[0].then(|| {
        let (hp, wp) = (h + 2 * p, wd + 2 * p);
        let mut gx = Tensor4::zeros(x.dims());
        gx.data_mut()
            .par_chunks_mut(ci * plane)
            .enumerate()
            .for_each(|(nn, dst)| {
                let gs = &g[nn * co * plane..(nn + 1) * co * plane];
                let mut gcol = vec![T::zero(); ckk * plane];
                T::gemm(ckk, co, plane, w.data(), true, gs, false, &mut gcol, T::zero());
                for c in 0..ci {
                    let mut gpad = vec![T::zero(); hp * wp];
                    for di in 0..k {
                        for dj in 0..k {
                            let row = &gcol[((c * k + di) * k + dj) * plane..((c * k + di) * k + dj + 1) * plane];
                            for i in 0..h {
                                let prow = &mut gpad[(i + di) * wp + dj..(i + di) * wp + dj + wd];
                                for (d, &s) in prow.iter_mut().zip(&row[i * wd..(i + 1) * wd]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                    // fold the padding back onto the edge cells it replicated
                    let out = &mut dst[c * plane..(c + 1) * plane];
                    for pi in 0..hp {
                        let si = pi.saturating_sub(p).min(h - 1);
                        for pj in 0..wp {
                            let sj = pj.saturating_sub(p).min(wd - 1);
                            out[si * wd + sj] += gpad[pi * wp + pj];
                        }
                    }
                }
            });
        gx
    });

    ConvGrads { x: gx, w: gw, b: gb }
}

/// Index of the broadcast operand's plane for output plane `(nn, c)`.
#[inline]
fn bcast_plane(b_dims: [usize; 4], nn: usize, c: usize) -> usize {
    let bn = if b_dims[0] == 1 { 0 } else { nn };
    let bc = if b_dims[1] == 1 { 0 } else { c };
    bn * b_dims[1] + bc
}

/// `a ⊕ b` where `b` may broadcast over batch, channel and (jointly) space.
pub fn broadcast_binary<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Tensor4<T> {
    let [n, c, _, _] = a.dims();
    let plane = a.plane();
    let mut out = Tensor4::zeros(a.dims());
    let bd = b.dims();
    let bplane = b.plane();
    for nn in 0..n {
        for cc in 0..c {
            let off = (nn * c + cc) * plane;
            let boff = bcast_plane(bd, nn, cc) * bplane;
            let ap = &a.data()[off..off + plane];
            let dst = &mut out.data_mut()[off..off + plane];
            if bplane == 1 {
                let y = b.data()[boff];
                for (o, &x) in dst.iter_mut().zip(ap) {
                    *o = f(x, y);
                }
            } else {
                let bp = &b.data()[boff..boff + plane];
                for ((o, &x), &y) in dst.iter_mut().zip(ap).zip(bp) {
                    *o = f(x, y);
                }
            }
        }
    }
    out
}

/// Sums a full-size gradient down to the broadcast operand's dims.
pub fn reduce_to<T: Real>(g: &Tensor4<T>, b_dims: [usize; 4]) -> Tensor4<T> {
    if g.dims() == b_dims {
        return g.clone();
    }
    let [n, c, _, _] = g.dims();
    let plane = g.plane();
    let bplane = b_dims[2] * b_dims[3];
    let mut out = Tensor4::zeros(b_dims);
    for nn in 0..n {
        for cc in 0..c {
            let off = (nn * c + cc) * plane;
            let boff = bcast_plane(b_dims, nn, cc) * bplane;
            let src = &g.data()[off..off + plane];
            if bplane == 1 {
                out.data_mut()[boff] += src.iter().copied().sum::<T>();
            } else {
                for (d, &s) in out.data_mut()[boff..boff + plane].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    out
}

pub fn downsample2<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::cast_from(0.25);
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    out.data_mut()
        .chunks_mut(ho * wo)
        .zip(x.data().chunks(h * w))
        .for_each(|(dst, src)| {
            for i in 0..ho {
                for j in 0..wo {
                    let (a, b) = (src[2 * i * w + 2 * j], src[2 * i * w + 2 * j + 1]);
                    let (cc, d) = (src[(2 * i + 1) * w + 2 * j], src[(2 * i + 1) * w + 2 * j + 1]);
                    dst[i * wo + j] = (a + b + cc + d) * quarter;
                }
            }
        });
    out
}

pub fn downsample2_backward<T: Real>(g: &Tensor4<T>, x_dims: [usize; 4]) -> Tensor4<T> {
    let [_, _, h, w] = x_dims;
    let wo = w / 2;
    let quarter = T::cast_from(0.25);
    let mut out = Tensor4::zeros(x_dims);
    out.data_mut()
        .chunks_mut(h * w)
        .zip(g.data().chunks(g.plane()))
        .for_each(|(dst, src)| {
            for i in 0..h {
                for j in 0..w {
                    dst[i * w + j] = src[(i / 2) * wo + j / 2] * quarter;
                }
            }
        });
    out
}

pub fn upsample2<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, c, ho, wo]);
    out.data_mut()
        .chunks_mut(ho * wo)
        .zip(x.data().chunks(h * w))
        .for_each(|(dst, src)| {
            for i in 0..ho {
                for j in 0..wo {
                    dst[i * wo + j] = src[(i / 2) * w + j / 2];
                }
            }
        });
    out
}

pub fn upsample2_backward<T: Real>(g: &Tensor4<T>, x_dims: [usize; 4]) -> Tensor4<T> {
    let [_, _, h, w] = x_dims;
    let wo = 2 * w;
    let mut out = Tensor4::zeros(x_dims);
    out.data_mut()
        .chunks_mut(h * w)
        .zip(g.data().chunks(g.plane()))
        .for_each(|(dst, src)| {
            for i in 0..h {
                for j in 0..w {
                    dst[i * w + j] = src[2 * i * wo + 2 * j]
                        + src[2 * i * wo + 2 * j + 1]
                        + src[(2 * i + 1) * wo + 2 * j]
                        + src[(2 * i + 1) * wo + 2 * j + 1];
                }
            }
        });
    out
}

/// Concatenates along channels; all parts share `(N, H, W)`.
pub fn concat<T: Real>(parts: &[&Tensor4<T>]) -> Tensor4<T> {
    let [n, _, h, w] = parts[0].dims();
    let c: usize = parts.iter().map(|p| p.dims()[1]).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for nn in 0..n {
        for p in parts {
            let len = p.dims()[1] * h * w;
            data.extend_from_slice(&p.data()[nn * len..(nn + 1) * len]);
        }
    }
    Tensor4::new([n, c, h, w], data).expect("concat dims")
}

pub fn slice_channels<T: Real>(x: &Tensor4<T>, start: usize, len: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * len * plane);
    for nn in 0..n {
        let off = (nn * c + start) * plane;
        data.extend_from_slice(&x.data()[off..off + len * plane]);
    }
    Tensor4::new([n, len, h, w], data).expect("slice dims")
}

/// Adds `g` (a channel slice gradient) into `dst` at channel offset `start`.
pub fn scatter_channels<T: Real>(dst: &mut Tensor4<T>, g: &Tensor4<T>, start: usize) {
    let [n, c, h, w] = dst.dims();
    let len = g.dims()[1];
    let plane = h * w;
    for nn in 0..n {
        let off = (nn * c + start) * plane;
        let src = &g.data()[nn * len * plane..(nn + 1) * len * plane];
        for (d, &s) in dst.data_mut()[off..off + len * plane].iter_mut().zip(src) {
            *d += s;
        }
    }
}

/// `y[n, c] = x[n, c] · scale[c] + shift[c]`.
pub fn channel_affine<T: Real>(x: &Tensor4<T>, scale: &Tensor4<T>, shift: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, _, _] = x.dims();
    let plane = x.plane();
    let mut out = x.clone();
    for nn in 0..n {
        for cc in 0..c {
            let (a, b) = (scale.data()[cc], shift.data()[cc]);
            let off = (nn * c + cc) * plane;
            for v in &mut out.data_mut()[off..off + plane] {
                *v = *v * a + b;
            }
        }
    }
    out
}
