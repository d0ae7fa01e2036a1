//! Flat-slice compute kernels behind the autodiff ops. Inner loops are
//! written as contiguous row operations so they autovectorize.

use crate::scalar::Scalar;

/// Border handling for spatial ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pad {
    Zero,
    Replicate,
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Output spatial size for kernel k, stride s, symmetric padding k/2.
#[inline]
pub fn conv_out_dim(input: usize, k: usize, stride: usize) -> usize {
    (input + 2 * (k / 2) - k) / stride + 1
}

/// Copy one channel plane into a padded buffer.
fn pad_plane<T: Scalar>(src: &[T], h: usize, w: usize, p: usize, pad: Pad, dst: &mut [T]) {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    debug_assert_eq!(dst.len(), hp * wp);
    match pad {
        Pad::Zero => {
            dst.iter_mut().for_each(|v| *v = T::zero());
            for y in 0..h {
                dst[(y + p) * wp + p..(y + p) * wp + p + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        Pad::Replicate => {
            for yp in 0..hp {
                let ys = yp.saturating_sub(p).min(h - 1);
                let row = &src[ys * w..(ys + 1) * w];
                let drow = &mut dst[yp * wp..(yp + 1) * wp];
                for (xp, d) in drow.iter_mut().enumerate() {
                    let xs = xp.saturating_sub(p).min(w - 1);
                    *d = row[xs];
                }
            }
        }
    }
}

/// Fold a padded-plane gradient back onto the source plane (transpose of
/// `pad_plane`). Zero padding discards the border; replicate accumulates it
/// into the clamped edge pixels.
fn fold_plane<T: Scalar>(gpad: &[T], h: usize, w: usize, p: usize, pad: Pad, gsrc: &mut [T]) {
    let wp = w + 2 * p;
    match pad {
        Pad::Zero => {
            for y in 0..h {
                let src = &gpad[(y + p) * wp + p..(y + p) * wp + p + w];
                axpy(&mut gsrc[y * w..(y + 1) * w], T::one(), src);
            }
        }
        Pad::Replicate => {
            for yp in 0..h + 2 * p {
                let ys = yp.saturating_sub(p).min(h - 1);
                let row = &gpad[yp * wp..(yp + 1) * wp];
                let drow = &mut gsrc[ys * w..(ys + 1) * w];
                for (xp, &g) in row.iter().enumerate() {
                    let xs = xp.saturating_sub(p).min(w - 1);
                    drow[xs] += g;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd<T: Scalar>(
    x: &[T],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[T],
    co: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
    pad: Pad,
    out: &mut [T],
) {
    let p = k / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let (ho, wo) = (conv_out_dim(h, k, stride), conv_out_dim(w, k, stride));
    let mut padbuf = vec![T::zero(); ci * hp * wp];
    for ni in 0..n {
        for c in 0..ci {
            pad_plane(
                &x[(ni * ci + c) * h * w..(ni * ci + c + 1) * h * w],
                h,
                w,
                p,
                pad,
                &mut padbuf[c * hp * wp..(c + 1) * hp * wp],
            );
        }
        for o in 0..co {
            let plane = &mut out[((ni * co) + o) * ho * wo..((ni * co) + o + 1) * ho * wo];
            let b = bias.map_or(T::zero(), |b| b[o]);
            plane.iter_mut().for_each(|v| *v = b);
            for c in 0..ci {
                let cpad = &padbuf[c * hp * wp..(c + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let ws = wgt[((o * ci + c) * k + ky) * k + kx];
                        if stride == 1 {
                            for y in 0..ho {
                                let irow = &cpad[(y + ky) * wp + kx..(y + ky) * wp + kx + wo];
                                axpy(&mut plane[y * wo..(y + 1) * wo], ws, irow);
                            }
                        } else {
                            for y in 0..ho {
                                let base = (y * stride + ky) * wp + kx;
                                let orow = &mut plane[y * wo..(y + 1) * wo];
                                for (xx, o) in orow.iter_mut().enumerate() {
                                    *o += ws * cpad[base + xx * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of conv2d with respect to input, weight, and bias. Any of the
/// gradient buffers may be empty slices to skip that output; non-empty ones
/// are accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<T: Scalar>(
    x: &[T],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    wgt: &[T],
    co: usize,
    k: usize,
    stride: usize,
    pad: Pad,
    gout: &[T],
    gx: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    let p = k / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let (ho, wo) = (conv_out_dim(h, k, stride), conv_out_dim(w, k, stride));
    let mut padbuf = vec![T::zero(); ci * hp * wp];
    let mut gpad = vec![T::zero(); ci * hp * wp];

    for ni in 0..n {
        if !gw.is_empty() {
            for c in 0..ci {
                pad_plane(
                    &x[(ni * ci + c) * h * w..(ni * ci + c + 1) * h * w],
                    h,
                    w,
                    p,
                    pad,
                    &mut padbuf[c * hp * wp..(c + 1) * hp * wp],
                );
            }
        }
        if !gx.is_empty() {
            gpad.iter_mut().for_each(|v| *v = T::zero());
        }
        for o in 0..co {
            let gplane = &gout[((ni * co) + o) * ho * wo..((ni * co) + o + 1) * ho * wo];
            if !gb.is_empty() {
                gb[o] += gplane.iter().copied().sum();
            }
            for c in 0..ci {
                let cpad = &padbuf[c * hp * wp..(c + 1) * hp * wp];
                let cgpad = &mut gpad[c * hp * wp..(c + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * ci + c) * k + ky) * k + kx;
                        let ws = wgt[widx];
                        let mut wacc = T::zero();
                        if stride == 1 {
                            for y in 0..ho {
                                let grow = &gplane[y * wo..(y + 1) * wo];
                                let base = (y + ky) * wp + kx;
                                if !gx.is_empty() {
                                    axpy(&mut cgpad[base..base + wo], ws, grow);
                                }
                                if !gw.is_empty() {
                                    wacc += dot(grow, &cpad[base..base + wo]);
                                }
                            }
                        } else {
                            for y in 0..ho {
                                let grow = &gplane[y * wo..(y + 1) * wo];
                                let base = (y * stride + ky) * wp + kx;
                                for (xx, &g) in grow.iter().enumerate() {
                                    if !gx.is_empty() {
                                        cgpad[base + xx * stride] += ws * g;
                                    }
                                    if !gw.is_empty() {
                                        wacc += g * cpad[base + xx * stride];
                                    }
                                }
                            }
                        }
                        if !gw.is_empty() {
                            gw[widx] += wacc;
                        }
                    }
                }
            }
        }
        if !gx.is_empty() {
            for c in 0..ci {
                fold_plane(
                    &gpad[c * hp * wp..(c + 1) * hp * wp],
                    h,
                    w,
                    p,
                    pad,
                    &mut gx[(ni * ci + c) * h * w..(ni * ci + c + 1) * h * w],
                );
            }
        }
    }
}

/// Depthwise conv: one k x k kernel per channel, no cross-channel taps.
#[allow(clippy::too_many_arguments)]
pub fn dwconv2d_fwd<T: Scalar>(
    x: &[T],
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    wgt: &[T], // [ch, k, k]
    k: usize,
    pad: Pad,
    out: &mut [T],
) {
    let p = k / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut padbuf = vec![T::zero(); hp * wp];
    out.iter_mut().for_each(|v| *v = T::zero());
    for ni in 0..n {
        for c in 0..ch {
            let plane_in = &x[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w];
            pad_plane(plane_in, h, w, p, pad, &mut padbuf);
            let plane = &mut out[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let ws = wgt[(c * k + ky) * k + kx];
                    for y in 0..h {
                        let irow = &padbuf[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                        axpy(&mut plane[y * w..(y + 1) * w], ws, irow);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dwconv2d_bwd<T: Scalar>(
    x: &[T],
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    wgt: &[T],
    k: usize,
    pad: Pad,
    gout: &[T],
    gx: &mut [T],
    gw: &mut [T],
) {
    let p = k / 2;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut padbuf = vec![T::zero(); hp * wp];
    let mut gpad = vec![T::zero(); hp * wp];
    for ni in 0..n {
        for c in 0..ch {
            let plane_in = &x[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w];
            pad_plane(plane_in, h, w, p, pad, &mut padbuf);
            gpad.iter_mut().for_each(|v| *v = T::zero());
            let gplane = &gout[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = (c * k + ky) * k + kx;
                    let ws = wgt[widx];
                    let mut wacc = T::zero();
                    for y in 0..h {
                        let grow = &gplane[y * w..(y + 1) * w];
                        let base = (y + ky) * wp + kx;
                        if !gx.is_empty() {
                            axpy(&mut gpad[base..base + w], ws, grow);
                        }
                        wacc += dot(grow, &padbuf[base..base + w]);
                    }
                    gw[widx] += wacc;
                }
            }
            if !gx.is_empty() {
                fold_plane(
                    &gpad,
                    h,
                    w,
                    p,
                    pad,
                    &mut gx[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w],
                );
            }
        }
    }
}

/// out[b, :] += x[b, i] * w[i, :]; the inner-dimension loop is unrolled four
/// wide so output-row traffic amortizes over four FMAs.
pub fn matmul_fwd<T: Scalar>(x: &[T], b: usize, i: usize, w: &[T], o: usize, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for bi in 0..b {
        let xrow = &x[bi * i..(bi + 1) * i];
        let orow = &mut out[bi * o..(bi + 1) * o];
        let mut ii = 0;
        while ii + 4 <= i {
            let (x0, x1, x2, x3) = (xrow[ii], xrow[ii + 1], xrow[ii + 2], xrow[ii + 3]);
            let w0 = &w[ii * o..(ii + 1) * o];
            let w1 = &w[(ii + 1) * o..(ii + 2) * o];
            let w2 = &w[(ii + 2) * o..(ii + 3) * o];
            let w3 = &w[(ii + 3) * o..(ii + 4) * o];
            for q in 0..o {
                orow[q] += x0 * w0[q] + x1 * w1[q] + x2 * w2[q] + x3 * w3[q];
            }
            ii += 4;
        }
        while ii < i {
            axpy(orow, xrow[ii], &w[ii * o..(ii + 1) * o]);
            ii += 1;
        }
    }
}

pub fn matmul_bwd<T: Scalar>(
    x: &[T],
    b: usize,
    i: usize,
    w: &[T],
    o: usize,
    gout: &[T],
    gx: &mut [T],
    gw: &mut [T],
) {
    for bi in 0..b {
        let grow = &gout[bi * o..(bi + 1) * o];
        let xrow = &x[bi * i..(bi + 1) * i];
        let gxrow = &mut gx[bi * i..(bi + 1) * i];
        let mut ii = 0;
        while ii + 4 <= i {
            let w0 = &w[ii * o..(ii + 1) * o];
            let w1 = &w[(ii + 1) * o..(ii + 2) * o];
            let w2 = &w[(ii + 2) * o..(ii + 3) * o];
            let w3 = &w[(ii + 3) * o..(ii + 4) * o];
            let (mut d0, mut d1, mut d2, mut d3) = (T::zero(), T::zero(), T::zero(), T::zero());
            for q in 0..o {
                let g = grow[q];
                d0 += g * w0[q];
                d1 += g * w1[q];
                d2 += g * w2[q];
                d3 += g * w3[q];
            }
            gxrow[ii] += d0;
            gxrow[ii + 1] += d1;
            gxrow[ii + 2] += d2;
            gxrow[ii + 3] += d3;
            for k in 0..4 {
                axpy(&mut gw[(ii + k) * o..(ii + k + 1) * o], xrow[ii + k], grow);
            }
            ii += 4;
        }
        while ii < i {
            gxrow[ii] += dot(grow, &w[ii * o..(ii + 1) * o]);
            axpy(&mut gw[ii * o..(ii + 1) * o], xrow[ii], grow);
            ii += 1;
        }
    }
}

/// Neighborhood concat: out channel block `nidx * C + c` holds channel c
/// shifted by the nidx-th offset (row-major over the (2r+1)^2 window),
/// replicate-padded at borders.
pub fn unfold_fwd<T: Scalar>(
    x: &[T],
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    r: usize,
    out: &mut [T],
) {
    let win = 2 * r + 1;
    for ni in 0..n {
        for (nidx, (dy, dx)) in window_offsets(r).enumerate() {
            for c in 0..ch {
                let src = &x[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w];
                let dst_idx = (ni * ch * win * win) + nidx * ch + c;
                let dst = &mut out[dst_idx * h * w..(dst_idx + 1) * h * w];
                for y in 0..h {
                    let ys = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for x_ in 0..w {
                        let xs = (x_ as isize + dx).clamp(0, w as isize - 1) as usize;
                        dst[y * w + x_] = src[ys * w + xs];
                    }
                }
            }
        }
    }
}

pub fn unfold_bwd<T: Scalar>(
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    r: usize,
    gout: &[T],
    gx: &mut [T],
) {
    let win = 2 * r + 1;
    for ni in 0..n {
        for (nidx, (dy, dx)) in window_offsets(r).enumerate() {
            for c in 0..ch {
                let dst = &mut gx[(ni * ch + c) * h * w..(ni * ch + c + 1) * h * w];
                let src_idx = (ni * ch * win * win) + nidx * ch + c;
                let src = &gout[src_idx * h * w..(src_idx + 1) * h * w];
                for y in 0..h {
                    let ys = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for x_ in 0..w {
                        let xs = (x_ as isize + dx).clamp(0, w as isize - 1) as usize;
                        dst[ys * w + xs] += src[y * w + x_];
                    }
                }
            }
        }
    }
}

fn window_offsets(r: usize) -> impl Iterator<Item = (isize, isize)> {
    let r = r as isize;
    (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (dy, dx)))
}

/// 2x nearest-neighbor upsample.
pub fn upsample2x_fwd<T: Scalar>(x: &[T], n: usize, ch: usize, h: usize, w: usize, out: &mut [T]) {
    let (h2, w2) = (2 * h, 2 * w);
    for pc in 0..n * ch {
        let src = &x[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * h2 * w2..(pc + 1) * h2 * w2];
        for y in 0..h {
            for x_ in 0..w {
                let v = src[y * w + x_];
                let base = 2 * y * w2 + 2 * x_;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + w2] = v;
                dst[base + w2 + 1] = v;
            }
        }
    }
}

pub fn upsample2x_bwd<T: Scalar>(gout: &[T], n: usize, ch: usize, h: usize, w: usize, gx: &mut [T]) {
    let (h2, w2) = (2 * h, 2 * w);
    for pc in 0..n * ch {
        let src = &gout[pc * h2 * w2..(pc + 1) * h2 * w2];
        let dst = &mut gx[pc * h * w..(pc + 1) * h * w];
        for y in 0..h {
            for x_ in 0..w {
                let base = 2 * y * w2 + 2 * x_;
                dst[y * w + x_] += src[base] + src[base + 1] + src[base + w2] + src[base + w2 + 1];
            }
        }
    }
}
