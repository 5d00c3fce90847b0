//! Forward and backward kernels.
//!
//! Layout is NHWC throughout; convolution inner loops are rank-1 updates over
//! the contiguous output-channel axis (see [`Scalar::axpy`]). Batch items are
//! independent, so kernels may fan out over items; every cross-item reduction
//! collects per-item partial sums and combines them in index order, which makes
//! results bit-identical for any thread count.

use rayon::prelude::*;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so that `out = ceil(in / stride)`; for stride 1 the spatial
    /// size is preserved.
    Same,
    /// No padding; `out = (in - k) / stride + 1`.
    Valid,
}

/// Work below this many multiply-adds stays single-threaded.
const PAR_THRESHOLD: usize = 32_768;

// Parallel fan-out over batch items, split into at most `num_threads`
// contiguous ranges so each op call costs a constant number of task wakeups.
// Per-item results are always produced (and later combined) in item order,
// which keeps every reduction bit-identical for any thread count.

fn run_items<S, F>(out: &mut [S], item_len: usize, work_per_item: usize, f: F)
where
    S: Scalar,
    F: Fn(usize, &mut [S]) + Sync + Send,
{
    let n = out.len() / item_len;
    let threads = rayon::current_num_threads();
    if n > 1 && threads > 1 && work_per_item.saturating_mul(n) > PAR_THRESHOLD {
        let per = n.div_ceil(threads);
        out.par_chunks_mut(per * item_len).enumerate().for_each(|(t, big)| {
            for (j, chunk) in big.chunks_mut(item_len).enumerate() {
                f(t * per + j, chunk);
            }
        });
    } else {
        for (i, chunk) in out.chunks_mut(item_len).enumerate() {
            f(i, chunk);
        }
    }
}

fn map_items<T, F>(n: usize, work_per_item: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let threads = rayon::current_num_threads();
    if n > 1 && threads > 1 && work_per_item.saturating_mul(n) > PAR_THRESHOLD {
        let per = n.div_ceil(threads);
        let ranges: Vec<(usize, usize)> =
            (0..n.div_ceil(per)).map(|t| (t * per, ((t + 1) * per).min(n))).collect();
        let nested: Vec<Vec<T>> = ranges
            .into_par_iter()
            .map(|(lo, hi)| (lo..hi).map(&f).collect())
            .collect();
        nested.into_iter().flatten().collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Accumulate `src` into `dst` elementwise (gradient accumulation).
pub fn add_into<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>) {
    assert_eq!(dst.shape(), src.shape(), "gradient shape mismatch");
    for (d, s) in dst.data_mut().iter_mut().zip(src.data().iter()) {
        *d += *s;
    }
}

// ── Convolution ─────────────────────────────────────────────────────────

fn conv_span(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let span = (out - 1) * stride + k;
            let pad_total = span.saturating_sub(input);
            (out, pad_total / 2)
        }
        Padding::Valid => ((input - k) / stride + 1, 0),
    }
}

fn check_conv_args<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: Padding,
) -> Result<()> {
    if x.rank() != 4 || k.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects x[N,H,W,Cin] and k[kh,kw,Cin,Cout], got {:?} and {:?}",
            x.shape(),
            k.shape()
        )));
    }
    if stride < 1 {
        return Err(Error::Shape("conv2d stride must be >= 1".into()));
    }
    let (cin_x, cin_k, cout) = (x.dim(3), k.dim(2), k.dim(3));
    if cin_x != cin_k {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {cin_x}, kernel expects {cin_k}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?} != [{cout}]",
            bias.shape()
        )));
    }
    if padding == Padding::Valid && (k.dim(0) > x.dim(1) || k.dim(1) > x.dim(2)) {
        return Err(Error::Shape(format!(
            "conv2d valid padding: kernel {:?} larger than input {:?}",
            &k.shape()[..2],
            &x.shape()[1..3]
        )));
    }
    Ok(())
}

/// 2-D cross-correlation with bias.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<S>> {
    check_conv_args(x, k, bias, stride, padding)?;
    let (h, w) = (x.dim(1), x.dim(2));
    let (kh, kw) = (k.dim(0), k.dim(1));
    let (ho, pad_y) = conv_span(h, kh, stride, padding);
    let (wo, pad_x) = conv_span(w, kw, stride, padding);
    Ok(conv2d_explicit(x, k, bias, stride, (pad_y, pad_x), (ho, wo)))
}

/// Correlation with explicit padding and output extents; shared by the
/// forward pass and the stride-1 input-gradient path.
fn conv2d_explicit<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    (pad_y, pad_x): (usize, usize),
    (ho, wo): (usize, usize),
) -> Tensor<S> {
    let (n, h, w, cin) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (kh, kw, _, cout) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));

    let mut out = Tensor::zeros(&[n, ho, wo, cout]);
    let item_out = ho * wo * cout;
    let item_in = h * w * cin;
    let work = ho * wo * kh * kw * cin * cout;
    let xd = x.data();
    let kd = k.data();
    let bd = bias.data();

    // Interior columns where every kx tap is in bounds (stride 1 only).
    let full_lo = pad_x.min(wo);
    let full_hi = (w + pad_x + 1).saturating_sub(kw).min(wo).max(full_lo);

    run_items(out.data_mut(), item_out, work, |ni, ochunk| {
        let xi = &xd[ni * item_in..(ni + 1) * item_in];
        let mut taps: Vec<(usize, usize)> = Vec::with_capacity(kh * kw);
        let border = |ochunk: &mut [S], oy: usize, ox: usize, ky_lo: usize, ky_hi: usize, iy0: isize, taps: &mut Vec<(usize, usize)>| {
            let ix0 = (ox * stride) as isize - pad_x as isize;
            let kx_lo = (-ix0).max(0) as usize;
            let kx_hi = kw.min((w as isize - ix0).max(0) as usize);
            taps.clear();
            for ky in ky_lo..ky_hi {
                let iy = (iy0 + ky as isize) as usize;
                for kx in kx_lo..kx_hi {
                    let ix = (ix0 + kx as isize) as usize;
                    taps.push(((iy * w + ix) * cin, ((ky * kw + kx) * cin) * cout));
                }
            }
            let acc = &mut ochunk[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
            acc.copy_from_slice(bd);
            S::conv_pixel(acc, taps, xi, kd, cin);
        };

        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad_y as isize;
            let ky_lo = (-iy0).max(0) as usize;
            let ky_hi = kh.min((h as isize - iy0).max(0) as usize);
            if stride == 1 && full_hi > full_lo {
                for ox in 0..full_lo {
                    border(ochunk, oy, ox, ky_lo, ky_hi, iy0, &mut taps);
                }
                // One span call for the interior: all kx taps valid.
                let ix_base = full_lo - pad_x;
                taps.clear();
                for ky in ky_lo..ky_hi {
                    let iy = (iy0 + ky as isize) as usize;
                    for kx in 0..kw {
                        taps.push(((iy * w + ix_base + kx) * cin, ((ky * kw + kx) * cin) * cout));
                    }
                }
                let pixels = full_hi - full_lo;
                let span = &mut ochunk[(oy * wo + full_lo) * cout..(oy * wo + full_hi) * cout];
                for row in span.chunks_mut(cout) {
                    row.copy_from_slice(bd);
                }
                S::conv_row(span, &taps, xi, kd, cin, cout, pixels);
                for ox in full_hi..wo {
                    border(ochunk, oy, ox, ky_lo, ky_hi, iy0, &mut taps);
                }
            } else {
                for ox in 0..wo {
                    border(ochunk, oy, ox, ky_lo, ky_hi, iy0, &mut taps);
                }
            }
        }
    });
    out
}

/// Gradients of conv2d w.r.t. input, kernel and bias.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    stride: usize,
    padding: Padding,
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    conv2d_backward_sel(x, k, stride, padding, dout, true)
}

/// As [`conv2d_backward`], optionally skipping the input gradient (the first
/// layer's input is a constant).
pub fn conv2d_backward_sel<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    stride: usize,
    padding: Padding,
    dout: &Tensor<S>,
    want_dx: bool,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, h, w, cin) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (kh, kw, _, cout) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));
    let (ho, pad_y) = conv_span(h, kh, stride, padding);
    let (wo, pad_x) = conv_span(w, kw, stride, padding);
    assert_eq!(dout.shape(), [n, ho, wo, cout]);
    let kd = k.data();

    let dx = if !want_dx {
        Tensor::zeros(x.shape())
    } else if stride == 1 {
        // dx is itself a correlation: dout against the spatially flipped,
        // channel-transposed kernel, padded with kh-1-pad.
        let mut ktf = Tensor::zeros(&[kh, kw, cout, cin]);
        for ky in 0..kh {
            for kx in 0..kw {
                let src = ((kh - 1 - ky) * kw + (kw - 1 - kx)) * cin * cout;
                let dst = (ky * kw + kx) * cout * cin;
                for ci in 0..cin {
                    for co in 0..cout {
                        ktf.data_mut()[dst + co * cin + ci] = kd[src + ci * cout + co];
                    }
                }
            }
        }
        let zero_bias = Tensor::zeros(&[cin]);
        conv2d_explicit(dout, &ktf, &zero_bias, 1, (kh - 1 - pad_y, kw - 1 - pad_x), (h, w))
    } else {
        dx_strided(x, k, stride, (pad_y, pad_x), dout)
    };

    // Per-item kernel/bias partials, combined in item order.
    let item_in = h * w * cin;
    let item_out = ho * wo * cout;
    let work = ho * wo * kh * kw * cin * cout;
    let xd = x.data();
    let dod = dout.data();
    let full_lo = pad_x.min(wo);
    let full_hi = (w + pad_x + 1).saturating_sub(kw).min(wo).max(full_lo);

    let threads = rayon::current_num_threads().max(1);
    let per_range = n.div_ceil(threads);
    let ranges: Vec<(usize, usize)> =
        (0..n.div_ceil(per_range)).map(|t| (t * per_range, ((t + 1) * per_range).min(n))).collect();
    let partials = map_items(ranges.len(), work * per_range, |ri| {
        let (lo, hi) = ranges[ri];
        let mut dk = vec![S::ZERO; kd.len()];
        let mut db = vec![S::ZERO; cout];
        for ni in lo..hi {
        let xi = &xd[ni * item_in..(ni + 1) * item_in];
        let doi = &dod[ni * item_out..(ni + 1) * item_out];
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad_y as isize;
            let ky_lo = (-iy0).max(0) as usize;
            let ky_hi = kh.min((h as isize - iy0).max(0) as usize);
            for ox in 0..wo {
                let dorow = &doi[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                for (d, &g) in db.iter_mut().zip(dorow.iter()) {
                    *d += g;
                }
            }
            let pixel = |dk: &mut [S], ox: usize| {
                let ix0 = (ox * stride) as isize - pad_x as isize;
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = kw.min((w as isize - ix0).max(0) as usize);
                let dorow = &doi[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                for ky in ky_lo..ky_hi {
                    let iy = (iy0 + ky as isize) as usize;
                    for kx in kx_lo..kx_hi {
                        let ix = (ix0 + kx as isize) as usize;
                        let xoff = (iy * w + ix) * cin;
                        let kbase = (ky * kw + kx) * cin * cout;
                        S::outer_acc(&mut dk[kbase..kbase + cin * cout], &xi[xoff..xoff + cin], dorow);
                    }
                }
            };
            if stride == 1 && full_hi > full_lo {
                for ox in 0..full_lo {
                    pixel(&mut dk, ox);
                }
                let ix_base = full_lo - pad_x;
                let pixels = full_hi - full_lo;
                let g_base = (oy * wo + full_lo) * cout;
                for ky in ky_lo..ky_hi {
                    let iy = (iy0 + ky as isize) as usize;
                    for kx in 0..kw {
                        let kbase = (ky * kw + kx) * cin * cout;
                        S::outer_row(
                            &mut dk[kbase..kbase + cin * cout],
                            &xi[(iy * w + ix_base + kx) * cin..],
                            &doi[g_base..],
                            cin,
                            cout,
                            pixels,
                        );
                    }
                }
                for ox in full_hi..wo {
                    pixel(&mut dk, ox);
                }
            } else {
                for ox in 0..wo {
                    pixel(&mut dk, ox);
                }
            }
        }
        }
        (dk, db)
    });

    let mut dk = Tensor::zeros(k.shape());
    let mut db = Tensor::zeros(&[cout]);
    for (pk, pb) in partials {
        for (d, s) in dk.data_mut().iter_mut().zip(pk.iter()) {
            *d += *s;
        }
        for (d, s) in db.data_mut().iter_mut().zip(pb.iter()) {
            *d += *s;
        }
    }
    (dx, dk, db)
}

/// Scatter-style input gradient for strided convolutions.
fn dx_strided<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    stride: usize,
    (pad_y, pad_x): (usize, usize),
    dout: &Tensor<S>,
) -> Tensor<S> {
    let (h, w, cin) = (x.dim(1), x.dim(2), x.dim(3));
    let (kh, kw, _, cout) = (k.dim(0), k.dim(1), k.dim(2), k.dim(3));
    let (ho, wo) = (dout.dim(1), dout.dim(2));
    let kd = k.data();
    let mut kt = vec![S::ZERO; kd.len()];
    for ky in 0..kh {
        for kx in 0..kw {
            let base = (ky * kw + kx) * cin * cout;
            for ci in 0..cin {
                for co in 0..cout {
                    kt[base + co * cin + ci] = kd[base + ci * cout + co];
                }
            }
        }
    }
    let item_in = h * w * cin;
    let item_out = ho * wo * cout;
    let work = ho * wo * kh * kw * cin * cout;
    let dod = dout.data();
    let mut dx = Tensor::zeros(x.shape());
    run_items(dx.data_mut(), item_in, work, |ni, dxi| {
        let doi = &dod[ni * item_out..(ni + 1) * item_out];
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad_y as isize;
            let ky_lo = (-iy0).max(0) as usize;
            let ky_hi = kh.min((h as isize - iy0).max(0) as usize);
            for ox in 0..wo {
                let ix0 = (ox * stride) as isize - pad_x as isize;
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = kw.min((w as isize - ix0).max(0) as usize);
                let do_off = (oy * wo + ox) * cout;
                for ky in ky_lo..ky_hi {
                    let iy = (iy0 + ky as isize) as usize;
                    for kx in kx_lo..kx_hi {
                        let ix = (ix0 + kx as isize) as usize;
                        let xoff = (iy * w + ix) * cin;
                        let tap = [(do_off, (ky * kw + kx) * cout * cin)];
                        S::conv_pixel(&mut dxi[xoff..xoff + cin], &tap, doi, &kt, cout);
                    }
                }
            }
        }
    });
    dx
}

// ── Pooling / resampling ────────────────────────────────────────────────

/// 2x2 max pooling with stride 2. Spatial extents must be even.
/// Returns the pooled map and the flat input index of each maximum.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("max_pool2 expects rank 4, got {:?}", x.shape())));
    }
    let (n, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max_pool2 needs even extents, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, ho, wo, c]);
    let mut arg = vec![0u32; n * ho * wo * c];
    let xd = x.data();
    for ni in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = ((ni * ho + oy) * wo + ox) * c;
                for ci in 0..c {
                    let mut best = S::from_f64(f64::NEG_INFINITY);
                    let mut best_ix = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let ix = ((ni * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ci;
                            if xd[ix] > best {
                                best = xd[ix];
                                best_ix = ix;
                            }
                        }
                    }
                    out.data_mut()[obase + ci] = best;
                    arg[obase + ci] = best_ix as u32;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<S: Scalar>(
    dout: &Tensor<S>,
    argmax: &[u32],
    in_shape: &[usize],
) -> Tensor<S> {
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for (g, &ix) in dout.data().iter().zip(argmax.iter()) {
        dxd[ix as usize] += *g;
    }
    dx
}

/// Nearest-neighbor upsampling: each pixel replicated factor x factor.
pub fn upsample_nearest<S: Scalar>(x: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    if factor < 1 {
        return Err(Error::Shape("upsample factor must be >= 1".into()));
    }
    if x.rank() != 4 {
        return Err(Error::Shape(format!("upsample expects rank 4, got {:?}", x.shape())));
    }
    let (n, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, ho, wo, c]);
    let xd = x.data();
    run_items(out.data_mut(), ho * wo * c, ho * wo * c, |ni, oc| {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((ni * h + oy / factor) * w + ox / factor) * c;
                oc[(oy * wo + ox) * c..(oy * wo + ox + 1) * c]
                    .copy_from_slice(&xd[src..src + c]);
            }
        }
    });
    Ok(out)
}

pub fn upsample_nearest_backward<S: Scalar>(dout: &Tensor<S>, factor: usize) -> Tensor<S> {
    let (n, ho, wo, c) = (dout.dim(0), dout.dim(1), dout.dim(2), dout.dim(3));
    let (h, w) = (ho / factor, wo / factor);
    let mut dx = Tensor::zeros(&[n, h, w, c]);
    let dod = dout.data();
    run_items(dx.data_mut(), h * w * c, ho * wo * c, |ni, dc| {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((ni * ho + oy) * wo + ox) * c;
                let dst = ((oy / factor) * w + ox / factor) * c;
                for ci in 0..c {
                    dc[dst + ci] += dod[src + ci];
                }
            }
        }
    });
    dx
}

// ── Batch normalization ─────────────────────────────────────────────────

/// Per-channel batch statistics over all non-channel axes.
pub struct BnStats<S> {
    pub mean: Vec<S>,
    /// Biased (population) variance.
    pub var: Vec<S>,
    pub inv_std: Vec<S>,
}

fn check_bn_args<S: Scalar>(x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>) -> Result<usize> {
    if x.rank() < 2 {
        return Err(Error::Shape("batch_norm expects rank >= 2".into()));
    }
    let c = x.dim(x.rank() - 1);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "batch_norm channel mismatch: x has {c} channels, gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(c)
}

/// Training-mode batch norm. Returns the normalized output and the batch
/// statistics (the caller folds them into its running estimates).
pub fn batch_norm_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, BnStats<S>)> {
    let c = check_bn_args(x, gamma, beta)?;
    let rows = x.numel() / c;
    let n = x.dim(0);
    let row_per_item = rows / n;
    let xd = x.data();

    let sum_parts = map_items(n, row_per_item * c, |ni| {
        let mut s = vec![S::ZERO; c];
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for (acc, &v) in s.iter_mut().zip(&xd[base + r * c..base + (r + 1) * c]) {
                *acc += v;
            }
        }
        s
    });
    let mut mean = vec![S::ZERO; c];
    for p in &sum_parts {
        for (m, &v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    let inv_rows = S::ONE / S::from_f64(rows as f64);
    for m in mean.iter_mut() {
        *m *= inv_rows;
    }

    let var_parts = map_items(n, row_per_item * c, |ni| {
        let mut s = vec![S::ZERO; c];
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for (ci, acc) in s.iter_mut().enumerate() {
                let d = xd[base + r * c + ci] - mean[ci];
                *acc += d * d;
            }
        }
        s
    });
    let mut var = vec![S::ZERO; c];
    for p in &var_parts {
        for (m, &v) in var.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    for v in var.iter_mut() {
        *v *= inv_rows;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();

    let gd = gamma.data();
    let bd = beta.data();
    let mut out = Tensor::zeros(x.shape());
    run_items(out.data_mut(), row_per_item * c, row_per_item * c, |ni, oc| {
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for ci in 0..c {
                let xh = (xd[base + r * c + ci] - mean[ci]) * inv_std[ci];
                oc[r * c + ci] = xh * gd[ci] + bd[ci];
            }
        }
    });
    Ok((out, BnStats { mean, var, inv_std }))
}

/// Gradients of training-mode batch norm: (dx, dgamma, dbeta).
pub fn batch_norm_train_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let c = x.dim(x.rank() - 1);
    let rows = x.numel() / c;
    let n = x.dim(0);
    let row_per_item = rows / n;
    let xd = x.data();
    let dod = dout.data();

    // s1[c] = sum dy, s2[c] = sum dy * xhat
    let parts = map_items(n, row_per_item * c, |ni| {
        let mut s1 = vec![S::ZERO; c];
        let mut s2 = vec![S::ZERO; c];
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for ci in 0..c {
                let g = dod[base + r * c + ci];
                let xh = (xd[base + r * c + ci] - mean[ci]) * inv_std[ci];
                s1[ci] += g;
                s2[ci] += g * xh;
            }
        }
        (s1, s2)
    });
    let mut s1 = vec![S::ZERO; c];
    let mut s2 = vec![S::ZERO; c];
    for (p1, p2) in &parts {
        for ci in 0..c {
            s1[ci] += p1[ci];
            s2[ci] += p2[ci];
        }
    }

    let m = S::from_f64(rows as f64);
    let gd = gamma.data();
    let mut dx = Tensor::zeros(x.shape());
    run_items(dx.data_mut(), row_per_item * c, row_per_item * c, |ni, dc| {
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for ci in 0..c {
                let g = dod[base + r * c + ci];
                let xh = (xd[base + r * c + ci] - mean[ci]) * inv_std[ci];
                dc[r * c + ci] = gd[ci] * inv_std[ci] / m * (m * g - s1[ci] - xh * s2[ci]);
            }
        }
    });
    let dgamma = Tensor::new(&[c], s2).unwrap();
    let dbeta = Tensor::new(&[c], s1).unwrap();
    (dx, dgamma, dbeta)
}

/// Inference-mode batch norm using running statistics.
pub fn batch_norm_infer<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    run_mean: &Tensor<S>,
    run_var: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    let c = check_bn_args(x, gamma, beta)?;
    if run_mean.shape() != [c] || run_var.shape() != [c] {
        return Err(Error::Shape("batch_norm running stats channel mismatch".into()));
    }
    let inv_std: Vec<S> = run_var.data().iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
    let rows = x.numel() / c;
    let n = x.dim(0);
    let row_per_item = rows / n;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let md = run_mean.data();
    let mut out = Tensor::zeros(x.shape());
    run_items(out.data_mut(), row_per_item * c, row_per_item * c, |ni, oc| {
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for ci in 0..c {
                oc[r * c + ci] = (xd[base + r * c + ci] - md[ci]) * inv_std[ci] * gd[ci] + bd[ci];
            }
        }
    });
    Ok(out)
}

/// Gradients of inference-mode batch norm (running stats are constants).
pub fn batch_norm_infer_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    run_mean: &[S],
    inv_std: &[S],
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let c = x.dim(x.rank() - 1);
    let rows = x.numel() / c;
    let xd = x.data();
    let dod = dout.data();
    let gd = gamma.data();
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![S::ZERO; c];
    let mut dbeta = vec![S::ZERO; c];
    let dxd = dx.data_mut();
    for r in 0..rows {
        for ci in 0..c {
            let g = dod[r * c + ci];
            let xh = (xd[r * c + ci] - run_mean[ci]) * inv_std[ci];
            dxd[r * c + ci] = g * gd[ci] * inv_std[ci];
            dgamma[ci] += g * xh;
            dbeta[ci] += g;
        }
    }
    (
        dx,
        Tensor::new(&[c], dgamma).unwrap(),
        Tensor::new(&[c], dbeta).unwrap(),
    )
}

// ── Fused conv + batch-norm + ReLU ──────────────────────────────────────
//
// The three stages of every U-net block run as one tape node: the raw
// convolution output stays transient, only the normalized pre-scale
// activations (xhat) and the block output are kept for backward.

pub struct ConvBnRelu<S: Scalar> {
    pub y: Tensor<S>,
    pub xhat: Tensor<S>,
    pub stats: BnStats<S>,
}

pub fn conv_bn_relu_train<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    bias: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    stride: usize,
    padding: Padding,
    eps: S,
) -> Result<ConvBnRelu<S>> {
    let z = conv2d(x, k, bias, stride, padding)?;
    let c = check_bn_args(&z, gamma, beta)?;
    let rows = z.numel() / c;
    let n = z.dim(0);
    let row_per_item = rows / n;
    let zd = z.data();

    let sum_parts = map_items(n, row_per_item * c, |ni| {
        let mut s = vec![S::ZERO; c];
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for (acc, &v) in s.iter_mut().zip(&zd[base + r * c..base + (r + 1) * c]) {
                *acc += v;
            }
        }
        s
    });
    let inv_rows = S::ONE / S::from_f64(rows as f64);
    let mut mean = vec![S::ZERO; c];
    for p in &sum_parts {
        for (m, &v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m *= inv_rows;
    }
    let var_parts = map_items(n, row_per_item * c, |ni| {
        let mut s = vec![S::ZERO; c];
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for (ci, acc) in s.iter_mut().enumerate() {
                let d = zd[base + r * c + ci] - mean[ci];
                *acc += d * d;
            }
        }
        s
    });
    let mut var = vec![S::ZERO; c];
    for p in &var_parts {
        for (m, &v) in var.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    for v in var.iter_mut() {
        *v *= inv_rows;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();

    let gd = gamma.data();
    let bd = beta.data();
    let mut xhat: Tensor<S> = Tensor::zeros(z.shape());
    let mut y: Tensor<S> = Tensor::zeros(z.shape());
    // One fused pass: normalize, scale, rectify.
    let xh_ptr = SendPtr(xhat.data_mut().as_mut_ptr());
    run_items(y.data_mut(), row_per_item * c, row_per_item * c, |ni, yc| {
        let base = ni * row_per_item * c;
        let xh = unsafe { std::slice::from_raw_parts_mut(xh_ptr.get().add(base), row_per_item * c) };
        for r in 0..row_per_item {
            for ci in 0..c {
                let h = (zd[base + r * c + ci] - mean[ci]) * inv_std[ci];
                xh[r * c + ci] = h;
                yc[r * c + ci] = (h * gd[ci] + bd[ci]).maxs(S::ZERO);
            }
        }
    });
    Ok(ConvBnRelu { y, xhat, stats: BnStats { mean, var, inv_std } })
}

pub fn conv_bn_relu_infer<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    bias: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    run_mean: &Tensor<S>,
    run_var: &Tensor<S>,
    stride: usize,
    padding: Padding,
    eps: S,
) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
    let z = conv2d(x, k, bias, stride, padding)?;
    let c = check_bn_args(&z, gamma, beta)?;
    if run_mean.shape() != [c] || run_var.shape() != [c] {
        return Err(Error::Shape("batch_norm running stats channel mismatch".into()));
    }
    let inv_std: Vec<S> = run_var.data().iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
    let rows = z.numel() / c;
    let n = z.dim(0);
    let row_per_item = rows / n;
    let zd = z.data();
    let md = run_mean.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut xhat: Tensor<S> = Tensor::zeros(z.shape());
    let mut y: Tensor<S> = Tensor::zeros(z.shape());
    let xh_ptr = SendPtr(xhat.data_mut().as_mut_ptr());
    run_items(y.data_mut(), row_per_item * c, row_per_item * c, |ni, yc| {
        let base = ni * row_per_item * c;
        let xh = unsafe { std::slice::from_raw_parts_mut(xh_ptr.get().add(base), row_per_item * c) };
        for r in 0..row_per_item {
            for ci in 0..c {
                let h = (zd[base + r * c + ci] - md[ci]) * inv_std[ci];
                xh[r * c + ci] = h;
                yc[r * c + ci] = (h * gd[ci] + bd[ci]).maxs(S::ZERO);
            }
        }
    });
    Ok((y, xhat, inv_std))
}

/// Backward of the fused block. `train` selects batch-statistics coupling.
#[allow(clippy::too_many_arguments)]
pub fn conv_bn_relu_backward<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    gamma: &Tensor<S>,
    y: &Tensor<S>,
    xhat: &Tensor<S>,
    inv_std: &[S],
    stride: usize,
    padding: Padding,
    dout: &Tensor<S>,
    train: bool,
    want_dx: bool,
) -> (Tensor<S>, Tensor<S>, Tensor<S>, Tensor<S>, Tensor<S>) {
    let c = y.dim(y.rank() - 1);
    let rows = y.numel() / c;
    let n = y.dim(0);
    let row_per_item = rows / n;
    let yd = y.data();
    let xh = xhat.data();
    let dod = dout.data();
    let gd = gamma.data();

    // s1 = sum dz, s2 = sum dz*xhat with dz = dy masked by the ReLU.
    let parts = map_items(n, row_per_item * c, |ni| {
        let mut s1 = vec![S::ZERO; c];
        let mut s2 = vec![S::ZERO; c];
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for ci in 0..c {
                let i = base + r * c + ci;
                if yd[i] > S::ZERO {
                    s1[ci] += dod[i];
                    s2[ci] += dod[i] * xh[i];
                }
            }
        }
        (s1, s2)
    });
    let mut s1 = vec![S::ZERO; c];
    let mut s2 = vec![S::ZERO; c];
    for (p1, p2) in &parts {
        for ci in 0..c {
            s1[ci] += p1[ci];
            s2[ci] += p2[ci];
        }
    }

    let m = S::from_f64(rows as f64);
    let mut dconv = Tensor::zeros(y.shape());
    run_items(dconv.data_mut(), row_per_item * c, row_per_item * c, |ni, dc| {
        let base = ni * row_per_item * c;
        for r in 0..row_per_item {
            for ci in 0..c {
                let i = base + r * c + ci;
                let dz = if yd[i] > S::ZERO { dod[i] } else { S::ZERO };
                dc[r * c + ci] = if train {
                    gd[ci] * inv_std[ci] / m * (m * dz - s1[ci] - xh[i] * s2[ci])
                } else {
                    dz * gd[ci] * inv_std[ci]
                };
            }
        }
    });
    let (dx, dk, db) = conv2d_backward_sel(x, k, stride, padding, &dconv, want_dx);
    (
        dx,
        dk,
        db,
        Tensor::new(&[c], s2).unwrap(),
        Tensor::new(&[c], s1).unwrap(),
    )
}

/// Raw pointer wrapper for writing disjoint slices from parallel items.
struct SendPtr<S>(*mut S);
unsafe impl<S> Send for SendPtr<S> {}
unsafe impl<S> Sync for SendPtr<S> {}
impl<S> SendPtr<S> {
    fn get(&self) -> *mut S {
        self.0
    }
}

// ── Pooling to vectors ──────────────────────────────────────────────────

/// Spatial mean: [N,h,w,f] -> [N,f].
pub fn global_average_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("gap expects rank 4, got {:?}", x.shape())));
    }
    let (n, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let xd = x.data();
    let inv = S::ONE / S::from_f64((h * w) as f64);
    let mut out = Tensor::zeros(&[n, c]);
    run_items(out.data_mut(), c, h * w * c, |ni, oc| {
        let base = ni * h * w * c;
        for r in 0..h * w {
            for (acc, &v) in oc.iter_mut().zip(&xd[base + r * c..base + (r + 1) * c]) {
                *acc += v;
            }
        }
        for v in oc.iter_mut() {
            *v *= inv;
        }
    });
    Ok(out)
}

pub fn global_average_pool_backward<S: Scalar>(dout: &Tensor<S>, in_shape: &[usize]) -> Tensor<S> {
    let (h, w, c) = (in_shape[1], in_shape[2], in_shape[3]);
    let inv = S::ONE / S::from_f64((h * w) as f64);
    let dod = dout.data();
    let mut dx = Tensor::zeros(in_shape);
    run_items(dx.data_mut(), h * w * c, h * w * c, |ni, dc| {
        let grow = &dod[ni * c..(ni + 1) * c];
        for r in 0..h * w {
            for ci in 0..c {
                dc[r * c + ci] = grow[ci] * inv;
            }
        }
    });
    dx
}

// ── Shape plumbing ──────────────────────────────────────────────────────

/// Concatenate along the channel axis.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 4 || b.rank() != 4 || a.shape()[..3] != b.shape()[..3] {
        return Err(Error::Shape(format!(
            "concat_channels mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, h, w) = (a.dim(0), a.dim(1), a.dim(2));
    let (ca, cb) = (a.dim(3), b.dim(3));
    let c = ca + cb;
    let ad = a.data();
    let bd = b.data();
    let mut out = Tensor::zeros(&[n, h, w, c]);
    let od = out.data_mut();
    for r in 0..n * h * w {
        od[r * c..r * c + ca].copy_from_slice(&ad[r * ca..(r + 1) * ca]);
        od[r * c + ca..(r + 1) * c].copy_from_slice(&bd[r * cb..(r + 1) * cb]);
    }
    Ok(out)
}

pub fn concat_channels_backward<S: Scalar>(
    dout: &Tensor<S>,
    ca: usize,
    cb: usize,
) -> (Tensor<S>, Tensor<S>) {
    let (n, h, w) = (dout.dim(0), dout.dim(1), dout.dim(2));
    let c = ca + cb;
    let dod = dout.data();
    let mut da = Tensor::zeros(&[n, h, w, ca]);
    let mut db = Tensor::zeros(&[n, h, w, cb]);
    for r in 0..n * h * w {
        da.data_mut()[r * ca..(r + 1) * ca].copy_from_slice(&dod[r * c..r * c + ca]);
        db.data_mut()[r * cb..(r + 1) * cb].copy_from_slice(&dod[r * c + ca..(r + 1) * c]);
    }
    (da, db)
}

// ── Elementwise nonlinearities ──────────────────────────────────────────

fn elementwise<S: Scalar>(x: &Tensor<S>, f: impl Fn(S) -> S + Sync + Send) -> Tensor<S> {
    let n = x.dim(0).max(1);
    let item = x.numel() / n;
    let xd = x.data();
    let mut out = Tensor::zeros(x.shape());
    run_items(out.data_mut(), item, item, |ni, oc| {
        for (o, &v) in oc.iter_mut().zip(&xd[ni * item..(ni + 1) * item]) {
            *o = f(v);
        }
    });
    out
}

fn elementwise2<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S + Sync + Send) -> Tensor<S> {
    let n = a.dim(0).max(1);
    let item = a.numel() / n;
    let ad = a.data();
    let bd = b.data();
    let mut out = Tensor::zeros(a.shape());
    run_items(out.data_mut(), item, item, |ni, oc| {
        for (i, o) in oc.iter_mut().enumerate() {
            let idx = ni * item + i;
            *o = f(ad[idx], bd[idx]);
        }
    });
    out
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    elementwise(x, |v| v.maxs(S::ZERO))
}

/// dx from the saved output: relu'(x) = 1 where y > 0.
pub fn relu_backward<S: Scalar>(y: &Tensor<S>, dout: &Tensor<S>) -> Tensor<S> {
    elementwise2(y, dout, |yv, g| if yv > S::ZERO { g } else { S::ZERO })
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    elementwise(x, |v| {
        // Branch on sign for stability at large |v|.
        if v >= S::ZERO {
            S::ONE / (S::ONE + (-v).exp())
        } else {
            let e = v.exp();
            e / (S::ONE + e)
        }
    })
}

pub fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, dout: &Tensor<S>) -> Tensor<S> {
    elementwise2(y, dout, |yv, g| g * yv * (S::ONE - yv))
}

// ── Dense ───────────────────────────────────────────────────────────────

/// Fully connected layer: [N,D] @ [D,M] + [M].
pub fn dense<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.shape() != [w.dim(1)] {
        return Err(Error::Shape(format!(
            "dense mismatch: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (n, d, m) = (x.dim(0), x.dim(1), w.dim(1));
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = Tensor::zeros(&[n, m]);
    run_items(out.data_mut(), m, d * m, |ni, row| {
        row.copy_from_slice(bd);
        for di in 0..d {
            S::axpy(row, xd[ni * d + di], &wd[di * m..(di + 1) * m]);
        }
    });
    Ok(out)
}

pub fn dense_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, d, m) = (x.dim(0), x.dim(1), w.dim(1));
    let xd = x.data();
    let wd = w.data();
    let dod = dout.data();

    let mut dx = Tensor::zeros(&[n, d]);
    run_items(dx.data_mut(), d, d * m, |ni, row| {
        let g = &dod[ni * m..(ni + 1) * m];
        for di in 0..d {
            row[di] = S::dot(g, &wd[di * m..(di + 1) * m]);
        }
    });

    let mut dw = Tensor::zeros(&[d, m]);
    let mut db = Tensor::zeros(&[m]);
    for ni in 0..n {
        let g = &dod[ni * m..(ni + 1) * m];
        for di in 0..d {
            S::axpy(&mut dw.data_mut()[di * m..(di + 1) * m], xd[ni * d + di], g);
        }
        for (acc, &v) in db.data_mut().iter_mut().zip(g.iter()) {
            *acc += v;
        }
    }
    (dx, dw, db)
}

// ── Contrastive-head primitives ─────────────────────────────────────────

/// Normalize each row of [N,D] to unit L2 norm. Returns row norms too.
pub fn l2_normalize_rows<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<S>)> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!("l2_normalize expects rank 2, got {:?}", x.shape())));
    }
    let (n, d) = (x.dim(0), x.dim(1));
    let xd = x.data();
    let mut norms = Vec::with_capacity(n);
    let mut out = Tensor::zeros(&[n, d]);
    for ni in 0..n {
        let row = &xd[ni * d..(ni + 1) * d];
        let norm = S::dot(row, row).sqrt();
        if !(norm > S::ZERO) {
            return Err(Error::Numeric(format!("zero-norm row {ni} cannot be normalized")));
        }
        let inv = S::ONE / norm;
        for (o, &v) in out.data_mut()[ni * d..(ni + 1) * d].iter_mut().zip(row.iter()) {
            *o = v * inv;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

pub fn l2_normalize_rows_backward<S: Scalar>(
    y: &Tensor<S>,
    norms: &[S],
    dout: &Tensor<S>,
) -> Tensor<S> {
    let (n, d) = (y.dim(0), y.dim(1));
    let yd = y.data();
    let dod = dout.data();
    let mut dx = Tensor::zeros(&[n, d]);
    for ni in 0..n {
        let yr = &yd[ni * d..(ni + 1) * d];
        let gr = &dod[ni * d..(ni + 1) * d];
        let proj = S::dot(yr, gr);
        let inv = S::ONE / norms[ni];
        for ((o, &g), &yv) in dx.data_mut()[ni * d..(ni + 1) * d]
            .iter_mut()
            .zip(gr.iter())
            .zip(yr.iter())
        {
            *o = (g - yv * proj) * inv;
        }
    }
    dx
}

/// A @ B^T for A [M,D], B [K,D].
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1) {
        return Err(Error::Shape(format!(
            "matmul_nt mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, d, k) = (a.dim(0), a.dim(1), b.dim(0));
    let ad = a.data();
    let bd = b.data();
    let mut out = Tensor::zeros(&[m, k]);
    let od = out.data_mut();
    for i in 0..m {
        let ar = &ad[i * d..(i + 1) * d];
        for j in 0..k {
            od[i * k + j] = S::dot(ar, &bd[j * d..(j + 1) * d]);
        }
    }
    Ok(out)
}

pub fn matmul_nt_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let (m, d, k) = (a.dim(0), a.dim(1), b.dim(0));
    let ad = a.data();
    let bd = b.data();
    let dod = dout.data();
    let mut da = Tensor::zeros(&[m, d]);
    let mut db = Tensor::zeros(&[k, d]);
    for i in 0..m {
        for j in 0..k {
            let g = dod[i * k + j];
            S::axpy(&mut da.data_mut()[i * d..(i + 1) * d], g, &bd[j * d..(j + 1) * d]);
            S::axpy(&mut db.data_mut()[j * d..(j + 1) * d], g, &ad[i * d..(i + 1) * d]);
        }
    }
    (da, db)
}

/// Multiply a feature map [N,h,w,C] by a single-channel map [N,h,w,1].
pub fn mul_bcast_c<S: Scalar>(x: &Tensor<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 4 || a.rank() != 4 || a.dim(3) != 1 || x.shape()[..3] != a.shape()[..3] {
        return Err(Error::Shape(format!(
            "mul_bcast_c mismatch: {:?} vs {:?}",
            x.shape(),
            a.shape()
        )));
    }
    let c = x.dim(3);
    let xd = x.data();
    let ad = a.data();
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for (r, &s) in ad.iter().enumerate() {
        for ci in 0..c {
            od[r * c + ci] = xd[r * c + ci] * s;
        }
    }
    Ok(out)
}

pub fn mul_bcast_c_backward<S: Scalar>(
    x: &Tensor<S>,
    a: &Tensor<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let c = x.dim(3);
    let xd = x.data();
    let ad = a.data();
    let dod = dout.data();
    let mut dx = Tensor::zeros(x.shape());
    let mut da = Tensor::zeros(a.shape());
    for (r, &s) in ad.iter().enumerate() {
        let mut acc = S::ZERO;
        for ci in 0..c {
            dx.data_mut()[r * c + ci] = dod[r * c + ci] * s;
            acc += dod[r * c + ci] * xd[r * c + ci];
        }
        da.data_mut()[r] = acc;
    }
    (dx, da)
}

/// Divide each row of u [N,C] by the scalar v[n] from v [N,1].
pub fn div_bcast_row<S: Scalar>(u: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    if u.rank() != 2 || v.rank() != 2 || v.dim(1) != 1 || u.dim(0) != v.dim(0) {
        return Err(Error::Shape(format!(
            "div_bcast_row mismatch: {:?} vs {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let c = u.dim(1);
    let mut out = Tensor::zeros(u.shape());
    for (ni, &dv) in v.data().iter().enumerate() {
        if dv == S::ZERO {
            return Err(Error::Numeric(format!("div_bcast_row: zero denominator at row {ni}")));
        }
        for ci in 0..c {
            out.data_mut()[ni * c + ci] = u.data()[ni * c + ci] / dv;
        }
    }
    Ok(out)
}

pub fn div_bcast_row_backward<S: Scalar>(
    u: &Tensor<S>,
    v: &Tensor<S>,
    dout: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let c = u.dim(1);
    let mut du = Tensor::zeros(u.shape());
    let mut dv = Tensor::zeros(v.shape());
    for (ni, &den) in v.data().iter().enumerate() {
        let mut acc = S::ZERO;
        for ci in 0..c {
            let g = dout.data()[ni * c + ci];
            du.data_mut()[ni * c + ci] = g / den;
            acc += g * u.data()[ni * c + ci];
        }
        dv.data_mut()[ni] = -acc / (den * den);
    }
    (du, dv)
}

// ── Losses ──────────────────────────────────────────────────────────────

/// Mean over every element of (pred - target)^2.
pub fn mse<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<S> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mse shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut acc = S::ZERO;
    for (&p, &t) in pred.data().iter().zip(target.data().iter()) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / S::from_f64(pred.numel() as f64))
}

pub fn mse_backward<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, upstream: S) -> Tensor<S> {
    let scale = S::from_f64(2.0) * upstream / S::from_f64(pred.numel() as f64);
    let mut dx = Tensor::zeros(pred.shape());
    for ((d, &p), &t) in dx.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        *d = scale * (p - t);
    }
    dx
}

/// NT-Xent from a similarity matrix s [2N,2N] whose rows (2k, 2k+1) are the
/// positive pair for source k: mean over all 2N anchors of
/// -log( exp(s[i,p]/tau) / sum_{k != i} exp(s[i,k]/tau) ),
/// stabilized by max-subtraction.
pub fn ntxent_from_sim<S: Scalar>(s: &Tensor<S>, tau: S) -> Result<S> {
    let n2 = check_ntxent_shape(s)?;
    let sd = s.data();
    let mut total = S::ZERO;
    for i in 0..n2 {
        let row = &sd[i * n2..(i + 1) * n2];
        let p = partner(i);
        let mut mx = S::from_f64(f64::NEG_INFINITY);
        for (k, &v) in row.iter().enumerate() {
            if k != i && v / tau > mx {
                mx = v / tau;
            }
        }
        let mut denom = S::ZERO;
        for (k, &v) in row.iter().enumerate() {
            if k != i {
                denom += (v / tau - mx).exp();
            }
        }
        // -s[i,p]/tau + logsumexp
        total += mx + denom.ln() - row[p] / tau;
    }
    Ok(total / S::from_f64(n2 as f64))
}

pub fn ntxent_from_sim_backward<S: Scalar>(s: &Tensor<S>, tau: S, upstream: S) -> Tensor<S> {
    let n2 = s.dim(0);
    let sd = s.data();
    let mut ds = Tensor::zeros(s.shape());
    let scale = upstream / (S::from_f64(n2 as f64) * tau);
    for i in 0..n2 {
        let row = &sd[i * n2..(i + 1) * n2];
        let p = partner(i);
        let mut mx = S::from_f64(f64::NEG_INFINITY);
        for (k, &v) in row.iter().enumerate() {
            if k != i && v / tau > mx {
                mx = v / tau;
            }
        }
        let mut denom = S::ZERO;
        for (k, &v) in row.iter().enumerate() {
            if k != i {
                denom += (v / tau - mx).exp();
            }
        }
        let drow = &mut ds.data_mut()[i * n2..(i + 1) * n2];
        for k in 0..n2 {
            if k == i {
                continue;
            }
            let soft = (row[k] / tau - mx).exp() / denom;
            let ind = if k == p { S::ONE } else { S::ZERO };
            drow[k] = scale * (soft - ind);
        }
    }
    ds
}

fn check_ntxent_shape<S: Scalar>(s: &Tensor<S>) -> Result<usize> {
    if s.rank() != 2 || s.dim(0) != s.dim(1) {
        return Err(Error::Shape(format!("similarity matrix must be square, got {:?}", s.shape())));
    }
    let n2 = s.dim(0);
    if n2 < 2 || n2 % 2 != 0 {
        return Err(Error::Shape(format!("need an even number >= 2 of rows, got {n2}")));
    }
    Ok(n2)
}

/// Index of the positive partner under the (2k, 2k+1) pairing.
#[inline]
pub fn partner(i: usize) -> usize {
    if i % 2 == 0 {
        i + 1
    } else {
        i - 1
    }
}
