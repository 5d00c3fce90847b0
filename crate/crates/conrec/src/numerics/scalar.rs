//! Element types for tensors: f32 for training, f64 for gradient checks.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Clone
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maxs(self, other: Self) -> Self;
    fn mins(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// dst[i] += a * src[i]. The innermost loop of every convolution kernel.
    fn axpy(dst: &mut [Self], a: Self, src: &[Self]) {
        debug_assert_eq!(dst.len(), src.len());
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += a * *s;
        }
    }

    /// Dot product with a fixed summation order (deterministic across runs).
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = Self::ZERO;
        for (&x, &y) in a.iter().zip(b.iter()) {
            acc += x * y;
        }
        acc
    }

    /// Convolution inner loop for one output row:
    /// `acc[j] += sum over taps (xo, wo), ci < inner of x[xo+ci] * w[wo + ci*acc.len() + j]`.
    /// `acc` arrives pre-initialized (bias or running gradient) and stays
    /// register-resident across the whole tap x channel reduction.
    fn conv_pixel(acc: &mut [Self], taps: &[(usize, usize)], x: &[Self], w: &[Self], inner: usize) {
        conv_pixel_generic(acc, taps, x, w, inner);
    }

    /// Rank-1 update of a [inner, len(g)] block: `block[ci,:] += xs[ci] * g`.
    fn outer_acc(block: &mut [Self], xs: &[Self], g: &[Self]) {
        outer_acc_generic::<Self>(block, xs, g);
    }

    /// Convolution over a contiguous stride-1 span of `pixels` output
    /// positions that share the same valid tap set. Pixel p reads inputs at
    /// `x[xo + p*inner + ci]` and writes `out[p*cout .. (p+1)*cout]`.
    fn conv_row(
        out: &mut [Self],
        taps: &[(usize, usize)],
        x: &[Self],
        w: &[Self],
        inner: usize,
        cout: usize,
        pixels: usize,
    ) {
        for p in 0..pixels {
            let acc = &mut out[p * cout..(p + 1) * cout];
            Self::conv_pixel(acc, taps, &x[p * inner..], w, inner);
        }
    }

    /// Kernel-gradient accumulation over a contiguous stride-1 span:
    /// `block[ci, co] += sum over p < pixels of x[p*cin + ci] * g[p*cout + co]`.
    fn outer_row(block: &mut [Self], x: &[Self], g: &[Self], cin: usize, cout: usize, pixels: usize) {
        for p in 0..pixels {
            Self::outer_acc(block, &x[p * cin..p * cin + cin], &g[p * cout..p * cout + cout]);
        }
    }
}

fn conv_pixel_generic<S: Scalar>(acc: &mut [S], taps: &[(usize, usize)], x: &[S], w: &[S], inner: usize) {
    let cout = acc.len();
    for &(xo, wo) in taps {
        for ci in 0..inner {
            let xv = x[xo + ci];
            if xv != S::ZERO {
                let wrow = &w[wo + ci * cout..wo + (ci + 1) * cout];
                for (a, &wv) in acc.iter_mut().zip(wrow.iter()) {
                    *a += xv * wv;
                }
            }
        }
    }
}

fn outer_acc_generic<S: Scalar>(block: &mut [S], xs: &[S], g: &[S]) {
    let cout = g.len();
    for (ci, &xv) in xs.iter().enumerate() {
        if xv != S::ZERO {
            S::axpy(&mut block[ci * cout..(ci + 1) * cout], xv, g);
        }
    }
}

#[cfg(target_arch = "x86_64")]
fn fma_available() -> bool {
    std::arch::is_x86_feature_detected!("fma")
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn maxs(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn mins(self, other: Self) -> Self {
        f64::min(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn maxs(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn mins(self, other: Self) -> Self {
        f32::min(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    #[cfg(target_arch = "x86_64")]
    fn axpy(dst: &mut [f32], a: f32, src: &[f32]) {
        debug_assert_eq!(dst.len(), src.len());
        if a == 0.0 {
            return;
        }
        if dst.len() >= 8 && fma_available() {
            // Safety: fma implies avx; lengths checked above.
            unsafe { axpy_f32_fma(dst, a, src) }
        } else {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += a * *s;
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    fn conv_pixel(acc: &mut [f32], taps: &[(usize, usize)], x: &[f32], w: &[f32], inner: usize) {
        if acc.len() >= 8 && fma_available() {
            unsafe { conv_pixel_f32_fma(acc, taps, x, w, inner) }
        } else {
            conv_pixel_generic(acc, taps, x, w, inner);
        }
    }

    #[cfg(target_arch = "x86_64")]
    fn outer_acc(block: &mut [f32], xs: &[f32], g: &[f32]) {
        if g.len() >= 8 && fma_available() {
            unsafe { outer_acc_f32_fma(block, xs, g) }
        } else {
            outer_acc_generic::<f32>(block, xs, g);
        }
    }

    #[cfg(target_arch = "x86_64")]
    fn outer_row(block: &mut [f32], x: &[f32], g: &[f32], cin: usize, cout: usize, pixels: usize) {
        if fma_available() {
            if cout == 4 && cin <= 8 {
                return unsafe { outer_row_c4_f32_fma(block, x, g, cin, pixels) };
            }
            if cout == 1 && cin <= 32 {
                return unsafe { outer_row_c1_f32_fma(block, x, g, cin, pixels) };
            }
        }
        for p in 0..pixels {
            f32::outer_acc(block, &x[p * cin..p * cin + cin], &g[p * cout..p * cout + cout]);
        }
    }

    #[cfg(target_arch = "x86_64")]
    fn conv_row(
        out: &mut [f32],
        taps: &[(usize, usize)],
        x: &[f32],
        w: &[f32],
        inner: usize,
        cout: usize,
        pixels: usize,
    ) {
        if fma_available() {
            match cout {
                4 => return unsafe { conv_row_c4_f32_fma(out, taps, x, w, inner, pixels) },
                1 => return unsafe { conv_row_c1_f32_fma(out, taps, x, w, inner, pixels) },
                _ if cout >= 8 => {
                    for p in 0..pixels {
                        unsafe {
                            conv_pixel_f32_fma(
                                &mut out[p * cout..(p + 1) * cout],
                                taps,
                                &x[p * inner..],
                                w,
                                inner,
                            )
                        };
                    }
                    return;
                }
                _ => {}
            }
        }
        for p in 0..pixels {
            conv_pixel_generic(&mut out[p * cout..(p + 1) * cout], taps, &x[p * inner..], w, inner);
        }
    }
}

/// cout == 4: eight output pixels per iteration, accumulators cover
/// out[p0..p7][c0..c3] in four registers.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn conv_row_c4_f32_fma(
    out: &mut [f32],
    taps: &[(usize, usize)],
    x: &[f32],
    w: &[f32],
    inner: usize,
    pixels: usize,
) {
    use std::arch::x86_64::*;
    let op = out.as_mut_ptr();
    let xp = x.as_ptr();
    let wp = w.as_ptr();
    let mut p = 0usize;
    while p + 8 <= pixels {
        let base = p * 4;
        let mut a0 = _mm256_loadu_ps(op.add(base));
        let mut a1 = _mm256_loadu_ps(op.add(base + 8));
        let mut a2 = _mm256_loadu_ps(op.add(base + 16));
        let mut a3 = _mm256_loadu_ps(op.add(base + 24));
        for &(xo, wo) in taps {
            let x0 = xp.add(xo + p * inner);
            for ci in 0..inner {
                // [w0 w1 w2 w3 | w0 w1 w2 w3]
                let wrow = _mm256_broadcast_ps(&*(wp.add(wo + ci * 4) as *const __m128));
                let pick = |q: usize| *x0.add(q * inner + ci);
                let xv01 = _mm256_set_m128(_mm_set1_ps(pick(1)), _mm_set1_ps(pick(0)));
                let xv23 = _mm256_set_m128(_mm_set1_ps(pick(3)), _mm_set1_ps(pick(2)));
                let xv45 = _mm256_set_m128(_mm_set1_ps(pick(5)), _mm_set1_ps(pick(4)));
                let xv67 = _mm256_set_m128(_mm_set1_ps(pick(7)), _mm_set1_ps(pick(6)));
                a0 = _mm256_fmadd_ps(xv01, wrow, a0);
                a1 = _mm256_fmadd_ps(xv23, wrow, a1);
                a2 = _mm256_fmadd_ps(xv45, wrow, a2);
                a3 = _mm256_fmadd_ps(xv67, wrow, a3);
            }
        }
        _mm256_storeu_ps(op.add(base), a0);
        _mm256_storeu_ps(op.add(base + 8), a1);
        _mm256_storeu_ps(op.add(base + 16), a2);
        _mm256_storeu_ps(op.add(base + 24), a3);
        p += 8;
    }
    while p < pixels {
        conv_pixel_generic(&mut out[p * 4..(p + 1) * 4], taps, &x[p * inner..], w, inner);
        p += 1;
    }
}

/// cout == 1: thirty-two output pixels per iteration. The single-input-channel
/// case reads pixels contiguously; otherwise inputs are gathered at stride
/// `inner`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_row_c1_f32_fma(
    out: &mut [f32],
    taps: &[(usize, usize)],
    x: &[f32],
    w: &[f32],
    inner: usize,
    pixels: usize,
) {
    use std::arch::x86_64::*;
    let op = out.as_mut_ptr();
    let xp = x.as_ptr();
    let wp = w.as_ptr();
    let stride = _mm256_mullo_epi32(
        _mm256_set1_epi32(inner as i32),
        _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7),
    );
    let mut p = 0usize;
    while p + 32 <= pixels {
        let mut a0 = _mm256_loadu_ps(op.add(p));
        let mut a1 = _mm256_loadu_ps(op.add(p + 8));
        let mut a2 = _mm256_loadu_ps(op.add(p + 16));
        let mut a3 = _mm256_loadu_ps(op.add(p + 24));
        for &(xo, wo) in taps {
            for ci in 0..inner {
                let wv = _mm256_set1_ps(*wp.add(wo + ci));
                let x0 = xp.add(xo + p * inner + ci);
                let (v0, v1, v2, v3) = if inner == 1 {
                    (
                        _mm256_loadu_ps(x0),
                        _mm256_loadu_ps(x0.add(8)),
                        _mm256_loadu_ps(x0.add(16)),
                        _mm256_loadu_ps(x0.add(24)),
                    )
                } else {
                    (
                        _mm256_i32gather_ps::<4>(x0, stride),
                        _mm256_i32gather_ps::<4>(x0.add(8 * inner), stride),
                        _mm256_i32gather_ps::<4>(x0.add(16 * inner), stride),
                        _mm256_i32gather_ps::<4>(x0.add(24 * inner), stride),
                    )
                };
                a0 = _mm256_fmadd_ps(v0, wv, a0);
                a1 = _mm256_fmadd_ps(v1, wv, a1);
                a2 = _mm256_fmadd_ps(v2, wv, a2);
                a3 = _mm256_fmadd_ps(v3, wv, a3);
            }
        }
        _mm256_storeu_ps(op.add(p), a0);
        _mm256_storeu_ps(op.add(p + 8), a1);
        _mm256_storeu_ps(op.add(p + 16), a2);
        _mm256_storeu_ps(op.add(p + 24), a3);
        p += 32;
    }
    while p < pixels {
        conv_pixel_generic(&mut out[p..p + 1], taps, &x[p * inner..], w, inner);
        p += 1;
    }
}

/// AVX2+FMA conv inner loop; accumulators live in registers across the full
/// tap x channel reduction, in 32/16/8-lane column tiles.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn conv_pixel_f32_fma(acc: &mut [f32], taps: &[(usize, usize)], x: &[f32], w: &[f32], inner: usize) {
    use std::arch::x86_64::*;
    let cout = acc.len();
    let ap = acc.as_mut_ptr();
    let xp = x.as_ptr();
    let wp = w.as_ptr();
    let mut co = 0usize;
    while co + 32 <= cout {
        let mut a0 = _mm256_loadu_ps(ap.add(co));
        let mut a1 = _mm256_loadu_ps(ap.add(co + 8));
        let mut a2 = _mm256_loadu_ps(ap.add(co + 16));
        let mut a3 = _mm256_loadu_ps(ap.add(co + 24));
        for &(xo, wo) in taps {
            for ci in 0..inner {
                let xv = *xp.add(xo + ci);
                if xv != 0.0 {
                    let xb = _mm256_set1_ps(xv);
                    let base = wo + ci * cout + co;
                    a0 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(base)), a0);
                    a1 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(base + 8)), a1);
                    a2 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(base + 16)), a2);
                    a3 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(base + 24)), a3);
                }
            }
        }
        _mm256_storeu_ps(ap.add(co), a0);
        _mm256_storeu_ps(ap.add(co + 8), a1);
        _mm256_storeu_ps(ap.add(co + 16), a2);
        _mm256_storeu_ps(ap.add(co + 24), a3);
        co += 32;
    }
    while co + 16 <= cout {
        let mut a0 = _mm256_loadu_ps(ap.add(co));
        let mut a1 = _mm256_loadu_ps(ap.add(co + 8));
        for &(xo, wo) in taps {
            for ci in 0..inner {
                let xv = *xp.add(xo + ci);
                if xv != 0.0 {
                    let xb = _mm256_set1_ps(xv);
                    let base = wo + ci * cout + co;
                    a0 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(base)), a0);
                    a1 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(base + 8)), a1);
                }
            }
        }
        _mm256_storeu_ps(ap.add(co), a0);
        _mm256_storeu_ps(ap.add(co + 8), a1);
        co += 16;
    }
    while co + 8 <= cout {
        let mut a0 = _mm256_loadu_ps(ap.add(co));
        for &(xo, wo) in taps {
            for ci in 0..inner {
                let xv = *xp.add(xo + ci);
                if xv != 0.0 {
                    let xb = _mm256_set1_ps(xv);
                    a0 = _mm256_fmadd_ps(xb, _mm256_loadu_ps(wp.add(wo + ci * cout + co)), a0);
                }
            }
        }
        _mm256_storeu_ps(ap.add(co), a0);
        co += 8;
    }
    if co < cout {
        for &(xo, wo) in taps {
            for ci in 0..inner {
                let xv = *xp.add(xo + ci);
                if xv != 0.0 {
                    for j in co..cout {
                        *ap.add(j) += xv * *wp.add(wo + ci * cout + j);
                    }
                }
            }
        }
    }
}

/// Kernel-gradient span for cout == 4, cin <= 8: the whole [cin, 4] block
/// stays in registers across the pixel loop.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn outer_row_c4_f32_fma(block: &mut [f32], x: &[f32], g: &[f32], cin: usize, pixels: usize) {
    use std::arch::x86_64::*;
    let bp = block.as_mut_ptr();
    let xp = x.as_ptr();
    let gp = g.as_ptr();
    // Accumulator register r covers rows (2r, 2r+1) of the [cin, 4] block.
    let nregs = cin.div_ceil(2);
    let mut acc = [_mm256_setzero_ps(); 4];
    let odd_tail = cin % 2 == 1;
    for (r, a) in acc.iter_mut().enumerate().take(nregs) {
        if 2 * r + 2 <= cin {
            *a = _mm256_loadu_ps(bp.add(r * 8));
        } else {
            // Last row of an odd cin: load 4 floats into the low half.
            *a = _mm256_castps128_ps256(_mm_loadu_ps(bp.add(r * 8)));
        }
    }
    for p in 0..pixels {
        let grow = _mm256_broadcast_ps(&*(gp.add(p * 4) as *const __m128));
        let xrow = xp.add(p * cin);
        for r in 0..nregs {
            let x0 = _mm_set1_ps(*xrow.add(2 * r));
            let x1 = if 2 * r + 1 < cin { _mm_set1_ps(*xrow.add(2 * r + 1)) } else { _mm_setzero_ps() };
            let xv = _mm256_set_m128(x1, x0);
            acc[r] = _mm256_fmadd_ps(xv, grow, acc[r]);
        }
    }
    for (r, a) in acc.iter().enumerate().take(nregs) {
        if 2 * r + 2 <= cin {
            _mm256_storeu_ps(bp.add(r * 8), *a);
        } else if odd_tail {
            _mm_storeu_ps(bp.add(r * 8), _mm256_castps256_ps128(*a));
        }
    }
}

/// Kernel-gradient span for cout == 1, cin <= 32: block is a [cin] column
/// held in registers; pixel inputs are contiguous cin-rows.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn outer_row_c1_f32_fma(block: &mut [f32], x: &[f32], g: &[f32], cin: usize, pixels: usize) {
    use std::arch::x86_64::*;
    let bp = block.as_mut_ptr();
    let xp = x.as_ptr();
    let mut acc = [_mm256_setzero_ps(); 5];
    let mut tail = [0.0f32; 8];
    let full = cin / 8;
    let rem = cin % 8;
    for (r, a) in acc.iter_mut().enumerate().take(full) {
        *a = _mm256_loadu_ps(bp.add(r * 8));
    }
    if rem > 0 {
        tail[..rem].copy_from_slice(&block[full * 8..full * 8 + rem]);
        acc[full] = _mm256_loadu_ps(tail.as_ptr());
    }
    for (p, &gv) in g.iter().enumerate().take(pixels) {
        if gv == 0.0 {
            continue;
        }
        let gb = _mm256_set1_ps(gv);
        let xrow = xp.add(p * cin);
        for (r, a) in acc.iter_mut().enumerate().take(full) {
            *a = _mm256_fmadd_ps(gb, _mm256_loadu_ps(xrow.add(r * 8)), *a);
        }
        if rem > 0 {
            let mut xt = [0.0f32; 8];
            std::ptr::copy_nonoverlapping(xrow.add(full * 8), xt.as_mut_ptr(), rem);
            acc[full] = _mm256_fmadd_ps(gb, _mm256_loadu_ps(xt.as_ptr()), acc[full]);
        }
    }
    for (r, a) in acc.iter().enumerate().take(full) {
        _mm256_storeu_ps(bp.add(r * 8), *a);
    }
    if rem > 0 {
        _mm256_storeu_ps(tail.as_mut_ptr(), acc[full]);
        block[full * 8..full * 8 + rem].copy_from_slice(&tail[..rem]);
    }
}

/// AVX2+FMA rank-1 update: block[ci, :] += xs[ci] * g, with g tiles held in
/// registers across the row loop.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn outer_acc_f32_fma(block: &mut [f32], xs: &[f32], g: &[f32]) {
    use std::arch::x86_64::*;
    let cout = g.len();
    let bp = block.as_mut_ptr();
    let gp = g.as_ptr();
    let mut co = 0usize;
    while co + 16 <= cout {
        let g0 = _mm256_loadu_ps(gp.add(co));
        let g1 = _mm256_loadu_ps(gp.add(co + 8));
        for (ci, &xv) in xs.iter().enumerate() {
            if xv != 0.0 {
                let xb = _mm256_set1_ps(xv);
                let row = ci * cout + co;
                let b0 = _mm256_loadu_ps(bp.add(row));
                let b1 = _mm256_loadu_ps(bp.add(row + 8));
                _mm256_storeu_ps(bp.add(row), _mm256_fmadd_ps(xb, g0, b0));
                _mm256_storeu_ps(bp.add(row + 8), _mm256_fmadd_ps(xb, g1, b1));
            }
        }
        co += 16;
    }
    while co + 8 <= cout {
        let g0 = _mm256_loadu_ps(gp.add(co));
        for (ci, &xv) in xs.iter().enumerate() {
            if xv != 0.0 {
                let xb = _mm256_set1_ps(xv);
                let row = ci * cout + co;
                let b0 = _mm256_loadu_ps(bp.add(row));
                _mm256_storeu_ps(bp.add(row), _mm256_fmadd_ps(xb, g0, b0));
            }
        }
        co += 8;
    }
    if co < cout {
        for (ci, &xv) in xs.iter().enumerate() {
            if xv != 0.0 {
                for j in co..cout {
                    *bp.add(ci * cout + j) += xv * *gp.add(j);
                }
            }
        }
    }
}

/// AVX2+FMA vectorized `dst += a * src`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx,fma")]
unsafe fn axpy_f32_fma(dst: &mut [f32], a: f32, src: &[f32]) {
    use std::arch::x86_64::*;
    let n = dst.len();
    let av = _mm256_set1_ps(a);
    let dp = dst.as_mut_ptr();
    let sp = src.as_ptr();
    let mut i = 0usize;
    while i + 16 <= n {
        let d0 = _mm256_loadu_ps(dp.add(i));
        let d1 = _mm256_loadu_ps(dp.add(i + 8));
        let s0 = _mm256_loadu_ps(sp.add(i));
        let s1 = _mm256_loadu_ps(sp.add(i + 8));
        _mm256_storeu_ps(dp.add(i), _mm256_fmadd_ps(av, s0, d0));
        _mm256_storeu_ps(dp.add(i + 8), _mm256_fmadd_ps(av, s1, d1));
        i += 16;
    }
    while i + 8 <= n {
        let d0 = _mm256_loadu_ps(dp.add(i));
        let s0 = _mm256_loadu_ps(sp.add(i));
        _mm256_storeu_ps(dp.add(i), _mm256_fmadd_ps(av, s0, d0));
        i += 8;
    }
    while i < n {
        *dp.add(i) += a * *sp.add(i);
        i += 1;
    }
}
