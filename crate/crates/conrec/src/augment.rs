//! Seeded augmentation pipeline: SimCLR-style views (crop / flip / grayscale
//! jitter / blur) plus the maskings the decoder must undo (in-painting,
//! out-painting, local pixel shuffling, non-linear intensity mapping).
//!
//! Every function is a pure function of (image, seed, config). Sub-seeds are
//! derived per view and per mask stage, so pairs can be built in any order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive, stream};

const SIMCLR_TAG: u64 = 0x51;
const VIEW_TAG: u64 = 0x52;
const MASK_TAG: u64 = 0x53;
const INPAINT_TAG: u64 = 0x54;
const OUTPAINT_TAG: u64 = 0x55;
const SHUFFLE_TAG: u64 = 0x56;
const NONLINEAR_TAG: u64 = 0x57;

/// Independent application probabilities for the mask stages.
#[derive(Clone, Copy, Debug)]
pub struct MaskProbs {
    pub inpaint: f32,
    pub outpaint: f32,
    pub shuffle: f32,
    pub nonlinear: f32,
}

#[derive(Clone, Debug)]
pub struct AugmentConfig {
    /// Area fraction of the random resized crop.
    pub crop_scale_range: (f32, f32),
    pub flip_prob: f32,
    /// Grayscale analogue of SimCLR color jitter; brightness and contrast
    /// factors are drawn from [max(0, 1 - 0.8 s), 1 + 0.8 s].
    pub jitter_strength: f32,
    pub blur_prob: f32,
    pub blur_sigma_range: (f32, f32),
    pub inpaint_count_range: (usize, usize),
    /// Rectangle side as a fraction of the image side.
    pub inpaint_size_range: (f32, f32),
    /// Kept-window side as a fraction of the image side.
    pub outpaint_keep_range: (f32, f32),
    pub shuffle_window: usize,
    pub shuffle_block_count: usize,
    pub mask_probs: MaskProbs,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale_range: (0.2, 1.0),
            flip_prob: 0.5,
            jitter_strength: 1.0,
            blur_prob: 0.5,
            blur_sigma_range: (0.1, 2.0),
            inpaint_count_range: (1, 3),
            inpaint_size_range: (0.1, 0.3),
            outpaint_keep_range: (0.6, 0.8),
            shuffle_window: 8,
            shuffle_block_count: 50,
            mask_probs: MaskProbs { inpaint: 0.4, outpaint: 0.3, shuffle: 0.5, nonlinear: 0.5 },
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: (f32, f32)| r.0 <= r.1;
        if !(self.crop_scale_range.0 > 0.0 && self.crop_scale_range.1 <= 1.0 && range_ok(self.crop_scale_range)) {
            return Err(Error::Config(format!("bad crop_scale_range {:?}", self.crop_scale_range)));
        }
        for (name, r) in [
            ("blur_sigma_range", self.blur_sigma_range),
            ("inpaint_size_range", self.inpaint_size_range),
            ("outpaint_keep_range", self.outpaint_keep_range),
        ] {
            if !(r.0 > 0.0 && range_ok(r)) {
                return Err(Error::Config(format!("bad {name} {r:?}")));
            }
        }
        if self.inpaint_count_range.0 > self.inpaint_count_range.1 {
            return Err(Error::Config("bad inpaint_count_range".into()));
        }
        let probs = [
            self.flip_prob,
            self.blur_prob,
            self.mask_probs.inpaint,
            self.mask_probs.outpaint,
            self.mask_probs.shuffle,
            self.mask_probs.nonlinear,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.jitter_strength < 0.0 {
            return Err(Error::Config("jitter_strength must be >= 0".into()));
        }
        if self.shuffle_window < 2 {
            return Err(Error::Config("shuffle_window must be >= 2".into()));
        }
        Ok(())
    }
}

/// Two masked views plus their unmasked reconstruction targets for one source
/// image. Targets are the SimCLR-augmented images before any masking.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub view1_masked: Tensor<f32>,
    pub view1_target: Tensor<f32>,
    pub view2_masked: Tensor<f32>,
    pub view2_target: Tensor<f32>,
    pub source_index: usize,
}

fn check_image(img: &Tensor<f32>) -> Result<(usize, usize)> {
    if img.rank() != 3 || img.dim(2) != 1 {
        return Err(Error::Shape(format!("expected [H, W, 1] image, got {:?}", img.shape())));
    }
    Ok((img.dim(0), img.dim(1)))
}

/// Uniform draw that never consumes randomness for a degenerate range.
fn draw(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_idx(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

// ── SimCLR view ─────────────────────────────────────────────────────────

/// Random resized crop, horizontal flip, grayscale brightness/contrast jitter
/// and Gaussian blur. Output has the input shape and values in [0, 1].
pub fn simclr_view(img: &Tensor<f32>, seed: u64, cfg: &AugmentConfig) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    let mut rng = stream(derive(seed, &[SIMCLR_TAG]));

    // Crop: square side from the drawn area fraction, resized back with
    // bilinear interpolation. Degenerate draws retry, then fall back to the
    // full image.
    let mut side = 0usize;
    for _ in 0..5 {
        let frac = draw(&mut rng, cfg.crop_scale_range.0, cfg.crop_scale_range.1);
        side = ((frac.sqrt() * h.min(w) as f32).round() as usize).min(h.min(w));
        if side >= 2 {
            break;
        }
    }
    if side < 2 {
        side = h.min(w);
    }
    let oy = draw_idx(&mut rng, 0, h - side);
    let ox = draw_idx(&mut rng, 0, w - side);
    let mut out = if side == h && side == w && oy == 0 && ox == 0 {
        img.clone()
    } else {
        resize_bilinear(img, oy, ox, side, h, w)
    };

    if rng.random::<f32>() < cfg.flip_prob {
        flip_horizontal(&mut out);
    }

    // Jitter: brightness then mean-preserving contrast. Factors exactly 1.0
    // (always the case at strength 0) leave the pixels untouched bit-for-bit.
    let s = 0.8 * cfg.jitter_strength;
    let lo = (1.0 - s).max(0.0);
    let hi = 1.0 + s;
    let brightness = draw(&mut rng, lo, hi);
    let contrast = draw(&mut rng, lo, hi);
    if brightness != 1.0 {
        for v in out.data_mut() {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
    }
    if contrast != 1.0 {
        let mean = out.data().iter().sum::<f32>() / out.numel() as f32;
        for v in out.data_mut() {
            *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0);
        }
    }

    let apply_blur = rng.random::<f32>() < cfg.blur_prob;
    let sigma = draw(&mut rng, cfg.blur_sigma_range.0, cfg.blur_sigma_range.1);
    if apply_blur {
        out = gaussian_blur(&out, sigma);
    }

    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn flip_horizontal(img: &mut Tensor<f32>) {
    let (h, w) = (img.dim(0), img.dim(1));
    let d = img.data_mut();
    for y in 0..h {
        d[y * w..(y + 1) * w].reverse();
    }
}

fn resize_bilinear(img: &Tensor<f32>, oy: usize, ox: usize, side: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut out = Tensor::zeros(&[h, w, 1]);
    let d = img.data();
    let o = out.data_mut();
    let sy_scale = side as f32 / h as f32;
    let sx_scale = side as f32 / w as f32;
    for dy in 0..h {
        let sy = (dy as f32 + 0.5) * sy_scale - 0.5;
        let y0 = sy.floor();
        let ty = sy - y0;
        let y0 = (y0 as isize).clamp(0, side as isize - 1) as usize;
        let y1 = (y0 + 1).min(side - 1);
        for dx in 0..w {
            let sx = (dx as f32 + 0.5) * sx_scale - 0.5;
            let x0 = sx.floor();
            let tx = sx - x0;
            let x0 = (x0 as isize).clamp(0, side as isize - 1) as usize;
            let x1 = (x0 + 1).min(side - 1);
            let at = |y: usize, x: usize| d[(oy + y) * w + (ox + x)];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            o[dy * w + dx] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn gaussian_blur(img: &Tensor<f32>, sigma: f32) -> Tensor<f32> {
    let (h, w) = (img.dim(0), img.dim(1));
    let radius = ((2.5 * sigma).ceil() as usize).clamp(1, (h.min(w) - 1) / 2);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in -(radius as isize)..=(radius as isize) {
        kernel.push((-(k * k) as f32 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f32 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= norm;
    }

    // Separable passes with clamp-to-edge.
    let mut tmp = Tensor::zeros(&[h, w, 1]);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = (x as isize + ki as isize - radius as isize).clamp(0, w as isize - 1) as usize;
                acc += img.data()[y * w + sx] * kv;
            }
            tmp.data_mut()[y * w + x] = acc;
        }
    }
    let mut out = Tensor::zeros(&[h, w, 1]);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius as isize).clamp(0, h as isize - 1) as usize;
                acc += tmp.data()[sy * w + x] * kv;
            }
            out.data_mut()[y * w + x] = acc;
        }
    }
    out
}

// ── Mask stages ─────────────────────────────────────────────────────────

/// Fill k random rectangles with uniform noise; pixels outside them are
/// untouched.
pub fn inpaint(img: &Tensor<f32>, seed: u64, cfg: &AugmentConfig) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    let mut rng = stream(derive(seed, &[INPAINT_TAG]));
    let mut out = img.clone();
    let k = draw_idx(&mut rng, cfg.inpaint_count_range.0, cfg.inpaint_count_range.1);
    for _ in 0..k {
        let fw = draw(&mut rng, cfg.inpaint_size_range.0, cfg.inpaint_size_range.1);
        let fh = draw(&mut rng, cfg.inpaint_size_range.0, cfg.inpaint_size_range.1);
        let rw = ((fw * w as f32).round() as usize).clamp(1, w);
        let rh = ((fh * h as f32).round() as usize).clamp(1, h);
        let x0 = draw_idx(&mut rng, 0, w - rw);
        let y0 = draw_idx(&mut rng, 0, h - rh);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                out.data_mut()[y * w + x] = rng.random::<f32>();
            }
        }
    }
    Ok(out)
}

/// Keep a random interior window; replace everything outside it with noise.
pub fn outpaint(img: &Tensor<f32>, seed: u64, cfg: &AugmentConfig) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    let mut rng = stream(derive(seed, &[OUTPAINT_TAG]));
    let fw = draw(&mut rng, cfg.outpaint_keep_range.0, cfg.outpaint_keep_range.1);
    let fh = draw(&mut rng, cfg.outpaint_keep_range.0, cfg.outpaint_keep_range.1);
    let rw = ((fw * w as f32).round() as usize).clamp(1, w);
    let rh = ((fh * h as f32).round() as usize).clamp(1, h);
    let x0 = draw_idx(&mut rng, 0, w - rw);
    let y0 = draw_idx(&mut rng, 0, h - rh);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let inside = y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw;
            if !inside {
                out.data_mut()[y * w + x] = rng.random::<f32>();
            }
        }
    }
    Ok(out)
}

/// Permute the pixels inside `shuffle_block_count` windows of side
/// `shuffle_window`. Windows may overlap; each application preserves the
/// window's pixel multiset, so the global multiset is always preserved.
pub fn local_pixel_shuffle(img: &Tensor<f32>, seed: u64, cfg: &AugmentConfig) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    let win = cfg.shuffle_window;
    if win < 2 {
        return Err(Error::Config("shuffle_window must be >= 2".into()));
    }
    if win > h || win > w {
        return Err(Error::Config(format!(
            "shuffle_window {win} larger than image side {h}x{w}"
        )));
    }
    let mut rng = stream(derive(seed, &[SHUFFLE_TAG]));
    let mut out = img.clone();
    let mut buf = vec![0.0f32; win * win];
    for _ in 0..cfg.shuffle_block_count {
        let y0 = draw_idx(&mut rng, 0, h - win);
        let x0 = draw_idx(&mut rng, 0, w - win);
        for dy in 0..win {
            buf[dy * win..(dy + 1) * win]
                .copy_from_slice(&out.data()[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + win]);
        }
        // Fisher-Yates over the window contents.
        for i in (1..buf.len()).rev() {
            let j = rng.random_range(0..=i);
            buf.swap(i, j);
        }
        for dy in 0..win {
            out.data_mut()[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + win]
                .copy_from_slice(&buf[dy * win..(dy + 1) * win]);
        }
    }
    Ok(out)
}

/// Monotone or non-monotone cubic Bezier intensity mapping with endpoints
/// (0,0) and (1,1); the non-monotone variant (probability 0.5) swaps the
/// control points' y-coordinates. Single-channel images only.
pub fn nonlinear_intensity(img: &Tensor<f32>, seed: u64) -> Result<Tensor<f32>> {
    check_image(img)?;
    let mut rng = stream(derive(seed, &[NONLINEAR_TAG]));
    let (x1, y1) = (rng.random::<f32>(), rng.random::<f32>());
    let (x2, y2) = (rng.random::<f32>(), rng.random::<f32>());
    let (xa, xb) = (x1.min(x2), x1.max(x2));
    let (ya, yb) = (y1.min(y2), y1.max(y2));
    let non_monotone = rng.random::<f32>() < 0.5;
    let (p1, p2) = if non_monotone { ((xa, yb), (xb, ya)) } else { ((xa, ya), (xb, yb)) };

    // Sorted x-coordinates make x(t) monotone, so the sampled curve is a
    // lookup table from intensity to intensity.
    const K: usize = 257;
    let mut xs = [0.0f32; K];
    let mut ys = [0.0f32; K];
    for (i, (xv, yv)) in xs.iter_mut().zip(ys.iter_mut()).enumerate() {
        let t = i as f32 / (K - 1) as f32;
        let u = 1.0 - t;
        let b1 = 3.0 * u * u * t;
        let b2 = 3.0 * u * t * t;
        let b3 = t * t * t;
        *xv = b1 * p1.0 + b2 * p2.0 + b3;
        *yv = b1 * p1.1 + b2 * p2.1 + b3;
    }

    let map = |v: f32| -> f32 {
        if v <= xs[0] {
            return ys[0];
        }
        if v >= xs[K - 1] {
            return ys[K - 1];
        }
        let mut idx = match xs.binary_search_by(|probe| probe.partial_cmp(&v).unwrap()) {
            Ok(i) => return ys[i],
            Err(i) => i,
        };
        idx = idx.clamp(1, K - 1);
        let (x0, x1) = (xs[idx - 1], xs[idx]);
        let (y0, y1) = (ys[idx - 1], ys[idx]);
        if x1 > x0 {
            let t = (v - x0) / (x1 - x0);
            (y0 + t * (y1 - y0)).clamp(0.0, 1.0)
        } else {
            y0.clamp(0.0, 1.0)
        }
    };
    Ok(img.map(map))
}

// ── Pair assembly ───────────────────────────────────────────────────────

/// Sub-seed of view `i` (1 or 2) for a pair built with `seed`.
pub fn view_seed(seed: u64, view: u64) -> u64 {
    derive(seed, &[VIEW_TAG, view])
}

fn apply_masks(target: &Tensor<f32>, seed: u64, cfg: &AugmentConfig) -> Result<Tensor<f32>> {
    let mut rng = stream(derive(seed, &[MASK_TAG]));
    // One draw per stage, in fixed order, regardless of which stages fire.
    let u_shuffle = rng.random::<f32>();
    let u_nonlinear = rng.random::<f32>();
    let u_inpaint = rng.random::<f32>();
    let u_outpaint = rng.random::<f32>();
    let mut out = target.clone();
    if u_shuffle < cfg.mask_probs.shuffle {
        out = local_pixel_shuffle(&out, derive(seed, &[SHUFFLE_TAG]), cfg)?;
    }
    if u_nonlinear < cfg.mask_probs.nonlinear {
        out = nonlinear_intensity(&out, derive(seed, &[NONLINEAR_TAG]))?;
    }
    if u_inpaint < cfg.mask_probs.inpaint {
        out = inpaint(&out, derive(seed, &[INPAINT_TAG]), cfg)?;
    }
    if u_outpaint < cfg.mask_probs.outpaint {
        out = outpaint(&out, derive(seed, &[OUTPAINT_TAG]), cfg)?;
    }
    Ok(out)
}

/// Build the two (masked view, target) pairs for one source image.
pub fn make_pair(
    img: &Tensor<f32>,
    seed: u64,
    cfg: &AugmentConfig,
    source_index: usize,
) -> Result<TrainingPair> {
    let s1 = view_seed(seed, 1);
    let s2 = view_seed(seed, 2);
    let t1 = simclr_view(img, s1, cfg)?;
    let t2 = simclr_view(img, s2, cfg)?;
    let m1 = apply_masks(&t1, s1, cfg)?;
    let m2 = apply_masks(&t2, s2, cfg)?;
    Ok(TrainingPair {
        view1_masked: m1,
        view1_target: t1,
        view2_masked: m2,
        view2_target: t2,
        source_index,
    })
}
