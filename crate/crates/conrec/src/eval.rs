//! Frozen-representation extraction, multinomial logistic-regression probe,
//! agreement metrics, and label-fraction sweeps.

use rand::Rng;

use crate::augment::{self, AugmentConfig, MaskProbs};
use crate::error::{Error, Result};
use crate::model::{represent, ModelParams};
use crate::numerics::Tensor;
use crate::rng::{derive, stream};
use crate::synthgen::LabeledDataset;

/// Pooled encoder features for a whole dataset, row-major [n, f].
#[derive(Clone, Debug)]
pub struct RepresentationMatrix {
    pub features: Vec<f32>,
    pub n: usize,
    pub f: usize,
    pub labels: Vec<u8>,
    pub class_count: usize,
    pub dataset: String,
    pub model_digest: u64,
}

impl RepresentationMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.f..(i + 1) * self.f]
    }

    /// Copy selected rows into a new matrix.
    pub fn subset(&self, indices: &[usize]) -> RepresentationMatrix {
        let mut features = Vec::with_capacity(indices.len() * self.f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        RepresentationMatrix {
            features,
            n: indices.len(),
            f: self.f,
            labels,
            class_count: self.class_count,
            dataset: self.dataset.clone(),
            model_digest: self.model_digest,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
    }
}

fn center_crop_batch(batch: &Tensor<f32>, target: usize) -> Tensor<f32> {
    let (n, h, w) = (batch.dim(0), batch.dim(1), batch.dim(2));
    let oy = (h - target) / 2;
    let ox = (w - target) / 2;
    let mut out = Tensor::zeros(&[n, target, target, 1]);
    for ni in 0..n {
        for y in 0..target {
            let src = ((ni * h + oy + y) * w + ox) * 1;
            let dst = ((ni * target + y) * target) * 1;
            out.data_mut()[dst..dst + target].copy_from_slice(&batch.data()[src..src + target]);
        }
    }
    out
}

/// Inference-mode representations, extracted batch-wise. Center-crops when the
/// dataset images are larger than the model's input; rejects smaller ones.
pub fn extract_representations(
    params: &ModelParams<f32>,
    ds: &LabeledDataset,
    batch: usize,
) -> Result<RepresentationMatrix> {
    let target = params.cfg.image_size;
    if ds.image_size < target {
        return Err(Error::Shape(format!(
            "dataset images ({}px) smaller than model input ({target}px); center-crop cannot help",
            ds.image_size
        )));
    }
    let batch = batch.max(1);
    let f = params.cfg.bottleneck_channels();
    let mut features = Vec::with_capacity(ds.len() * f);
    let mut start = 0;
    while start < ds.len() {
        let end = (start + batch).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let mut x = ds.batch(&idx);
        if ds.image_size > target {
            x = center_crop_batch(&x, target);
        }
        let h = represent(params, &x)?;
        features.extend_from_slice(h.data());
        start = end;
    }
    Ok(RepresentationMatrix {
        features,
        n: ds.len(),
        f,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        dataset: ds.name.clone(),
        model_digest: params.digest(),
    })
}

/// Representations of extra cropped views of each training image (optional
/// probe-training augmentation; off by default). Returns rows in image-major,
/// crop-minor order with duplicated labels.
pub fn extract_crop_augmented(
    params: &ModelParams<f32>,
    ds: &LabeledDataset,
    batch: usize,
    crops: usize,
    seed: u64,
) -> Result<RepresentationMatrix> {
    let crop_cfg = AugmentConfig {
        crop_scale_range: (0.6, 1.0),
        flip_prob: 0.5,
        jitter_strength: 0.0,
        blur_prob: 0.0,
        mask_probs: MaskProbs { inpaint: 0.0, outpaint: 0.0, shuffle: 0.0, nonlinear: 0.0 },
        ..AugmentConfig::default()
    };
    let mut augmented = LabeledDataset {
        name: format!("{}+crops", ds.name),
        seed,
        image_size: ds.image_size,
        class_count: ds.class_count,
        images: Vec::with_capacity(ds.len() * crops),
        labels: Vec::with_capacity(ds.len() * crops),
    };
    for (i, img) in ds.images.iter().enumerate() {
        for k in 0..crops {
            let view = augment::simclr_view(img, derive(seed, &[i as u64, k as u64]), &crop_cfg)?;
            augmented.images.push(view);
            augmented.labels.push(ds.labels[i]);
        }
    }
    // Views are no longer binary; bypass the binary-dataset validation by
    // extracting directly.
    let target = params.cfg.image_size;
    if augmented.image_size < target {
        return Err(Error::Shape("augmented images smaller than model input".into()));
    }
    let f = params.cfg.bottleneck_channels();
    let mut features = Vec::with_capacity(augmented.len() * f);
    let batch = batch.max(1);
    let mut start = 0;
    while start < augmented.len() {
        let end = (start + batch).min(augmented.len());
        let idx: Vec<usize> = (start..end).collect();
        let mut x = augmented.batch(&idx);
        if augmented.image_size > target {
            x = center_crop_batch(&x, target);
        }
        let h = represent(params, &x)?;
        features.extend_from_slice(h.data());
        start = end;
    }
    Ok(RepresentationMatrix {
        features,
        n: augmented.len(),
        f,
        labels: augmented.labels,
        class_count: ds.class_count,
        dataset: augmented.name,
        model_digest: params.digest(),
    })
}

/// Append the rows of `extra` to `base` (same feature dimension).
pub fn concat_representations(base: &RepresentationMatrix, extra: &RepresentationMatrix) -> RepresentationMatrix {
    assert_eq!(base.f, extra.f);
    let mut features = base.features.clone();
    features.extend_from_slice(&extra.features);
    let mut labels = base.labels.clone();
    labels.extend_from_slice(&extra.labels);
    RepresentationMatrix {
        features,
        n: base.n + extra.n,
        f: base.f,
        labels,
        class_count: base.class_count,
        dataset: base.dataset.clone(),
        model_digest: base.model_digest,
    }
}

// ── Multinomial logistic-regression probe ───────────────────────────────

/// Linear probe with its feature standardization and fitting record.
#[derive(Clone, Debug)]
pub struct Probe {
    /// [f, C] weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    pub lambda: f64,
    pub class_count: usize,
    pub feature_dim: usize,
    /// Objective value before the first step and after each accepted step.
    pub objective_trace: Vec<f64>,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

fn softmax_rows(logits: &mut [f64], n: usize, c: usize) {
    for i in 0..n {
        let row = &mut logits[i * c..(i + 1) * c];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean multinomial cross-entropy plus (lambda/2)||W||^2 by full-batch
/// gradient descent with backtracking line search. Features are standardized
/// with the training-set mean/std; the transform is stored in the probe.
pub fn fit_probe(
    rep: &RepresentationMatrix,
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Probe> {
    let (n, f, c) = (rep.n, rep.f, rep.class_count);
    if n == 0 {
        return Err(Error::Data("cannot fit a probe on an empty set".into()));
    }
    if !rep.all_finite() {
        return Err(Error::Numeric("non-finite representation entries".into()));
    }
    let mut present = vec![false; c];
    for &l in &rep.labels {
        present[l as usize] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Data("probe needs at least two classes present".into()));
    }

    // Standardize.
    let mut mean = vec![0.0f64; f];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(rep.row(i)) {
            *m += v as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut std = vec![0.0f64; f];
    for i in 0..n {
        for (s, (&v, m)) in std.iter_mut().zip(rep.row(i).iter().zip(mean.iter())) {
            *s += (v as f64 - m).powi(2);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let mut x = vec![0.0f64; n * f];
    for i in 0..n {
        for j in 0..f {
            x[i * f + j] = (rep.row(i)[j] as f64 - mean[j]) / std[j];
        }
    }

    let objective = |w: &[f64], b: &[f64]| -> f64 {
        let mut logits = vec![0.0f64; n * c];
        for i in 0..n {
            for k in 0..c {
                let mut acc = b[k];
                for j in 0..f {
                    acc += x[i * f + j] * w[j * c + k];
                }
                logits[i * c + k] = acc;
            }
        }
        let mut loss = 0.0;
        for i in 0..n {
            let row = &logits[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[rep.labels[i] as usize];
        }
        loss / n as f64 + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
    };

    let gradient = |w: &[f64], b: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0f64; n * c];
        for i in 0..n {
            for k in 0..c {
                let mut acc = b[k];
                for j in 0..f {
                    acc += x[i * f + j] * w[j * c + k];
                }
                p[i * c + k] = acc;
            }
        }
        softmax_rows(&mut p, n, c);
        for i in 0..n {
            p[i * c + rep.labels[i] as usize] -= 1.0;
        }
        let mut gw = vec![0.0f64; f * c];
        let mut gb = vec![0.0f64; c];
        for i in 0..n {
            for k in 0..c {
                let e = p[i * c + k];
                gb[k] += e;
                for j in 0..f {
                    gw[j * c + k] += x[i * f + j] * e;
                }
            }
        }
        let inv = 1.0 / n as f64;
        for (g, wv) in gw.iter_mut().zip(w.iter()) {
            *g = *g * inv + lambda * wv;
        }
        for g in gb.iter_mut() {
            *g *= inv;
        }
        (gw, gb)
    };

    let mut w = vec![0.0f64; f * c];
    let mut b = vec![0.0f64; c];
    let mut obj = objective(&w, &b);
    let mut trace = vec![obj];
    let mut step = 1.0f64;
    let mut grad_norm = 0.0;
    let mut iters = 0;
    for _ in 0..max_iters {
        iters += 1;
        let (gw, gb) = gradient(&w, &b);
        grad_norm = (gw.iter().map(|v| v * v).sum::<f64>() + gb.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if grad_norm < 1e-12 {
            break;
        }
        // Backtracking Armijo line search along the negative gradient.
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            let wt: Vec<f64> = w.iter().zip(gw.iter()).map(|(v, g)| v - t * g).collect();
            let bt: Vec<f64> = b.iter().zip(gb.iter()).map(|(v, g)| v - t * g).collect();
            let new_obj = objective(&wt, &bt);
            if new_obj <= obj - 1e-4 * t * grad_norm * grad_norm {
                let rel_change = (obj - new_obj) / obj.abs().max(1.0);
                w = wt;
                b = bt;
                obj = new_obj;
                trace.push(obj);
                step = (t * 2.0).min(1e6);
                accepted = true;
                if rel_change < tol {
                    return Ok(Probe {
                        weights: w,
                        bias: b,
                        feat_mean: mean,
                        feat_std: std,
                        lambda,
                        class_count: c,
                        feature_dim: f,
                        objective_trace: trace,
                        final_grad_norm: grad_norm,
                        iterations: iters,
                    });
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // no descent step representable; already at numerical floor
        }
    }
    Ok(Probe {
        weights: w,
        bias: b,
        feat_mean: mean,
        feat_std: std,
        lambda,
        class_count: c,
        feature_dim: f,
        objective_trace: trace,
        final_grad_norm: grad_norm,
        iterations: iters,
    })
}

impl Probe {
    /// Argmax prediction; ties break toward the lowest class index.
    pub fn predict(&self, features: &[f32]) -> u8 {
        let (f, c) = (self.feature_dim, self.class_count);
        debug_assert_eq!(features.len(), f);
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..c {
            let mut acc = self.bias[k];
            for j in 0..f {
                let xj = (features[j] as f64 - self.feat_mean[j]) / self.feat_std[j];
                acc += xj * self.weights[j * c + k];
            }
            if acc > best_v {
                best_v = acc;
                best = k;
            }
        }
        best as u8
    }

    pub fn predict_all(&self, rep: &RepresentationMatrix) -> Vec<u8> {
        (0..rep.n).map(|i| self.predict(rep.row(i))).collect()
    }
}

/// Fraction of argmax predictions equal to the labels.
pub fn probe_accuracy(probe: &Probe, rep: &RepresentationMatrix) -> Result<f64> {
    if rep.f != probe.feature_dim {
        return Err(Error::Shape(format!(
            "probe expects {} features, got {}",
            probe.feature_dim, rep.f
        )));
    }
    if rep.n == 0 {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let correct = (0..rep.n)
        .filter(|&i| probe.predict(rep.row(i)) == rep.labels[i])
        .count();
    Ok(correct as f64 / rep.n as f64)
}

/// Quadratic weighted kappa: 1 - sum(w O) / sum(w E) with w_ij = (i-j)^2 /
/// (C-1)^2, O the observed contingency matrix and E the outer product of the
/// marginals normalized to the same total.
pub fn quadratic_weighted_kappa(y_true: &[u8], y_pred: &[u8], c: usize) -> Result<f64> {
    if c < 2 {
        return Err(Error::Config("kappa needs at least 2 classes".into()));
    }
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Data("kappa needs equal-length nonempty label vectors".into()));
    }
    if y_true.iter().chain(y_pred.iter()).any(|&l| (l as usize) >= c) {
        return Err(Error::Data("label out of range for kappa".into()));
    }
    let n = y_true.len() as f64;
    let mut o = vec![0.0f64; c * c];
    let mut row = vec![0.0f64; c];
    let mut col = vec![0.0f64; c];
    for (&t, &p) in y_true.iter().zip(y_pred.iter()) {
        o[t as usize * c + p as usize] += 1.0;
        row[t as usize] += 1.0;
        col[p as usize] += 1.0;
    }
    let denom_w = ((c - 1) * (c - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64).powi(2)) / denom_w;
            num += w * o[i * c + j];
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        return Err(Error::Numeric(
            "kappa undefined: all mass on one cell in both marginals".into(),
        ));
    }
    Ok(1.0 - num / den)
}

// ── Label-fraction sweeps ───────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub fraction: f64,
    pub repeat: usize,
    pub metric: f64,
}

#[derive(Clone, Debug)]
pub struct SweepAggregate {
    pub fraction: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    pub skipped: Vec<(f64, String)>,
}

/// Stratified subsample of row indices: per class, round(fraction * count)
/// rows drawn without replacement. Errors when any class would get zero.
fn stratified_indices(
    rep: &RepresentationMatrix,
    fraction: f64,
    seed: u64,
) -> std::result::Result<Vec<usize>, String> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); rep.class_count];
    for (i, &l) in rep.labels.iter().enumerate() {
        per_class[l as usize].push(i);
    }
    let mut rng = stream(seed);
    let mut chosen = Vec::new();
    for (cls, members) in per_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let k = (fraction * members.len() as f64).round() as usize;
        if k == 0 {
            return Err(format!(
                "fraction {fraction} leaves zero samples for class {cls} ({} members)",
                members.len()
            ));
        }
        let mut pool = members.clone();
        for i in (1..pool.len()).rev() {
            let j = rng.random_range(0..=i);
            pool.swap(i, j);
        }
        chosen.extend_from_slice(&pool[..k.min(pool.len())]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Probe metric (accuracy) at several label fractions, repeated with distinct
/// subsample seeds. Representations are computed once by the caller.
pub fn sweep_on_representations(
    train: &RepresentationMatrix,
    test: &RepresentationMatrix,
    fractions: &[f64],
    seed: u64,
    lambda: f64,
    repeats: usize,
) -> Result<SweepOutcome> {
    let mut out = SweepOutcome::default();
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(&fraction) || fraction <= 0.0 {
            out.skipped.push((fraction, "fraction must lie in (0, 1]".into()));
            continue;
        }
        let mut metrics = Vec::with_capacity(repeats);
        let mut reason: Option<String> = None;
        for rep_i in 0..repeats {
            let sub_seed = derive(seed, &[fi as u64, rep_i as u64]);
            let subset = if fraction >= 1.0 {
                (0..train.n).collect::<Vec<_>>()
            } else {
                match stratified_indices(train, fraction, sub_seed) {
                    Ok(idx) => idx,
                    Err(msg) => {
                        reason = Some(msg);
                        break;
                    }
                }
            };
            let sub = train.subset(&subset);
            let probe = fit_probe(&sub, lambda, 500, 1e-7)?;
            let acc = probe_accuracy(&probe, test)?;
            out.rows.push(SweepRow { fraction, repeat: rep_i, metric: acc });
            metrics.push(acc);
        }
        if let Some(msg) = reason {
            out.skipped.push((fraction, msg));
            continue;
        }
        let mean = metrics.iter().sum::<f64>() / metrics.len() as f64;
        let std = if metrics.len() > 1 {
            (metrics.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (metrics.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        out.aggregates.push(SweepAggregate { fraction, mean, std });
    }
    Ok(out)
}

/// Extract representations once, then sweep.
pub fn label_fraction_sweep(
    params: &ModelParams<f32>,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    fractions: &[f64],
    seed: u64,
    lambda: f64,
    repeats: usize,
) -> Result<SweepOutcome> {
    let train = extract_representations(params, train_ds, 32)?;
    let test = extract_representations(params, test_ds, 32)?;
    sweep_on_representations(&train, &test, fractions, seed, lambda, repeats)
}

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0];
