//! Pretraining: the five method variants, the epoch loop with periodic linear
//! evaluation and best-model selection, metrics logging, and checkpointing.

pub mod checkpoint;
pub mod optim;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::augment::{make_pair, AugmentConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::eval::{extract_representations, fit_probe, probe_accuracy};
use crate::losses::{nt_xent_on_tape, LossConfig};
use crate::model::{commit_bn_stats, init_model, BnMode, Forward, ModelConfig, ModelParams, Pooling};
use crate::numerics::{GradientTape, Tensor};
use crate::rng::{derive, stream};
use crate::synthgen::LabeledDataset;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{Optimizer, OptimizerKind};

const EPOCH_TAG: u64 = 0xe70c;
const PAIR_TAG: u64 = 0x9a17;

/// Probe settings used for the periodic evaluation during pretraining.
const EVAL_PROBE_LAMBDA: f64 = 1e-4;
const EVAL_PROBE_ITERS: usize = 300;
const EVAL_PROBE_TOL: f64 = 1e-6;

/// The five ablation variants. Each one fixes the pooling and which loss
/// terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Simclr,
    SimclrAttention,
    Reconstruction,
    ConrecGap,
    Conrec,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Simclr,
        Method::SimclrAttention,
        Method::Reconstruction,
        Method::ConrecGap,
        Method::Conrec,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simclr" => Ok(Method::Simclr),
            "simclr-attention" => Ok(Method::SimclrAttention),
            "reconstruction" => Ok(Method::Reconstruction),
            "conrec-gap" => Ok(Method::ConrecGap),
            "conrec" => Ok(Method::Conrec),
            other => Err(Error::Config(format!("unknown method {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Simclr => "simclr",
            Method::SimclrAttention => "simclr-attention",
            Method::Reconstruction => "reconstruction",
            Method::ConrecGap => "conrec-gap",
            Method::Conrec => "conrec",
        }
    }

    pub fn pooling(self) -> Pooling {
        match self {
            Method::SimclrAttention | Method::Conrec => Pooling::Attention,
            _ => Pooling::Gap,
        }
    }

    pub fn contrastive(self) -> bool {
        self != Method::Reconstruction
    }

    pub fn reconstruction(self) -> bool {
        matches!(self, Method::Reconstruction | Method::ConrecGap | Method::Conrec)
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub method: Method,
    /// Source images per step; the contrastive batch holds twice as many views.
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coef: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Conrec,
            batch_size: 16,
            epochs: 1000,
            eval_every: 20,
            optimizer: OptimizerKind::Lars,
            lr: 0.3,
            weight_decay: 1e-4,
            momentum: 0.9,
            trust_coef: 0.001,
            seed: 42,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Force the method-determined fields (pooling, enabled loss terms) so a
    /// config never contradicts its method. Methods without a reconstruction
    /// task train on plain SimCLR views: the mask stages exist to give the
    /// decoder something to restore, so they are disabled too.
    pub fn resolved(mut self) -> Self {
        self.model.pooling = self.method.pooling();
        self.loss.contrastive_enabled = self.method.contrastive();
        self.loss.reconstruction_enabled = self.method.reconstruction();
        if !self.method.reconstruction() {
            self.augment.mask_probs =
                crate::augment::MaskProbs { inpaint: 0.0, outpaint: 0.0, shuffle: 0.0, nonlinear: 0.0 };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.lr <= 0.0 || self.weight_decay < 0.0 || self.trust_coef <= 0.0 {
            return Err(Error::Config("lr/trust_coef must be > 0, weight_decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.model.pooling != self.method.pooling()
            || self.loss.contrastive_enabled != self.method.contrastive()
            || self.loss.reconstruction_enabled != self.method.reconstruction()
        {
            return Err(Error::Config(format!(
                "config inconsistent with method {}; call resolved() first",
                self.method.name()
            )));
        }
        self.loss.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub contrastive: Option<f64>,
    pub reconstruction: Option<f64>,
    pub total: f64,
}

/// One optimizer step over a batch of training pairs: forward on all 2B
/// masked views in a single batch, the enabled losses, one backward pass.
pub fn train_step(
    params: &mut ModelParams<f32>,
    opt: &mut Optimizer,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    if pairs.is_empty() {
        return Err(Error::Config("train_step needs a nonempty batch".into()));
    }
    let s = cfg.model.image_size;
    let b2 = pairs.len() * 2;
    let mut views = Tensor::zeros(&[b2, s, s, 1]);
    let mut targets = Tensor::zeros(&[b2, s, s, 1]);
    let px = s * s;
    for (k, pair) in pairs.iter().enumerate() {
        views.data_mut()[(2 * k) * px..(2 * k + 1) * px].copy_from_slice(pair.view1_masked.data());
        views.data_mut()[(2 * k + 1) * px..(2 * k + 2) * px].copy_from_slice(pair.view2_masked.data());
        targets.data_mut()[(2 * k) * px..(2 * k + 1) * px].copy_from_slice(pair.view1_target.data());
        targets.data_mut()[(2 * k + 1) * px..(2 * k + 2) * px].copy_from_slice(pair.view2_target.data());
    }

    let mut tape = GradientTape::new();
    let x = tape.constant(views);
    let mut fwd = Forward::new(params, &mut tape, BnMode::Train);
    let (phi, skips) = fwd.encode(x)?;

    let lr_var = if cfg.method.reconstruction() {
        let xhat = fwd.decode(phi, &skips)?;
        Some(fwd.tape.mse(xhat, &targets)?)
    } else {
        None
    };
    let lc_var = if cfg.method.contrastive() {
        let h = fwd.pool(phi)?;
        let z = fwd.project(h)?;
        Some(nt_xent_on_tape(fwd.tape, z, cfg.loss.tau as f32)?)
    } else {
        None
    };
    let stat_updates = fwd.into_stat_updates();

    let alpha = cfg.loss.alpha as f32;
    let total_var = match (lc_var, lr_var) {
        (Some(lc), Some(lr)) => {
            let weighted = tape.scalar_scale(lr, alpha);
            tape.scalar_add(lc, weighted)
        }
        (Some(lc), None) => lc,
        (None, Some(lr)) => tape.scalar_scale(lr, alpha),
        (None, None) => unreachable!("validate() guarantees at least one loss"),
    };

    let losses = StepLosses {
        contrastive: lc_var.map(|v| tape.value(v).item() as f64),
        reconstruction: lr_var.map(|v| tape.value(v).item() as f64),
        total: tape.value(total_var).item() as f64,
    };

    let grads = tape.backward(total_var)?;
    commit_bn_stats(params, stat_updates);
    opt.step(params, &grads)?;
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_contrastive: Option<f64>,
    pub loss_reconstruction: Option<f64>,
    pub loss_total: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub epoch: usize,
    pub probe_metric: f64,
}

/// Per-epoch losses and periodic probe scores.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub epochs: Vec<EpochRow>,
    pub evals: Vec<EvalRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsLog {
    pub fn epoch_csv_row(row: &EpochRow) -> String {
        format!(
            "{},{},{},{},{}\n",
            row.epoch,
            fmt_opt(row.loss_contrastive),
            fmt_opt(row.loss_reconstruction),
            row.loss_total,
            row.wall_seconds
        )
    }

    pub fn eval_csv_row(row: &EvalRow) -> String {
        format!("{},{}\n", row.epoch, row.probe_metric)
    }
}

pub const EPOCH_CSV_HEADER: &str = "epoch,loss_contrastive,loss_reconstruction,loss_total,wall_seconds\n";
pub const EVAL_CSV_HEADER: &str = "epoch,probe_metric\n";

#[derive(Debug)]
pub struct PretrainOutcome {
    pub best_path: PathBuf,
    pub final_path: PathBuf,
    pub log: MetricsLog,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub final_score: Option<f64>,
    pub config_digest_warning: bool,
    pub param_count: usize,
}

fn probe_score(
    params: &ModelParams<f32>,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
) -> Result<f64> {
    let train_rep = extract_representations(params, train_ds, 32)?;
    let test_rep = extract_representations(params, test_ds, 32)?;
    let probe = fit_probe(&train_rep, EVAL_PROBE_LAMBDA, EVAL_PROBE_ITERS, EVAL_PROBE_TOL)?;
    probe_accuracy(&probe, &test_rep)
}

/// Pretrain per the configured method. Epoch shuffling and every augmentation
/// draw derive from (seed, epoch, image index), so runs are reproducible and
/// a resumed run continues exactly where the checkpoint stopped.
///
/// Every `eval_every` epochs a logistic-regression probe is fit on frozen
/// train-set representations and scored on the test set; the best-scoring
/// checkpoint is kept alongside the final one.
pub fn pretrain(
    cfg: &TrainConfig,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    out_dir: &Path,
    resume: Option<Checkpoint>,
    config_text: &str,
) -> Result<PretrainOutcome> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    train_ds.validate()?;
    test_ds.validate()?;
    if train_ds.image_size != cfg.model.image_size {
        return Err(Error::Config(format!(
            "dataset images are {}px but model expects {}px",
            train_ds.image_size, cfg.model.image_size
        )));
    }

    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join("INCOMPLETE");
    fs::write(&marker, b"run in progress\n")?;

    let config_digest = crate::rng::fnv1a(config_text.as_bytes());
    let mut config_digest_warning = false;

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay, cfg.momentum, cfg.trust_coef);
    let (mut params, start_epoch, mut best_score, mut best_epoch) = match resume {
        Some(ckpt) => {
            if ckpt.config_digest != config_digest {
                config_digest_warning = true;
                eprintln!(
                    "warning: resuming from a checkpoint with a different config digest \
                     ({:#x} vs {:#x})",
                    ckpt.config_digest, config_digest
                );
            }
            opt.restore_buffers(ckpt.optim_buffers);
            (ckpt.params, ckpt.epoch, ckpt.best_score, ckpt.best_epoch)
        }
        None => (init_model::<f32>(&cfg.model, cfg.seed)?, 0, None, None),
    };
    let param_count = params.param_count();

    let epochs_path = out_dir.join("metrics_epochs.csv");
    let evals_path = out_dir.join("metrics_eval.csv");
    let mut epochs_csv = fs::File::create(&epochs_path)?;
    epochs_csv.write_all(EPOCH_CSV_HEADER.as_bytes())?;
    let mut evals_csv = fs::File::create(&evals_path)?;
    evals_csv.write_all(EVAL_CSV_HEADER.as_bytes())?;

    let best_path = out_dir.join("best.ckpt");
    let final_path = out_dir.join("final.ckpt");
    let make_ckpt = |params: &ModelParams<f32>, opt: &Optimizer, epoch: usize, best_score, best_epoch| Checkpoint {
        params: params.clone(),
        optim_buffers: opt.buffers().clone(),
        epoch,
        seed: cfg.seed,
        config_digest,
        config_text: config_text.to_string(),
        best_score,
        best_epoch,
    };

    let trace_timing = std::env::var("CONREC_TRACE_TIMING").is_ok();
    let mut log = MetricsLog::default();
    let n = train_ds.len();
    for epoch in start_epoch + 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut t_pairs = 0.0f64;
        let mut t_steps = 0.0f64;

        // Seeded shuffle of the source indices for this epoch.
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(derive(cfg.seed, &[EPOCH_TAG, epoch as u64]));
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        let mut sum_lc = 0.0;
        let mut sum_lr = 0.0;
        let mut sum_total = 0.0;
        let mut steps = 0usize;
        let mut saw_lc = false;
        let mut saw_lr = false;
        for chunk in order.chunks(cfg.batch_size) {
            let tp = Instant::now();
            // Pair construction is image-parallel; per-image seeds make the
            // result independent of execution order.
            let pairs: Vec<TrainingPair> = chunk
                .par_iter()
                .map(|&idx| {
                    make_pair(
                        &train_ds.images[idx],
                        derive(cfg.seed, &[PAIR_TAG, epoch as u64, idx as u64]),
                        &cfg.augment,
                        idx,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            t_pairs += tp.elapsed().as_secs_f64();
            let ts = Instant::now();
            let losses = train_step(&mut params, &mut opt, &pairs, &cfg)?;
            t_steps += ts.elapsed().as_secs_f64();
            if let Some(lc) = losses.contrastive {
                sum_lc += lc;
                saw_lc = true;
            }
            if let Some(lr) = losses.reconstruction {
                sum_lr += lr;
                saw_lr = true;
            }
            sum_total += losses.total;
            steps += 1;
        }

        if trace_timing {
            eprintln!(
                "epoch {epoch}: total {:.2}s pairs {t_pairs:.2}s steps {t_steps:.2}s",
                t0.elapsed().as_secs_f64()
            );
        }
        let row = EpochRow {
            epoch,
            loss_contrastive: saw_lc.then(|| sum_lc / steps as f64),
            loss_reconstruction: saw_lr.then(|| sum_lr / steps as f64),
            loss_total: sum_total / steps as f64,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        epochs_csv.write_all(MetricsLog::epoch_csv_row(&row).as_bytes())?;
        epochs_csv.flush()?;
        log.epochs.push(row);

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let score = probe_score(&params, train_ds, test_ds)?;
            let row = EvalRow { epoch, probe_metric: score };
            evals_csv.write_all(MetricsLog::eval_csv_row(&row).as_bytes())?;
            evals_csv.flush()?;
            log.evals.push(row);
            if best_score.map(|b| score > b).unwrap_or(true) {
                best_score = Some(score);
                best_epoch = Some(epoch);
                save_checkpoint(&make_ckpt(&params, &opt, epoch, best_score, best_epoch), &best_path)?;
            }
        }

        // Retained so an aborted run still has its last complete epoch.
        save_checkpoint(&make_ckpt(&params, &opt, epoch, best_score, best_epoch), &final_path)?;
    }

    if cfg.epochs == start_epoch || cfg.epochs == 0 {
        // Nothing trained; materialize the initial state.
        save_checkpoint(&make_ckpt(&params, &opt, start_epoch, best_score, best_epoch), &final_path)?;
    }
    if !best_path.exists() {
        // No evaluation ever ran; the final model doubles as the best one.
        save_checkpoint(&make_ckpt(&params, &opt, cfg.epochs.max(start_epoch), best_score, best_epoch), &best_path)?;
    }

    let final_score = log.evals.last().map(|r| r.probe_metric);
    fs::remove_file(&marker)?;
    Ok(PretrainOutcome {
        best_path,
        final_path,
        log,
        best_score,
        best_epoch,
        final_score,
        config_digest_warning,
        param_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::gen_circles_squares;

    fn tiny_cfg(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            batch_size: 4,
            epochs: 2,
            eval_every: 2,
            seed: 5,
            model: ModelConfig {
                image_size: 32,
                levels: 2,
                base_channels: 2,
                projection_hidden: 8,
                projection_dim: 4,
                pooling: Pooling::Gap,
                attention_filters: vec![4, 2],
            },
            ..TrainConfig::default()
        }
        .resolved()
    }

    fn tiny_pairs(cfg: &TrainConfig, ds: &LabeledDataset, count: usize) -> Vec<TrainingPair> {
        (0..count)
            .map(|i| make_pair(&ds.images[i], derive(3, &[i as u64]), &cfg.augment, i).unwrap())
            .collect()
    }

    #[test]
    fn method_wiring_freezes_the_right_subnetworks() {
        let ds = gen_circles_squares(8, 32, 1).unwrap();
        for method in Method::ALL {
            let cfg = tiny_cfg(method);
            let mut params = init_model::<f32>(&cfg.model, 7).unwrap();
            let has_attention = cfg.model.pooling == Pooling::Attention;
            assert_eq!(params.has("att.out.w"), has_attention, "{}", method.name());

            let dec_before: Vec<f32> = params.get("dec.s0.c0.w").data().to_vec();
            let proj_before: Vec<f32> = params.get("proj.fc1.w").data().to_vec();
            let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay, cfg.momentum, cfg.trust_coef);
            let pairs = tiny_pairs(&cfg, &ds, 4);
            let losses = train_step(&mut params, &mut opt, &pairs, &cfg).unwrap();

            assert_eq!(losses.contrastive.is_some(), method.contrastive());
            assert_eq!(losses.reconstruction.is_some(), method.reconstruction());
            let expected = losses.contrastive.unwrap_or(0.0)
                + cfg.loss.alpha * losses.reconstruction.unwrap_or(0.0);
            assert!((losses.total - expected).abs() <= 1e-6 * expected.abs().max(1.0));

            let dec_after = params.get("dec.s0.c0.w").data();
            if method.reconstruction() {
                assert_ne!(dec_before, dec_after, "{}: decoder should train", method.name());
            } else {
                assert_eq!(dec_before, dec_after, "{}: decoder must stay frozen", method.name());
            }
            let proj_after = params.get("proj.fc1.w").data();
            if method.contrastive() {
                assert_ne!(proj_before, proj_after, "{}: projection should train", method.name());
            } else {
                assert_eq!(proj_before, proj_after, "{}: projection must stay frozen", method.name());
            }
            if has_attention {
                assert!(params.get("att.out.w").all_finite());
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model_and_empty_log() {
        let dir = std::env::temp_dir().join(format!("conrec_train0_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let ds = gen_circles_squares(6, 32, 2).unwrap();
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg(Method::Simclr) };
        let out = pretrain(&cfg, &ds, &ds, &dir, None, "cfg").unwrap();
        assert!(out.log.epochs.is_empty());
        assert!(out.best_path.exists() && out.final_path.exists());
        let ckpt = load_checkpoint(&out.final_path).unwrap();
        let fresh = init_model::<f32>(&cfg.clone().resolved().model, cfg.seed).unwrap();
        assert_eq!(ckpt.params.digest(), fresh.digest());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn identical_runs_produce_identical_logs() {
        let base = std::env::temp_dir().join(format!("conrec_det_{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        let ds = gen_circles_squares(8, 32, 3).unwrap();
        let cfg = tiny_cfg(Method::Conrec);
        let a = pretrain(&cfg, &ds, &ds, &base.join("a"), None, "cfg").unwrap();
        let b = pretrain(&cfg, &ds, &ds, &base.join("b"), None, "cfg").unwrap();
        assert_eq!(a.log.epochs.len(), b.log.epochs.len());
        for (ra, rb) in a.log.epochs.iter().zip(b.log.epochs.iter()) {
            assert_eq!(ra.loss_total, rb.loss_total);
            assert_eq!(ra.loss_contrastive, rb.loss_contrastive);
            assert_eq!(ra.loss_reconstruction, rb.loss_reconstruction);
        }
        assert_eq!(a.log.evals, b.log.evals);
        fs::remove_dir_all(&base).unwrap();
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let base = std::env::temp_dir().join(format!("conrec_resume_{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        let ds = gen_circles_squares(8, 32, 4).unwrap();

        let full_cfg = TrainConfig { epochs: 3, ..tiny_cfg(Method::ConrecGap) };
        let full = pretrain(&full_cfg, &ds, &ds, &base.join("full"), None, "cfg").unwrap();

        let short_cfg = TrainConfig { epochs: 2, ..full_cfg.clone() };
        let short = pretrain(&short_cfg, &ds, &ds, &base.join("short"), None, "cfg").unwrap();
        let ckpt = load_checkpoint(&short.final_path).unwrap();
        assert_eq!(ckpt.epoch, 2);

        let resumed = pretrain(&full_cfg, &ds, &ds, &base.join("resumed"), Some(ckpt), "cfg").unwrap();
        assert_eq!(resumed.log.epochs.len(), 1);
        let full_row = &full.log.epochs[2];
        let res_row = &resumed.log.epochs[0];
        assert_eq!(full_row.epoch, res_row.epoch);
        assert_eq!(full_row.loss_total, res_row.loss_total);
        assert_eq!(full_row.loss_contrastive, res_row.loss_contrastive);
        assert_eq!(full_row.loss_reconstruction, res_row.loss_reconstruction);
        fs::remove_dir_all(&base).unwrap();
    }

    #[test]
    fn config_digest_mismatch_is_flagged_on_resume() {
        let base = std::env::temp_dir().join(format!("conrec_digest_{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        let ds = gen_circles_squares(6, 32, 5).unwrap();
        let cfg = TrainConfig { epochs: 1, ..tiny_cfg(Method::Simclr) };
        let first = pretrain(&cfg, &ds, &ds, &base.join("a"), None, "cfg-one").unwrap();
        let ckpt = load_checkpoint(&first.final_path).unwrap();
        let cfg2 = TrainConfig { epochs: 2, ..cfg };
        let resumed = pretrain(&cfg2, &ds, &ds, &base.join("b"), Some(ckpt), "cfg-two").unwrap();
        assert!(resumed.config_digest_warning);
        fs::remove_dir_all(&base).unwrap();
    }
}
