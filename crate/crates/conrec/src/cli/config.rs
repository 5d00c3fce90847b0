//! Flat `section.key = value` run configuration.
//!
//! Every key has a default; unknown keys are rejected so typos never pass
//! silently. The canonical serialization (all keys, sorted) is what gets
//! digested and frozen into run directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::train::{Method, OptimizerKind, TrainConfig};

pub const OUT_ROOT_ENV: &str = "CONREC_OUT_ROOT";

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub out_dir: String,
    pub seed: u64,
    /// 0 means "use the default thread pool".
    pub threads: usize,
    pub train_dir: String,
    pub test_dir: String,

    pub method: Method,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coef: f64,

    pub tau: f64,
    pub alpha: f64,

    pub image_size: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub attention_filters: Vec<usize>,

    pub augment: AugmentConfig,

    pub eval_lambda: f64,
    pub eval_max_iters: usize,
    pub eval_tol: f64,
    pub eval_fractions: Vec<f64>,
    pub eval_repeats: usize,
    pub eval_crop_augment: bool,
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            out_dir: "runs/out".into(),
            seed: t.seed,
            threads: 0,
            train_dir: String::new(),
            test_dir: String::new(),
            method: t.method,
            batch_size: t.batch_size,
            epochs: t.epochs,
            eval_every: t.eval_every,
            optimizer: t.optimizer,
            lr: t.lr,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            trust_coef: t.trust_coef,
            tau: t.loss.tau,
            alpha: t.loss.alpha,
            image_size: t.model.image_size,
            levels: t.model.levels,
            base_channels: t.model.base_channels,
            projection_hidden: t.model.projection_hidden,
            projection_dim: t.model.projection_dim,
            attention_filters: t.model.attention_filters.clone(),
            augment: t.augment,
            eval_lambda: 1e-4,
            eval_max_iters: 500,
            eval_tol: 1e-7,
            eval_fractions: vec![1.0],
            eval_repeats: 3,
            eval_crop_augment: false,
            eval_batch: 32,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value for {key}: {v}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean for {key}: {v}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad list element for {key}: {s}"))))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.augment;
        match key {
            "run.out_dir" => self.out_dir = value.to_string(),
            "run.seed" => self.seed = parse_num(key, value)?,
            "run.threads" => self.threads = parse_num(key, value)?,
            "dataset.train_dir" => self.train_dir = value.to_string(),
            "dataset.test_dir" => self.test_dir = value.to_string(),
            "train.method" => self.method = Method::parse(value)?,
            "train.batch_size" => self.batch_size = parse_num(key, value)?,
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.eval_every" => self.eval_every = parse_num(key, value)?,
            "train.optimizer" => self.optimizer = OptimizerKind::parse(value)?,
            "train.lr" => self.lr = parse_num(key, value)?,
            "train.weight_decay" => self.weight_decay = parse_num(key, value)?,
            "train.momentum" => self.momentum = parse_num(key, value)?,
            "train.trust_coef" => self.trust_coef = parse_num(key, value)?,
            "loss.tau" => self.tau = parse_num(key, value)?,
            "loss.alpha" => self.alpha = parse_num(key, value)?,
            "model.image_size" => self.image_size = parse_num(key, value)?,
            "model.levels" => self.levels = parse_num(key, value)?,
            "model.base_channels" => self.base_channels = parse_num(key, value)?,
            "model.projection_hidden" => self.projection_hidden = parse_num(key, value)?,
            "model.projection_dim" => self.projection_dim = parse_num(key, value)?,
            "model.attention_filters" => self.attention_filters = parse_list(key, value)?,
            "augment.crop_scale_min" => a.crop_scale_range.0 = parse_num(key, value)?,
            "augment.crop_scale_max" => a.crop_scale_range.1 = parse_num(key, value)?,
            "augment.flip_prob" => a.flip_prob = parse_num(key, value)?,
            "augment.jitter_strength" => a.jitter_strength = parse_num(key, value)?,
            "augment.blur_prob" => a.blur_prob = parse_num(key, value)?,
            "augment.blur_sigma_min" => a.blur_sigma_range.0 = parse_num(key, value)?,
            "augment.blur_sigma_max" => a.blur_sigma_range.1 = parse_num(key, value)?,
            "augment.inpaint_count_min" => a.inpaint_count_range.0 = parse_num(key, value)?,
            "augment.inpaint_count_max" => a.inpaint_count_range.1 = parse_num(key, value)?,
            "augment.inpaint_size_min" => a.inpaint_size_range.0 = parse_num(key, value)?,
            "augment.inpaint_size_max" => a.inpaint_size_range.1 = parse_num(key, value)?,
            "augment.outpaint_keep_min" => a.outpaint_keep_range.0 = parse_num(key, value)?,
            "augment.outpaint_keep_max" => a.outpaint_keep_range.1 = parse_num(key, value)?,
            "augment.shuffle_window" => a.shuffle_window = parse_num(key, value)?,
            "augment.shuffle_block_count" => a.shuffle_block_count = parse_num(key, value)?,
            "augment.prob_inpaint" => a.mask_probs.inpaint = parse_num(key, value)?,
            "augment.prob_outpaint" => a.mask_probs.outpaint = parse_num(key, value)?,
            "augment.prob_shuffle" => a.mask_probs.shuffle = parse_num(key, value)?,
            "augment.prob_nonlinear" => a.mask_probs.nonlinear = parse_num(key, value)?,
            "eval.lambda" => self.eval_lambda = parse_num(key, value)?,
            "eval.max_iters" => self.eval_max_iters = parse_num(key, value)?,
            "eval.tol" => self.eval_tol = parse_num(key, value)?,
            "eval.fractions" => self.eval_fractions = parse_list(key, value)?,
            "eval.repeats" => self.eval_repeats = parse_num(key, value)?,
            "eval.crop_augment" => self.eval_crop_augment = parse_bool(key, value)?,
            "eval.batch" => self.eval_batch = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", ln + 1)));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// All keys in a fixed order with the current values; re-parsing this
    /// string reproduces the config exactly.
    pub fn canonical_string(&self) -> String {
        let a = &self.augment;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let flist =
            |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("augment.blur_prob", a.blur_prob.to_string());
        kv("augment.blur_sigma_max", a.blur_sigma_range.1.to_string());
        kv("augment.blur_sigma_min", a.blur_sigma_range.0.to_string());
        kv("augment.crop_scale_max", a.crop_scale_range.1.to_string());
        kv("augment.crop_scale_min", a.crop_scale_range.0.to_string());
        kv("augment.flip_prob", a.flip_prob.to_string());
        kv("augment.inpaint_count_max", a.inpaint_count_range.1.to_string());
        kv("augment.inpaint_count_min", a.inpaint_count_range.0.to_string());
        kv("augment.inpaint_size_max", a.inpaint_size_range.1.to_string());
        kv("augment.inpaint_size_min", a.inpaint_size_range.0.to_string());
        kv("augment.jitter_strength", a.jitter_strength.to_string());
        kv("augment.outpaint_keep_max", a.outpaint_keep_range.1.to_string());
        kv("augment.outpaint_keep_min", a.outpaint_keep_range.0.to_string());
        kv("augment.prob_inpaint", a.mask_probs.inpaint.to_string());
        kv("augment.prob_nonlinear", a.mask_probs.nonlinear.to_string());
        kv("augment.prob_outpaint", a.mask_probs.outpaint.to_string());
        kv("augment.prob_shuffle", a.mask_probs.shuffle.to_string());
        kv("augment.shuffle_block_count", a.shuffle_block_count.to_string());
        kv("augment.shuffle_window", a.shuffle_window.to_string());
        kv("dataset.test_dir", self.test_dir.clone());
        kv("dataset.train_dir", self.train_dir.clone());
        kv("eval.batch", self.eval_batch.to_string());
        kv("eval.crop_augment", self.eval_crop_augment.to_string());
        kv("eval.fractions", flist(&self.eval_fractions));
        kv("eval.lambda", self.eval_lambda.to_string());
        kv("eval.max_iters", self.eval_max_iters.to_string());
        kv("eval.repeats", self.eval_repeats.to_string());
        kv("eval.tol", self.eval_tol.to_string());
        kv("loss.alpha", self.alpha.to_string());
        kv("loss.tau", self.tau.to_string());
        kv("model.attention_filters", list(&self.attention_filters));
        kv("model.base_channels", self.base_channels.to_string());
        kv("model.image_size", self.image_size.to_string());
        kv("model.levels", self.levels.to_string());
        kv("model.projection_dim", self.projection_dim.to_string());
        kv("model.projection_hidden", self.projection_hidden.to_string());
        kv("run.out_dir", self.out_dir.clone());
        kv("run.seed", self.seed.to_string());
        kv("run.threads", self.threads.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.eval_every", self.eval_every.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.method", self.method.name().to_string());
        kv("train.momentum", self.momentum.to_string());
        kv("train.optimizer", self.optimizer.name().to_string());
        kv("train.trust_coef", self.trust_coef.to_string());
        kv("train.weight_decay", self.weight_decay.to_string());
        s
    }

    pub fn digest(&self) -> u64 {
        crate::rng::fnv1a(self.canonical_string().as_bytes())
    }

    /// Assemble the training configuration (method-derived fields resolved).
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            batch_size: self.batch_size,
            epochs: self.epochs,
            eval_every: self.eval_every,
            optimizer: self.optimizer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            trust_coef: self.trust_coef,
            seed: self.seed,
            loss: LossConfig {
                tau: self.tau,
                alpha: self.alpha,
                contrastive_enabled: true,
                reconstruction_enabled: true,
            },
            augment: self.augment.clone(),
            model: ModelConfig {
                image_size: self.image_size,
                levels: self.levels,
                base_channels: self.base_channels,
                projection_hidden: self.projection_hidden,
                projection_dim: self.projection_dim,
                pooling: self.method.pooling(),
                attention_filters: self.attention_filters.clone(),
            },
        }
        .resolved()
    }

    /// Output directory, honoring the `CONREC_OUT_ROOT` environment override
    /// for relative paths.
    pub fn resolve_out_dir(&self) -> PathBuf {
        let p = PathBuf::from(&self.out_dir);
        if p.is_relative() {
            if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
                return PathBuf::from(root).join(p);
            }
        }
        p
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("train.epochz", "5").is_err());
        assert!(cfg.set("nonsense", "5").is_err());
        assert!(cfg.set("train.epochs", "5").is_ok());
        assert_eq!(cfg.epochs, 5);
    }

    #[test]
    fn canonical_string_roundtrips_and_digest_is_stable() {
        let mut cfg = RunConfig::default();
        cfg.set("train.method", "simclr-attention").unwrap();
        cfg.set("model.attention_filters", "32,16,8").unwrap();
        cfg.set("eval.fractions", "0.01,0.5,1.0").unwrap();
        let text = cfg.canonical_string();
        let reparsed = RunConfig::parse_str(&text).unwrap();
        assert_eq!(text, reparsed.canonical_string());
        assert_eq!(cfg.digest(), reparsed.digest());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse_str("# comment\n\ntrain.epochs = 7\n").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert!(RunConfig::parse_str("train.epochs 7\n").is_err());
    }

    #[test]
    fn out_root_env_var_redirects_relative_dirs() {
        let mut cfg = RunConfig::default();
        cfg.out_dir = "runs/x".into();
        std::env::set_var(OUT_ROOT_ENV, "/srv/conrec");
        assert_eq!(cfg.resolve_out_dir(), PathBuf::from("/srv/conrec/runs/x"));
        cfg.out_dir = "/abs/path".into();
        assert_eq!(cfg.resolve_out_dir(), PathBuf::from("/abs/path"));
        std::env::remove_var(OUT_ROOT_ENV);
        cfg.out_dir = "runs/x".into();
        assert_eq!(cfg.resolve_out_dir(), PathBuf::from("runs/x"));
    }

    #[test]
    fn train_config_derives_pooling_from_method() {
        let mut cfg = RunConfig::default();
        cfg.set("train.method", "reconstruction").unwrap();
        let t = cfg.train_config();
        assert_eq!(t.model.pooling, crate::model::Pooling::Gap);
        assert!(!t.loss.contrastive_enabled);
        assert!(t.loss.reconstruction_enabled);
        t.validate().unwrap();
    }
}
