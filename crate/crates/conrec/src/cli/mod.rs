//! Command-line entry points: generate | pretrain | evaluate |
//! preview-augment | report.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::eval::{
    concat_representations, extract_crop_augmented, extract_representations, fit_probe,
    probe_accuracy, quadratic_weighted_kappa, sweep_on_representations,
};
use crate::rng::derive;
use crate::synthgen::{
    gen_circles_squares, gen_rectangle_triangle, load_dataset, write_dataset, write_pgm_gray,
};
use crate::train::{load_checkpoint, pretrain, Checkpoint};

pub use config::RunConfig;

const USAGE: &str = "usage: conrec <command> [options]

commands:
  generate         --dataset rectangle-triangle|circles-squares --out DIR
                   [--n-train N] [--n-test N] [--size S] [--seed S]
  pretrain         [--config FILE] [--resume CKPT] [--SECTION.KEY VALUE ...]
  evaluate         --checkpoint CKPT --train-dir DIR --test-dir DIR --out DIR
                   [--fractions F1,F2,...] [--repeats N] [--lambda L]
                   [--crop-augment] [--seed S]
  preview-augment  --dataset-dir DIR --out DIR [--index I] [--seed S]
  report           --out FILE RUN_DIR [RUN_DIR ...]
";

/// Dispatch and map errors to a nonzero exit code.
pub fn run(args: &[String]) -> i32 {
    let Some(cmd) = args.first() else {
        eprintln!("{USAGE}");
        return 2;
    };
    let rest = &args[1..];
    let outcome = match cmd.as_str() {
        "generate" => cmd_generate(rest),
        "pretrain" => cmd_pretrain(rest),
        "evaluate" => cmd_evaluate(rest),
        "preview-augment" => cmd_preview_augment(rest),
        "report" => cmd_report(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown command: {other}\n{USAGE}");
            return 2;
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Minimal flag parser: `--key value` pairs plus boolean switches.
struct Flags {
    pairs: Vec<(String, String)>,
    switches: Vec<String>,
    positional: Vec<String>,
}

fn parse_flags(args: &[String], switch_names: &[&str]) -> Result<Flags> {
    let mut pairs = Vec::new();
    let mut switches = Vec::new();
    let mut positional = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(name) = a.strip_prefix("--") {
            if switch_names.contains(&name) {
                switches.push(name.to_string());
                i += 1;
                continue;
            }
            let Some(value) = args.get(i + 1) else {
                return Err(Error::Config(format!("flag --{name} needs a value")));
            };
            pairs.push((name.to_string(), value.clone()));
            i += 2;
        } else {
            positional.push(a.clone());
            i += 1;
        }
    }
    Ok(Flags { pairs, switches, positional })
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn require(&self, name: &str) -> Result<&str> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    fn get_num<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T> {
        match self.get(name) {
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value for --{name}: {v}"))),
            None => Ok(default),
        }
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }
}

/// Run `f` under a dedicated pool when a thread count is requested; the
/// global pool is left untouched so in-process callers are not affected.
fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    } else {
        f()
    }
}

// ── generate ────────────────────────────────────────────────────────────

fn cmd_generate(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &[])?;
    let dataset = flags.require("dataset")?.to_string();
    let out = PathBuf::from(flags.require("out")?);
    let n_train: usize = flags.get_num("n-train", 1000)?;
    let n_test: usize = flags.get_num("n-test", 500)?;
    let size: usize = flags.get_num("size", 128)?;
    let seed: u64 = flags.get_num("seed", 7)?;

    let gen = |n: usize, s: u64| match dataset.as_str() {
        "rectangle-triangle" => gen_rectangle_triangle(n, size, s),
        "circles-squares" => gen_circles_squares(n, size, s),
        other => Err(Error::Config(format!("unknown dataset {other}"))),
    };
    let train = gen(n_train, seed)?;
    let test = gen(n_test, seed.wrapping_add(1))?;
    write_dataset(&train, &out.join("train"))?;
    write_dataset(&test, &out.join("test"))?;
    println!(
        "generated {dataset}: {} train + {} test images ({size}x{size}, {} classes) -> {}",
        train.len(),
        test.len(),
        train.class_count,
        out.display()
    );
    Ok(())
}

// ── pretrain ────────────────────────────────────────────────────────────

fn cmd_pretrain(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &[])?;
    let mut cfg = match flags.get("config") {
        Some(path) => RunConfig::parse_file(Path::new(path))?,
        None => RunConfig::default(),
    };
    let mut resume_path: Option<PathBuf> = None;
    for (k, v) in &flags.pairs {
        match k.as_str() {
            "config" => {}
            "resume" => resume_path = Some(PathBuf::from(v)),
            key => cfg.set(key, v)?,
        }
    }
    if cfg.train_dir.is_empty() || cfg.test_dir.is_empty() {
        return Err(Error::Config(
            "dataset.train_dir and dataset.test_dir must be set (config file or --dataset.train_dir ...)".into(),
        ));
    }
    let train_ds = load_dataset(Path::new(&cfg.train_dir))?;
    let test_ds = load_dataset(Path::new(&cfg.test_dir))?;

    let out_dir = cfg.resolve_out_dir();
    fs::create_dir_all(&out_dir)?;
    let canonical = cfg.canonical_string();
    fs::write(out_dir.join("config.resolved"), &canonical)?;

    let resume = match resume_path {
        Some(p) => Some(load_checkpoint(&p)?),
        None => None,
    };

    let train_cfg = cfg.train_config();
    let outcome = with_threads(cfg.threads, || {
        pretrain(&train_cfg, &train_ds, &test_ds, &out_dir, resume, &canonical)
    })?;
    println!(
        "pretrained {} for {} epochs ({} parameters)",
        train_cfg.method.name(),
        train_cfg.epochs,
        outcome.param_count
    );
    match (outcome.best_score, outcome.best_epoch) {
        (Some(score), Some(epoch)) => println!("best probe accuracy {score:.4} at epoch {epoch}"),
        _ => println!("no evaluation epochs ran; best checkpoint equals the final one"),
    }
    println!("checkpoints: {} , {}", outcome.best_path.display(), outcome.final_path.display());
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────────

fn cmd_evaluate(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &["crop-augment"])?;
    let ckpt_path = PathBuf::from(flags.require("checkpoint")?);
    let train_dir = PathBuf::from(flags.require("train-dir")?);
    let test_dir = PathBuf::from(flags.require("test-dir")?);
    let out_dir = PathBuf::from(flags.require("out")?);
    let lambda: f64 = flags.get_num("lambda", 1e-4)?;
    let repeats: usize = flags.get_num("repeats", 3)?;
    let seed: u64 = flags.get_num("seed", 7)?;
    let batch: usize = flags.get_num("batch", 32)?;
    let fractions: Vec<f64> = match flags.get("fractions") {
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad fraction {s}"))))
            .collect::<Result<_>>()?,
        None => vec![1.0],
    };

    let ckpt: Checkpoint = load_checkpoint(&ckpt_path)?;
    let train_ds = load_dataset(&train_dir)?;
    let test_ds = load_dataset(&test_dir)?;
    fs::create_dir_all(&out_dir)?;

    let mut train_rep = extract_representations(&ckpt.params, &train_ds, batch)?;
    let test_rep = extract_representations(&ckpt.params, &test_ds, batch)?;
    if flags.has("crop-augment") {
        let extra = extract_crop_augmented(&ckpt.params, &train_ds, batch, 3, derive(seed, &[0xc0a9]))?;
        train_rep = concat_representations(&train_rep, &extra);
    }

    let probe = fit_probe(&train_rep, lambda, 500, 1e-7)?;
    let accuracy = probe_accuracy(&probe, &test_rep)?;
    let predictions = probe.predict_all(&test_rep);
    let kappa = quadratic_weighted_kappa(&test_rep.labels, &predictions, test_rep.class_count)
        .map(|k| format!("{k:.4}"))
        .unwrap_or_else(|e| format!("undefined ({e})"));

    let sweep = sweep_on_representations(&train_rep, &test_rep, &fractions, seed, lambda, repeats)?;

    let mut runs_csv = String::from("fraction,repeat,metric\n");
    for row in &sweep.rows {
        runs_csv.push_str(&format!("{},{},{}\n", row.fraction, row.repeat, row.metric));
    }
    fs::write(out_dir.join("sweep_runs.csv"), runs_csv)?;
    let mut agg_csv = String::from("fraction,mean,std\n");
    for agg in &sweep.aggregates {
        agg_csv.push_str(&format!("{},{},{}\n", agg.fraction, agg.mean, agg.std));
    }
    fs::write(out_dir.join("sweep_agg.csv"), agg_csv)?;

    // Method recovered from the checkpoint's frozen config when present.
    let method = RunConfig::parse_str(&ckpt.config_text)
        .map(|c| c.method.name().to_string())
        .unwrap_or_else(|_| "unknown".to_string());

    let summary_csv = format!(
        "checkpoint,method,dataset,epoch,n_train,n_test,accuracy,kappa\n{},{},{},{},{},{},{},{}\n",
        ckpt_path.display(),
        method,
        test_ds.name,
        ckpt.epoch,
        train_ds.len(),
        test_ds.len(),
        accuracy,
        kappa,
    );
    fs::write(out_dir.join("summary.csv"), &summary_csv)?;

    let mut summary = String::new();
    summary.push_str(&format!("checkpoint:      {}\n", ckpt_path.display()));
    summary.push_str(&format!("method:          {method}\n"));
    summary.push_str(&format!("dataset:         {} ({} classes)\n", test_ds.name, test_ds.class_count));
    summary.push_str(&format!("train / test:    {} / {}\n", train_ds.len(), test_ds.len()));
    summary.push_str(&format!("checkpoint epoch: {}\n", ckpt.epoch));
    summary.push_str(&format!("linear evaluation accuracy: {:.2}%\n", accuracy * 100.0));
    summary.push_str(&format!("quadratic weighted kappa:   {kappa}\n"));
    if !sweep.aggregates.is_empty() {
        summary.push_str("label-fraction sweep (fraction: mean +- std):\n");
        for agg in &sweep.aggregates {
            summary.push_str(&format!("  {:>5.2}: {:.4} +- {:.4}\n", agg.fraction, agg.mean, agg.std));
        }
    }
    for (fraction, reason) in &sweep.skipped {
        summary.push_str(&format!("  fraction {fraction} skipped: {reason}\n"));
    }
    fs::write(out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

// ── preview-augment ─────────────────────────────────────────────────────

fn cmd_preview_augment(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &[])?;
    let dataset_dir = PathBuf::from(flags.require("dataset-dir")?);
    let out_dir = PathBuf::from(flags.require("out")?);
    let index: usize = flags.get_num("index", 0)?;
    let seed: u64 = flags.get_num("seed", 7)?;

    let ds = load_dataset(&dataset_dir)?;
    if index >= ds.len() {
        return Err(Error::Config(format!(
            "index {index} out of range (dataset holds {} images)",
            ds.len()
        )));
    }
    let cfg = AugmentConfig::default();
    fs::create_dir_all(&out_dir)?;

    let img = &ds.images[index];
    let vseed = augment::view_seed(seed, 1);
    let target = augment::simclr_view(img, vseed, &cfg)?;

    let modes: [(&str, bool); 4] = [
        ("inpaint", cfg.mask_probs.inpaint > 0.0),
        ("outpaint", cfg.mask_probs.outpaint > 0.0),
        ("shuffle", cfg.mask_probs.shuffle > 0.0),
        ("nonlinear", cfg.mask_probs.nonlinear > 0.0),
    ];
    let mut written = 0;
    for (mode, enabled) in modes {
        if !enabled {
            continue;
        }
        let mseed = derive(vseed, &[crate::rng::fnv1a(mode.as_bytes())]);
        let masked = match mode {
            "inpaint" => augment::inpaint(&target, mseed, &cfg)?,
            "outpaint" => augment::outpaint(&target, mseed, &cfg)?,
            "shuffle" => augment::local_pixel_shuffle(&target, mseed, &cfg)?,
            "nonlinear" => augment::nonlinear_intensity(&target, mseed)?,
            _ => unreachable!(),
        };
        write_pgm_gray(&out_dir.join(format!("{mode}_input.pgm")), img)?;
        write_pgm_gray(&out_dir.join(format!("{mode}_masked.pgm")), &masked)?;
        write_pgm_gray(&out_dir.join(format!("{mode}_target.pgm")), &target)?;
        written += 1;
    }
    println!("wrote {written} (input, masked, target) triplets to {}", out_dir.display());
    Ok(())
}

// ── report ──────────────────────────────────────────────────────────────

fn cmd_report(args: &[String]) -> Result<()> {
    let flags = parse_flags(args, &[])?;
    let out = PathBuf::from(flags.require("out")?);
    if flags.positional.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut table = String::new();
    let mut header_written = false;
    for dir in &flags.positional {
        let path = Path::new(dir).join("summary.csv");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if !header_written {
                    table.push_str("run,");
                    table.push_str(line);
                    table.push('\n');
                    header_written = true;
                }
                continue;
            }
            table.push_str(&format!("{dir},{line}\n"));
        }
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(&out)?;
    f.write_all(table.as_bytes())?;
    println!("wrote comparison table to {}", out.display());
    Ok(())
}
