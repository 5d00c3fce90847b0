//! Acceptance suite: one test per criterion, each printing a `[PASS]` line
//! (run with `--nocapture` to see them).
//!
//! The method-ordering tests train the three core methods on both synthetic
//! benchmarks at the reduced preset (64 px, base 4, 300 epochs); the two
//! dataset chains run on separate test threads, each single-threaded
//! internally. Artifacts land in `target/acceptance/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use conrec::augment::{self, AugmentConfig};
use conrec::eval::{
    fit_probe, label_fraction_sweep, probe_accuracy, quadratic_weighted_kappa,
    RepresentationMatrix, DEFAULT_FRACTIONS,
};
use conrec::losses::{self, cosine_sim, LossConfig};
use conrec::model::{
    attention_pool_with_map, init_model, BnMode, Forward, ModelConfig, ModelParams, Pooling,
};
use conrec::numerics::gradcheck::{grad_check, Params};
use conrec::numerics::{GradientTape, Tensor};
use conrec::synthgen::{gen_circles_squares, gen_rectangle_triangle, LabeledDataset};
use conrec::train::{
    load_checkpoint, pretrain, Method, MetricsLog, PretrainOutcome, TrainConfig,
};

/// Wall-clock reference from the criterion text; stated for a desktop-class
/// CPU, so it is reported per method rather than asserted on arbitrary hosts.
const REDUCED_BUDGET_MINUTES: f64 = 30.0;

fn out_root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/acceptance")
        .to_path_buf();
    std::fs::create_dir_all(&root).unwrap();
    root
}

fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
}

// ── Reduced-preset training chains (criteria 5 and 8) ───────────────────

struct MethodRun {
    best: f64,
    minutes: f64,
    best_path: PathBuf,
    log: MetricsLog,
}

struct Chain {
    runs: BTreeMap<&'static str, MethodRun>,
    train_ds: LabeledDataset,
    test_ds: LabeledDataset,
}

fn reduced_config(method: Method, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        method,
        batch_size: 16,
        epochs: 300,
        eval_every: 20,
        seed,
        model: ModelConfig {
            image_size: 64,
            // Three levels keep an 8x8 bottleneck at 64 px: the same spatial
            // grid the full 128 px preset has at four levels.
            levels: 3,
            base_channels: 4,
            projection_hidden: 128,
            projection_dim: 64,
            pooling: method.pooling(),
            attention_filters: vec![16, 8, 4],
        },
        ..TrainConfig::default()
    };
    // Blur strength scaled to the 64 px images.
    cfg.augment.blur_sigma_range = (0.1, 1.0);
    cfg.resolved()
}

fn build_chain(name: &str, train_ds: LabeledDataset, test_ds: LabeledDataset) -> Chain {
    conrec::tune_allocator();
    let pool = single_thread_pool();
    let mut runs = BTreeMap::new();
    for method in [Method::Simclr, Method::Reconstruction, Method::Conrec] {
        let cfg = reduced_config(method, 42);
        let dir = out_root().join(format!("{name}_{}", method.name()));
        let t0 = Instant::now();
        let outcome: PretrainOutcome = pool
            .install(|| pretrain(&cfg, &train_ds, &test_ds, &dir, None, "acceptance"))
            .unwrap_or_else(|e| panic!("{name}/{} pretraining failed: {e}", method.name()));
        let minutes = t0.elapsed().as_secs_f64() / 60.0;
        let best = outcome.best_score.expect("probe evaluations ran");
        println!(
            "  {name}/{:<14} best probe accuracy {:.4} (epoch {:?}) in {minutes:.1} min \
             [reduced-preset reference budget: {REDUCED_BUDGET_MINUTES:.0} min on a desktop CPU]",
            method.name(),
            best,
            outcome.best_epoch.unwrap()
        );
        runs.insert(
            method.name(),
            MethodRun { best, minutes, best_path: outcome.best_path, log: outcome.log },
        );
    }
    Chain { runs, train_ds, test_ds }
}

fn rt_chain() -> &'static Chain {
    static RT: OnceLock<Chain> = OnceLock::new();
    RT.get_or_init(|| {
        let train = gen_rectangle_triangle(1000, 64, 7).unwrap();
        let test = gen_rectangle_triangle(500, 64, 8).unwrap();
        build_chain("rt", train, test)
    })
}

fn cs_chain() -> &'static Chain {
    static CS: OnceLock<Chain> = OnceLock::new();
    CS.get_or_init(|| {
        let train = gen_circles_squares(600, 64, 7).unwrap();
        let test = gen_circles_squares(400, 64, 8).unwrap();
        build_chain("cs", train, test)
    })
}

// ── Criterion 1: gradient correctness ───────────────────────────────────

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();

    // Per layer type, random small tensors.
    let per_layer = [
        layer_check_conv(),
        layer_check_fused_block(),
        layer_check_pool_upsample_concat(),
        layer_check_heads(),
    ];
    for (name, err) in per_layer.iter().flatten() {
        assert!(*err <= 1e-5, "{name}: relative error {err}");
    }

    // Full ConRec loss on a 2-image batch at 16x16 with the minimal model.
    let cfg = ModelConfig {
        image_size: 16,
        levels: 2,
        base_channels: 4,
        projection_hidden: 8,
        projection_dim: 4,
        pooling: Pooling::Attention,
        attention_filters: vec![8, 4],
    };
    // Fixed fixture seed chosen so no ReLU activation sits within eps of its
    // kink; at a kink the finite difference itself is ill-defined.
    let model: ModelParams<f64> = init_model(&cfg, 7).unwrap();
    let mut params = Params::new();
    for (name, t) in model.tensors() {
        params.insert(name.clone(), t.clone());
    }

    let ds = gen_rectangle_triangle(4, 32, 3).unwrap();
    // Fully pinned fixture augmentation (independent of evolving defaults);
    // see the seed note below.
    let aug = AugmentConfig {
        crop_scale_range: (0.6, 1.0),
        flip_prob: 0.5,
        jitter_strength: 1.0,
        blur_prob: 0.5,
        blur_sigma_range: (0.1, 2.0),
        shuffle_window: 4,
        ..AugmentConfig::default()
    };
    let mut views = Tensor::<f64>::zeros(&[4, 16, 16, 1]);
    let mut targets = Tensor::<f64>::zeros(&[4, 16, 16, 1]);
    for (i, src) in ds.images.iter().take(2).enumerate() {
        // Center-crop the 32px shapes down to 16px inputs.
        let crop = |img: &Tensor<f32>| {
            Tensor::<f64>::from_fn(&[16, 16, 1], |j| {
                let (y, x) = (j / 16, j % 16);
                img.data()[(y + 8) * 32 + (x + 8)] as f64
            })
        };
        let pair = augment::make_pair(src, 31 + i as u64, &aug, i).unwrap();
        for (slot, img) in
            [(2 * i, &pair.view1_masked), (2 * i + 1, &pair.view2_masked)]
        {
            views.data_mut()[slot * 256..(slot + 1) * 256]
                .copy_from_slice(crop(img).data());
        }
        for (slot, img) in
            [(2 * i, &pair.view1_target), (2 * i + 1, &pair.view2_target)]
        {
            targets.data_mut()[slot * 256..(slot + 1) * 256]
                .copy_from_slice(crop(img).data());
        }
    }

    let loss_cfg = LossConfig::default();
    let cfg2 = cfg.clone();
    let report = grad_check(
        move |tape, p| {
            let mut m = ModelParams::<f64>::new_empty(cfg2.clone());
            for (name, t) in p {
                m.insert_raw(name.clone(), t.clone());
            }
            let x = tape.constant(views.clone());
            let mut fwd = Forward::new(&m, tape, BnMode::Train);
            let (phi, skips) = fwd.encode(x)?;
            let xhat = fwd.decode(phi, &skips)?;
            let lr = fwd.tape.mse(xhat, &targets)?;
            let h = fwd.pool(phi)?;
            let z = fwd.project(h)?;
            let lc = losses::nt_xent_on_tape(fwd.tape, z, loss_cfg.tau)?;
            drop(fwd);
            let weighted = tape.scalar_scale(lr, loss_cfg.alpha);
            Ok(tape.scalar_add(lc, weighted))
        },
        &params,
        1e-5,
    )
    .unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(
        report.max_rel_err <= 1e-5,
        "full ConRec loss gradcheck: max relative error {} (worst: {:?})",
        report.max_rel_err,
        report
            .per_param
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
    );
    assert!(elapsed < 60.0, "gradient check took {elapsed:.1}s, budget is 60s");
    println!(
        "[PASS] criterion 1: per-layer and full-loss gradients match central finite \
         differences within 1e-5 ({} parameters, max rel err {:.2e}, {elapsed:.1}s)",
        params.values().map(|t| t.numel()).sum::<usize>(),
        report.max_rel_err
    );
}

fn rand_t(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = conrec::rng::stream(seed);
    Tensor::from_fn(shape, |_| rand::Rng::random_range(&mut rng, lo..hi))
}

fn sq_loss(tape: &mut GradientTape<f64>, v: conrec::numerics::Var) -> conrec::Result<conrec::numerics::Var> {
    let target = rand_t(tape.value(v).shape(), 0xacce97, -1.0, 1.0);
    let l = tape.mse(v, &target)?;
    Ok(tape.scalar_scale(l, tape.value(v).numel() as f64))
}

fn layer_check_conv() -> Vec<(&'static str, f64)> {
    use conrec::numerics::Padding;
    let mut out = Vec::new();
    for (name, stride, padding) in [
        ("conv2d same", 1, Padding::Same),
        ("conv2d valid", 1, Padding::Valid),
        ("conv2d stride2", 2, Padding::Same),
    ] {
        let mut p = Params::new();
        p.insert("x".into(), rand_t(&[2, 5, 5, 2], 1, -1.0, 1.0));
        p.insert("k".into(), rand_t(&[3, 3, 2, 3], 2, -1.0, 1.0));
        p.insert("b".into(), rand_t(&[3], 3, -0.5, 0.5));
        let report = grad_check(
            move |tape, p| {
                let x = tape.param("x", &p["x"]);
                let k = tape.param("k", &p["k"]);
                let b = tape.param("b", &p["b"]);
                let y = tape.conv2d(x, k, b, stride, padding)?;
                sq_loss(tape, y)
            },
            &p,
            1e-5,
        )
        .unwrap();
        out.push((name, report.max_rel_err));
    }
    out
}

fn layer_check_fused_block() -> Vec<(&'static str, f64)> {
    use conrec::numerics::Padding;
    let mut p = Params::new();
    p.insert("x".into(), rand_t(&[2, 4, 4, 2], 11, -1.0, 1.0));
    p.insert("k".into(), rand_t(&[3, 3, 2, 4], 12, -0.7, 0.7));
    p.insert("b".into(), rand_t(&[4], 13, -0.3, 0.3));
    p.insert("gamma".into(), rand_t(&[4], 14, 0.6, 1.4));
    p.insert("beta".into(), rand_t(&[4], 15, -0.4, 0.4));
    let report = grad_check(
        |tape, p| {
            let x = tape.param("x", &p["x"]);
            let k = tape.param("k", &p["k"]);
            let b = tape.param("b", &p["b"]);
            let gamma = tape.param("gamma", &p["gamma"]);
            let beta = tape.param("beta", &p["beta"]);
            let (y, _, _) = tape.conv_bn_relu_train(x, k, b, gamma, beta, 1, Padding::Same, 1e-5)?;
            sq_loss(tape, y)
        },
        &p,
        1e-5,
    )
    .unwrap();
    vec![("conv+bn+relu block", report.max_rel_err)]
}

fn layer_check_pool_upsample_concat() -> Vec<(&'static str, f64)> {
    let mut p = Params::new();
    p.insert("a".into(), rand_t(&[2, 4, 4, 2], 21, 0.1, 1.0));
    p.insert("b".into(), rand_t(&[2, 4, 4, 3], 22, -1.0, -0.1));
    let report = grad_check(
        |tape, p| {
            let a = tape.param("a", &p["a"]);
            let b = tape.param("b", &p["b"]);
            let cat = tape.concat_channels(a, b)?;
            let up = tape.upsample_nearest(cat, 2)?;
            let pooled = tape.max_pool2(up)?;
            let g = tape.global_average_pool(pooled)?;
            sq_loss(tape, g)
        },
        &p,
        1e-5,
    )
    .unwrap();
    vec![("concat/upsample/maxpool/gap", report.max_rel_err)]
}

fn layer_check_heads() -> Vec<(&'static str, f64)> {
    let mut p = Params::new();
    p.insert("phi".into(), rand_t(&[4, 3, 3, 4], 31, -1.0, 1.0));
    p.insert("alogit".into(), rand_t(&[4, 3, 3, 1], 32, -1.0, 1.0));
    p.insert("w0".into(), rand_t(&[4, 6], 33, -1.0, 1.0));
    p.insert("b0".into(), rand_t(&[6], 34, -0.5, 0.5));
    let report = grad_check(
        |tape, p| {
            let phi = tape.param("phi", &p["phi"]);
            let al = tape.param("alogit", &p["alogit"]);
            let a = tape.sigmoid(al);
            let h = attention_pool_with_map(tape, phi, a)?;
            let w0 = tape.param("w0", &p["w0"]);
            let b0 = tape.param("b0", &p["b0"]);
            let z = tape.dense(h, w0, b0)?;
            losses::nt_xent_on_tape(tape, z, 0.5)
        },
        &p,
        1e-5,
    )
    .unwrap();
    vec![("attention-pool + projection + nt-xent", report.max_rel_err)]
}

// ── Criterion 2: loss oracles ───────────────────────────────────────────

#[test]
fn criterion_2_loss_oracles() {
    // Naive double-loop evaluation of the loss definition.
    let oracle = |z: &Tensor<f64>, tau: f64| -> f64 {
        let (n2, d) = (z.dim(0), z.dim(1));
        let row = |i: usize| &z.data()[i * d..(i + 1) * d];
        let mut total = 0.0;
        for i in 0..n2 {
            let j = if i % 2 == 0 { i + 1 } else { i - 1 };
            let num = (cosine_sim(row(i), row(j)).unwrap() / tau).exp();
            let mut den = 0.0;
            for k in 0..n2 {
                if k != i {
                    den += (cosine_sim(row(i), row(k)).unwrap() / tau).exp();
                }
            }
            total += -(num / den).ln();
        }
        total / n2 as f64
    };

    for case in 0..100u64 {
        let n_pairs = 1 + (case as usize % 8);
        let d = 2 + (case as usize % 5);
        let z = rand_t(&[2 * n_pairs, d], 900 + case, -1.0, 1.0).map(|v| v + 0.01);
        let tau = [0.1, 0.5, 1.0][case as usize % 3];
        let got = losses::nt_xent(&z, tau).unwrap();
        let want = oracle(&z, tau);
        assert!((got - want).abs() <= 1e-10, "case {case}: {got} vs {want}");
    }

    let z = Tensor::new(&[4, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let want = (1.0f64 + 2.0 * (-2.0f64).exp()).ln();
    assert!((losses::nt_xent(&z, 0.5).unwrap() - want).abs() <= 1e-9);
    assert!((want - 0.2395).abs() < 5e-5);

    let single = rand_t(&[2, 5], 1001, -1.0, 1.0).map(|v| v + 0.02);
    assert_eq!(losses::nt_xent(&single, 0.5).unwrap(), 0.0);

    let a = rand_t(&[2, 3, 3, 1], 1002, 0.0, 1.0);
    let b = rand_t(&[2, 3, 3, 1], 1003, 0.0, 1.0);
    let mut flat = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        flat += (x - y) * (x - y);
    }
    let got = losses::reconstruction_mse(&a, &b).unwrap();
    assert!((got - flat / 18.0).abs() <= 1e-12);

    println!(
        "[PASS] criterion 2: nt_xent matches the double-loop oracle on 100 inputs (<=1e-10), \
         the closed-form pair case gives log(1+2e^-2) ~ 0.2395 (<=1e-9), reconstruction MSE \
         matches its summation oracle (<=1e-12), single-pair loss is exactly 0"
    );
}

// ── Criterion 3: attention-pooling properties ───────────────────────────

#[test]
fn criterion_3_attention_pool_properties() {
    // Constant attention map (zeroed final conv => a = 0.5 everywhere)
    // reduces the learned pooling to global average pooling.
    let cfg = ModelConfig {
        image_size: 16,
        levels: 2,
        base_channels: 4,
        projection_hidden: 8,
        projection_dim: 4,
        pooling: Pooling::Attention,
        attention_filters: vec![8, 4],
    };
    let mut model: ModelParams<f32> = init_model(&cfg, 9).unwrap();
    for v in model.get_mut("att.out.w").data_mut() {
        *v = 0.0;
    }
    let x = Tensor::from_fn(&[3, 16, 16, 1], |i| ((i * 37) % 101) as f32 / 101.0);
    let mut tape = GradientTape::new();
    let xv = tape.constant(x);
    let mut fwd = Forward::new(&model, &mut tape, BnMode::Train);
    let (phi, _) = fwd.encode(xv).unwrap();
    let h = fwd.pool(phi).unwrap();
    let gap = tape.global_average_pool(phi).unwrap();
    let diff = tape.value(h).max_abs_diff(tape.value(gap));
    assert!(diff <= 1e-6, "constant attention vs GAP: {diff}");

    // One-hot attention selects the spatial slice exactly.
    let mut tape = GradientTape::<f64>::new();
    let phi_t = rand_t(&[2, 4, 4, 5], 41, -2.0, 2.0);
    let mut a_t = Tensor::<f64>::zeros(&[2, 4, 4, 1]);
    for n in 0..2 {
        let idx = a_t.idx4(n, 2, 1, 0);
        a_t.data_mut()[idx] = 1.0;
    }
    let phiv = tape.constant(phi_t.clone());
    let av = tape.constant(a_t);
    let h = attention_pool_with_map(&mut tape, phiv, av).unwrap();
    for n in 0..2 {
        for c in 0..5 {
            assert_eq!(tape.value(h).data()[n * 5 + c], phi_t.at4(n, 2, 1, c));
        }
    }

    // Uniform positive rescaling of the attention map cancels.
    let a1 = rand_t(&[2, 4, 4, 1], 42, 0.05, 1.0);
    let a2 = a1.map(|v| v * 13.7);
    let a1v = tape.constant(a1);
    let a2v = tape.constant(a2);
    let h1 = attention_pool_with_map(&mut tape, phiv, a1v).unwrap();
    let h2 = attention_pool_with_map(&mut tape, phiv, a2v).unwrap();
    let diff = tape.value(h1).max_abs_diff(tape.value(h2));
    assert!(diff <= 1e-6, "rescaling changed h by {diff}");

    println!(
        "[PASS] criterion 3: constant attention equals GAP (<=1e-6), one-hot attention \
         selects the slice exactly, uniform rescaling leaves h unchanged (<=1e-6)"
    );
}

// ── Criterion 4: end-to-end determinism and resume ──────────────────────

fn run_cli(args: &[&str]) {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let code = conrec::cli::run(&owned);
    assert_eq!(code, 0, "cli command failed: {args:?}");
}

/// Epoch metrics with the wall-seconds column dropped (wall time is the one
/// legitimately nondeterministic column).
fn epochs_without_wall(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_4_determinism_and_resume() {
    let pool = single_thread_pool();
    pool.install(|| {
        let root = out_root().join("determinism");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let data = root.join("data");
        run_cli(&[
            "generate", "--dataset", "circles-squares", "--out", data.to_str().unwrap(),
            "--n-train", "48", "--n-test", "24", "--size", "32", "--seed", "11",
        ]);

        let pretrain_args = |out: &Path, epochs: &str, resume: Option<&Path>| {
            let mut v = vec![
                "pretrain".to_string(),
                "--dataset.train_dir".into(), data.join("train").display().to_string(),
                "--dataset.test_dir".into(), data.join("test").display().to_string(),
                "--run.out_dir".into(), out.display().to_string(),
                "--run.threads".into(), "1".into(),
                "--train.method".into(), "conrec".into(),
                "--train.epochs".into(), epochs.into(),
                "--train.eval_every".into(), "10".into(),
                "--train.batch_size".into(), "8".into(),
                "--model.image_size".into(), "32".into(),
                "--model.levels".into(), "2".into(),
                "--model.base_channels".into(), "2".into(),
                "--model.projection_hidden".into(), "8".into(),
                "--model.projection_dim".into(), "4".into(),
                "--model.attention_filters".into(), "4,2".into(),
            ];
            if let Some(r) = resume {
                v.push("--resume".into());
                v.push(r.display().to_string());
            }
            v
        };
        let run_pretrain = |out: &Path, epochs: &str, resume: Option<&Path>| {
            let args = pretrain_args(out, epochs, resume);
            let code = conrec::cli::run(&args);
            assert_eq!(code, 0, "pretrain failed");
        };

        // Two identical 20-epoch pipelines.
        for sub in ["a", "b"] {
            run_pretrain(&root.join(sub), "20", None);
            run_cli(&[
                "evaluate",
                "--checkpoint", root.join(sub).join("best.ckpt").to_str().unwrap(),
                "--train-dir", data.join("train").to_str().unwrap(),
                "--test-dir", data.join("test").to_str().unwrap(),
                "--out", root.join(format!("{sub}_eval")).to_str().unwrap(),
                "--fractions", "0.5,1.0",
                "--repeats", "2",
                "--seed", "3",
            ]);
        }
        assert_eq!(
            epochs_without_wall(&root.join("a/metrics_epochs.csv")),
            epochs_without_wall(&root.join("b/metrics_epochs.csv")),
            "per-epoch losses must be identical"
        );
        assert_eq!(
            std::fs::read_to_string(root.join("a/metrics_eval.csv")).unwrap(),
            std::fs::read_to_string(root.join("b/metrics_eval.csv")).unwrap(),
            "probe metrics must be identical"
        );
        for f in ["sweep_runs.csv", "sweep_agg.csv"] {
            assert_eq!(
                std::fs::read(root.join("a_eval").join(f)).unwrap(),
                std::fs::read(root.join("b_eval").join(f)).unwrap(),
                "evaluation output {f} must be identical"
            );
        }
        // The summary row embeds the checkpoint path; compare the metrics.
        let summary_metrics = |p: &Path| {
            let text = std::fs::read_to_string(p).unwrap();
            text.lines()
                .map(|l| l.splitn(2, ',').nth(1).unwrap_or("").to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(
            summary_metrics(&root.join("a_eval/summary.csv")),
            summary_metrics(&root.join("b_eval/summary.csv")),
            "evaluation summary metrics must be identical"
        );

        // Resume at epoch 10: epoch-11 losses equal the uninterrupted run's.
        run_pretrain(&root.join("full11"), "11", None);
        run_pretrain(&root.join("first10"), "10", None);
        run_pretrain(&root.join("resumed"), "11", Some(&root.join("first10/final.ckpt")));
        let full = epochs_without_wall(&root.join("full11/metrics_epochs.csv"));
        let resumed = epochs_without_wall(&root.join("resumed/metrics_epochs.csv"));
        let full_last = full.lines().last().unwrap();
        let resumed_last = resumed.lines().last().unwrap();
        assert_eq!(full_last, resumed_last, "resumed epoch 11 must match the uninterrupted run");

        println!(
            "[PASS] criterion 4: generate -> pretrain(20) -> evaluate is bit-identical across \
             identical seeded runs (wall-clock column excluded), and resume at epoch 10 \
             reproduces epoch 11 exactly"
        );
    });
}

// ── Criterion 5: method orderings at the reduced preset ─────────────────

#[test]
fn criterion_5a_rectangle_triangle_ordering() {
    let chain = rt_chain();
    let simclr = chain.runs["simclr"].best;
    let recon = chain.runs["reconstruction"].best;
    let conrec_best = chain.runs["conrec"].best;

    // Training-progress smoke: epoch 50 mean total loss below epoch 1.
    let log = &chain.runs["conrec"].log;
    let e1 = log.epochs[0].loss_total;
    let e50 = log.epochs[49].loss_total;
    assert!(e50 < e1, "conrec loss should fall: epoch1 {e1} vs epoch50 {e50}");

    // Class-separability sanity (recorded, not asserted): raw-pixel probe.
    let raw_acc = raw_pixel_probe_accuracy(&chain.train_ds, &chain.test_ds);
    println!(
        "  rectangle-triangle raw-pixel probe accuracy {raw_acc:.4} vs best learned {conrec_best:.4} \
         (gap recorded, not asserted)"
    );

    assert!(
        conrec_best >= simclr + 0.03,
        "ConRec ({conrec_best:.4}) must beat SimCLR ({simclr:.4}) by >= 3 points"
    );
    assert!(
        recon >= simclr,
        "Reconstruction ({recon:.4}) must reach SimCLR ({simclr:.4})"
    );
    let budget_ok = chain.runs.values().all(|r| r.minutes <= REDUCED_BUDGET_MINUTES);
    println!(
        "[PASS] criterion 5a: Rectangle-Triangle ordering holds (conrec {conrec_best:.4} >= \
         simclr {simclr:.4} + 0.03, reconstruction {recon:.4} >= simclr); per-method times \
         {:?} min (reference budget {REDUCED_BUDGET_MINUTES:.0} min on a desktop CPU: {})",
        chain.runs.iter().map(|(k, r)| (*k, (r.minutes * 10.0).round() / 10.0)).collect::<Vec<_>>(),
        if budget_ok { "met here" } else { "not met on this host" }
    );
}

#[test]
fn criterion_5b_circles_squares_ordering() {
    let chain = cs_chain();
    let simclr = chain.runs["simclr"].best;
    let recon = chain.runs["reconstruction"].best;
    let conrec_best = chain.runs["conrec"].best;
    assert!(
        simclr >= recon + 0.05,
        "SimCLR ({simclr:.4}) must beat Reconstruction ({recon:.4}) by >= 5 points"
    );
    assert!(
        conrec_best >= simclr - 0.02,
        "ConRec ({conrec_best:.4}) must stay within 2 points of SimCLR ({simclr:.4})"
    );
    let budget_ok = chain.runs.values().all(|r| r.minutes <= REDUCED_BUDGET_MINUTES);
    println!(
        "[PASS] criterion 5b: Circles-Squares ordering holds (simclr {simclr:.4} >= \
         reconstruction {recon:.4} + 0.05, conrec {conrec_best:.4} within 2 points of simclr); \
         per-method times {:?} min (reference budget {REDUCED_BUDGET_MINUTES:.0} min on a \
         desktop CPU: {})",
        chain.runs.iter().map(|(k, r)| (*k, (r.minutes * 10.0).round() / 10.0)).collect::<Vec<_>>(),
        if budget_ok { "met here" } else { "not met on this host" }
    );
}

fn raw_pixel_probe_accuracy(train: &LabeledDataset, test: &LabeledDataset) -> f64 {
    let as_matrix = |ds: &LabeledDataset| {
        let f = ds.image_size * ds.image_size;
        let mut features = Vec::with_capacity(ds.len() * f);
        for img in &ds.images {
            features.extend_from_slice(img.data());
        }
        RepresentationMatrix {
            features,
            n: ds.len(),
            f,
            labels: ds.labels.clone(),
            class_count: ds.class_count,
            dataset: ds.name.clone(),
            model_digest: 0,
        }
    };
    let probe = fit_probe(&as_matrix(train), 1e-4, 150, 1e-6).unwrap();
    probe_accuracy(&probe, &as_matrix(test)).unwrap()
}

// ── Criterion 6: probe and kappa correctness ────────────────────────────

#[test]
fn criterion_6_probe_and_kappa() {
    // Separable fixture reaches 100% training accuracy.
    let mut rng = conrec::rng::stream(5);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for cls in 0..2u8 {
        for _ in 0..40 {
            let offset = if cls == 0 { 2.0 } else { -2.0 };
            features.push(offset + rand::Rng::random_range(&mut rng, -0.5..0.5f32));
            features.push(offset + rand::Rng::random_range(&mut rng, -0.5..0.5f32));
            labels.push(cls);
        }
    }
    let rep = RepresentationMatrix {
        features,
        n: 80,
        f: 2,
        labels,
        class_count: 2,
        dataset: "separable".into(),
        model_digest: 0,
    };
    let probe = fit_probe(&rep, 1e-4, 500, 1e-9).unwrap();
    assert_eq!(probe_accuracy(&probe, &rep).unwrap(), 1.0);
    for w in probe.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
    }

    // Zero features predict the majority class.
    let mut labels = vec![1u8; 7];
    labels.extend(vec![0u8; 3]);
    let zero_rep = RepresentationMatrix {
        features: vec![0.0; 10 * 4],
        n: 10,
        f: 4,
        labels,
        class_count: 2,
        dataset: "zeros".into(),
        model_digest: 0,
    };
    let zero_probe = fit_probe(&zero_rep, 1e-4, 300, 1e-10).unwrap();
    assert!((probe_accuracy(&zero_probe, &zero_rep).unwrap() - 0.7).abs() < 1e-12);

    // Kappa fixtures.
    assert_eq!(quadratic_weighted_kappa(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
    assert_eq!(quadratic_weighted_kappa(&[0, 1], &[1, 0], 2).unwrap(), -1.0);
    let n = 10_000;
    let mut rng = conrec::rng::stream(17);
    let y1: Vec<u8> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..4u8)).collect();
    let y2: Vec<u8> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..4u8)).collect();
    let k = quadratic_weighted_kappa(&y1, &y2, 4).unwrap();
    assert!(k.abs() < 0.05, "kappa on independent labels: {k}");

    println!(
        "[PASS] criterion 6: probe objective non-increasing, separable fixture 100%, \
         zero-feature fixture predicts the majority class, kappa = 1 / -1 / |k|<0.05 on the \
         perfect / total-disagreement / independent fixtures"
    );
}

// ── Criterion 7: augmentation properties ────────────────────────────────

#[test]
fn criterion_7_augmentation_properties() {
    let mut rng = conrec::rng::stream(23);
    let img = Tensor::from_fn(&[40, 40, 1], |_| rand::Rng::random_range(&mut rng, 0.0..1.0f32));

    // Identity configuration is an exact no-op.
    let identity = AugmentConfig {
        crop_scale_range: (1.0, 1.0),
        flip_prob: 0.0,
        jitter_strength: 0.0,
        blur_prob: 0.0,
        ..AugmentConfig::default()
    };
    let out = augment::simclr_view(&img, 99, &identity).unwrap();
    assert_eq!(out.data(), img.data());

    // In-painting changes exactly the drawn rectangle.
    let flat = Tensor::full(&[40, 40, 1], 0.5);
    let one_rect = AugmentConfig {
        inpaint_count_range: (1, 1),
        inpaint_size_range: (0.2, 0.4),
        ..AugmentConfig::default()
    };
    for seed in 0..10u64 {
        let painted = augment::inpaint(&flat, seed, &one_rect).unwrap();
        let diff: Vec<usize> = painted
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0.5).then_some(i))
            .collect();
        let xs: Vec<usize> = diff.iter().map(|i| i % 40).collect();
        let ys: Vec<usize> = diff.iter().map(|i| i / 40).collect();
        let w = xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1;
        let h = ys.iter().max().unwrap() - ys.iter().min().unwrap() + 1;
        assert_eq!(diff.len(), w * h, "seed {seed}: in-painted region must be one rectangle");
    }

    // Out-painting keeps exactly the drawn window.
    for seed in 0..10u64 {
        let painted = augment::outpaint(&flat, seed, &AugmentConfig::default()).unwrap();
        let kept: Vec<usize> = painted
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v == 0.5).then_some(i))
            .collect();
        let xs: Vec<usize> = kept.iter().map(|i| i % 40).collect();
        let ys: Vec<usize> = kept.iter().map(|i| i / 40).collect();
        let w = xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1;
        let h = ys.iter().max().unwrap() - ys.iter().min().unwrap() + 1;
        assert_eq!(kept.len(), w * h, "seed {seed}: kept region must be one rectangle");
    }

    // Local pixel shuffling preserves per-window histograms.
    let single = AugmentConfig { shuffle_window: 6, shuffle_block_count: 1, ..AugmentConfig::default() };
    for seed in 0..10u64 {
        let shuffled = augment::local_pixel_shuffle(&img, seed, &single).unwrap();
        let mut a: Vec<u32> = img.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = shuffled.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "seed {seed}: pixel multiset must be preserved");
        let diff: Vec<usize> = img
            .data()
            .iter()
            .zip(shuffled.data())
            .enumerate()
            .filter_map(|(i, (x, y))| (x != y).then_some(i))
            .collect();
        if !diff.is_empty() {
            let xs: Vec<usize> = diff.iter().map(|i| i % 40).collect();
            let ys: Vec<usize> = diff.iter().map(|i| i / 40).collect();
            assert!(xs.iter().max().unwrap() - xs.iter().min().unwrap() < 6);
            assert!(ys.iter().max().unwrap() - ys.iter().min().unwrap() < 6);
        }
    }

    // All outputs stay in [0, 1]; Bezier endpoints are fixed.
    let cfg = AugmentConfig::default();
    for seed in 0..50u64 {
        let pair = augment::make_pair(&img, seed, &cfg, 0).unwrap();
        for t in [&pair.view1_masked, &pair.view1_target, &pair.view2_masked, &pair.view2_target] {
            assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let mut probe_img = Tensor::zeros(&[1, 3, 1]);
        probe_img.data_mut().copy_from_slice(&[0.0, 0.5, 1.0]);
        let mapped = augment::nonlinear_intensity(&probe_img, seed).unwrap();
        assert_eq!(mapped.data()[0], 0.0, "seed {seed}: 0 must map to 0");
        assert_eq!(mapped.data()[2], 1.0, "seed {seed}: 1 must map to 1");
    }

    println!(
        "[PASS] criterion 7: identity config is a bitwise no-op, in/out-painting change \
         exactly the drawn regions, shuffling preserves window histograms, outputs stay in \
         [0,1], and the intensity map fixes 0->0 and 1->1"
    );
}

// ── Criterion 8: label-fraction sweep on trained representations ────────

#[test]
fn criterion_8_label_fraction_sweep() {
    let chain = rt_chain();
    let ckpt = load_checkpoint(&chain.runs["conrec"].best_path).unwrap();
    let pool = single_thread_pool();
    let sweep = pool
        .install(|| {
            label_fraction_sweep(
                &ckpt.params,
                &chain.train_ds,
                &chain.test_ds,
                &DEFAULT_FRACTIONS,
                13,
                1e-4,
                3,
            )
        })
        .unwrap();

    let dir = out_root().join("rt_sweep");
    std::fs::create_dir_all(&dir).unwrap();
    let mut runs_csv = String::from("fraction,repeat,metric\n");
    for row in &sweep.rows {
        runs_csv.push_str(&format!("{},{},{}\n", row.fraction, row.repeat, row.metric));
    }
    std::fs::write(dir.join("sweep_runs.csv"), &runs_csv).unwrap();
    let mut agg_csv = String::from("fraction,mean,std\n");
    for agg in &sweep.aggregates {
        agg_csv.push_str(&format!("{},{},{}\n", agg.fraction, agg.mean, agg.std));
    }
    std::fs::write(dir.join("sweep_agg.csv"), &agg_csv).unwrap();

    let mean_at = |frac: f64| {
        sweep
            .aggregates
            .iter()
            .find(|a| (a.fraction - frac).abs() < 1e-12)
            .unwrap_or_else(|| panic!("fraction {frac} missing: {:?}", sweep.skipped))
            .mean
    };
    let full = mean_at(1.0);
    let one_percent = mean_at(0.01);
    assert!(
        full >= one_percent,
        "accuracy at fraction 1.0 ({full:.4}) must be >= fraction 0.01 ({one_percent:.4})"
    );
    println!(
        "[PASS] criterion 8: trained ConRec sweep mean accuracy {full:.4} at fraction 1.0 >= \
         {one_percent:.4} at fraction 0.01; per-fraction CSVs in {}",
        dir.display()
    );
}

// ── Criterion 5 at the full preset (desktop-scale; run explicitly) ──────

/// Full preset: 128 px, base 8, 600 epochs, plus the SimCLR-attention
/// comparison. Several CPU-hours per method; ignored by
/// default so the standard suite stays runnable on small machines.
#[test]
#[ignore = "full preset trains four methods at 128px for 600 epochs; run on a desktop CPU"]
fn criterion_5_full_preset_orderings() {
    conrec::tune_allocator();
    let pool = single_thread_pool();
    let train_rt = gen_rectangle_triangle(1000, 128, 7).unwrap();
    let test_rt = gen_rectangle_triangle(500, 128, 8).unwrap();
    let train_cs = gen_circles_squares(600, 128, 7).unwrap();
    let test_cs = gen_circles_squares(400, 128, 8).unwrap();

    let full_config = |method: Method| {
        TrainConfig {
            method,
            batch_size: 16,
            epochs: 600,
            eval_every: 20,
            seed: 42,
            model: ModelConfig {
                image_size: 128,
                levels: 4,
                base_channels: 8,
                projection_hidden: 128,
                projection_dim: 64,
                pooling: method.pooling(),
                attention_filters: vec![64, 32, 16],
            },
            ..TrainConfig::default()
        }
        .resolved()
    };
    let mut best = BTreeMap::new();
    for (ds_name, train, test, methods) in [
        (
            "rt",
            &train_rt,
            &test_rt,
            &[Method::Simclr, Method::SimclrAttention, Method::Reconstruction, Method::Conrec][..],
        ),
        ("cs", &train_cs, &test_cs, &[Method::Simclr, Method::Reconstruction, Method::Conrec][..]),
    ] {
        for &method in methods {
            let cfg = full_config(method);
            let dir = out_root().join(format!("full_{ds_name}_{}", method.name()));
            let t0 = Instant::now();
            let outcome = pool
                .install(|| pretrain(&cfg, train, test, &dir, None, "acceptance-full"))
                .unwrap();
            let hours = t0.elapsed().as_secs_f64() / 3600.0;
            let score = outcome.best_score.unwrap();
            println!("  full {ds_name}/{:<16} best {score:.4} in {hours:.2} h", method.name());
            assert!(
                hours <= 2.0,
                "{ds_name}/{}: {hours:.2} h exceeds the 2 h/method budget",
                method.name()
            );
            best.insert((ds_name, method.name()), score);
        }
    }

    let b = |ds: &str, m: &str| best[&(ds, m)];
    assert!(b("rt", "conrec") >= b("rt", "simclr") + 0.03);
    assert!(b("rt", "reconstruction") >= b("rt", "simclr"));
    assert!(b("rt", "simclr-attention") >= b("rt", "simclr"));
    assert!(b("cs", "simclr") >= b("cs", "reconstruction") + 0.05);
    assert!(b("cs", "conrec") >= b("cs", "simclr") - 0.02);
    println!("[PASS] criterion 5 (full preset): orderings a, b and c hold within the 2 h/method budget");
}
