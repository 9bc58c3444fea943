//! Acceptance harness: one PASS / FAIL / BLOCKED line per criterion.
//!
//! BLOCKED marks a criterion whose inputs are absent from this machine; it
//! does not fail the run. Any FAIL exits nonzero. The report and every
//! training run's metrics land under `$CARGO_TARGET_TMPDIR/acceptance`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ain_core::ail::{ail_branches, ail_forward, incorporate_map, window_iter};
use ain_core::checks::{run_suite, SuiteOptions, SuiteReport};
use ain_core::data::cifar::{decode_image, encode_batch, encode_image, parse_batch, RawRecord};
use ain_core::data::image::{maxside_extent, resize_wrap};
use ain_core::data::{load_cifar10_subset, synth_frames, synth_varsize, Dataset, Sample};
use ain_core::nets::{load_checkpoint, TransitionKind};
use ain_core::rng::{stream, Stream};
use ain_core::train::{evaluate, EpochMetrics, FitConfig, OptimizerConfig, ScheduleConfig, Trainer};
use ain_core::{presets, AilConfig, AilKernel, AilParams, GradMode, Network, NetworkSpec, Tensor};
use rand::Rng;

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Outcome { verdict, detail }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn uniform(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn random_ail(cfg: &AilConfig, rng: &mut impl Rng) -> AilParams<f64> {
    let (kh, kw) = cfg.attention_extent();
    AilParams::new(
        cfg,
        uniform(&[1, 1, cfg.c_in, cfg.c_out], rng, -1.0, 1.0),
        uniform(&[cfg.c_out], rng, -0.5, 0.5),
        uniform(&[kh, kw, cfg.c_in, cfg.c_out], rng, -1.0, 1.0),
        uniform(&[cfg.c_out], rng, -1.0, 1.0),
    )
    .unwrap()
}

/// Per-window, per-channel sums of a padded `(1, Hp, Wp, C)` map.
fn window_sums(t: &Tensor<f64>, m: usize, stride: usize) -> Vec<f64> {
    let s = t.shape();
    let c = s[3];
    let map = t.clone().reshape(&s[1..]).unwrap();
    window_iter(&map, AilKernel::Local { m, n: m }, stride, Some((0, 0)))
        .unwrap()
        .iter()
        .flat_map(|w| {
            (0..c)
                .map(|ch| w.values.data().iter().skip(ch).step_by(c).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn gradients(suite: &SuiteReport, elapsed: Duration) -> Outcome {
    let analytic = suite.max_rel_err(GradMode::Analytic);
    let seeds: std::collections::HashSet<u64> = suite.cases.iter().map(|c| c.seed).collect();
    let covered = ["lail", "gail", "composed"]
        .iter()
        .all(|k| suite.cases.iter().any(|c| c.case == *k));
    Outcome::check(
        suite.pass() && seeds.len() >= 10 && covered && elapsed < Duration::from_secs(120),
        format!(
            "{} checks over {} seeds, analytic max rel err {analytic:.2e} (tol {:.0e}), {:.1}s (limit 120s)",
            suite.cases.len(),
            seeds.len(),
            suite.tol,
            secs(elapsed)
        ),
    )
}

fn literal_adjudication(suite: &SuiteReport) -> Outcome {
    let diverging = suite.literal_divergences();
    let cases: std::collections::BTreeSet<&str> = diverging.iter().map(|c| c.case.as_str()).collect();
    Outcome::check(
        !diverging.is_empty(),
        format!(
            "paper-literal max rel err {:.2e}; {} instances over tol where analytic passes ({})",
            suite.max_rel_err(GradMode::PaperLiteral),
            diverging.len(),
            cases.into_iter().collect::<Vec<_>>().join(", ")
        ),
    )
}

fn variable_size(checkpoint: Option<&Path>) -> Outcome {
    let Some(dir) = checkpoint else {
        return Outcome::check(
            false,
            "no trained checkpoint (variable-size training did not finish)".into(),
        );
    };
    let start = Instant::now();
    let net = load_checkpoint::<f32>(dir).unwrap().network;
    let mut rng = stream(3, Stream::Bench, 0);
    let sizes = [(32, 32), (45, 71), (64, 64), (80, 37), (96, 96), (57, 90)];
    let mut worst = 0f64;
    for &(h, w) in &sizes {
        let x = Tensor::from_fn(&[h, w, 3], |_| rng.random_range(-1.0f32..1.0));
        let p = net.predict(&x).unwrap();
        let total: f64 = p.data().iter().map(|&v| v as f64).sum();
        if p.data().iter().any(|&v| v.is_nan() || v < 0.0) || p.len() != net.spec().num_classes {
            return Outcome::check(false, format!("invalid distribution at {h}×{w}"));
        }
        worst = worst.max((total - 1.0).abs());
    }
    let took = start.elapsed();
    Outcome::check(
        worst <= 1e-6 && took < Duration::from_secs(60),
        format!(
            "{} extents in [32,96]², max |Σp − 1| = {worst:.1e}, {:.2}s",
            sizes.len(),
            secs(took)
        ),
    )
}

fn pooling_degeneracy() -> Outcome {
    let mut rng = stream(11, Stream::Bench, 4);
    let mut worst = 0f64;
    for i in 0..100 {
        let (m, stride) = if i % 2 == 0 { (3, 2) } else { (2, 2) };
        let (h, w, c, co) = (
            rng.random_range(4..=16),
            rng.random_range(4..=16),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let cfg = AilConfig::local(m, m, stride, c, co);
        let (kh, kw) = cfg.attention_extent();
        let mut params = random_ail(&cfg, &mut rng);
        params.attention.weights = Tensor::zeros(&[kh, kw, c, co]);
        let input = uniform(&[1, h, w, c], &mut rng, -2.0, 2.0);
        let (x, _) = ail_branches(&input, &cfg, &params).unwrap();
        let y = ail_forward(&input, &cfg, &params).unwrap();
        let pooled: Vec<f64> = window_sums(&x, m, stride)
            .into_iter()
            .map(|s| s / (m * m) as f64)
            .collect();
        assert_eq!(pooled.len(), y.len());
        worst = y
            .data()
            .iter()
            .zip(&pooled)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    Outcome::check(
        worst <= 1e-6,
        format!("100 inputs, max |AIL − avgpool| = {worst:.1e} (tol 1e-6)"),
    )
}

fn scale_invariance() -> Outcome {
    let mut rng = stream(12, Stream::Bench, 5);
    let (mut worst, mut used, mut min_sum) = (0f64, 0, f64::INFINITY);
    while used < 100 {
        let (h, w, c, co) = (
            rng.random_range(4..=14),
            rng.random_range(4..=14),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let cfg = AilConfig::local(3, 3, 2, c, co);
        let params = random_ail(&cfg, &mut rng);
        let input = uniform(&[1, h, w, c], &mut rng, -2.0, 2.0);
        let (x, wts) = ail_branches(&input, &cfg, &params).unwrap();
        let sums = window_sums(&wts, 3, 2);
        let least = sums.iter().cloned().fold(f64::INFINITY, f64::min);
        if least < 1.0 {
            continue;
        }
        min_sum = min_sum.min(least);
        let spec = cfg.incorporation(x.shape()[1], x.shape()[2]);
        let base = incorporate_map(&x, &wts, &spec).unwrap();
        for s in [0.5, 2.0] {
            worst = worst.max(base.max_abs_diff(&incorporate_map(&x, &wts.scale(s), &spec).unwrap()));
        }
        used += 1;
    }
    Outcome::check(
        worst < 1e-6,
        format!("100 inputs (min window ΣW {min_sum:.2}), c ∈ {{0.5, 2}}, max |Δ| = {worst:.1e} (tol 1e-6)"),
    )
}

fn write_metrics(path: &Path, rows: &[EpochMetrics]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    for r in rows {
        w.serialize(r).unwrap();
    }
    w.flush().unwrap();
}

fn fit(
    spec: &NetworkSpec,
    train: &[Sample],
    test: &[Sample],
    cfg: FitConfig,
    out: Option<PathBuf>,
    label: &str,
) -> (Trainer<f32>, Duration) {
    let net = Network::<f32>::build(spec, &mut stream(cfg.seed, Stream::Init, 0)).unwrap();
    let start = Instant::now();
    let mut t = Trainer::new(net, cfg, out).unwrap();
    t.fit(train, test, |m| {
        eprintln!(
            "  [{label}] epoch {:>2}  train_loss {:.4}  eval_loss {:.4}  error {:.4}  {:.1}s",
            m.epoch + 1,
            m.train_loss,
            m.eval_loss,
            m.error,
            m.seconds
        )
    })
    .unwrap();
    (t, start.elapsed())
}

fn cifar_trend(root: &Path) -> Outcome {
    let Some(dir) = std::env::var_os("AIN_CIFAR10_DIR").map(PathBuf::from) else {
        return Outcome {
            verdict: Verdict::Blocked,
            detail: "CIFAR-10 binaries not present; set AIN_CIFAR10_DIR to the cifar-10-batches-bin directory".into(),
        };
    };
    let data = match load_cifar10_subset(&dir, Some(5000), Some(1000)) {
        Ok(d) => d,
        Err(e) => {
            return Outcome {
                verdict: Verdict::Blocked,
                detail: format!("cannot read CIFAR-10 from {}: {e}", dir.display()),
            }
        }
    };
    let cfg = FitConfig {
        epochs: 30,
        batch_size: 64,
        optimizer: OptimizerConfig::sgd(0.1),
        schedule: ScheduleConfig::StepAt {
            epochs: vec![15, 23],
            factor: 0.1,
        },
        seed: 0,
        augment: true,
        checkpoint_every: 0,
    };
    let start = Instant::now();
    let ail = presets::ain_tiny(10);
    let pool = ail.with_transitions(TransitionKind::MaxPool).unwrap();
    let mut errors = Vec::new();
    for (name, spec) in [("ail", &ail), ("maxpool", &pool)] {
        let out = root.join(format!("cifar-{name}"));
        let (t, _) = fit(spec, &data.train, &data.test, cfg.clone(), Some(out), name);
        errors.push(t.metrics.last().unwrap().error);
    }
    let took = start.elapsed();
    Outcome::check(
        errors.iter().all(|&e| e < 0.55) && took < Duration::from_secs(1800),
        format!(
            "test error AIL {:.3}, MaxPool {:.3}, gap {:+.3} (limit 0.55 each), {:.0}s (limit 1800s)",
            errors[0],
            errors[1],
            errors[0] - errors[1],
            secs(took)
        ),
    )
}

fn variable_size_training(root: &Path) -> (Outcome, Option<PathBuf>) {
    let full = Dataset {
        name: "synth-varsize".into(),
        num_classes: 4,
        samples: synth_varsize(7, 2000, 4),
    };
    let (train, test) = full.split(0.2, &mut stream(7, Stream::Split, 0));
    let cfg = FitConfig {
        epochs: 3,
        batch_size: 32,
        optimizer: OptimizerConfig::sgd(0.05),
        schedule: ScheduleConfig::Constant,
        seed: 0,
        augment: false,
        checkpoint_every: 0,
    };
    let spec = presets::ain_tiny(4);
    let mixed_dir = root.join("varsize-mixed");
    let (t, took) = fit(
        &spec,
        &train.samples,
        &test.samples,
        cfg.clone(),
        Some(mixed_dir.clone()),
        "mixed",
    );
    let mixed = evaluate(&t.net, &test.samples, 32).unwrap().error;

    let wrap = |d: &Dataset| {
        d.samples
            .iter()
            .map(|s| resize_wrap(s, 32).unwrap())
            .collect::<Vec<_>>()
    };
    let (wtrain, wtest) = (wrap(&train), wrap(&test));
    let (w, _) = fit(&spec, &wtrain, &wtest, cfg, Some(root.join("varsize-wrap32")), "wrap32");
    let wrapped = w.metrics.last().unwrap().error;

    let emitted = ["varsize-mixed", "varsize-wrap32"]
        .iter()
        .all(|d| root.join(d).join("metrics.csv").exists());
    let ckpt = mixed_dir.join("checkpoints/last");
    let outcome = Outcome::check(
        mixed < 0.25 && took < Duration::from_secs(600) && emitted,
        format!(
            "1600/400 split, mixed extents error {mixed:.3} in {:.0}s (limits 0.25, 600s); wrap-32 error {wrapped:.3}",
            secs(took)
        ),
    );
    (outcome, ckpt.join("manifest.json").exists().then_some(ckpt))
}

fn frame_network(root: &Path, suite: &SuiteReport) -> Outcome {
    let spec = presets::table4();
    let built = Network::<f32>::build(&spec, &mut stream(0, Stream::Init, 0)).is_ok();
    let frame_checks: Vec<_> = suite
        .cases
        .iter()
        .filter(|c| c.case == "ain_frames" && c.mode == GradMode::Analytic)
        .collect();
    let grads_ok = !frame_checks.is_empty() && frame_checks.iter().all(|c| c.report.pass);
    let data = synth_frames(31, 50, spec.num_classes, (60, 100));
    let cfg = FitConfig {
        epochs: 30,
        batch_size: 10,
        optimizer: OptimizerConfig::adam(1e-3),
        schedule: ScheduleConfig::Constant,
        seed: 0,
        augment: false,
        checkpoint_every: 0,
    };
    let (t, took) = fit(&spec, &data, &data, cfg, None, "frames");
    write_metrics(&root.join("frames-overfit.csv"), &t.metrics);
    let err = evaluate(&t.net, &data, 10).unwrap().error;
    Outcome::check(
        built && grads_ok && err < 0.05 && took < Duration::from_secs(300),
        format!(
            "built {built}, gradcheck {} over {} seeds, train error {err:.3} on 50 utterances in {:.0}s (limits 0.05, 300s)",
            if grads_ok { "pass" } else { "FAIL" },
            frame_checks.len(),
            secs(took)
        ),
    )
}

fn loader_fidelity() -> Outcome {
    let mut rng = stream(9, Stream::Bench, 9);
    let records: Vec<RawRecord> = (0..20)
        .map(|_| RawRecord {
            label: rng.random_range(0..10),
            pixels: (0..3072).map(|_| rng.random()).collect(),
        })
        .collect();
    let bytes = encode_batch(&records);
    let round_trip = bytes.len() == 20 * 3073 && parse_batch(&bytes, Path::new("memory")).unwrap() == records;
    // label byte, then the red, green and blue planes, each row-major 32×32
    let r = &records[3];
    let img = decode_image(&r.pixels);
    let layout = bytes[3 * 3073] == r.label
        && (0..32).all(|y| {
            (0..32).all(|x| {
                (0..3).all(|ch| {
                    let byte = bytes[3 * 3073 + 1 + ch * 1024 + y * 32 + x];
                    img.data()[(y * 32 + x) * 3 + ch] == byte as f32 / 255.0
                })
            })
        })
        && encode_image(&img) == r.pixels;
    let examples = [
        ((350, 350), (224, 224)),
        ((480, 640), (168, 224)),
        ((400, 268), (224, 150)),
    ];
    let maxside = examples
        .iter()
        .all(|&((h, w), want)| maxside_extent(h, w, 224).unwrap() == want);
    Outcome::check(
        round_trip && layout && maxside,
        format!("round-trip {round_trip}, record layout {layout}, maxside worked examples {maxside}"),
    )
}

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();

    let start = Instant::now();
    let suite = run_suite(&SuiteOptions::default()).unwrap();
    let grad_time = start.elapsed();
    suite
        .write_csv(fs::File::create(root.join("gradcheck.csv")).unwrap())
        .unwrap();

    let (c7, checkpoint) = variable_size_training(&root);
    let results = [
        ("1 gradient correctness", gradients(&suite, grad_time)),
        ("2 paper-literal adjudication", literal_adjudication(&suite)),
        ("3 variable-size contract", variable_size(checkpoint.as_deref())),
        ("4 pooling degeneracy", pooling_degeneracy()),
        ("5 attention scale invariance", scale_invariance()),
        ("6 CIFAR-10 learning trend", cifar_trend(&root)),
        ("7 variable-size training", c7),
        ("8 1-D frame network", frame_network(&root, &suite)),
        ("9 loader fidelity", loader_fidelity()),
    ];

    let mut report = String::new();
    for (name, o) in &results {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Blocked => "BLOCKED",
        };
        writeln!(report, "{tag:<7} criterion {name}: {}", o.detail).unwrap();
    }
    print!("{report}");
    fs::write(root.join("report.txt"), &report).unwrap();
    println!("artifacts: {}", root.display());
    if results.iter().any(|(_, o)| o.verdict == Verdict::Fail) {
        std::process::exit(1);
    }
}
