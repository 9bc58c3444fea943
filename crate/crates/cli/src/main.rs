//! `ain`: train, evaluate, gradient-check, benchmark and inspect attention
//! incorporate networks.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 configuration error.

mod bench;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ain_core::checks::{run_suite, SuiteOptions};
use ain_core::data::{self, Dataset};
use ain_core::nets::load_checkpoint;
use ain_core::rng::{stream, Stream};
use ain_core::train::{evaluate, Trainer, METRICS_FILE};
use ain_core::viz::{attention_maps, read_pnm, write_pgm};
use ain_core::{GradMode, Network, Tensor};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{latest_run_dir, load_splits, new_run_dir, short_hash, RunConfig};

/// Failure classes, each with a fixed exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Config(String),
    /// Exit 1: a check or assertion did not hold.
    Check(String),
    /// Exit 1.
    Runtime(anyhow::Error),
}

impl From<ain_core::Error> for Failure {
    fn from(e: ain_core::Error) -> Self {
        match e {
            ain_core::Error::Config(_) | ain_core::Error::Build { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "ain",
    version,
    about = "Attention incorporate networks: training and verification tools"
)]
struct Cli {
    /// Root for run directories.
    #[arg(long, global = true, env = "AIN_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true, env = "AIN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Varsize,
    Frames,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config; writes metrics.csv and checkpoints.
    Train {
        config: PathBuf,
        /// Continue the latest run of this config from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Resume this run directory instead of searching for one.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Loss and error of a checkpoint on a config's test split or a stored dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        config: Option<PathBuf>,
        /// Dataset directory written by `synth-data --kind varsize`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Finite-difference check of every layer kind and of composed networks.
    Gradcheck {
        /// First seed; seeds `seed .. seed + seeds` are run.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Skip the whole-preset cases.
        #[arg(long)]
        no_presets: bool,
        /// Report path (default: `gradcheck.csv` in a fresh run directory).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write each attention layer's channel-averaged map as a PGM.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Binary PPM or PGM input image.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset on disk.
    SynthData {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        min_len: usize,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
    },
    /// Time one transition layer of each kind on square inputs.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = vec![16usize, 32, 64])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        /// Output channels (default: same as input).
        #[arg(long)]
        out_channels: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path (default: `bench.csv` in a fresh run directory).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn out_root(cli: &Cli, from_config: Option<&Path>) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Train {
            config,
            resume,
            run_dir,
            epochs,
            seed,
            batch_size,
            lr,
        } => {
            let mut cfg = RunConfig::load(config)?;
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = *b;
            }
            if let Some(lr) = lr {
                cfg.optimizer = cfg.optimizer.with_lr(*lr);
            }
            cfg.validate()?;
            let root = out_root(cli, cfg.out_dir.as_deref());
            let resume_dir = match run_dir {
                Some(d) => Some(d.clone()),
                None if *resume => latest_run_dir(&root, &cfg.hash8()),
                None => None,
            };
            cmd_train(&cfg, &root, resume_dir)
        }
        Command::Eval {
            checkpoint,
            config,
            data,
            batch_size,
        } => cmd_eval(checkpoint, config.as_deref(), data.as_deref(), *batch_size),
        Command::Gradcheck {
            seed,
            seeds,
            tol,
            h,
            no_presets,
            report,
        } => {
            let opts = SuiteOptions {
                seeds: (*seed..seed + seeds).collect(),
                h: *h,
                tol: *tol,
                include_presets: !no_presets,
                ..SuiteOptions::default()
            };
            let report = match report {
                Some(p) => p.clone(),
                None => {
                    let key = format!("gradcheck {seed} {seeds} {tol:e} {h:e} {no_presets}");
                    new_run_dir(&out_root(cli, None), &short_hash(&key))?.join("gradcheck.csv")
                }
            };
            cmd_gradcheck(&opts, &report)
        }
        Command::ExportAttention { checkpoint, image, out } => cmd_export(checkpoint, image, out),
        Command::SynthData {
            kind,
            samples,
            classes,
            seed,
            out,
            min_len,
            max_len,
        } => cmd_synth(*kind, *samples, *classes, *seed, out, (*min_len, *max_len)),
        Command::Bench {
            sizes,
            repeats,
            channels,
            out_channels,
            seed,
            report,
        } => {
            let c_out = out_channels.unwrap_or(*channels);
            let rows = bench::run(sizes, *repeats, *channels, c_out, *seed)?;
            let report = match report {
                Some(p) => p.clone(),
                None => {
                    let key = format!("bench {sizes:?} {repeats} {channels} {c_out} {seed}");
                    new_run_dir(&out_root(cli, None), &short_hash(&key))?.join("bench.csv")
                }
            };
            bench::write_csv(&rows, fs::File::create(&report)?)?;
            bench::write_csv(&rows, std::io::stdout().lock())?;
            eprintln!("report: {}", report.display());
            Ok(())
        }
    }
}

fn cmd_train(cfg: &RunConfig, root: &Path, resume_dir: Option<PathBuf>) -> CmdResult {
    let splits = load_splits(cfg)?;
    let mut trainer = match resume_dir {
        Some(dir) => {
            eprintln!("resuming {}", dir.display());
            let t = Trainer::<f32>::resume(dir, cfg.epochs)?;
            let mut expected = cfg.fit_config();
            expected.epochs = t.config.epochs;
            if t.config != expected {
                return Err(Failure::Config(
                    "resume: the checkpoint was trained with a different configuration".into(),
                ));
            }
            t
        }
        None => {
            let spec = cfg.network_spec(splits.num_classes)?;
            let net = Network::<f32>::build(&spec, &mut stream(cfg.seed, Stream::Init, 0))?;
            let dir = new_run_dir(root, &cfg.hash8())?;
            fs::write(
                dir.join("config.json"),
                serde_json::to_string_pretty(cfg).map_err(anyhow::Error::from)?,
            )?;
            Trainer::new(net, cfg.fit_config(), Some(dir))?
        }
    };
    let dir = trainer.out_dir.clone().expect("runs always have a directory");
    let total = trainer.config.epochs;
    eprintln!(
        "training {} ({} parameters) on {} samples, evaluating on {}",
        trainer.net.spec().name,
        trainer.net.num_params(),
        splits.train.len(),
        splits.test.len()
    );
    trainer.fit(&splits.train, &splits.test, |m| {
        eprintln!(
            "epoch {:>3}/{total}  train_loss {:.4}  eval_loss {:.4}  error {:.4}  lr {:.3e}  {:.1}s",
            m.epoch + 1,
            m.train_loss,
            m.eval_loss,
            m.error,
            m.lr,
            m.seconds
        );
    })?;
    println!("{}", dir.display());
    eprintln!("metrics: {}", dir.join(METRICS_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    samples: usize,
    loss: f64,
    error: f64,
}

fn cmd_eval(checkpoint: &Path, config: Option<&Path>, data_dir: Option<&Path>, batch_size: usize) -> CmdResult {
    if batch_size == 0 {
        return Err(Failure::Config("batch_size: must be at least 1".into()));
    }
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let samples = match (config, data_dir) {
        (Some(path), _) => {
            let cfg = RunConfig::load(path)?;
            cfg.validate()?;
            load_splits(&cfg)?.test
        }
        (None, Some(dir)) => {
            let d: Dataset = data::load_dataset(dir)?;
            d.validate()?;
            d.samples
        }
        (None, None) => return Err(Failure::Config("eval needs --config or --data".into())),
    };
    let m = evaluate(&ckpt.network, &samples, batch_size)?;
    let report = EvalReport {
        samples: samples.len(),
        loss: m.loss,
        error: m.error,
    };
    println!("{}", serde_json::to_string(&report).map_err(anyhow::Error::from)?);
    Ok(())
}

fn cmd_gradcheck(opts: &SuiteOptions, report_path: &Path) -> CmdResult {
    if opts.tol <= 0.0 || opts.h <= 0.0 || opts.seeds.is_empty() {
        return Err(Failure::Config("gradcheck: tol, h and seeds must be positive".into()));
    }
    let report = run_suite(opts)?;
    if let Some(parent) = report_path.parent() {
        fs::create_dir_all(parent)?;
    }
    report.write_csv(fs::File::create(report_path)?)?;
    let analytic = report.max_rel_err(GradMode::Analytic);
    let literal = report.max_rel_err(GradMode::PaperLiteral);
    let literal_runs = report.cases.iter().filter(|c| c.mode == GradMode::PaperLiteral).count();
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "analytic: {} checks, max rel err {analytic:.3e} (tol {:e})",
        report.cases.len() - literal_runs,
        opts.tol
    )?;
    writeln!(
        out,
        "paper-literal attention gradient: max rel err {literal:.3e}, {} of {literal_runs} checks over tol, {} where analytic passes (reported only)",
        report.cases.iter().filter(|c| c.mode == GradMode::PaperLiteral && !c.report.pass).count(),
        report.literal_divergences().len()
    )?;
    writeln!(out, "report: {}", report_path.display())?;
    if report.pass() {
        writeln!(out, "PASS")?;
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max_rel_err {analytic:.3e} exceeds tol {:e}",
            opts.tol
        )))
    }
}

fn cmd_export(checkpoint: &Path, image: &Path, out: &Path) -> CmdResult {
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let net = ckpt.network;
    let mut img = read_pnm(image).map_err(|e| Failure::Config(format!("image: {e}")))?;
    let want = net.spec().input.channels();
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if net.spec().input.is_sequence() {
        return Err(Failure::Config("export-attention needs an image network".into()));
    }
    if c != want {
        if c == 1 {
            img = Tensor::from_fn(&[h, w, want], |i| img.data()[i / want]);
        } else {
            return Err(Failure::Config(format!(
                "image has {c} channels, network expects {want}"
            )));
        }
    }
    let maps = attention_maps(&net, &img)?;
    if maps.is_empty() {
        return Err(Failure::Check("checkpoint network has no attention layers".into()));
    }
    fs::create_dir_all(out)?;
    for (name, map) in maps {
        let path = out.join(format!("{name}.pgm"));
        write_pgm(&path, &map.upscale(h, w))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_synth(
    kind: SynthKind,
    samples: usize,
    classes: usize,
    seed: u64,
    out: &Path,
    lengths: (usize, usize),
) -> CmdResult {
    if samples == 0 || classes == 0 {
        return Err(Failure::Config("samples and classes must be positive".into()));
    }
    match kind {
        SynthKind::Varsize => {
            let d = Dataset {
                name: "synth-varsize".into(),
                num_classes: classes,
                samples: data::synth_varsize(seed, samples, classes),
            };
            data::save_dataset(out, &d)?;
        }
        SynthKind::Frames => {
            if lengths.0 == 0 || lengths.0 > lengths.1 {
                return Err(Failure::Config("need 1 <= min_len <= max_len".into()));
            }
            let s = data::synth_frames(seed, samples, classes, lengths);
            data::frames::save_feature_frames(out, &s, classes)?;
        }
    }
    println!("{}", out.display());
    Ok(())
}
