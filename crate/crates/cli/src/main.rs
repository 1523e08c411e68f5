//! `scvae` command-line pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scvae::diffcore::GradCheckOptions;
use scvae::losses::{LossConfig, CLS_SLOT, REG_SLOT};
use scvae::mesh::{save_mesh, MeshFormat};
use scvae::model::MeshVae;
use scvae::torusgen::{generate_dataset, DatasetManifest, FactorRanges, Split};
use scvae::trainer::{self, EvalOptions, TrainConfig};

/// Supervised contrastive mesh VAE: data generation, training and evaluation.
#[derive(Parser)]
#[command(name = "scvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, visible_alias = "out-dir", env = "SCVAE_OUT_DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic torus dataset and its manifest.
    GenData {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Vertices around the main ring and around the tube, as `MAJORxMINOR`.
        #[arg(long, default_value = "32x32", value_parser = parse_resolution)]
        resolution: (usize, usize),
        #[command(flatten)]
        out: OutDir,
    },
    /// Train a model; writes config.json, best.json, final.json and train_log.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split; writes eval.json and prints a table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest (manifest.csv).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// JSON file with evaluation options.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long)]
        nna_count: Option<usize>,
        #[arg(long)]
        cd_points: Option<usize>,
        #[arg(long)]
        emd_points: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Decode sweeps of z1 and/or z2 over ±3σ as numbered OBJ files.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Latent slot to sweep (1 = class, 2 = continuous); both when omitted.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        slot: Option<u8>,
        #[arg(long, default_value_t = 12)]
        steps: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Mean volumes at z1 = ±3σ across bins of z2; writes volume_report.csv.
    VolumeReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 6)]
        bins: usize,
        #[arg(long, default_value_t = 10)]
        per_bin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Finite-difference check of the full training objective on a micro model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Also write gradcheck.json here.
        #[arg(long, env = "SCVAE_OUT_DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (manifest.csv).
    #[arg(long)]
    data: PathBuf,
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Disable the class contrastive term.
    #[arg(long)]
    no_cls: bool,
    /// Disable the regression contrastive term.
    #[arg(long)]
    no_reg: bool,
    #[command(flatten)]
    out: OutDir,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected MAJORxMINOR, e.g. 32x32")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(a)?, n(b)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    set(&mut cfg.learning_rate, args.lr);
    set(&mut cfg.lr_decay_per_epoch, args.lr_decay);
    set(&mut cfg.loss.beta, args.beta);
    set(&mut cfg.loss.temperature, args.temperature);
    set(&mut cfg.loss.threshold, args.threshold);
    set(&mut cfg.loss.lambda1, args.lambda1);
    set(&mut cfg.loss.lambda2, args.lambda2);
    if args.no_cls {
        cfg.loss.enable_cls = false;
    }
    if args.no_reg {
        cfg.loss.enable_reg = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            count,
            seed,
            resolution,
            out,
        } => {
            mkdir(&out.out)?;
            let manifest = generate_dataset(count, &FactorRanges::default(), resolution, seed, &out.out)?;
            eprintln!("wrote {} meshes to {}", manifest.entries.len(), out.out.display());
        }
        Command::Train(args) => {
            let cfg = train_config(&args)?;
            let manifest = DatasetManifest::load(&args.data)?;
            let outcome = trainer::train(&manifest, &cfg, Some(&args.out.out))?;
            for r in &outcome.log.epochs {
                eprintln!(
                    "epoch {:>3}  lr {:.3e}  train {:.5}  val {:.5}  ({:.1}s)",
                    r.epoch, r.learning_rate, r.train.total, r.val.total, r.wall_time
                );
            }
            eprintln!("best epoch {}", outcome.best_epoch);
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            config,
            knn_k,
            nna_count,
            cd_points,
            emd_points,
            seed,
            out,
        } => {
            let mut opts: EvalOptions = match config {
                Some(p) => read_json(&p)?,
                None => EvalOptions::default(),
            };
            opts.knn_k = knn_k.unwrap_or(opts.knn_k);
            opts.nna_count = nna_count.unwrap_or(opts.nna_count);
            opts.cd_points = cd_points.unwrap_or(opts.cd_points);
            opts.emd_points = emd_points.unwrap_or(opts.emd_points);
            opts.seed = seed.unwrap_or(opts.seed);
            let model = MeshVae::load(&checkpoint)?;
            let manifest = DatasetManifest::load(&data)?;
            let report = trainer::evaluate(&model, &manifest, split, &opts)?;
            mkdir(&out.out)?;
            write(&out.out.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            print!("{}", report.to_table());
        }
        Command::Traverse {
            checkpoint,
            slot,
            steps,
            out,
        } => {
            let model = MeshVae::load(&checkpoint)?;
            mkdir(&out.out)?;
            let slots = match slot {
                Some(1) => vec![(1, CLS_SLOT)],
                Some(_) => vec![(2, REG_SLOT)],
                None => vec![(1, CLS_SLOT), (2, REG_SLOT)],
            };
            for (label, index) in slots {
                for (k, mesh) in model.traverse(index, steps)?.iter().enumerate() {
                    save_mesh(mesh, &out.out.join(format!("z{label}_step{k:02}.obj")), MeshFormat::Obj)?;
                }
            }
        }
        Command::VolumeReport {
            checkpoint,
            bins,
            per_bin,
            seed,
            out,
        } => {
            let model = MeshVae::load(&checkpoint)?;
            let rows = trainer::volume_report(&model, bins, per_bin, seed)?;
            mkdir(&out.out)?;
            trainer::write_volume_csv(&rows, &out.out.join("volume_report.csv"))?;
            for r in &rows {
                println!(
                    "bin {}  label [{:.4}, {:.4}]  +3σ {:.5}  -3σ {:.5}  diff {:.5}",
                    r.bin, r.label_low, r.label_high, r.mean_volume_pos, r.mean_volume_neg, r.mean_difference
                );
            }
        }
        Command::Gradcheck {
            seed,
            step,
            tolerance,
            out,
        } => {
            let opts = GradCheckOptions {
                step,
                ..Default::default()
            };
            let report = trainer::objective_grad_check(seed, &LossConfig::default(), opts)?;
            for p in &report.params {
                println!("{:<18} checked {:>5}  max rel {:.3e}", p.name, p.checked, p.max_rel_error);
            }
            let worst = report.max_rel_error();
            if let Some(dir) = out {
                mkdir(&dir)?;
                write(&dir.join("gradcheck.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            }
            if worst >= tolerance {
                bail!("gradient check failed: max relative error {worst:.3e} >= {tolerance:.1e}");
            }
            println!("PASS max relative error {worst:.3e} < {tolerance:.1e}");
        }
    }
    Ok(())
}

/// Joins the error chain, dropping causes already quoted by an outer message.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
