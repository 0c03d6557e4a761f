//! Command-line surface: `synth`, `train`, `eval`, `gradcheck`,
//! `export-sim`.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::{load_bundle, save_bundle, synth_generate, MissingPattern, SynthConfig};
use crate::error::{Result, TlraError};
use crate::harness::{evaluate_patterns, export_similarity, parse_patterns};
use crate::trainer::{grad_check_full_loss, load_checkpoint, run_training, TrainerConfig};

#[derive(Parser)]
#[command(name = "tlra", version, about = "Robust multimodal sentiment prediction under missing modalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature bundle
    Synth(SynthArgs),
    /// Train a model on a feature bundle
    Train(TrainArgs),
    /// Evaluate a checkpoint under missing-modality patterns
    Eval(EvalArgs),
    /// Verify full-loss gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Export prototype-similarity CSV for sampled test items
    ExportSim(ExportSimArgs),
}

fn parse_triple<T: std::str::FromStr + Copy>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got \"{s}\""));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.trim().parse::<T>().map_err(|_| format!("cannot parse \"{p}\""))?);
    }
    Ok([out[0], out[1], out[2]])
}

#[derive(Args)]
struct SynthArgs {
    /// Total sample count, split 70/15/15 into train/valid/test
    #[arg(long, conflicts_with_all = ["n_train", "n_valid", "n_test"])]
    n: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 0)]
    n_valid: usize,
    #[arg(long, default_value_t = 0)]
    n_test: usize,
    /// Per-modality feature dims "d_l,d_a,d_v"
    #[arg(long, value_parser = parse_triple::<usize>, default_value = "12,8,16")]
    dims: [usize; 3],
    /// Per-modality sequence lengths "T_l,T_a,T_v"
    #[arg(long, value_parser = parse_triple::<usize>, default_value = "6,4,8")]
    seq_lens: [usize; 3],
    /// Per-modality additive noise scales
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "0.5,0.5,0.5")]
    noise: [f64; 3],
    /// Per-modality shared-factor strengths
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "1.0,0.35,0.35")]
    signal: [f64; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output bundle path (JSONL)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Trainer config JSON (defaults apply for missing fields)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature bundle path
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the training log
    #[arg(long, default_value = "runs/tlra")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated pattern list such as "L,AV,AVL"; default all seven
    #[arg(long)]
    patterns: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Maximum acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ExportSimArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &TlraError) -> i32 {
    match err {
        TlraError::Io(_) => 2,
        TlraError::Json(e) if e.is_io() => 2,
        _ => 1,
    }
}

/// Parses `argv` (without the program name) and runs the subcommand.
pub fn run(argv: Vec<String>) -> i32 {
    let mut full = vec!["tlra".to_string()];
    full.extend(argv);
    let cli = match Cli::try_parse_from(full) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/help text; help and version requests
            // are successes, anything else is a validation failure
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let (n_train, n_valid, n_test) = match (args.n, args.n_train) {
                (Some(n), _) => {
                    let train = (n as f64 * 0.7).round() as usize;
                    let valid = (n as f64 * 0.15).round() as usize;
                    (train, valid, n.saturating_sub(train + valid))
                }
                (None, Some(t)) => (t, args.n_valid, args.n_test),
                (None, None) => {
                    return Err(TlraError::Config("pass either --n or --n-train/--n-valid/--n-test".into()))
                }
            };
            let cfg = SynthConfig {
                n_train,
                n_valid,
                n_test,
                dims: args.dims,
                seq_lens: args.seq_lens,
                noise: args.noise,
                signal: args.signal,
                seed: args.seed,
            };
            let bundle = synth_generate(&cfg)?;
            save_bundle(&bundle, &args.out)?;
            println!(
                "wrote {} samples ({} train / {} valid / {} test) to {}",
                bundle.records.len(),
                n_train,
                n_valid,
                n_test,
                args.out.display()
            );
            Ok(())
        }
        Command::Train(args) => {
            let cfg: TrainerConfig = match args.config {
                Some(path) => serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?,
                None => TrainerConfig::default(),
            };
            let bundle = load_bundle(&args.data)?;
            let art = run_training(&bundle, &cfg, &args.out_dir)?;
            println!(
                "trained {} epochs; best valid ACC {:.4} at epoch {}",
                cfg.epochs, art.best_valid_acc, art.best_epoch
            );
            println!("best checkpoint:  {}", art.best_checkpoint.display());
            println!("final checkpoint: {}", art.final_checkpoint.display());
            println!("training log:     {}", art.log_path.display());
            Ok(())
        }
        Command::Eval(args) => {
            let ckpt = load_checkpoint(&args.checkpoint)?;
            let bundle = load_bundle(&args.data)?;
            let patterns = match args.patterns {
                Some(s) => parse_patterns(&s)?,
                None => MissingPattern::all_seven(),
            };
            let report = evaluate_patterns(&ckpt.model, &ckpt.config, &bundle, &patterns)?;
            print!("{report}");
            Ok(())
        }
        Command::Gradcheck(args) => {
            let cfg = TrainerConfig { d: 8, k_templates: 4, seed: args.seed, ..TrainerConfig::default() };
            let bundle = synth_generate(&SynthConfig {
                n_train: 2,
                n_valid: 0,
                n_test: 0,
                dims: [6, 5, 7],
                seq_lens: [4, 3, 5],
                noise: [0.5; 3],
                signal: [1.0, 0.35, 0.35],
                seed: args.seed,
            })?;
            let batch: Vec<&crate::data::SampleRecord> = bundle.records.iter().collect();
            let err = grad_check_full_loss(&cfg, &batch, args.step)?;
            println!("max relative gradient error: {err:.3e} (tolerance {:.1e})", args.tolerance);
            if err < args.tolerance {
                Ok(())
            } else {
                Err(TlraError::NonFinite(format!("gradient check failed: {err:.3e}")))
            }
        }
        Command::ExportSim(args) => {
            let ckpt = load_checkpoint(&args.checkpoint)?;
            let bundle = load_bundle(&args.data)?;
            let matrix = export_similarity(&ckpt.model, &bundle, args.seed, ckpt.epoch, &args.out)?;
            println!(
                "wrote {} rows (epoch {}) to {}; mean own-class similarity {:.4}",
                matrix.rows.len(),
                matrix.epoch,
                args.out.display(),
                matrix.mean_own_class_similarity()
            );
            Ok(())
        }
    }
}
