use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omnisparse::io::{
    gen_synthetic, load_checkpoint, read_front_csv, save_checkpoint, write_front_csv, write_metrics_csv,
    write_plot_csv, Checkpoint, RunConfig, SyntheticSpec,
};
use omnisparse::search::{evolutionary_search, select_for_constraint};
use omnisparse::sparsity::model_size_bytes;
use omnisparse::trainer::{Evaluator, SupernetModel, TrainMode, Trainer};
use omnisparse::Error;

#[derive(Parser)]
#[command(name = "omnisparse", version, about = "Weight-sharing sparse supernet: train, search, extract")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic teacher dataset as train.csv and val.csv.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        teacher_width: usize,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["supernet", "single-nokd", "single-kd", "dsnn"])]
        mode: Option<String>,
        /// Uniform sparsity for the single modes.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Dense checkpoint distilled from in single-kd mode.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV path; defaults to the checkpoint path with a
        /// `.metrics.csv` extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Append per-step wall-clock seconds to the metrics (not reproducible).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Evolutionary search for the loss/size Pareto front.
    Search {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Validation CSV; defaults to the checkpoint's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report the best member no larger than this many bytes.
        #[arg(long)]
        tau: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize a masked sub-network as a standalone checkpoint.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print validation loss and size of a sub-network.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Defaults to the extracted configuration stored in the checkpoint.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Turn a front CSV into size-sorted plot points.
    ExportPlot {
        #[arg(long)]
        front: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::SpaceTooLarge { .. } => EXIT_USAGE,
        Error::Divergence { .. } | Error::Numeric(_) => EXIT_NUMERIC,
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::Shape(_)
        | Error::State(_)
        | Error::Parse { .. }
        | Error::Corrupt(_)
        | Error::Version(_)
        | Error::Io(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> omnisparse::Result<()> {
    match cmd {
        Command::GenData {
            seed,
            n,
            d,
            classes,
            teacher_width,
            label_noise,
            out,
        } => {
            let (train, val) = gen_synthetic(&SyntheticSpec {
                seed,
                n,
                dim: d,
                classes,
                teacher_width,
                label_noise,
            })?;
            std::fs::create_dir_all(&out)?;
            train.write_csv(&out.join("train.csv"))?;
            val.write_csv(&out.join("val.csv"))?;
            println!("train={} val={}", train.len(), val.len());
            Ok(())
        }
        Command::Train {
            config,
            mode,
            sparsity,
            teacher,
            out,
            metrics,
            wall_clock,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.set_mode(&m, sparsity)?;
            } else if sparsity.is_some() {
                return Err(Error::Parameter("--sparsity needs --mode single-nokd or single-kd".into()));
            }
            let teacher = match (&cfg.train.mode, teacher) {
                (TrainMode::Single { distill: true, .. }, Some(p)) => Some(dense_teacher(&p, &cfg)?),
                (TrainMode::Single { distill: true, .. }, None) => {
                    return Err(Error::Parameter("single-kd mode needs --teacher <dense checkpoint>".into()))
                }
                (_, Some(_)) => return Err(Error::Parameter("--teacher is only used in single-kd mode".into())),
                (_, None) => None,
            };
            let (train_set, _) = cfg.datasets()?;
            let model = SupernetModel::new(cfg.arch, cfg.train.adam, cfg.criterion, cfg.train.seed)?;
            let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.space.clone())?;
            let history = trainer.run(&train_set, cfg.train.total_steps, teacher.as_ref(), &mut ())?;
            let metrics = metrics.unwrap_or_else(|| out.with_extension("metrics.csv"));
            write_metrics_csv(&metrics, &history, wall_clock)?;
            let ck = Checkpoint {
                step: trainer.step(),
                rng: trainer.rng_state(),
                model: trainer.into_model(),
                config: cfg,
                extracted: None,
            };
            save_checkpoint(&ck, &out)?;
            let cost: f64 = history.iter().map(|m| m.batch_equivalents).sum();
            println!(
                "steps={} final_loss={:e} batch_equivalents={cost:e}",
                history.len(),
                history.last().map_or(f64::NAN, |m| m.total_loss)
            );
            Ok(())
        }
        Command::Search {
            ckpt,
            budget,
            seed,
            data,
            tau,
            out,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let val = validation(&ck, data.as_deref())?;
            let mut params = ck.config.search.clone();
            if let Some(s) = seed {
                params.seed = s;
            }
            let budget = budget.unwrap_or(ck.config.search_budget);
            let front = evolutionary_search(&ck.model, &ck.config.space, &val, budget, &params)?;
            write_front_csv(&out, front.members())?;
            println!("scored={} front={}", front.log().len(), front.len());
            if let Some(tau) = tau {
                let best = select_for_constraint(&front, tau)?;
                println!("selected={} size_bytes={} val_loss={:e}", best.config, best.size_bytes, best.val_loss);
            }
            Ok(())
        }
        Command::Extract { ckpt, config, out } => {
            let mut ck = load_checkpoint(&ckpt)?;
            let c = ck.config.parse_config(&config)?;
            let scores = ck.model.layer_scores()?;
            let masks = ck.model.masks(&scores, c.ratios())?;
            ck.model.apply_masks(&masks);
            let size = model_size_bytes(c.ratios(), &ck.model.arch.sizes(1))?;
            ck.extracted = Some(c);
            save_checkpoint(&ck, &out)?;
            println!("size_bytes={size}");
            Ok(())
        }
        Command::Eval { ckpt, config, data } => {
            let ck = load_checkpoint(&ckpt)?;
            let c = match (config, &ck.extracted) {
                (Some(s), _) => ck.config.parse_config(&s)?,
                (None, Some(c)) => c.clone(),
                (None, None) => return Err(Error::Parameter("--config is required for a full supernet".into())),
            };
            let val = validation(&ck, data.as_deref())?;
            let loss = Evaluator::new(&ck.model)?.loss(c.ratios(), &val)?;
            let size = model_size_bytes(c.ratios(), &ck.model.arch.sizes(1))?;
            println!("val_loss={loss:e} size_bytes={size}");
            Ok(())
        }
        Command::ExportPlot { front, out } => {
            let pts = read_front_csv(&front)?;
            write_plot_csv(&out, &pts)?;
            println!("points={}", pts.len());
            Ok(())
        }
    }
}

fn validation(ck: &Checkpoint, data: Option<&Path>) -> omnisparse::Result<omnisparse::io::Dataset> {
    match data {
        Some(p) => ck.config.validation_csv(p),
        None => ck.config.validation_set(),
    }
}

fn dense_teacher(path: &Path, cfg: &RunConfig) -> omnisparse::Result<SupernetModel> {
    let ck = load_checkpoint(path)?;
    if ck.model.arch != cfg.arch {
        return Err(Error::Parameter("teacher architecture differs from the configured one".into()));
    }
    Ok(ck.model)
}
