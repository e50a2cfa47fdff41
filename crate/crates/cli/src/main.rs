//! `tpan` command line: train, predict, evaluate, gradcheck.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or
//! gradcheck failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use tpan_core::checkpoint::{self, CheckpointError};
use tpan_core::corpus::{self, CorpusError};
use tpan_core::eval::{report, EvalError};
use tpan_core::gradcheck::run_suite;
use tpan_core::optim::OptimizerKind;
use tpan_core::pipeline::{train_all_with, TrainConfig, TrainError};
use tpan_core::tensor::TensorError;

#[derive(Parser)]
#[command(name = "tpan", version, about = "Two-phase attention stance detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerChoice {
    Sgd,
    Adam,
}

#[derive(Subcommand)]
enum Command {
    /// Train a stance model from a task TSV and write a checkpoint directory.
    Train {
        /// Training data: TSV with ID/Target/Tweet/Stance columns.
        #[arg(long)]
        data: PathBuf,
        /// Train only this target's model.
        #[arg(long, conflicts_with = "pooled")]
        target: Option<String>,
        /// Train one pooled model over all targets instead of per-target models.
        #[arg(long)]
        pooled: bool,
        /// Enable tweet cleaning (slang normalization + stopword removal).
        #[arg(long)]
        clean: bool,
        /// Replace attention with mean pooling over encoder states.
        #[arg(long = "no-attention")]
        no_attention: bool,
        #[arg(long, value_enum, default_value = "adam")]
        optimizer: OptimizerChoice,
        /// Learning rate (default 0.005).
        #[arg(long)]
        lr: Option<f64>,
        /// Training epochs (default 30).
        #[arg(long)]
        epochs: Option<usize>,
        /// Mini-batch size (default 32).
        #[arg(long)]
        batch: Option<usize>,
        /// Run seed (default 7).
        #[arg(long)]
        seed: Option<u64>,
        /// Pretrained word vectors, one `token v1 .. vd` line per word.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict stances for a task TSV using a trained checkpoint.
    Predict {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Input TSV (the Stance column is ignored).
        #[arg(long)]
        data: PathBuf,
        /// Output TSV with predicted stances.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction TSV against a gold TSV.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Also print per-target breakdowns.
        #[arg(long = "per-target")]
        per_target: bool,
    },
    /// Run the finite-difference gradient verification suite.
    Gradcheck {
        #[arg(long, default_value = "0")]
        seed: u64,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::BadConfig(_) => CliError::Usage(e.to_string()),
            TrainError::Tensor(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> CliError {
        CliError::Numeric(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            data,
            target,
            pooled,
            clean,
            no_attention,
            optimizer,
            lr,
            epochs,
            batch,
            seed,
            embeddings,
            out,
        } => {
            let mut cfg = TrainConfig {
                cleaning: clean,
                attention: !no_attention,
                per_target: !pooled,
                optimizer: match optimizer {
                    OptimizerChoice::Sgd => OptimizerKind::Sgd,
                    OptimizerChoice::Adam => OptimizerKind::Adam,
                },
                ..TrainConfig::default()
            };
            if let Some(lr) = lr {
                cfg.learning_rate = lr;
            }
            if let Some(epochs) = epochs {
                cfg.epochs = epochs;
            }
            if let Some(batch) = batch {
                cfg.batch_size = batch;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(path) = &embeddings {
                cfg.embeddings_path = Some(path.display().to_string());
            }

            let mut examples = corpus::load_semeval(&data)?;
            if let Some(name) = &target {
                examples = corpus::filter_by_target(&examples, name)?;
            }
            eprintln!(
                "training on {} examples ({} mode, cleaning {}, attention {})",
                examples.len(),
                if cfg.per_target { "per-target" } else { "pooled" },
                if cfg.cleaning { "on" } else { "off" },
                if cfg.attention { "on" } else { "off" },
            );
            let start = Instant::now();
            let outcome = train_all_with(&examples, &cfg, |line| eprintln!("  {line}"))?;
            eprintln!("training finished in {:.1?}", start.elapsed());
            if let Some(acc) = outcome.holdout_accuracy {
                eprintln!("holdout accuracy: {acc:.4}");
            }
            checkpoint::save(&outcome.model, &out)?;
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Predict { model, data, out } => {
            let trained = checkpoint::load(&model)?;
            let examples = corpus::load_semeval(&data)?;
            let prep = trained.config().preprocessor();
            let mut lines = String::from("ID\tTarget\tTweet\tStance\n");
            for ex in &examples {
                let stance = trained.predict(ex, &prep)?;
                lines.push_str(&format!("{}\t{}\t{}\t{}\n", ex.id, ex.target, ex.tweet, stance));
            }
            std::fs::write(&out, lines)
                .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
            println!("wrote {} predictions to {}", examples.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            gold,
            pred,
            per_target,
        } => {
            let gold_examples = corpus::load_semeval(&gold)?;
            let pred_examples = corpus::load_semeval(&pred)?;
            if gold_examples.len() != pred_examples.len() {
                return Err(CliError::Data(format!(
                    "gold has {} rows but predictions have {}",
                    gold_examples.len(),
                    pred_examples.len()
                )));
            }
            for (i, (g, p)) in gold_examples.iter().zip(&pred_examples).enumerate() {
                if g.id != p.id || g.target != p.target {
                    return Err(CliError::Data(format!(
                        "row {}: gold ({}, {}) does not line up with prediction ({}, {})",
                        i + 1,
                        g.id,
                        g.target,
                        p.id,
                        p.target
                    )));
                }
            }
            let gold_stances: Vec<_> = gold_examples.iter().map(|e| e.stance).collect();
            let pred_stances: Vec<_> = pred_examples.iter().map(|e| e.stance).collect();
            let targets: Vec<String> = gold_examples.iter().map(|e| e.target.clone()).collect();
            let rep = report(&gold_stances, &pred_stances, &targets)?;
            print!("{}", rep.render_table(per_target));
            println!();
            print!("{}", rep.render_kv(per_target));
            Ok(())
        }
        Command::Gradcheck { seed } => {
            let start = Instant::now();
            let outcomes = run_suite(seed)?;
            let mut failures = 0;
            for o in &outcomes {
                let status = if o.passed { "PASS" } else { "FAIL" };
                println!("{status} {} max_rel_err={:.3e}", o.name, o.max_rel_err);
                if !o.passed {
                    failures += 1;
                }
            }
            println!(
                "gradcheck: {}/{} checks passed in {:.1?}",
                outcomes.len() - failures,
                outcomes.len(),
                start.elapsed()
            );
            if failures > 0 {
                return Err(CliError::Numeric(format!("{failures} gradient checks failed")));
            }
            Ok(())
        }
    }
}
