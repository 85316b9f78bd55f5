use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use narmt::config::RunConfig;
use narmt::length::RankMode;
use narmt::pipeline::{self, AnalysisKind, TranslateArgs};
use narmt::train::EpochRecord;

#[derive(Parser)]
#[command(name = "narmt", version, about = "Distill a non-autoregressive student from an autoregressive teacher")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; omitted keys keep their defaults
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set teacher_train.max_epochs=10`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path, &self.overrides),
            None => RunConfig::from_overrides(&self.overrides),
        };
        cfg.context("loading configuration")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic parallel splits and monolingual sources
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the autoregressive teacher on the gold training split
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Decode training and monolingual sources with the teacher
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Train a student on the distilled corpus
    TrainStudent {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint used for distillation and encoder initialization
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Fraction of the monolingual pool to mix in
        #[arg(long)]
        mono_fraction: Option<f64>,
    },
    /// Translate a file of token-id lines with a student
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        half_width: Option<usize>,
        #[arg(long, allow_negative_numbers = true, conflicts_with = "estimate_c")]
        length_offset: Option<i64>,
        /// Estimate the length offset from the training pairs
        #[arg(long)]
        estimate_c: bool,
        /// sum_logprob or mean_logprob
        #[arg(long)]
        rank_mode: Option<RankMode>,
        #[arg(long, overrides_with = "no_dedup")]
        dedup: bool,
        #[arg(long)]
        no_dedup: bool,
        /// Emit at the lengths of this reference file instead of reranking
        #[arg(long)]
        gold_lengths: Option<PathBuf>,
    },
    /// Corpus BLEU of hypotheses against references
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Write the JSON report here as well as to stdout
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build a report: loss-gap, b-sweep or buckets
    Analyze {
        #[command(flatten)]
        common: Common,
        kind: AnalysisKind,
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
}

fn print_epoch(label: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |r| match r.valid_loss {
        Some(v) => eprintln!("{label} epoch {:>3}  train {:.4}  valid {:.4}  lr {:.2e}", r.epoch, r.train_loss, v, r.lr),
        None => eprintln!("{label} epoch {:>3}  train {:.4}  lr {:.2e}", r.epoch, r.train_loss, r.lr),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let s = pipeline::cmd_gen_data(&common.load()?)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::TrainTeacher { common } => {
            let s = pipeline::cmd_train_teacher(&common.load()?, &mut print_epoch("teacher"))?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Distill { common, teacher } => {
            let p = pipeline::cmd_distill(&common.load()?, teacher.as_deref())?;
            println!("{}", serde_json::to_string(&p)?);
        }
        Command::TrainStudent {
            common,
            teacher,
            mono_fraction,
        } => {
            let s = pipeline::cmd_train_student(&common.load()?, teacher.as_deref(), mono_fraction, &mut print_epoch("student"))?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Translate {
            common,
            input,
            output,
            student,
            teacher,
            half_width,
            length_offset,
            estimate_c,
            rank_mode,
            dedup,
            no_dedup,
            gold_lengths,
        } => {
            let args = TranslateArgs {
                input,
                output,
                student,
                teacher,
                half_width,
                offset: length_offset,
                estimate_c,
                rank_mode,
                dedup: match (dedup, no_dedup) {
                    (_, true) => Some(false),
                    (true, false) => Some(true),
                    _ => None,
                },
                gold_lengths,
            };
            let n = pipeline::cmd_translate(&common.load()?, &args)?;
            eprintln!("translated {n} sentences into {}", args.output.display());
        }
        Command::Evaluate {
            common,
            hyp,
            reference,
            report,
        } => {
            let r = pipeline::cmd_evaluate(&common.load()?, &hyp, &reference, report.as_deref())?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Analyze { common, kind, teacher } => {
            let path = pipeline::cmd_analyze(&common.load()?, kind, teacher.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
