//! `pan`: train, evaluate and query the pyramid attention emotion classifier.
//!
//! Exit status is 0 on success, 1 for bad input (config, files, checkpoint)
//! and 2 for internal failures, including a failed self-check.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pan_core::checkpoint::Checkpoint;
use pan_core::config::RunConfig;
use pan_core::diagnostics::{downsized_pan_gradcheck, run_selftest};
use pan_core::pipeline;
use pan_core::{PanError, TrainingLog, EMOTIONS};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "pan", version, about = "Pyramid attention network for multi-label emotion detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a key=value config; writes the best checkpoint and a TSV log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Suppress the per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Print Jaccard, micro-F1, macro-F1 and the per-emotion table.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Override the decision threshold stored in the checkpoint.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score one text per line (stdin when --input is absent).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Finite-difference gradient check of a small model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Randomized invariant checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] PanError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_user_error() => 1,
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Core(PanError::Io { path, source })
}

fn write_stdout(text: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(io_err("<stdout>"))
}

fn train(config: PathBuf, quiet: bool) -> Result<(), CliError> {
    let cfg = RunConfig::load(&config)?;
    if !quiet {
        println!("{}", TrainingLog::HEADER);
    }
    let run = pipeline::train_run(&cfg, |record| {
        if !quiet {
            println!("{}", TrainingLog::render_line(record));
        }
    })?;
    run.checkpoint.save(&cfg.paths.checkpoint)?;
    if let Some(dir) = cfg.paths.log.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(&cfg.paths.log, run.log.to_tsv()).map_err(io_err(&cfg.paths.log))?;

    let best = run.log.best().expect("at least one epoch");
    let mut text = String::new();
    if let Some(c) = run.coverage {
        text += &format!("embedding coverage\t{c:.4}\n");
    }
    text += &format!(
        "best epoch\t{}\nbest val loss\t{}\ncheckpoint\t{}\nlog\t{}\n",
        best.epoch,
        run.checkpoint.best_val_loss,
        cfg.paths.checkpoint.display(),
        cfg.paths.log.display()
    );
    text += &run.dev_report.summary();
    write_stdout(&text)
}

fn evaluate(checkpoint: PathBuf, data: PathBuf, tau: Option<f64>) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let tweets = pan_core::textprep::load_semeval_tsv(&data)?;
    let eval = pipeline::evaluate(&ckpt, &tweets, tau)?;
    let text = format!(
        "{}Loss\t{}\n\n{}",
        eval.report.summary(),
        eval.loss,
        eval.report.per_class_table()
    );
    write_stdout(&text)
}

fn predict(checkpoint: PathBuf, input: Option<PathBuf>, tau: Option<f64>) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&checkpoint)?;
    let tau = tau.unwrap_or(ckpt.config.training.threshold);
    let reader: Box<dyn BufRead> = match &input {
        Some(path) => Box::new(BufReader::new(fs::File::open(path).map_err(io_err(path))?)),
        None => Box::new(io::stdin().lock()),
    };
    let name = input.clone().unwrap_or_else(|| PathBuf::from("<stdin>"));
    let texts: Vec<String> = reader
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(name))?;
    let texts: Vec<String> = texts.into_iter().filter(|t| !t.trim().is_empty()).collect();
    if texts.is_empty() {
        return Err(CliError::Usage("predict: no input lines".into()));
    }
    let probs = pipeline::predict(&ckpt, &texts)?;
    let labels = pan_core::threshold(&probs, tau)?;

    let mut out = format!("text\t{}\tlabels\n", EMOTIONS.join("\t"));
    for (i, text) in texts.iter().enumerate() {
        let scores: Vec<String> = probs.row(i).iter().map(|p| format!("{p:.4}")).collect();
        let on: Vec<&str> = EMOTIONS
            .iter()
            .zip(labels.row(i))
            .filter_map(|(name, &l)| l.then_some(*name))
            .collect();
        let on = if on.is_empty() { "-".to_string() } else { on.join(",") };
        out += &format!("{}\t{}\t{on}\n", text.replace('\t', " "), scores.join("\t"));
    }
    write_stdout(&out)
}

fn gradcheck(seed: u64) -> Result<(), CliError> {
    let check = downsized_pan_gradcheck(seed)?;
    let r = &check.report;
    let status = if check.passed() { "PASS" } else { "FAIL" };
    write_stdout(&format!(
        "components\t{}\nmax relative error\t{:e}\nworst\t{}\n{status}\n",
        r.components_checked,
        r.max_rel_error,
        check.worst.as_deref().unwrap_or("-"),
    ))?;
    if check.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed: max relative error {:e}",
            r.max_rel_error
        )))
    }
}

fn selftest(seed: u64, cases: usize) -> Result<(), CliError> {
    if cases == 0 {
        return Err(CliError::Usage("selftest: --cases must be at least 1".into()));
    }
    let outcome = run_selftest(seed, cases)?;
    write_stdout(&outcome.to_string())?;
    if outcome.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed("selftest failed".into()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, quiet } => train(config, quiet),
        Command::Evaluate {
            checkpoint,
            data,
            threshold,
        } => evaluate(checkpoint, data, threshold),
        Command::Predict {
            checkpoint,
            input,
            threshold,
        } => predict(checkpoint, input, threshold),
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Selftest { seed, cases } => selftest(seed, cases),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head: Vec<&str> = msg.lines().take_while(|l| !l.trim().is_empty()).collect();
            eprintln!("{}", one_line(&head.join(" ")));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}
