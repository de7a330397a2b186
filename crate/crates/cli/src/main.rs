//! Command-line entry point: synthesize data, train, evaluate, generate and
//! run the verification suites.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use cxformer::config::Config;
use cxformer::signal::{read_dataset, write_dataset, Dataset, SpectralSequence};
use cxformer::train::{
    conditional_generate, evaluate, load_checkpoint, save_checkpoint, train, Network, Prediction, Task, METRICS_HEADER,
};
use cxformer::verify::{gradient_suite, oracle_suite};
use cxformer::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Synth,
    Train,
    Eval,
    Generate,
    Gradcheck,
    Oracle,
}

#[derive(Debug, Parser)]
#[command(name = "cxformer", version, about = "Complex-valued transformer: data, training and verification")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    command: Command,
}

const DATASET_FILE: &str = "dataset.cxs1";
const CHECKPOINT_FILE: &str = "checkpoint.cxck";

fn data_path(cfg: &Config, out: &Path) -> PathBuf {
    cfg.data.data_path.clone().unwrap_or_else(|| out.join(DATASET_FILE))
}

fn checkpoint_path(cfg: &Config, out: &Path) -> PathBuf {
    cfg.data.checkpoint_path.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

fn load_data(cfg: &Config, out: &Path) -> Result<Dataset> {
    let path = data_path(cfg, out);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset {} not found; run the synth command first or set data_path", path.display()),
        )));
    }
    read_dataset(path)
}

fn load_net(cfg: &Config, out: &Path) -> Result<Network> {
    let path = checkpoint_path(cfg, out);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} not found; run the train command first or set checkpoint_path", path.display()),
        )));
    }
    load_checkpoint(path)
}

fn run(cli: &Cli) -> Result<String> {
    let cfg = Config::from_file(&cli.config)?;
    let out = cli.out.as_path();
    fs::create_dir_all(out)?;
    let command = format!("{:?}", cli.command).to_lowercase();
    fs::write(out.join("config.txt"), format!("# command = {command}\n# seed = {}\n{}", cli.seed, cfg.to_text()))?;

    match cli.command {
        Command::Synth => {
            let data = cfg.data.synthesize(cli.seed)?;
            let path = out.join(DATASET_FILE);
            write_dataset(&path, &data)?;
            Ok(format!("wrote {} examples [T={}, F={}] to {}", data.len(), data.t, data.f, path.display()))
        }
        Command::Train => {
            let (train_set, held_out) = cfg.data.split(load_data(&cfg, out)?)?;
            let mut net = Network::new(&cfg.model, &cfg.task, train_set.f, train_set.n_labels, cli.seed)?;
            let mut log = File::create(out.join("metrics.tsv"))?;
            writeln!(log, "{METRICS_HEADER}")?;
            let held = (!held_out.is_empty()).then_some(&held_out);
            let mut io_err = None;
            let result = train(&mut net, &train_set, held, &cfg.train, cli.seed, |r| {
                if let Err(e) = writeln!(log, "{}", r.to_line()).and_then(|_| log.flush()) {
                    io_err.get_or_insert(e);
                }
            });
            // On divergence the parameters are already back at the last good epoch.
            if matches!(result, Ok(_) | Err(Error::Divergence(_))) {
                save_checkpoint(out.join(CHECKPOINT_FILE), &net)?;
            }
            if let Some(e) = io_err {
                return Err(e.into());
            }
            let records = result?;
            let last = records.last().map(|r| format!(", final loss {} metric {}", r.loss, r.metric)).unwrap_or_default();
            Ok(format!("trained {} epochs{last}", records.len()))
        }
        Command::Eval => {
            let net = load_net(&cfg, out)?;
            let (train_set, held_out) = cfg.data.split(load_data(&cfg, out)?)?;
            let mut text = String::from("split\texamples\tloss\tmetric\n");
            for (name, d) in [("train", &train_set), ("held_out", &held_out)] {
                if !d.is_empty() {
                    let e = evaluate(&net, d)?;
                    text.push_str(&format!("{name}\t{}\t{}\t{}\n", d.len(), e.loss, e.metric));
                }
            }
            fs::write(out.join("eval.tsv"), &text)?;
            Ok(text.trim_end().to_string())
        }
        Command::Generate => {
            let net = load_net(&cfg, out)?;
            if net.task.task != Task::ConditionalGenerate {
                return Err(Error::Config("checkpoint was not trained for conditional_generate".into()));
            }
            let data = load_data(&cfg, out)?;
            let (_, held_out) = cfg.data.split(data.clone())?;
            let source = if held_out.is_empty() { &data } else { &held_out };
            let mut examples = Vec::with_capacity(source.len());
            let mut scores = String::from("example\tindex\tscore\ttarget\n");
            let mut span = 0;
            for (i, ex) in source.examples.iter().enumerate() {
                let g = conditional_generate(&net, &ex.frames, &ex.labels)?;
                span = g.frames.shape()[0];
                let labels = match &g.prediction {
                    Prediction::Scores { scores: s, targets } => {
                        for (j, (v, t)) in s.iter().zip(targets).enumerate() {
                            scores.push_str(&format!("{i}\t{j}\t{v}\t{}\n", u8::from(*t)));
                        }
                        s.iter().map(|&v| f64::from(v >= 0.5)).collect()
                    }
                    Prediction::Class { predicted, target } => {
                        scores.push_str(&format!("{i}\t{predicted}\t1\t{target}\n"));
                        (0..source.n_labels).map(|c| f64::from(c == *predicted)).collect()
                    }
                };
                examples.push(SpectralSequence { frames: g.frames, labels });
            }
            let generated = Dataset::new(span.max(1), source.f, source.n_labels, net.task.label_kind(), examples)?;
            write_dataset(out.join("generated.cxs1"), &generated)?;
            fs::write(out.join("predictions.tsv"), scores)?;
            Ok(format!("generated {span} frames for each of {} sequences", generated.len()))
        }
        Command::Gradcheck => {
            let report = gradient_suite(cfg.verify.gradcheck_tol, cli.seed)?;
            fs::write(out.join("gradcheck.tsv"), report.to_text())?;
            let text = report.to_text();
            report.into_result().map(|r| format!("{text}{} checks passed in {:.2}s", r.checks.len(), r.seconds))
        }
        Command::Oracle => {
            let report = oracle_suite(cfg.verify.oracle_cases, cli.seed)?;
            fs::write(out.join("oracle.tsv"), report.to_text())?;
            let text = report.to_text();
            report.into_result().map(|r| format!("{text}{} checks passed in {:.2}s", r.checks.len(), r.seconds))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(cxformer::Category::Config.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
