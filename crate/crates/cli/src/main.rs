//! `cplmix`: synthetic data, coupled mixture VAE training, evaluation,
//! latent traversal and confidence verification.
//!
//! Exit status: 0 success, 1 usage or input error, 2 verification failure,
//! 3 training aborted on a non-finite loss.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cplmix_core::data::{load_dataset_with, make_synthetic, save_dataset, DataFormat, SampleCounts};
use cplmix_core::harness::config::load_config;
use cplmix_core::harness::metrics::chance_level;
use cplmix_core::harness::{
    consensus_rate, evaluate_accuracy, latent_traversal, seeded_rng, train, verify_propositions, EvalConfig,
    GenDataConfig, TrainConfig, TraverseConfig, VerifyConfig,
};
use cplmix_core::mixvae::{load_checkpoint, save_checkpoint};
use cplmix_core::{Error, GaussianMixtureSpec};

#[derive(Parser)]
#[command(name = "cplmix", version, about = "Coupled mixture VAEs on synthetic Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled dataset from a mixture file.
    GenData(Common),
    /// Train coupled arms; `--out` names a directory receiving
    /// checkpoint.bin, metrics.csv and report.json.
    Train(Common),
    /// Score a checkpoint on a labeled dataset and print a JSON report.
    Eval(Common),
    /// Decode a sweep over one state coordinate to CSV.
    Traverse(Common),
    /// Monte-Carlo confidence report for a mixture; exits 2 when a check fails.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted, except for `train` and `gen-data`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Traverse(a) => traverse(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e @ Error::NonFinite { .. })) => {
            eprintln!("aborted: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn config<T>(path: &Path) -> std::result::Result<T, Failure>
where
    T: serde::de::DeserializeOwned + cplmix_core::harness::config::ResolvePaths,
{
    read(path, load_config(path))
}

fn read<T>(path: &Path, r: cplmix_core::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| match e {
        Error::Io(io) => Failure::Usage(format!("cannot read {}: {io}", path.display())),
        e => Failure::Core(e),
    })
}

fn required_out(a: &Common, what: &str) -> std::result::Result<PathBuf, Failure> {
    a.out.clone().ok_or_else(|| Failure::Usage(format!("--out <{what}> is required")))
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_data(a: Common) -> CmdResult {
    let mut cfg: GenDataConfig = config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = required_out(&a, "dataset file")?;
    let counts = match (cfg.per_class.take(), cfg.total) {
        (Some(v), None) => SampleCounts::PerClass(v),
        (None, Some(n)) => SampleCounts::Total(n),
        _ => return Err(Failure::Usage("set exactly one of `per_class` and `total`".into())),
    };
    let spec = read(&cfg.spec, GaussianMixtureSpec::load(&cfg.spec))?;
    let ds = make_synthetic(&spec, &counts, &mut seeded_rng(cfg.seed))?;
    let format = cfg.format.unwrap_or_else(|| DataFormat::from_path(&out));
    save_dataset(&ds, &out, format)?;
    eprintln!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn train_cmd(a: Common) -> CmdResult {
    let mut cfg: TrainConfig = config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = required_out(&a, "directory")?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Failure::Usage("training config needs a `data` path".into()))?;
    let mut ds = read(&data, load_dataset_with(&data, DataFormat::from_path(&data), false))?;
    if let Some(p) = &cfg.augmenter.spec {
        ds = ds.with_spec(read(p, GaussianMixtureSpec::load(p))?)?;
    }
    let augmenter = cfg.augmenter.build(&ds)?;
    let result = train(&cfg, &ds, &augmenter, &mut seeded_rng(cfg.seed))?;
    fs::create_dir_all(&out)?;
    save_checkpoint(&out.join("checkpoint.bin"), &result.models)?;
    fs::write(out.join("metrics.csv"), result.metrics_csv())?;
    let report = serde_json::to_string_pretty(&result.report).expect("report serializes");
    fs::write(out.join("report.json"), report + "\n")?;
    match result.report.mean_accuracy {
        Some(acc) => eprintln!("trained {} arm(s), mean accuracy {acc:.4}", cfg.coupling.n_arms),
        None => eprintln!("trained {} arm(s)", cfg.coupling.n_arms),
    }
    Ok(())
}

fn eval(a: Common) -> CmdResult {
    let cfg: EvalConfig = config(&a.config)?;
    let ds = read(&cfg.data, load_dataset_with(&cfg.data, DataFormat::from_path(&cfg.data), true))?;
    let models = read(&cfg.checkpoint, load_checkpoint(&cfg.checkpoint))?;
    let reports = models
        .iter()
        .map(|m| evaluate_accuracy(m, &ds))
        .collect::<cplmix_core::Result<Vec<_>>>()?;
    let mean = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    let consensus = if models.len() >= 2 {
        Some(consensus_rate(&models, ds.x())?)
    } else {
        None
    };
    let labels = ds.labels().expect("loaded with labels");
    let doc = json!({
        "arms": reports,
        "mean_accuracy": mean,
        "consensus_rate": consensus,
        "chance_level": chance_level(labels)?,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes") + "\n";
    emit(a.out.as_deref(), &text)
}

fn traverse(a: Common) -> CmdResult {
    let cfg: TraverseConfig = config(&a.config)?;
    let ds = read(&cfg.data, load_dataset_with(&cfg.data, DataFormat::from_path(&cfg.data), false))?;
    let models = read(&cfg.checkpoint, load_checkpoint(&cfg.checkpoint))?;
    let model = cfg
        .arm
        .checked_sub(1)
        .and_then(|i| models.get(i))
        .ok_or_else(|| Failure::Usage(format!("arm {} not in 1..={}", cfg.arm, models.len())))?;
    let row = cfg
        .sample
        .checked_sub(1)
        .filter(|&i| i < ds.len())
        .ok_or_else(|| Failure::Usage(format!("sample {} not in 1..={}", cfg.sample, ds.len())))?;
    let t = latent_traversal(model, ds.x().row_slice(row), cfg.dim, &cfg.grid, cfg.likelihood)?;
    emit(a.out.as_deref(), &t.to_csv())
}

fn verify(a: Common) -> CmdResult {
    let mut cfg: VerifyConfig = config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let report = read(&cfg.spec, verify_propositions(&cfg))?;
    emit(a.out.as_deref(), &report.to_csv())?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "monotone={} smallest argmax-correct A={:?} (min_arms={})",
            report.monotone_ok(),
            report.smallest_correct_arms,
            report.min_arms
        )))
    }
}
