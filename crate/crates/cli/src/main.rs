//! `seufi` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input data, 3 internal failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "seufi", version, about = "Single-bit upset fault injection and protection analysis for neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a model on a dataset
    Eval(EvalArgs),
    /// Flip every selected bit in turn and report the worst-case drop
    Scan(ScanArgs),
    /// Write a copy of a model with one bit flipped
    Inject(InjectArgs),
    /// Probability that at least one stored bit flips during deployment
    SeuProb(SeuArgs),
    /// Check fault masking and storage cost of protection policies
    Protect(ProtectArgs),
    /// Residual sensitivity against overhead for a sequence of policies
    Tradeoff(TradeoffArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// Model manifest
    #[arg(long)]
    model: PathBuf,
    /// Parameter blob; defaults to the manifest path with extension `.bin`
    #[arg(long)]
    blob: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "top1_accuracy")]
    metric: String,
    /// Directory for `eval.json`; stdout only when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ScopeArgs {
    /// Scope file (TOML with `layers`, `kinds`, `bits`, `sample_fraction`, `seed`); flags override it
    #[arg(long)]
    scope: Option<PathBuf>,
    /// Layer indices, e.g. `all`, `0`, `0-2,5`
    #[arg(long)]
    layers: Option<String>,
    /// weights, biases or both
    #[arg(long)]
    kinds: Option<String>,
    /// Comma-separated bit classes: all, sign, exponent, fraction, exponent:K, fraction:K, ex1, frac1, bit:N
    #[arg(long)]
    bits: Option<String>,
    /// Keep each candidate bit with this probability
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ScanArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "top1_accuracy")]
    metric: String,
    #[command(flatten)]
    scope: ScopeArgs,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Result log used to resume an interrupted scan
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of worst results listed in the JSON summary
    #[arg(long, default_value_t = 20)]
    top: usize,
    /// Output directory for `scan.csv` and `scan.json`
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct InjectArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    layer: usize,
    /// weight or bias
    #[arg(long, default_value = "weight")]
    kind: String,
    #[arg(long)]
    element: usize,
    /// Bit index 0..=31 (31 is the sign)
    #[arg(long)]
    bit: u32,
    /// Manifest path of the perturbed model; its blob goes next to it as `.bin`
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SeuArgs {
    /// Number of stored parameters N
    #[arg(long, value_parser = positive)]
    parameters: f64,
    /// Bits per parameter W
    #[arg(long, value_parser = positive, default_value_t = 32.0)]
    width: f64,
    /// Deployment lifetime T in nanoseconds
    #[arg(long, value_parser = positive, conflicts_with = "lifetime_months")]
    lifetime_ns: Option<f64>,
    /// Deployment lifetime T in 30-day months
    #[arg(long, value_parser = positive)]
    lifetime_months: Option<f64>,
    /// Exposure interval t in nanoseconds
    #[arg(long, value_parser = positive, default_value_t = 1.0)]
    interval_ns: f64,
    /// Flip probability of one bit in one interval
    #[arg(long, value_parser = positive, default_value_t = seufi::engine::P_SINGLE_TERRESTRIAL)]
    p_single: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CostArgs {
    /// Logic units per voted bit
    #[arg(long, default_value_t = seufi::protection::LogicCostModel::default().c_vote)]
    c_vote: f64,
    /// Logic units per XOR-equivalent of an ECC encoder/decoder
    #[arg(long, default_value_t = seufi::protection::LogicCostModel::default().c_xor)]
    c_xor: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ProtectArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Policy file (TOML, one `[[policy]]` table per policy)
    #[arg(long)]
    policy: PathBuf,
    /// Only run the named policy
    #[arg(long)]
    name: Option<String>,
    /// Inject into a random fraction of bits instead of all of them
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cost: CostArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TradeoffArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    policy: PathBuf,
    /// `scan.csv` from a previous exhaustive scan
    #[arg(long)]
    results: Option<PathBuf>,
    /// Scan inline against this dataset when no results are given
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "top1_accuracy")]
    metric: String,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    cost: CostArgs,
    /// Output directory for `tradeoff.csv` and `tradeoff.json`
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("{v} is not a positive finite number")),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
