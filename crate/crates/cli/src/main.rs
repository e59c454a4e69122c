//! `lmswitch` command-line driver. Every subcommand prints one JSON line and
//! exits 0 on success, 1 on input errors and 2 on internal failures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "lmswitch",
    version,
    about = "Linear embedding switches for language models"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Shared flags. Run-config keys given here override the `--config` file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// key=value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 guarantees bitwise determinism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    base_lm_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    switch_path: Option<PathBuf>,
    #[arg(long, global = true)]
    eps0: Option<f64>,
    /// Switch multiplier for decoding.
    #[arg(long, global = true, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long, global = true)]
    top_p: Option<f64>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    #[arg(long, global = true)]
    num_samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// lexicon or http.
    #[arg(long, global = true)]
    scorer_mode: Option<String>,
    #[arg(long, global = true)]
    scorer_url: Option<String>,
    #[arg(long, global = true)]
    lexicon_path: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the base softmax LM on a JSONL corpus.
    TrainBaseLm(TrainBaseLm),
    /// Train a switch on labeled sentences (1 positive, -1 negative).
    TrainSwitch(TrainSwitch),
    /// Sample continuations from the switched model.
    Generate(Generate),
    /// Sweep the switch multiplier and report a metric per value.
    Sweep(Sweep),
    /// Randomized checks of the HMM identities, optionally certifying a
    /// conditioned HMM directory.
    VerifyHmm(VerifyHmm),
    /// Exact-enumeration checks of the linearity bounds.
    VerifyBounds(VerifyBounds),
    /// Search for representations satisfying the factorization assumptions.
    SearchAssumptions(SearchAssumptions),
    /// Move a switch to another model through an embedding alignment.
    Transfer(Transfer),
    /// SVD directions of a switch and their most influenced tokens.
    Interpret(Interpret),
    /// Toxicity and diversity metrics for a generations file.
    EvalMetrics(EvalMetrics),
}

#[derive(Args, Debug)]
struct TrainBaseLm {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 50.0)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    init_std: f64,
    /// Fail on malformed corpus lines instead of skipping them.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct TrainSwitch {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    init_var: f64,
    /// Sentences per polarity per step; 0 for full batch.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct Generate {
    /// Prompts, one per line; defaults to a single empty prompt.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Sweep {
    #[arg(long)]
    prompts: PathBuf,
    /// Comma-separated multipliers.
    #[arg(long, default_value = "0,1,2,3,4,5", allow_hyphen_values = true)]
    ks: String,
}

#[derive(Args, Debug)]
struct VerifyHmm {
    #[arg(long, default_value_t = 100)]
    num_hmms: usize,
    #[arg(long, default_value_t = 6)]
    max_states: usize,
    #[arg(long, default_value_t = 6)]
    max_obs: usize,
    #[arg(long = "L", default_value_t = 3)]
    len: usize,
    /// Conditioned-HMM directory to certify.
    #[arg(long)]
    chmm: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyBounds {
    #[arg(long = "L", default_value_t = 3)]
    len: usize,
    /// Comma-separated interpolation factors.
    #[arg(
        long,
        default_value = "-1,-0.5,0.25,0.5,0.75,1.5,2",
        allow_hyphen_values = true
    )]
    ks: String,
    /// Second switch for the composition bound.
    #[arg(long)]
    switch2: Option<PathBuf>,
    /// Switch value; defaults to the switch's eps0.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct SearchAssumptions {
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    ds: usize,
    #[arg(long, default_value_t = 1)]
    dc: usize,
    #[arg(long, default_value_t = 100_000)]
    max_steps: usize,
    #[arg(long, default_value = "0,1,2,3")]
    seeds: String,
    #[arg(long, default_value_t = 1e-5)]
    target: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long, default_value_t = 6)]
    observations: usize,
    /// Prefix length for certification.
    #[arg(long = "L", default_value_t = 3)]
    len: usize,
}

#[derive(Args, Debug)]
struct Transfer {
    #[arg(long)]
    target_lm_dir: PathBuf,
    #[arg(long, default_value_t = 4000)]
    anchors: usize,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    init_var: f64,
}

#[derive(Args, Debug)]
struct Interpret {
    #[arg(long, default_value_t = 9)]
    rows: usize,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

#[derive(Args, Debug)]
struct EvalMetrics {
    /// JSONL with {"prompt": ..., "generations": [...]} per line.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
