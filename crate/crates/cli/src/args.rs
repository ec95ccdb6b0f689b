use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icq::Config;

#[derive(Debug, Parser)]
#[command(name = "icq", version, about = "Interleaved composite quantization: train, search, benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic classification dataset.
    Gen(GenArgs),
    /// Train an index on an ICQD file.
    Train(TrainArgs),
    /// Answer k-NN queries against an index.
    Search(SearchArgs),
    /// Train (or load) an index and report retrieval metrics for both engines.
    Bench(BenchArgs),
    /// Print a summary of an index file.
    Inspect(InspectArgs),
}

/// Overrides for [`Config`]; unset flags keep the library defaults.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Number of codebooks.
    #[arg(long = "K", value_name = "K")]
    pub k: Option<usize>,
    /// Codewords per codebook.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub gamma2: Option<f64>,
    #[arg(long)]
    pub pi1: Option<f64>,
    #[arg(long)]
    pub pi2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub sigma_scale: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Codebooks initialised inside the high-variance subspace.
    #[arg(long)]
    pub fast_quantizers: Option<usize>,
    /// Upper bound on the number of high-variance dimensions.
    #[arg(long)]
    pub psi_cap: Option<usize>,
    #[arg(long)]
    pub embed_weight: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Config {
        let base = Config::default();
        let k = self.k.unwrap_or(base.k);
        let mut c = Config::new(k, self.m.unwrap_or(base.m));
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(gamma1, gamma2, pi1, pi2, alpha2, sigma_scale, epochs, batch_size, learning_rate, seed, fast_quantizers, embed_weight);
        if self.psi_cap.is_some() {
            c.psi_cap = self.psi_cap;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1_000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Number of informative dimensions.
    #[arg(long, default_value_t = 8)]
    pub informative: usize,
    /// Redundant dimensions; half of the non-informative ones by default.
    #[arg(long)]
    pub redundant: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 2.0)]
    pub class_sep: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (ICQD).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Index file to write (ICQI).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    TwoStep,
    Exact,
    Brute,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Raw database vectors; required for `--mode brute`.
    #[arg(long)]
    pub database: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Mode::TwoStep)]
    pub mode: Mode,
    /// Recompute the margin with this multiplier.
    #[arg(long)]
    pub sigma_scale: Option<f64>,
    /// Treat every codebook as fast.
    #[arg(long)]
    pub all_fast: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Truth {
    Brute,
    Exact,
    Labels,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Training data (ICQD); also the search database unless `--unseen-fraction` is set.
    #[arg(long)]
    pub train: PathBuf,
    /// Query data (ICQD). With `--unseen-fraction`, only rows of unseen classes are used.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Train on this fraction of the classes; search among the rest.
    #[arg(long)]
    pub unseen_fraction: Option<f64>,
    /// Use an existing index instead of training.
    #[arg(long, conflicts_with_all = ["with_embedder", "unseen_fraction"])]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub save_index: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Truth::Brute)]
    pub truth: Truth,
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 100])]
    pub recall_at: Vec<usize>,
    /// Learn a linear embedding jointly (requires labels).
    #[arg(long)]
    pub with_embedder: bool,
    #[arg(long, requires = "with_embedder")]
    pub embed_dim: Option<usize>,
    /// Metrics CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-query operation counters CSV.
    #[arg(long)]
    pub counters: Option<PathBuf>,
    /// Per-query ranked lists CSV.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub index: PathBuf,
}
