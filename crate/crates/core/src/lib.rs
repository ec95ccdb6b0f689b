//! Interleaved composite quantization.
//!
//! Additive codebooks are trained so that a few of them ("fast" codebooks)
//! live in the high-variance subspace picked out by a bi-modal prior over
//! per-dimension variances. Queries are first compared on the fast codebooks
//! only, and fully scored only when that partial score, plus a margin derived
//! from the remaining variance, could beat the current k-th neighbour.

pub mod config;
pub mod data;
pub mod datagen;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod io;
pub mod moments;
pub mod prior;
pub mod search;
pub mod train;

pub use config::Config;
pub use data::{CodeMatrix, CodebookSet, EmbeddedDataset};
pub use datagen::{generate, SynthData, SynthSpec};
pub use embedder::LinearEmbedder;
pub use error::{Error, Result};
pub use eval::{
    average_precision, effective_code_length, recall_at, run_benchmark, unseen_class_split, Benchmark,
    BenchmarkSpec, ClassSplit, EvalReport, TruthSource,
};
pub use io::{load_dataset, load_index, save_dataset, save_index};
pub use moments::OnlineMoments;
pub use prior::{PriorParams, SubspaceMask};
pub use search::{
    build_lut, exact_score, fast_score, search_bruteforce, search_exact, search_two_step, OpCounter,
    QueryResult, SearchIndex,
};
pub use train::{
    assign_codes, encode, fast_set, icq_penalty, quantization_loss, train, train_from, FastSet, TrainOptions,
    TrainOutput, TrainReport,
};
