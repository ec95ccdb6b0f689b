//! Retrieval metrics, the benchmark driver and the unseen-class protocol.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::EmbeddedDataset;
use crate::error::{Error, Result};
use crate::search::{search_bruteforce, search_exact, search_two_step, QueryResult, SearchIndex};

/// Mean over the relevant hits of precision at that hit; zero with no hits.
pub fn average_precision(ranked: &[u32], relevant: &HashSet<u32>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 { 0.0 } else { sum / hits as f64 }
}

/// `|ranked[..r] ∩ truth| / min(r, |truth|)`.
pub fn recall_at(ranked: &[u32], truth: &[u32], r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::Domain("recall cut-off must be at least 1".into()));
    }
    if truth.is_empty() {
        return Err(Error::Domain("recall needs at least one true neighbour".into()));
    }
    let truth: HashSet<u32> = truth.iter().copied().collect();
    let found = ranked.iter().take(r).filter(|id| truth.contains(id)).count();
    Ok(found as f64 / r.min(truth.len()) as f64)
}

/// `bits · ops / baseline_ops`: the code length a conventional scan could
/// afford for the same number of additions.
pub fn effective_code_length(bits: f64, ops: f64, baseline_ops: f64) -> Result<f64> {
    if !(baseline_ops > 0.0) {
        return Err(Error::Domain(format!("baseline ops must be positive, got {baseline_ops}")));
    }
    Ok(bits * ops / baseline_ops)
}

/// Correctly rounded sum, so means do not depend on how values are grouped.
fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut hi = 0.0;
    while let Some(top) = partials.pop() {
        let x = hi;
        hi = x + top;
        let lo = top - (hi - x);
        if lo != 0.0 {
            if let Some(&next) = partials.last() {
                if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
                    let y = lo * 2.0;
                    let x2 = hi + y;
                    if y == x2 - hi {
                        hi = x2;
                    }
                }
            }
            break;
        }
    }
    hi
}

/// Where the reference neighbours for recall (and unlabelled MAP) come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthSource {
    /// Exact Euclidean search over the database vectors.
    BruteForce,
    /// The exact lookup-table scan over the index.
    Exact,
    /// Same-label relevance; recall uses brute force.
    Labels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    /// Length of every ranked list.
    pub depth: usize,
    /// Recall cut-offs; each must be at most `depth`.
    pub recall_at: Vec<usize>,
    pub truth: TruthSource,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            depth: 100,
            recall_at: vec![1, 10, 100],
            truth: TruthSource::BruteForce,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub code_length: f64,
    pub k: usize,
    pub fast_k: usize,
    pub map: f64,
    pub recall_at: Vec<(usize, f64)>,
    pub avg_ops: f64,
    pub total_ops: u64,
    pub effective_code_length: f64,
    pub query_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub truth: Vec<u32>,
    pub relevant: Vec<u32>,
    pub two_step: QueryResult,
    pub exact: QueryResult,
}

/// Two-step and exact-scan reports over the same queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub two_step: EvalReport,
    pub exact: EvalReport,
    pub queries: Vec<QueryRecord>,
}

fn relevant_set(
    spec: &BenchmarkSpec,
    database: &EmbeddedDataset,
    query_label: Option<u32>,
    truth: &[u32],
) -> Vec<u32> {
    match (database.labels(), query_label) {
        (Some(labels), Some(ql)) => labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == ql)
            .map(|(i, _)| i as u32)
            .collect(),
        _ => {
            debug_assert!(spec.truth != TruthSource::Labels);
            truth.to_vec()
        }
    }
}

/// Runs both engines on every query. `database` holds the vectors the index
/// encodes (same order); labels on both sides switch MAP to label relevance.
pub fn run_benchmark(
    index: &SearchIndex,
    database: &EmbeddedDataset,
    queries: &EmbeddedDataset,
    spec: &BenchmarkSpec,
) -> Result<Benchmark> {
    if queries.is_empty() {
        return Err(Error::Domain("benchmark needs at least one query".into()));
    }
    if database.len() != index.len() || database.dim() != index.dim() {
        return Err(Error::Shape(format!(
            "database is {}x{}, index {}x{}",
            database.len(),
            database.dim(),
            index.len(),
            index.dim()
        )));
    }
    if queries.dim() != index.dim() {
        return Err(Error::Shape(format!("queries have dimension {}, index {}", queries.dim(), index.dim())));
    }
    if spec.depth == 0 || spec.depth > index.len() {
        return Err(Error::Domain(format!("depth must be in [1, {}], got {}", index.len(), spec.depth)));
    }
    if let Some(&r) = spec.recall_at.iter().find(|&&r| r == 0 || r > spec.depth) {
        return Err(Error::Domain(format!("recall cut-off {r} outside [1, {}]", spec.depth)));
    }
    if spec.truth == TruthSource::Labels && (database.labels().is_none() || queries.labels().is_none()) {
        return Err(Error::Validation("label relevance needs labels on database and queries".into()));
    }

    let records: Vec<QueryRecord> = (0..queries.len())
        .into_par_iter()
        .map(|qi| -> Result<QueryRecord> {
            let q = queries.row(qi);
            let two_step = search_two_step(index, q, spec.depth)?;
            let exact = search_exact(index, q, spec.depth)?;
            let truth = match spec.truth {
                TruthSource::Exact => exact.ids.clone(),
                TruthSource::BruteForce | TruthSource::Labels => search_bruteforce(database, q, spec.depth)?.ids,
            };
            let label = queries.labels().map(|l| l[qi]);
            let relevant = relevant_set(spec, database, label, &truth);
            Ok(QueryRecord {
                truth,
                relevant,
                two_step,
                exact,
            })
        })
        .collect::<Result<_>>()?;

    let bits = index.config().code_length_bits();
    let report = |method: &str, pick: fn(&QueryRecord) -> &QueryResult, baseline: Option<u64>| -> Result<EvalReport> {
        let nq = records.len();
        let aps = records.iter().map(|r| {
            let rel: HashSet<u32> = r.relevant.iter().copied().collect();
            average_precision(&pick(r).ids, &rel)
        });
        let map = exact_sum(aps) / nq as f64;
        let mut recalls = Vec::with_capacity(spec.recall_at.len());
        for &cut in &spec.recall_at {
            let mut vals = Vec::with_capacity(nq);
            for r in &records {
                vals.push(recall_at(&pick(r).ids, &r.truth[..cut.min(r.truth.len())], cut)?);
            }
            recalls.push((cut, exact_sum(vals) / nq as f64));
        }
        let total_ops: u64 = records.iter().map(|r| pick(r).ops.search_ops()).sum();
        let avg_ops = total_ops as f64 / nq as f64;
        let effective = match baseline {
            Some(b) => effective_code_length(bits, total_ops as f64, b as f64)?,
            None => bits,
        };
        Ok(EvalReport {
            method: method.into(),
            code_length: bits,
            k: index.config().k,
            fast_k: index.fast_count(),
            map,
            recall_at: recalls,
            avg_ops,
            total_ops,
            effective_code_length: effective,
            query_count: nq,
        })
    };
    let exact = report("exact", |r| &r.exact, None)?;
    let two_step = report("two-step", |r| &r.two_step, Some(exact.total_ops))?;
    Ok(Benchmark {
        two_step,
        exact,
        queries: records,
    })
}

impl Benchmark {
    pub fn csv_header(&self) -> String {
        let mut h = String::from("method,code_length,K,fast_k,map");
        for (r, _) in &self.two_step.recall_at {
            h.push_str(&format!(",recall@{r}"));
        }
        h.push_str(",avg_ops,effective_code_length");
        h
    }

    fn csv_row(r: &EvalReport) -> String {
        let mut s = format!("{},{},{},{},{}", r.method, r.code_length, r.k, r.fast_k, r.map);
        for (_, v) in &r.recall_at {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{},{}", r.avg_ops, r.effective_code_length));
        s
    }

    /// Header plus one row per engine.
    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            self.csv_header(),
            Self::csv_row(&self.two_step),
            Self::csv_row(&self.exact)
        )
    }

    /// Raw per-query counters: `query,method,fast_adds,exact_adds,lut_ops`.
    pub fn write_counters_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "query,method,fast_adds,exact_adds,lut_ops")?;
        for (qi, r) in self.queries.iter().enumerate() {
            for (name, res) in [("two-step", &r.two_step), ("exact", &r.exact)] {
                writeln!(w, "{qi},{name},{},{},{}", res.ops.fast_adds, res.ops.exact_adds, res.ops.lut_ops)?;
            }
        }
        Ok(())
    }

    /// Ranked lists with relevance flags: `query,method,rank,id,score,relevant`.
    pub fn write_rankings_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "query,method,rank,id,score,relevant")?;
        for (qi, r) in self.queries.iter().enumerate() {
            let rel: HashSet<u32> = r.relevant.iter().copied().collect();
            for (name, res) in [("two-step", &r.two_step), ("exact", &r.exact)] {
                for (rank, (id, score)) in res.ids.iter().zip(&res.scores).enumerate() {
                    writeln!(w, "{qi},{name},{},{id},{score},{}", rank + 1, rel.contains(id) as u8)?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<9} bits={:<6} K={:<3} |fast|={:<3} MAP={:.4}",
            self.method, self.code_length, self.k, self.fast_k, self.map
        )?;
        for (r, v) in &self.recall_at {
            write!(f, " R@{r}={v:.4}")?;
        }
        write!(
            f,
            " ops/query={:.1} effective_bits={:.2} queries={}",
            self.avg_ops, self.effective_code_length, self.query_count
        )
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.two_step)?;
        write!(f, "{}", self.exact)
    }
}

/// Result of splitting a labelled dataset by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    pub train: EmbeddedDataset,
    pub test: EmbeddedDataset,
    pub train_classes: Vec<u32>,
    pub test_classes: Vec<u32>,
}

/// Seeded class-level split: `⌈fraction·c⌉` classes (at least one, at most
/// `c − 1`) go to the training side, the rest to the test side.
pub fn unseen_class_split(ds: &EmbeddedDataset, fraction: f64, seed: u64) -> Result<ClassSplit> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Validation("class split needs labels".into()))?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let mut classes: Vec<u32> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let c = classes.len();
    if c < 2 {
        return Err(Error::Domain(format!("class split needs at least two classes, got {c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let n_train = ((fraction * c as f64 - 1e-9).ceil() as usize).clamp(1, c - 1);
    let mut train_classes = classes[..n_train].to_vec();
    let mut test_classes = classes[n_train..].to_vec();
    train_classes.sort_unstable();
    test_classes.sort_unstable();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, l) in labels.iter().enumerate() {
        if train_classes.binary_search(l).is_ok() {
            tr.push(i);
        } else {
            te.push(i);
        }
    }
    Ok(ClassSplit {
        train: ds.select(&tr),
        test: ds.select(&te),
        train_classes,
        test_classes,
    })
}
