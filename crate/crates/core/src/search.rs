//! Query-time engines over an encoded dataset.
//!
//! All scores are sums of per-codebook table lookups `‖q − c_{k,j}‖²`. The
//! two-step engine first sums only the fast codebooks and compares against
//! the fast score of the current worst neighbour plus the margin `σ`; only
//! candidates that pass are completed to the full sum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::config::Config;
use crate::data::{CodeMatrix, CodebookSet, EmbeddedDataset};
use crate::error::{Error, Result};
use crate::moments::complement_margin;
use crate::prior::SubspaceMask;
use crate::train::{encode, FastSet};

/// Everything needed to answer queries. Fast codebooks are always stored
/// first, so the fast score is a prefix of the exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    config: Config,
    books: CodebookSet,
    codes: CodeMatrix,
    mask: SubspaceMask,
    fast: FastSet,
    sigma: f64,
    lambdas: Vec<f64>,
}

impl SearchIndex {
    /// Validates shapes and reorders codebooks so that members of `fast` come first.
    pub fn new(
        config: Config,
        books: CodebookSet,
        codes: CodeMatrix,
        mask: SubspaceMask,
        fast: FastSet,
        sigma: f64,
        lambdas: Vec<f64>,
    ) -> Result<Self> {
        let (k, m, d) = (books.num_codebooks(), books.codebook_size(), books.dim());
        if config.k != k || config.m != m {
            return Err(Error::Shape(format!(
                "config says K={} m={}, codebooks are {k}x{m}",
                config.k, config.m
            )));
        }
        if codes.num_codebooks() != k {
            return Err(Error::Shape(format!(
                "codes have {} columns for {k} codebooks",
                codes.num_codebooks()
            )));
        }
        if codes.as_slice().iter().any(|&c| c as usize >= m) {
            return Err(Error::Validation(format!("code out of range for m={m}")));
        }
        if mask.len() != d || lambdas.len() != d {
            return Err(Error::Shape(format!(
                "mask has {} entries and variances {}, dimension is {d}",
                mask.len(),
                lambdas.len()
            )));
        }
        if fast.len() != k {
            return Err(Error::Shape(format!("fast set covers {} codebooks, K={k}", fast.len())));
        }
        if !(sigma >= 0.0) || sigma.is_nan() {
            return Err(Error::Validation(format!("margin must be nonnegative, got {sigma}")));
        }

        let order: Vec<usize> = fast.members().chain((0..k).filter(|&i| !fast.contains(i))).collect();
        let fast_count = fast.count();
        let is_identity = order.iter().enumerate().all(|(i, &o)| i == o);
        let (books, codes) = if is_identity {
            (books, codes)
        } else {
            (books.permuted(&order), codes.permuted_columns(&order))
        };
        Ok(Self {
            config,
            books,
            codes,
            mask,
            fast: FastSet::prefix(k, fast_count),
            sigma,
            lambdas,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn books(&self) -> &CodebookSet {
        &self.books
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn mask(&self) -> &SubspaceMask {
        &self.mask
    }

    pub fn fast(&self) -> &FastSet {
        &self.fast
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.books.dim()
    }

    pub fn fast_count(&self) -> usize {
        self.fast.count()
    }

    /// Same index with the margin recomputed for another `sigma_scale`.
    pub fn with_sigma_scale(&self, sigma_scale: f64) -> Result<Self> {
        let sigma = complement_margin(&self.lambdas, &self.mask, sigma_scale)?;
        let mut out = self.clone();
        out.sigma = sigma;
        out.config.sigma_scale = sigma_scale;
        Ok(out)
    }

    /// Same index with an explicit margin.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || sigma.is_nan() {
            return Err(Error::Validation(format!("margin must be nonnegative, got {sigma}")));
        }
        let mut out = self.clone();
        out.sigma = sigma;
        Ok(out)
    }

    pub fn with_fast_set(&self, fast: FastSet) -> Result<Self> {
        Self::new(
            self.config.clone(),
            self.books.clone(),
            self.codes.clone(),
            self.mask.clone(),
            fast,
            self.sigma,
            self.lambdas.clone(),
        )
    }

    /// Index over a different database, encoded with these codebooks.
    pub fn reencode(&self, database: &EmbeddedDataset) -> Result<Self> {
        let codes = encode(database, &self.books)?;
        let mut out = self.clone();
        out.codes = codes;
        Ok(out)
    }
}

/// Addition counts for one query. Only table-lookup additions are compared
/// between engines; table construction is reported separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub fast_adds: u64,
    pub exact_adds: u64,
    pub lut_ops: u64,
}

impl OpCounter {
    /// Lookup additions, the quantity averaged into "ops per query".
    pub fn search_ops(&self) -> u64 {
        self.fast_adds + self.exact_adds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Dataset indices, best first.
    pub ids: Vec<u32>,
    pub scores: Vec<f32>,
    pub ops: OpCounter,
    /// Set when the two-step engine had no fast codebooks and ran the exact scan.
    pub fallback: bool,
}

/// `K × m` table of squared query-to-codeword distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut {
    m: usize,
    table: Vec<f32>,
}

impl Lut {
    pub fn get(&self, k: usize, j: usize) -> f32 {
        self.table[k * self.m + j]
    }

    pub fn num_codebooks(&self) -> usize {
        self.table.len() / self.m
    }

    #[inline]
    fn lookup(&self, k: usize, code: u16) -> f32 {
        self.table[k * self.m + code as usize]
    }
}

fn check_query(index: &SearchIndex, q: &[f32]) -> Result<()> {
    if q.len() != index.dim() {
        return Err(Error::Shape(format!(
            "query has {} dimensions, index {}",
            q.len(),
            index.dim()
        )));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("query contains non-finite values".into()));
    }
    Ok(())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k must be in [1, {n}], got {k}")));
    }
    Ok(())
}

pub fn build_lut(index: &SearchIndex, q: &[f32], ops: &mut OpCounter) -> Result<Lut> {
    check_query(index, q)?;
    let books = index.books();
    let (k, m, d) = (books.num_codebooks(), books.codebook_size(), books.dim());
    let table = books
        .as_slice()
        .chunks_exact(d)
        .map(|c| {
            q.iter()
                .zip(c)
                .map(|(&a, &b)| {
                    let t = a as f64 - b as f64;
                    t * t
                })
                .sum::<f64>() as f32
        })
        .collect();
    ops.lut_ops += (k * m * d) as u64;
    Ok(Lut { m, table })
}

/// Sum of table lookups over all codebooks, in codebook order.
pub fn exact_score(lut: &Lut, code: &[u16], ops: &mut OpCounter) -> f32 {
    let mut s = 0.0f32;
    for (k, &c) in code.iter().enumerate() {
        s += lut.lookup(k, c);
    }
    ops.exact_adds += code.len().saturating_sub(1) as u64;
    s
}

/// Sum of table lookups over the fast codebooks only, in codebook order.
pub fn fast_score(lut: &Lut, code: &[u16], fast: &FastSet, ops: &mut OpCounter) -> f32 {
    let mut s = 0.0f32;
    for k in fast.members() {
        s += lut.lookup(k, code[k]);
    }
    ops.fast_adds += fast.count().saturating_sub(1) as u64;
    s
}

/// Pruning predicate: a candidate is refined iff its fast score is below the
/// incumbent's fast score plus the margin.
#[inline]
pub fn passes_fast_check(candidate_fast: f32, incumbent_fast: f32, sigma: f64) -> bool {
    (candidate_fast as f64) < incumbent_fast as f64 + sigma
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f32,
    fast: f32,
    id: u32,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then(self.id.cmp(&other.id))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Max-heap on (score, id): the top is the current worst neighbour.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

fn finish(heap: BinaryHeap<Candidate>, ops: OpCounter, fallback: bool) -> QueryResult {
    let sorted = heap.into_sorted_vec();
    QueryResult {
        ids: sorted.iter().map(|c| c.id).collect(),
        scores: sorted.iter().map(|c| c.score).collect(),
        ops,
        fallback,
    }
}

fn offer(heap: &mut BinaryHeap<Candidate>, cand: Candidate) {
    let mut top = heap.peek_mut().expect("heap seeded before scanning");
    if cand.key_cmp(&top) == Ordering::Less {
        *top = cand;
    }
}

/// Conventional scan: exact score for every element, bounded max-heap of the best `k`.
pub fn search_exact(index: &SearchIndex, q: &[f32], k: usize) -> Result<QueryResult> {
    check_k(k, index.len())?;
    let mut ops = OpCounter::default();
    let lut = build_lut(index, q, &mut ops)?;
    let codes = index.codes();
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for i in 0..index.len() {
        let score = exact_score(&lut, codes.row(i), &mut ops);
        let cand = Candidate {
            score,
            fast: score,
            id: i as u32,
        };
        if heap.len() < k {
            heap.push(cand);
        } else {
            offer(&mut heap, cand);
        }
    }
    Ok(finish(heap, ops, false))
}

/// Margin-pruned two-step scan.
///
/// The heap is seeded with the first `k` elements scored exactly. Every later
/// element is first scored on the fast codebooks; if that passes
/// [`passes_fast_check`] against the current worst neighbour, the remaining
/// codebooks are added and the element competes on its exact score. With no
/// fast codebooks the exact scan runs instead and `fallback` is set.
pub fn search_two_step(index: &SearchIndex, q: &[f32], k: usize) -> Result<QueryResult> {
    check_k(k, index.len())?;
    let nf = index.fast_count();
    if nf == 0 {
        let mut r = search_exact(index, q, k)?;
        r.fallback = true;
        return Ok(r);
    }
    let mut ops = OpCounter::default();
    let lut = build_lut(index, q, &mut ops)?;
    let codes = index.codes();
    let kk = index.books().num_codebooks();
    let sigma = index.sigma();

    let mut heap = BinaryHeap::with_capacity(k + 1);
    for i in 0..k {
        let code = codes.row(i);
        let mut s = 0.0f32;
        for (b, &c) in code[..nf].iter().enumerate() {
            s += lut.lookup(b, c);
        }
        let fast = s;
        for (b, &c) in code.iter().enumerate().skip(nf) {
            s += lut.lookup(b, c);
        }
        ops.exact_adds += (kk - 1) as u64;
        heap.push(Candidate {
            score: s,
            fast,
            id: i as u32,
        });
    }

    let fast_adds = (nf - 1) as u64;
    let completion_adds = (kk - nf) as u64;
    for i in k..index.len() {
        let code = codes.row(i);
        let mut s = 0.0f32;
        for (b, &c) in code[..nf].iter().enumerate() {
            s += lut.lookup(b, c);
        }
        ops.fast_adds += fast_adds;
        let top = *heap.peek().expect("k >= 1");
        if !passes_fast_check(s, top.fast, sigma) {
            continue;
        }
        let fast = s;
        for (b, &c) in code.iter().enumerate().skip(nf) {
            s += lut.lookup(b, c);
        }
        ops.exact_adds += completion_adds;
        offer(
            &mut heap,
            Candidate {
                score: s,
                fast,
                id: i as u32,
            },
        );
    }
    Ok(finish(heap, ops, false))
}

/// Ground truth: exact squared Euclidean distance to every raw vector.
pub fn search_bruteforce(ds: &EmbeddedDataset, q: &[f32], k: usize) -> Result<QueryResult> {
    check_k(k, ds.len())?;
    if q.len() != ds.dim() {
        return Err(Error::Shape(format!(
            "query has {} dimensions, dataset {}",
            q.len(),
            ds.dim()
        )));
    }
    let mut ops = OpCounter::default();
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (i, row) in ds.rows().enumerate() {
        let score = q
            .iter()
            .zip(row)
            .map(|(&a, &b)| {
                let t = a as f64 - b as f64;
                t * t
            })
            .sum::<f64>() as f32;
        ops.exact_adds += (ds.dim() - 1) as u64;
        let cand = Candidate {
            score,
            fast: score,
            id: i as u32,
        };
        if heap.len() < k {
            heap.push(cand);
        } else {
            offer(&mut heap, cand);
        }
    }
    Ok(finish(heap, ops, false))
}
