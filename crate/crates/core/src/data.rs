//! Dense row-major containers for datasets, codebooks and codes.

use crate::error::{Error, Result};

/// `n` embedding vectors of dimension `d`, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    n: usize,
    d: usize,
    vectors: Vec<f32>,
    labels: Option<Vec<u32>>,
}

impl EmbeddedDataset {
    pub fn new(d: usize, vectors: Vec<f32>, labels: Option<Vec<u32>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("dataset dimension must be at least 1".into()));
        }
        if vectors.len() % d != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {d}",
                vectors.len()
            )));
        }
        let n = vectors.len() / d;
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
            }
        }
        Ok(Self {
            n,
            d,
            vectors,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.vectors.chunks_exact(self.d)
    }

    /// New dataset made of the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut vectors = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            vectors.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self {
            n: indices.len(),
            d: self.d,
            vectors,
            labels,
        }
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }
}

/// `K` codebooks of `m` codewords each, all of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    k: usize,
    m: usize,
    d: usize,
    codewords: Vec<f32>,
}

impl CodebookSet {
    pub fn new(k: usize, m: usize, d: usize, codewords: Vec<f32>) -> Result<Self> {
        if k == 0 || m == 0 || d == 0 {
            return Err(Error::Shape(format!("empty codebook shape {k}x{m}x{d}")));
        }
        if codewords.len() != k * m * d {
            return Err(Error::Shape(format!(
                "expected {k}x{m}x{d} = {} codeword values, got {}",
                k * m * d,
                codewords.len()
            )));
        }
        if codewords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite codeword entry".into()));
        }
        Ok(Self { k, m, d, codewords })
    }

    pub fn zeros(k: usize, m: usize, d: usize) -> Self {
        Self {
            k,
            m,
            d,
            codewords: vec![0.0; k * m * d],
        }
    }

    pub fn num_codebooks(&self) -> usize {
        self.k
    }

    pub fn codebook_size(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.codewords
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.codewords
    }

    pub fn codeword(&self, k: usize, j: usize) -> &[f32] {
        let start = (k * self.m + j) * self.d;
        &self.codewords[start..start + self.d]
    }

    pub fn codeword_mut(&mut self, k: usize, j: usize) -> &mut [f32] {
        let start = (k * self.m + j) * self.d;
        &mut self.codewords[start..start + self.d]
    }

    /// All `m` codewords of codebook `k`, row-major.
    pub fn codebook(&self, k: usize) -> &[f32] {
        let len = self.m * self.d;
        &self.codewords[k * len..(k + 1) * len]
    }

    pub(crate) fn codebook_mut(&mut self, k: usize) -> &mut [f32] {
        let len = self.m * self.d;
        &mut self.codewords[k * len..(k + 1) * len]
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.codewords.iter().all(|v| v.is_finite())
    }

    /// Sum of the codewords selected by `code`, accumulated in f64.
    pub fn reconstruct_into(&self, code: &[u16], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &j) in code.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.codeword(k, j as usize)) {
                *o += c as f64;
            }
        }
    }

    /// Codebooks reordered so that `order[i]` becomes codebook `i`.
    pub(crate) fn permuted(&self, order: &[usize]) -> Self {
        let mut codewords = Vec::with_capacity(self.codewords.len());
        for &k in order {
            codewords.extend_from_slice(self.codebook(k));
        }
        Self {
            codewords,
            ..*self
        }
    }
}

/// One row of `K` codeword indices per encoded vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n: usize,
    k: usize,
    codes: Vec<u16>,
}

impl CodeMatrix {
    pub fn new(n: usize, k: usize, codes: Vec<u16>, m: usize) -> Result<Self> {
        if codes.len() != n * k {
            return Err(Error::Shape(format!(
                "expected {n}x{k} codes, got {}",
                codes.len()
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= m) {
            return Err(Error::Validation(format!("code {bad} out of range for m={m}")));
        }
        Ok(Self { n, k, codes })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            codes: vec![0; n * k],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_codebooks(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.codes
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [u16] {
        &mut self.codes
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.codes[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [u16] {
        &mut self.codes[i * self.k..(i + 1) * self.k]
    }

    pub(crate) fn permuted_columns(&self, order: &[usize]) -> Self {
        let mut codes = Vec::with_capacity(self.codes.len());
        for row in self.codes.chunks_exact(self.k.max(1)) {
            codes.extend(order.iter().map(|&k| row[k]));
        }
        Self {
            codes,
            ..*self
        }
    }
}

/// f32 dot product with independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[inline]
pub(crate) fn sq_dist_f64(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x - y as f64;
            t * t
        })
        .sum()
}
