//! Residual k-means initialisation of the codebooks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::kmeans;
use crate::config::Config;
use crate::data::{CodeMatrix, CodebookSet, EmbeddedDataset};
use crate::error::{Error, Result};
use crate::prior::SubspaceMask;

/// Lloyd iterations per codebook.
pub const INIT_LLOYD_ITERS: usize = 20;

/// Runs `count` rounds of k-means on `data`, each on the residual left by the
/// previous rounds. Writes codebooks `first..first + count` and their code columns.
fn residual_chain(
    mut data: Vec<f32>,
    d: usize,
    first: usize,
    count: usize,
    books: &mut CodebookSet,
    codes: &mut CodeMatrix,
    rng: &mut ChaCha8Rng,
) {
    let m = books.codebook_size();
    for k in first..first + count {
        let km = kmeans(&data, d, m, INIT_LLOYD_ITERS, rng);
        for (i, (x, &a)) in data.chunks_exact_mut(d).zip(&km.assign).enumerate() {
            let c = &km.centroids[a as usize * d..(a as usize + 1) * d];
            for (v, &cv) in x.iter_mut().zip(c) {
                *v -= cv;
            }
            codes.row_mut(i)[k] = a;
        }
        books.codebook_mut(k).copy_from_slice(&km.centroids);
    }
}

fn check(ds: &EmbeddedDataset, cfg: &Config) -> Result<()> {
    cfg.validate()?;
    if ds.len() < cfg.m {
        return Err(Error::Domain(format!(
            "need at least m={} points to initialise codebooks, got {}",
            cfg.m,
            ds.len()
        )));
    }
    Ok(())
}

/// Codebook 0 is k-means on the data, codebook `k` is k-means on the residual
/// after subtracting the codewords chosen by codebooks `0..k`.
pub fn init_codebooks(ds: &EmbeddedDataset, cfg: &Config, seed: u64) -> Result<(CodebookSet, CodeMatrix)> {
    check(ds, cfg)?;
    let d = ds.dim();
    let mut books = CodebookSet::zeros(cfg.k, cfg.m, d);
    let mut codes = CodeMatrix::zeros(ds.len(), cfg.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    residual_chain(ds.vectors().to_vec(), d, 0, cfg.k, &mut books, &mut codes, &mut rng);
    Ok((books, codes))
}

/// Subspace-aware variant: codebooks `0..n_fast` are a residual chain on the
/// data restricted to the mask, the remaining codebooks a residual chain on
/// the complement.
pub fn init_codebooks_split(
    ds: &EmbeddedDataset,
    cfg: &Config,
    mask: &SubspaceMask,
    n_fast: usize,
    seed: u64,
) -> Result<(CodebookSet, CodeMatrix)> {
    check(ds, cfg)?;
    let d = ds.dim();
    if mask.len() != d {
        return Err(Error::Shape(format!("mask covers {} dimensions, data has {d}", mask.len())));
    }
    if n_fast > cfg.k {
        return Err(Error::Domain(format!("{n_fast} fast codebooks requested, K={}", cfg.k)));
    }
    let project = |keep: bool| -> Vec<f32> {
        ds.vectors()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.contains(i % d) == keep { v } else { 0.0 })
            .collect()
    };
    let mut books = CodebookSet::zeros(cfg.k, cfg.m, d);
    let mut codes = CodeMatrix::zeros(ds.len(), cfg.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    residual_chain(project(true), d, 0, n_fast, &mut books, &mut codes, &mut rng);
    residual_chain(project(false), d, n_fast, cfg.k - n_fast, &mut books, &mut codes, &mut rng);
    Ok((books, codes))
}
