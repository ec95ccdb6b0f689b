//! Discrete code assignment: greedy residual encoding and iterated
//! conditional modes (ICM).

use rayon::prelude::*;

use super::kmeans::{nearest, norms_of};
use crate::data::{dot_f32, sq_dist_f64, CodeMatrix, CodebookSet, EmbeddedDataset};
use crate::error::{Error, Result};

/// Upper bound on ICM sweeps per call.
pub const MAX_ICM_SWEEPS: usize = 10;

fn check_shapes(ds: &EmbeddedDataset, books: &CodebookSet, codes: Option<&CodeMatrix>) -> Result<()> {
    if ds.dim() != books.dim() {
        return Err(Error::Shape(format!(
            "dataset has dimension {}, codebooks {}",
            ds.dim(),
            books.dim()
        )));
    }
    if let Some(codes) = codes {
        if codes.len() != ds.len() || codes.num_codebooks() != books.num_codebooks() {
            return Err(Error::Shape(format!(
                "codes are {}x{}, expected {}x{}",
                codes.len(),
                codes.num_codebooks(),
                ds.len(),
                books.num_codebooks()
            )));
        }
        let m = books.codebook_size();
        if codes.as_slice().iter().any(|&c| c as usize >= m) {
            return Err(Error::Validation(format!("code out of range for m={m}")));
        }
    }
    Ok(())
}

fn point_loss(x: &[f32], code: &[u16], books: &CodebookSet, recon: &mut [f64]) -> f64 {
    books.reconstruct_into(code, recon);
    let mut s = 0.0;
    for (&r, &v) in recon.iter().zip(x) {
        let t = v as f64 - r;
        s += t * t;
    }
    s
}

/// `(1/n)·Σ_i ‖x_i − Σ_k c_{k, codes[i,k]}‖²`; zero for an empty dataset.
pub fn quantization_loss(ds: &EmbeddedDataset, books: &CodebookSet, codes: &CodeMatrix) -> Result<f64> {
    check_shapes(ds, books, Some(codes))?;
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut recon = vec![0.0; ds.dim()];
    let total: f64 = ds
        .rows()
        .enumerate()
        .map(|(i, x)| point_loss(x, codes.row(i), books, &mut recon))
        .sum();
    Ok(total / ds.len() as f64)
}

struct Scratch {
    recon: Vec<f64>,
    target: Vec<f64>,
    target32: Vec<f32>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            recon: vec![0.0; d],
            target: vec![0.0; d],
            target32: vec![0.0; d],
        }
    }
}

/// One ICM pass over the codebooks for a single point. A candidate found by
/// the fast f32 scan only replaces the current codeword if it is strictly
/// better in f64.
fn icm_pass(x: &[f32], books: &CodebookSet, norms: &[f32], code: &mut [u16], s: &mut Scratch) {
    let m = books.codebook_size();
    books.reconstruct_into(code, &mut s.recon);
    for k in 0..code.len() {
        let cur = code[k] as usize;
        let c_cur = books.codeword(k, cur);
        for i in 0..x.len() {
            let t = x[i] as f64 - s.recon[i] + c_cur[i] as f64;
            s.target[i] = t;
            s.target32[i] = t as f32;
        }
        let best = nearest(&s.target32, books.codebook(k), &norms[k * m..(k + 1) * m]);
        if best == cur {
            continue;
        }
        let c_best = books.codeword(k, best);
        if sq_dist_f64(&s.target, c_best) < sq_dist_f64(&s.target, c_cur) {
            for i in 0..x.len() {
                s.recon[i] += c_best[i] as f64 - c_cur[i] as f64;
            }
            code[k] = best as u16;
        }
    }
}

/// ICM from the given codes, at most `max_sweeps` sweeps, stopping early
/// when a sweep changes nothing. Returns the new codes and the loss trace
/// (`trace[0]` is the starting loss, one entry per sweep after it).
///
/// A point whose code would end a sweep with a higher loss (possible only
/// through rounding) keeps its previous code, so every point's loss and the
/// total never increase.
pub fn assign_codes_traced(
    ds: &EmbeddedDataset,
    books: &CodebookSet,
    codes: &CodeMatrix,
    max_sweeps: usize,
) -> Result<(CodeMatrix, Vec<f64>)> {
    check_shapes(ds, books, Some(codes))?;
    let k = books.num_codebooks();
    let d = ds.dim();
    let n = ds.len();
    let mut out = codes.clone();
    if n == 0 {
        return Ok((out, vec![0.0]));
    }
    let norms = norms_of(books.as_slice(), d);
    let mut losses: Vec<f64> = ds
        .vectors()
        .par_chunks_exact(d)
        .zip(out.as_slice().par_chunks_exact(k))
        .map_init(|| vec![0.0; d], |recon, (x, code)| point_loss(x, code, books, recon))
        .collect();
    let mut trace = vec![losses.iter().sum::<f64>() / n as f64];

    for _ in 0..max_sweeps {
        let changed: usize = ds
            .vectors()
            .par_chunks_exact(d)
            .zip(out.as_mut_slice().par_chunks_exact_mut(k))
            .zip(losses.par_iter_mut())
            .map_init(
                || (Scratch::new(d), vec![0u16; k]),
                |(s, old), ((x, code), loss)| {
                    old.copy_from_slice(code);
                    icm_pass(x, books, &norms, code, s);
                    if code == old.as_slice() {
                        return 0;
                    }
                    let new_loss = point_loss(x, code, books, &mut s.recon);
                    if new_loss > *loss {
                        code.copy_from_slice(old);
                        return 0;
                    }
                    *loss = new_loss;
                    1
                },
            )
            .sum();
        trace.push(losses.iter().sum::<f64>() / n as f64);
        if changed == 0 {
            break;
        }
    }
    Ok((out, trace))
}

/// ICM refinement of existing codes, at most [`MAX_ICM_SWEEPS`] sweeps.
pub fn assign_codes(ds: &EmbeddedDataset, books: &CodebookSet, codes: &CodeMatrix) -> Result<CodeMatrix> {
    Ok(assign_codes_traced(ds, books, codes, MAX_ICM_SWEEPS)?.0)
}

/// First-codebook candidates tried by [`encode`].
pub const ENCODE_STARTS: usize = 4;

/// Greedy residual encoding with codebook 0 fixed to `first`.
fn greedy_from(x: &[f32], books: &CodebookSet, norms: &[f32], first: usize, code: &mut [u16], resid: &mut [f32]) {
    let m = books.codebook_size();
    resid.copy_from_slice(x);
    for (kk, slot) in code.iter_mut().enumerate() {
        let j = if kk == 0 {
            first
        } else {
            nearest(resid, books.codebook(kk), &norms[kk * m..(kk + 1) * m])
        };
        *slot = j as u16;
        for (r, &c) in resid.iter_mut().zip(books.codeword(kk, j)) {
            *r -= c;
        }
    }
}

/// Codes from scratch. For each point, greedy residual encoding is started
/// from each of the `starts` codewords of codebook 0 closest to it, refined
/// by ICM, and the best result is kept.
pub fn encode_with_starts(ds: &EmbeddedDataset, books: &CodebookSet, starts: usize) -> Result<CodeMatrix> {
    check_shapes(ds, books, None)?;
    if starts == 0 {
        return Err(Error::Domain("encoding needs at least one start".into()));
    }
    let (k, m, d) = (books.num_codebooks(), books.codebook_size(), books.dim());
    let norms = norms_of(books.as_slice(), d);
    let starts = starts.min(m);
    let mut codes = CodeMatrix::zeros(ds.len(), k);
    ds.vectors()
        .par_chunks_exact(d)
        .zip(codes.as_mut_slice().par_chunks_exact_mut(k))
        .for_each_init(
            || (Scratch::new(d), vec![0.0f32; d], vec![0u16; k], vec![0usize; m]),
            |(s, resid, trial, order), (x, code)| {
                let first_scores: Vec<f32> = books
                    .codebook(0)
                    .chunks_exact(d)
                    .zip(&norms[..m])
                    .map(|(c, &nrm)| nrm - 2.0 * dot_f32(x, c))
                    .collect();
                order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
                order.sort_by(|&a, &b| first_scores[a].total_cmp(&first_scores[b]).then(a.cmp(&b)));
                let mut best = f64::INFINITY;
                for &first in &order[..starts] {
                    greedy_from(x, books, &norms, first, trial, resid);
                    for _ in 0..MAX_ICM_SWEEPS {
                        let before = point_loss(x, trial, books, &mut s.recon);
                        let snapshot = trial.to_vec();
                        icm_pass(x, books, &norms, trial, s);
                        if trial == snapshot.as_slice() {
                            break;
                        }
                        if point_loss(x, trial, books, &mut s.recon) > before {
                            trial.copy_from_slice(&snapshot);
                            break;
                        }
                    }
                    let loss = point_loss(x, trial, books, &mut s.recon);
                    if loss < best {
                        best = loss;
                        code.copy_from_slice(trial);
                    }
                }
            },
        );
    Ok(codes)
}

/// [`encode_with_starts`] with [`ENCODE_STARTS`] starts.
pub fn encode(ds: &EmbeddedDataset, books: &CodebookSet) -> Result<CodeMatrix> {
    encode_with_starts(ds, books, ENCODE_STARTS)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn naive_loss(ds: &EmbeddedDataset, books: &CodebookSet, codes: &CodeMatrix) -> f64 {
        let mut total = 0.0;
        for i in 0..ds.len() {
            for j in 0..ds.dim() {
                let mut r = 0.0f64;
                for k in 0..books.num_codebooks() {
                    r += books.codeword(k, codes.row(i)[k] as usize)[j] as f64;
                }
                total += (ds.row(i)[j] as f64 - r).powi(2);
            }
        }
        total / ds.len() as f64
    }

    #[test]
    fn codeword_sums_have_zero_loss() {
        let books = CodebookSet::new(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, -1.0, 0.5]).unwrap();
        let codes = CodeMatrix::new(2, 2, vec![0, 1, 1, 0], 2).unwrap();
        let ds = EmbeddedDataset::new(2, vec![0.0, 0.5, 2.0, 3.0], None).unwrap();
        assert_eq!(quantization_loss(&ds, &books, &codes).unwrap(), 0.0);
    }

    #[test]
    fn single_mean_codeword_gives_total_variance() {
        let ds = EmbeddedDataset::new(2, vec![1.0, 2.0, 3.0, 6.0, 5.0, 1.0], None).unwrap();
        let books = CodebookSet::new(1, 1, 2, vec![3.0, 3.0]).unwrap();
        let codes = CodeMatrix::zeros(3, 1);
        let expected = ((4.0 + 1.0) + (0.0 + 9.0) + (4.0 + 4.0)) / 3.0;
        assert!((quantization_loss(&ds, &books, &codes).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let ds = EmbeddedDataset::new(2, vec![1.0, 2.0], None).unwrap();
        let books = CodebookSet::zeros(1, 2, 3);
        assert!(matches!(
            quantization_loss(&ds, &books, &CodeMatrix::zeros(1, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_codebook_is_nearest_assignment() {
        let books = CodebookSet::new(1, 3, 1, vec![0.0, 5.0, 10.0]).unwrap();
        let ds = EmbeddedDataset::new(1, vec![9.0, 1.0, 4.0, 6.0], None).unwrap();
        let codes = assign_codes(&ds, &books, &CodeMatrix::zeros(4, 1)).unwrap();
        assert_eq!(codes.as_slice(), &[2, 0, 1, 1]);
        assert_eq!(encode(&ds, &books).unwrap(), codes);
    }

    #[test]
    fn more_starts_never_hurt() {
        let books = CodebookSet::new(2, 3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.5, 0.5, 2.0, -1.0, 0.0, 0.0]).unwrap();
        let ds = EmbeddedDataset::new(2, vec![1.5, 0.5, -0.2, 2.0, 3.0, -1.0, 0.0, 0.1], None).unwrap();
        let one = quantization_loss(&ds, &books, &encode_with_starts(&ds, &books, 1).unwrap()).unwrap();
        let all = quantization_loss(&ds, &books, &encode_with_starts(&ds, &books, 3).unwrap()).unwrap();
        assert!(all <= one);
        assert!(encode_with_starts(&ds, &books, 0).is_err());
    }

    fn small_instance() -> impl Strategy<Value = (EmbeddedDataset, CodebookSet, CodeMatrix)> {
        (1usize..3, 1usize..5, 1usize..4, 1usize..9).prop_flat_map(|(k, m, d, n)| {
            (
                prop::collection::vec(-3.0f32..3.0, n * d),
                prop::collection::vec(-2.0f32..2.0, k * m * d),
                prop::collection::vec(0u16..m as u16, n * k),
            )
                .prop_map(move |(x, c, codes)| {
                    (
                        EmbeddedDataset::new(d, x, None).unwrap(),
                        CodebookSet::new(k, m, d, c).unwrap(),
                        CodeMatrix::new(n, k, codes, m).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn loss_matches_naive_loop((ds, books, codes) in small_instance()) {
            let fast = quantization_loss(&ds, &books, &codes).unwrap();
            prop_assert!((fast - naive_loss(&ds, &books, &codes)).abs() < 1e-6);
        }

        #[test]
        fn icm_never_increases_loss((ds, books, codes) in small_instance()) {
            let (after, trace) = assign_codes_traced(&ds, &books, &codes, MAX_ICM_SWEEPS).unwrap();
            prop_assert_eq!(trace[0], quantization_loss(&ds, &books, &codes).unwrap());
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert_eq!(*trace.last().unwrap(), quantization_loss(&ds, &books, &after).unwrap());
        }
    }
}
