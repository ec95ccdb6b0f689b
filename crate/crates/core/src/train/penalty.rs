//! Interleaving penalty between the high-variance subspace and its complement,
//! and extraction of the fast codebook set.

use crate::data::CodebookSet;
use crate::error::{Error, Result};
use crate::prior::SubspaceMask;

/// Codebooks whose codewords all live mostly inside the high-variance subspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastSet {
    bits: Vec<bool>,
}

impl FastSet {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Set over `k` codebooks containing the listed members.
    pub fn from_members(k: usize, members: &[usize]) -> Result<Self> {
        let mut bits = vec![false; k];
        for &i in members {
            if i >= k {
                return Err(Error::Domain(format!("codebook {i} out of range for K={k}")));
            }
            bits[i] = true;
        }
        Ok(Self { bits })
    }

    pub fn all(k: usize) -> Self {
        Self { bits: vec![true; k] }
    }

    pub fn none(k: usize) -> Self {
        Self { bits: vec![false; k] }
    }

    /// The first `count` of `k` codebooks.
    pub fn prefix(k: usize, count: usize) -> Self {
        Self {
            bits: (0..k).map(|i| i < count).collect(),
        }
    }

    /// Number of codebooks covered (`K`).
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Number of members.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

fn check_mask(books: &CodebookSet, mask: &SubspaceMask) -> Result<()> {
    if mask.len() != books.dim() {
        return Err(Error::Shape(format!(
            "mask covers {} dimensions, codebooks have {}",
            mask.len(),
            books.dim()
        )));
    }
    Ok(())
}

/// `(‖c∘ξ‖, ‖c∘(1−ξ)‖)`.
pub(crate) fn split_norms(c: &[f32], mask: &SubspaceMask) -> (f64, f64) {
    let (mut inside, mut outside) = (0.0f64, 0.0f64);
    for (&v, &b) in c.iter().zip(mask.bits()) {
        let v = v as f64;
        if b {
            inside += v * v;
        } else {
            outside += v * v;
        }
    }
    (inside.sqrt(), outside.sqrt())
}

/// `Σ_k Σ_j ‖c_{k,j}∘ξ‖·‖c_{k,j}∘(1−ξ)‖`.
pub fn icq_penalty(books: &CodebookSet, mask: &SubspaceMask) -> Result<f64> {
    check_mask(books, mask)?;
    Ok(books
        .as_slice()
        .chunks_exact(books.dim())
        .map(|c| {
            let (a, b) = split_norms(c, mask);
            a * b
        })
        .sum())
}

/// Gradient of [`icq_penalty`] with respect to every codeword entry, laid out
/// like the codewords. Where one side has zero norm its (sub)gradient is taken as zero.
pub fn icq_penalty_grad(books: &CodebookSet, mask: &SubspaceMask) -> Result<Vec<f64>> {
    check_mask(books, mask)?;
    let d = books.dim();
    let mut grad = vec![0.0; books.as_slice().len()];
    for (c, g) in books.as_slice().chunks_exact(d).zip(grad.chunks_exact_mut(d)) {
        let (a, b) = split_norms(c, mask);
        for ((gi, &v), &inside) in g.iter_mut().zip(c).zip(mask.bits()) {
            *gi = if inside {
                if a > 0.0 { b * v as f64 / a } else { 0.0 }
            } else if b > 0.0 {
                a * v as f64 / b
            } else {
                0.0
            };
        }
    }
    Ok(grad)
}

/// Shrinks each side of every codeword towards zero in proportion to the norm
/// of the other side, clamping at zero. This is a gradient step of size
/// `step` on the penalty that never overshoots through the origin.
pub(crate) fn shrink_interleaved(books: &mut CodebookSet, mask: &SubspaceMask, step: f64) {
    let d = books.dim();
    for c in books.as_mut_slice().chunks_exact_mut(d) {
        let (a, b) = split_norms(c, mask);
        if a == 0.0 || b == 0.0 {
            continue;
        }
        let fa = (1.0 - step * b / a).max(0.0);
        let a_new = a * fa;
        let fb = (1.0 - step * a_new / b).max(0.0);
        for (v, &inside) in c.iter_mut().zip(mask.bits()) {
            *v = (*v as f64 * if inside { fa } else { fb }) as f32;
        }
    }
}

/// Codebook `k` is fast iff every one of its codewords has strictly less norm
/// outside the subspace than inside it.
pub fn fast_set(books: &CodebookSet, mask: &SubspaceMask) -> Result<FastSet> {
    check_mask(books, mask)?;
    let d = books.dim();
    let bits = (0..books.num_codebooks())
        .map(|k| {
            books.codebook(k).chunks_exact(d).all(|c| {
                let (a, b) = split_norms(c, mask);
                b < a
            })
        })
        .collect();
    Ok(FastSet { bits })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn mask(bits: &[u8]) -> SubspaceMask {
        SubspaceMask::from_bits(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn penalty_examples() {
        let one = |v: Vec<f32>| CodebookSet::new(1, 1, 3, v).unwrap();
        assert_eq!(icq_penalty(&one(vec![1.0, 1.0, 0.0]), &mask(&[1, 0, 0])).unwrap(), 1.0);
        assert_eq!(icq_penalty(&one(vec![3.0, 4.0, 0.0]), &mask(&[1, 1, 0])).unwrap(), 0.0);
        let separated = CodebookSet::new(1, 2, 3, vec![2.0, 0.0, 0.0, 0.0, -1.0, 5.0]).unwrap();
        assert_eq!(icq_penalty(&separated, &mask(&[1, 0, 0])).unwrap(), 0.0);
        assert!(icq_penalty(&separated, &mask(&[1, 0])).is_err());
    }

    #[test]
    fn fast_set_examples() {
        let m = mask(&[1, 0]);
        let inside = CodebookSet::new(1, 2, 2, vec![1.0, 0.0, -2.0, 0.0]).unwrap();
        assert_eq!(fast_set(&inside, &m).unwrap().count(), 1);
        let tie = CodebookSet::new(1, 2, 2, vec![1.0, 0.0, 1.0, -1.0]).unwrap();
        assert_eq!(fast_set(&tie, &m).unwrap().count(), 0);
        let zero = CodebookSet::zeros(1, 2, 2);
        assert_eq!(fast_set(&zero, &m).unwrap().count(), 0);
    }

    #[test]
    fn fast_set_helpers() {
        let f = FastSet::from_members(4, &[2, 0]).unwrap();
        assert_eq!(f.members().collect::<Vec<_>>(), vec![0, 2]);
        assert!(FastSet::from_members(2, &[2]).is_err());
        assert_eq!(FastSet::prefix(3, 2).bits(), &[true, true, false]);
    }

    #[test]
    fn shrink_reduces_penalty_and_clamps() {
        let m = mask(&[1, 0]);
        let mut books = CodebookSet::new(1, 2, 2, vec![3.0, 1.0, 0.5, 2.0]).unwrap();
        let before = icq_penalty(&books, &m).unwrap();
        shrink_interleaved(&mut books, &m, 0.1);
        assert!(icq_penalty(&books, &m).unwrap() < before);
        shrink_interleaved(&mut books, &m, 100.0);
        assert_eq!(icq_penalty(&books, &m).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            values in prop::collection::vec(-2.0f32..2.0, 12),
            bits in prop::collection::vec(any::<bool>(), 4),
            idx in 0usize..12,
        ) {
            let m = SubspaceMask::from_bits(bits);
            let books = CodebookSet::new(1, 3, 4, values).unwrap();
            let g = icq_penalty_grad(&books, &m).unwrap()[idx];
            let (a, b) = split_norms(books.codeword(0, idx / 4), &m);
            prop_assume!(a > 1e-2 && b > 1e-2);
            // f64 finite differences on the codeword containing `idx`.
            let c: Vec<f64> = books.codeword(0, idx / 4).iter().map(|&v| v as f64).collect();
            let eval = |shift: f64| {
                let mut c = c.clone();
                c[idx % 4] += shift;
                let (mut a, mut b) = (0.0, 0.0);
                for (v, &inside) in c.iter().zip(m.bits()) {
                    if inside { a += v * v } else { b += v * v }
                }
                a.sqrt() * b.sqrt()
            };
            let h = 1e-5;
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            prop_assert!((g - fd).abs() / g.abs().max(fd.abs()).max(1.0) <= 1e-4);
        }
    }
}
