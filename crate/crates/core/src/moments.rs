//! Streaming per-dimension mean and variance across training batches.

use crate::error::{Error, Result};
use crate::prior::SubspaceMask;

/// Running estimate of the dataset mean `M` and population variance `Λ`,
/// refreshed one batch at a time.
///
/// Each batch contributes its own population mean and variance with weight
/// `1/b`. For equal-sized batches the result is exactly the population moments
/// of their concatenation; a short final batch is fed through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineMoments {
    mean: Vec<f64>,
    variance: Vec<f64>,
    batches: u64,
}

impl OnlineMoments {
    pub fn new(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            variance: vec![0.0; d],
            batches: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn batch_count(&self) -> u64 {
        self.batches
    }

    pub fn reset(&mut self) {
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.variance.iter_mut().for_each(|v| *v = 0.0);
        self.batches = 0;
    }

    /// Folds in a row-major batch of `width`-dimensional rows.
    pub fn update(&mut self, batch: &[f32], width: usize) -> Result<()> {
        let d = self.dim();
        if width != d {
            return Err(Error::Shape(format!("batch width {width}, moments track {d}")));
        }
        if batch.is_empty() {
            return Err(Error::Domain("cannot update moments with an empty batch".into()));
        }
        if batch.len() % d != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of width {d}", batch.len())));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("batch contains non-finite values".into()));
        }
        let rows = batch.len() / d;

        let mut batch_mean = vec![0.0f64; d];
        for row in batch.chunks_exact(d) {
            for (acc, &v) in batch_mean.iter_mut().zip(row) {
                *acc += v as f64;
            }
        }
        batch_mean.iter_mut().for_each(|v| *v /= rows as f64);
        let mut batch_var = vec![0.0f64; d];
        for row in batch.chunks_exact(d) {
            for ((acc, &v), &mu) in batch_var.iter_mut().zip(row).zip(&batch_mean) {
                let t = v as f64 - mu;
                *acc += t * t;
            }
        }
        batch_var.iter_mut().for_each(|v| *v /= rows as f64);

        self.batches += 1;
        let inv_b = 1.0 / self.batches as f64;
        for i in 0..d {
            let delta = batch_mean[i] - self.mean[i];
            let var = self.variance[i]
                + inv_b * (batch_var[i] - self.variance[i])
                + inv_b * (1.0 - inv_b) * delta * delta;
            self.variance[i] = var.max(0.0);
            self.mean[i] += inv_b * delta;
        }
        Ok(())
    }

    /// Search margin: `sigma_scale · Σ_{i ∉ ψ} Λ_i`.
    pub fn margin(&self, mask: &SubspaceMask, sigma_scale: f64) -> Result<f64> {
        if self.batches == 0 {
            return Err(Error::State("margin requested before any batch was observed".into()));
        }
        complement_margin(&self.variance, mask, sigma_scale)
    }
}

/// `sigma_scale · Σ_{i: ξ_i = 0} λ_i`.
pub fn complement_margin(lambdas: &[f64], mask: &SubspaceMask, sigma_scale: f64) -> Result<f64> {
    if mask.len() != lambdas.len() {
        return Err(Error::Shape(format!(
            "mask covers {} dimensions, variances {}",
            mask.len(),
            lambdas.len()
        )));
    }
    if !(sigma_scale >= 0.0) {
        return Err(Error::Domain(format!("sigma_scale must be nonnegative, got {sigma_scale}")));
    }
    let total: f64 = lambdas
        .iter()
        .zip(mask.bits())
        .filter(|(_, &inside)| !inside)
        .map(|(l, _)| l)
        .sum();
    Ok(if sigma_scale == 0.0 { 0.0 } else { sigma_scale * total })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn population(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn two_batches_match_concatenation() {
        let mut m = OnlineMoments::new(1);
        m.update(&[1.0, 3.0], 1).unwrap();
        assert_eq!((m.mean()[0], m.variance()[0]), (2.0, 1.0));
        m.update(&[5.0, 7.0], 1).unwrap();
        assert_eq!((m.mean()[0], m.variance()[0]), (4.0, 5.0));
        assert_eq!(population(&[1.0, 3.0, 5.0, 7.0]), (4.0, 5.0));
    }

    #[test]
    fn single_batch_is_exact() {
        let batch = [0.5f32, -1.0, 2.0, 4.0, 3.5, 0.0];
        let mut m = OnlineMoments::new(2);
        m.update(&batch, 2).unwrap();
        let col0: Vec<f64> = batch.iter().step_by(2).map(|&v| v as f64).collect();
        let (mu, var) = population(&col0);
        assert!((m.mean()[0] - mu).abs() < 1e-15);
        assert!((m.variance()[0] - var).abs() < 1e-15);
    }

    #[test]
    fn identical_batches_leave_variance_unchanged() {
        let batch = [1.0f32, 2.0, 6.0];
        let mut m = OnlineMoments::new(1);
        m.update(&batch, 1).unwrap();
        let before = m.variance()[0];
        m.update(&batch, 1).unwrap();
        assert_eq!(m.variance()[0], before);
    }

    #[test]
    fn reset_behaviour() {
        let batch = [1.0f32, 2.0, 6.0, 7.0];
        let mut fresh = OnlineMoments::new(2);
        fresh.update(&batch, 2).unwrap();

        let mut m = OnlineMoments::new(2);
        m.update(&[9.0, 9.0], 2).unwrap();
        m.reset();
        assert_eq!(m, OnlineMoments::new(2));
        m.reset();
        assert_eq!(m, OnlineMoments::new(2));
        m.update(&batch, 2).unwrap();
        assert_eq!(m, fresh);
    }

    #[test]
    fn update_errors() {
        let mut m = OnlineMoments::new(2);
        assert!(matches!(m.update(&[], 2), Err(Error::Domain(_))));
        assert!(matches!(m.update(&[1.0, 2.0, 3.0], 3), Err(Error::Shape(_))));
        assert!(matches!(m.update(&[1.0, 2.0, 3.0], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn margin_examples() {
        let mut m = OnlineMoments::new(3);
        let mask = SubspaceMask::from_bits(vec![true, false, false]);
        assert!(matches!(m.margin(&mask, 1.0), Err(Error::State(_))));
        // Variances 1, 2, 3 from a single batch.
        let a = [1.0f32, 2.0f32.sqrt(), 3.0f32.sqrt()];
        let batch: Vec<f32> = a.iter().chain(a.iter().map(|v| -v).collect::<Vec<_>>().iter()).copied().collect();
        m.update(&batch, 3).unwrap();
        assert!((m.margin(&mask, 1.0).unwrap() - 5.0).abs() < 1e-6);
        assert_eq!(m.margin(&SubspaceMask::all(3), 7.0).unwrap(), 0.0);
        assert_eq!(m.margin(&mask, 0.0).unwrap(), 0.0);
        assert_eq!(complement_margin(&[1.0, 2.0, 3.0], &mask, 1.0).unwrap(), 5.0);
    }

    proptest! {
        #[test]
        fn variance_never_negative(batches in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 1..12), 1..10)) {
            let mut m = OnlineMoments::new(1);
            for b in &batches {
                m.update(b, 1).unwrap();
                prop_assert!(m.variance()[0] >= 0.0);
            }
        }

        #[test]
        fn margin_monotone_in_complement_variance(
            lambdas in prop::collection::vec(0.0f64..10.0, 1..8),
            bump in 0.0f64..5.0,
            idx in 0usize..8,
            scale in 0.0f64..3.0,
        ) {
            let d = lambdas.len();
            let idx = idx % d;
            let bits: Vec<bool> = (0..d).map(|i| i % 2 == 0 && i != idx).collect();
            let mask = SubspaceMask::from_bits(bits);
            let before = complement_margin(&lambdas, &mask, scale).unwrap();
            let mut bumped = lambdas.clone();
            bumped[idx] += bump;
            let after = complement_margin(&bumped, &mask, scale).unwrap();
            prop_assert!(after >= before);
        }
    }
}
