//! Bi-modal prior over per-dimension variances.
//!
//! The prior mixes a zero-centred normal (the "redundant" mode) with a
//! negatively skewed skew-normal (the "informative" mode):
//!
//! ```text
//! p(λ) = π1·N(λ; 0, σ1) + π2·SN(λ; μ2, σ2, α2)
//! ```
//!
//! The loss is the negative log likelihood of all `d` variances plus a
//! robustness term `−log Σ_i π2·SN(λ_i)` that keeps the minor mode populated.
//! Everything is evaluated in log space: the skew-normal tail `Φ(α·z)` underflows
//! for variances a few scales above `μ2`, and those are exactly the dimensions
//! that must keep pulling `μ2` upward.

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Log-density floor; only reached when a density is not representable at all
/// (for example `λ²` overflowing).
const LOG_FLOOR: f64 = -1e300;

/// Below this argument `log Φ` switches from `erfc` to its asymptotic series.
const ASYMPTOTIC_CUTOFF: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu2: f64,
    pub alpha2: f64,
    pub pi1: f64,
    pub pi2: f64,
}

impl PriorParams {
    pub fn new(sigma1: f64, sigma2: f64, mu2: f64, alpha2: f64, pi1: f64, pi2: f64) -> Result<Self> {
        let p = Self {
            sigma1,
            sigma2,
            mu2,
            alpha2,
            pi1,
            pi2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Starting point for training: `σ1 = 0.1`, `σ2 = 1`, `μ2` at the 90th
    /// percentile of the initial variances, fixed parameters from `cfg`.
    pub fn initial(lambdas: &[f64], cfg: &crate::Config) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Domain("no variances to initialise the prior".into()));
        }
        Self::new(0.1, 1.0, percentile(lambdas, 0.9), cfg.alpha2, cfg.pi1, cfg.pi2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(Error::Domain(format!("sigma1 must be positive, got {}", self.sigma1)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !self.mu2.is_finite() {
            return Err(Error::Domain("mu2 must be finite".into()));
        }
        if !(self.alpha2 < 0.0) {
            return Err(Error::Domain(format!("alpha2 must be negative, got {}", self.alpha2)));
        }
        if (self.pi1 + self.pi2 - 1.0).abs() > 1e-9 || !(self.pi1 > self.pi2 && self.pi2 > 0.0) {
            return Err(Error::Domain(format!(
                "mixture weights must satisfy pi1 > pi2 > 0 and sum to 1, got {} and {}",
                self.pi1, self.pi2
            )));
        }
        Ok(())
    }
}

/// Linear-interpolated percentile, `q` in `[0, 1]`.
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `log Φ(x)`, accurate far into the lower tail.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x < ASYMPTOTIC_CUTOFF {
        -0.5 * x * x - (-x).ln() - HALF_LN_2PI + tail_series(x).ln()
    } else if x > 5.0 {
        (-0.5 * libm::erfc(x / SQRT_2)).ln_1p()
    } else {
        (0.5 * libm::erfc(-x / SQRT_2)).ln()
    }
}

/// `φ(x) / Φ(x)`, the derivative of `log Φ`.
fn inverse_mills(x: f64) -> f64 {
    if x < ASYMPTOTIC_CUTOFF {
        -x / tail_series(x)
    } else {
        (-0.5 * x * x - HALF_LN_2PI - log_std_normal_cdf(x)).exp()
    }
}

// Φ(x)·(−x)/φ(x) for x → −∞.
fn tail_series(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("scale must be positive, got {sigma}")))
    }
}

pub fn log_normal_pdf(x: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let z = x / sigma;
    Ok(-0.5 * z * z - sigma.ln() - HALF_LN_2PI)
}

/// Zero-mean normal density with scale `sigma`.
pub fn normal_pdf(x: f64, sigma: f64) -> Result<f64> {
    Ok(log_normal_pdf(x, sigma)?.exp())
}

pub fn log_skew_normal_pdf(x: f64, mu: f64, sigma: f64, alpha: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let z = (x - mu) / sigma;
    Ok(LN_2 - sigma.ln() - 0.5 * z * z - HALF_LN_2PI + log_std_normal_cdf(alpha * z))
}

/// Azzalini skew-normal density `(2/σ)·φ(z)·Φ(α·z)` with `z = (x − μ)/σ`.
pub fn skew_normal_pdf(x: f64, mu: f64, sigma: f64, alpha: f64) -> Result<f64> {
    Ok(log_skew_normal_pdf(x, mu, sigma, alpha)?.exp())
}

/// Per-dimension pieces shared by the loss, its gradient and the mask.
struct Terms {
    /// `log π1·N(λ)`
    major: f64,
    /// `log π2·SN(λ)`
    minor: f64,
    d_major_dlambda: f64,
    d_major_dsigma1: f64,
    /// `∂ log SN / ∂z`
    d_minor_dz: f64,
    z: f64,
}

fn terms(lambda: f64, p: &PriorParams) -> Terms {
    let s1 = p.sigma1;
    let s2 = p.sigma2;
    let major = p.pi1.ln() - 0.5 * (lambda / s1).powi(2) - s1.ln() - HALF_LN_2PI;
    let z = (lambda - p.mu2) / s2;
    let minor =
        p.pi2.ln() + LN_2 - s2.ln() - 0.5 * z * z - HALF_LN_2PI + log_std_normal_cdf(p.alpha2 * z);
    Terms {
        major,
        minor,
        d_major_dlambda: -lambda / (s1 * s1),
        d_major_dsigma1: -1.0 / s1 + lambda * lambda / (s1 * s1 * s1),
        d_minor_dz: -z + p.alpha2 * inverse_mills(p.alpha2 * z),
        z,
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn floored(v: f64) -> f64 {
    if v.is_nan() {
        LOG_FLOOR
    } else {
        v.max(LOG_FLOOR)
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Domain("prior needs at least one variance".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Domain(format!("variances must be finite and nonnegative, got {bad}")));
    }
    Ok(())
}

/// Gradient of [`prior_nll`] with respect to every variance and to the
/// trainable parameters. `alpha2`, `pi1` and `pi2` are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGradient {
    pub lambdas: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu2: f64,
}

#[derive(Clone, Copy)]
struct Parts {
    mixture: bool,
    robustness: bool,
}

fn evaluate(lambdas: &[f64], p: &PriorParams, parts: Parts, want_grad: bool) -> Result<(f64, Option<PriorGradient>)> {
    check_lambdas(lambdas)?;
    p.validate()?;
    let all: Vec<Terms> = lambdas.iter().map(|&l| terms(l, p)).collect();

    let mut value = 0.0;
    let mut grad = PriorGradient {
        lambdas: vec![0.0; lambdas.len()],
        sigma1: 0.0,
        sigma2: 0.0,
        mu2: 0.0,
    };
    let s2 = p.sigma2;

    // Accumulates −weight · ∂(log π2·SN_i).
    let minor_grad = |g: &mut PriorGradient, i: usize, t: &Terms, weight: f64| {
        if weight == 0.0 || !t.minor.is_finite() {
            return;
        }
        g.lambdas[i] -= weight * t.d_minor_dz / s2;
        g.mu2 -= weight * (-t.d_minor_dz / s2);
        g.sigma2 -= weight * (-1.0 / s2 - t.d_minor_dz * t.z / s2);
    };

    if parts.mixture {
        for (i, t) in all.iter().enumerate() {
            let log_mix = log_add_exp(t.major, t.minor);
            let clamped = floored(log_mix);
            value -= clamped;
            if !want_grad || clamped != log_mix {
                continue;
            }
            let w_major = (t.major - log_mix).exp();
            let w_minor = (t.minor - log_mix).exp();
            if w_major > 0.0 {
                grad.lambdas[i] -= w_major * t.d_major_dlambda;
                grad.sigma1 -= w_major * t.d_major_dsigma1;
            }
            minor_grad(&mut grad, i, t, w_minor);
        }
    }

    if parts.robustness {
        let top = all.iter().map(|t| t.minor).fold(f64::NEG_INFINITY, f64::max);
        let log_sum = if top == f64::NEG_INFINITY {
            top
        } else {
            top + all.iter().map(|t| (t.minor - top).exp()).sum::<f64>().ln()
        };
        let clamped = floored(log_sum);
        value -= clamped;
        if want_grad && clamped == log_sum {
            for (i, t) in all.iter().enumerate() {
                minor_grad(&mut grad, i, t, (t.minor - log_sum).exp());
            }
        }
    }

    Ok((value, want_grad.then_some(grad)))
}

const FULL: Parts = Parts {
    mixture: true,
    robustness: true,
};
const ROBUST_ONLY: Parts = Parts {
    mixture: false,
    robustness: true,
};

/// `−Σ_i log(π1·N(λ_i) + π2·SN(λ_i)) − log Σ_i π2·SN(λ_i)`.
pub fn prior_nll(lambdas: &[f64], params: &PriorParams) -> Result<f64> {
    Ok(evaluate(lambdas, params, FULL, false)?.0)
}

pub fn prior_grad(lambdas: &[f64], params: &PriorParams) -> Result<PriorGradient> {
    Ok(evaluate(lambdas, params, FULL, true)?.1.expect("gradient requested"))
}

/// Loss value and gradient in one pass.
pub fn prior_nll_and_grad(lambdas: &[f64], params: &PriorParams) -> Result<(f64, PriorGradient)> {
    let (v, g) = evaluate(lambdas, params, FULL, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// The robustness term `−log Σ_i π2·SN(λ_i)` on its own.
pub fn robustness_nll(lambdas: &[f64], params: &PriorParams) -> Result<f64> {
    Ok(evaluate(lambdas, params, ROBUST_ONLY, false)?.0)
}

pub fn robustness_grad(lambdas: &[f64], params: &PriorParams) -> Result<PriorGradient> {
    Ok(evaluate(lambdas, params, ROBUST_ONLY, true)?.1.expect("gradient requested"))
}

/// 0/1 mask over dimensions; ones span the high-variance subspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubspaceMask {
    bits: Vec<bool>,
}

impl SubspaceMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(d: usize) -> Self {
        Self { bits: vec![true; d] }
    }

    pub fn none(d: usize) -> Self {
        Self { bits: vec![false; d] }
    }

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

    /// Number of selected dimensions.
    pub fn dim_psi(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// `ξ_i = 1` iff `π2·SN(λ_i) > π1·N(λ_i)`; ties go to the complement.
pub fn subspace_mask(lambdas: &[f64], params: &PriorParams) -> Result<SubspaceMask> {
    subspace_mask_capped(lambdas, params, None)
}

/// As [`subspace_mask`], keeping at most `cap` dimensions (those where the
/// minor mode wins by the widest log margin; lower index on equal margins).
pub fn subspace_mask_capped(lambdas: &[f64], params: &PriorParams, cap: Option<usize>) -> Result<SubspaceMask> {
    check_lambdas(lambdas)?;
    params.validate()?;
    let margins: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let t = terms(l, params);
            t.minor - t.major
        })
        .collect();
    let mut bits: Vec<bool> = margins.iter().map(|&m| m > 0.0).collect();
    if let Some(cap) = cap {
        let mut chosen: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
        if chosen.len() > cap {
            chosen.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
            for &i in &chosen[cap..] {
                bits[i] = false;
            }
        }
    }
    Ok(SubspaceMask { bits })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn params(sigma1: f64, sigma2: f64, mu2: f64) -> PriorParams {
        PriorParams::new(sigma1, sigma2, mu2, -10.0, 0.9, 0.1).unwrap()
    }

    #[test]
    fn normal_pdf_values() {
        assert!((normal_pdf(0.0, 1.0).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        assert!((normal_pdf(0.0, 2.0).unwrap() - 0.199_471_140_2).abs() < 1e-10);
        // exp(-1/2)/sqrt(2π) evaluated independently
        let oracle = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((normal_pdf(1.0, 1.0).unwrap() - oracle).abs() < 1e-15);
        assert!((normal_pdf(1.0, 1.0).unwrap() - 0.241_970_724_5).abs() < 1e-10);
        assert!(normal_pdf(0.0, 0.0).is_err());
        assert!(normal_pdf(0.0, -1.0).is_err());
    }

    #[test]
    fn skew_normal_pdf_values() {
        for alpha in [-10.0, -1.0, 0.0, 3.0] {
            let v = skew_normal_pdf(2.5, 2.5, 1.0, alpha).unwrap();
            assert!((v - 0.398_942_280_4).abs() < 1e-10);
        }
        for x in [-3.0, -0.5, 0.0, 1.7, 4.0] {
            let a = skew_normal_pdf(x, 0.0, 1.0, 0.0).unwrap();
            let b = normal_pdf(x, 1.0).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        // 2·φ(1)·Φ(−10); Φ(−10) = 7.619853024160526e-24 (tabulated, high precision).
        let phi1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
        let oracle = 2.0 * phi1 * 7.619_853_024_160_526e-24;
        let v = skew_normal_pdf(1.0, 0.0, 1.0, -10.0).unwrap();
        assert!((v - oracle).abs() / oracle < 1e-10, "{v} vs {oracle}");
        assert!((v - 3.69e-24).abs() < 0.01e-24);
        assert!(skew_normal_pdf(0.0, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn log_cdf_is_continuous_across_branches() {
        for &x in &[ASYMPTOTIC_CUTOFF, 5.0] {
            let lo = log_std_normal_cdf(x - 1e-9);
            let hi = log_std_normal_cdf(x + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * lo.abs().max(1e-12), "{x}: {lo} {hi}");
        }
        assert!(log_std_normal_cdf(-1e6).is_finite());
        assert!((log_std_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nll_single_dimension_example() {
        let p = params(1.0, 1.0, 5.0);
        let sn0 = skew_normal_pdf(0.0, 5.0, 1.0, -10.0).unwrap();
        let first = -(0.9 * normal_pdf(0.0, 1.0).unwrap() + 0.1 * sn0).ln();
        assert!((first - 1.0243).abs() < 1e-4);
        let expected = first - (0.1 * sn0).ln();
        let got = prior_nll(&[0.0], &p).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn nll_drops_as_lambda_approaches_minor_mode() {
        let p = params(0.1, 1.0, 5.0);
        let far = prior_nll(&[0.01, 2.0], &p).unwrap();
        let near = prior_nll(&[0.01, 4.5], &p).unwrap();
        assert!(near < far);
    }

    #[test]
    fn nll_rejects_empty_and_negative() {
        let p = params(1.0, 1.0, 5.0);
        assert!(matches!(prior_nll(&[], &p), Err(Error::Domain(_))));
        assert!(prior_nll(&[-1.0], &p).is_err());
    }

    #[test]
    fn gradient_vanishes_at_boundary_minimum() {
        // The normal mode dominates at λ=0 and its slope is −λ/σ1² = 0 there; the second
        // dimension sits on the minor mode so the robustness weight on λ_0 is negligible.
        let p = params(0.5, 0.5, 20.0);
        let g = prior_grad(&[0.0, 20.0], &p).unwrap();
        assert!(g.lambdas[0].abs() < 1e-8, "{}", g.lambdas[0]);
    }

    #[test]
    fn mask_example() {
        let p = params(0.1, 1.0, 5.0);
        let m = subspace_mask(&[0.01, 5.0], &p).unwrap();
        assert_eq!(m.bits(), &[false, true]);
        assert_eq!(m.dim_psi(), 1);
        let zeros = subspace_mask(&[0.0; 6], &p).unwrap();
        assert_eq!(zeros.dim_psi(), 0);
    }

    #[test]
    fn mask_tie_goes_to_complement() {
        // Find λ where both weighted densities agree: bisect the log margin.
        let p = params(1.0, 1.0, 3.0);
        let margin = |l: f64| {
            let t = terms(l, &p);
            t.minor - t.major
        };
        let (mut lo, mut hi) = (0.0, 3.0);
        assert!(margin(lo) < 0.0 && margin(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if margin(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // `lo` is the largest representable λ with margin ≤ 0.
        assert!(margin(lo) <= 0.0);
        assert!(!subspace_mask(&[lo], &p).unwrap().contains(0));
        assert!(subspace_mask(&[hi], &p).unwrap().contains(0));
    }

    #[test]
    fn mask_cap_keeps_strongest() {
        let p = params(0.1, 2.0, 8.0);
        let l = [0.01, 7.0, 8.0, 0.02, 6.0];
        assert_eq!(subspace_mask(&l, &p).unwrap().dim_psi(), 3);
        let capped = subspace_mask_capped(&l, &p, Some(1)).unwrap();
        assert_eq!(capped.dim_psi(), 1);
        assert!(capped.contains(2) || capped.contains(1));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!((percentile(&[0.0, 10.0], 0.9) - 9.0).abs() < 1e-12);
    }
}
