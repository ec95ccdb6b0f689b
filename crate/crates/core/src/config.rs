//! Run configuration shared by training, persistence and the CLI.

use std::fmt;

use crate::error::{Error, Result};

/// Largest supported codebook size; codes are stored as `u16`.
pub const MAX_CODEBOOK_SIZE: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Number of codebooks (`K`).
    pub k: usize,
    /// Codewords per codebook (`m`).
    pub m: usize,
    /// Weight of the variance-prior loss.
    pub gamma1: f64,
    /// Weight of the interleaving (orthogonality) penalty.
    pub gamma2: f64,
    /// Mixture weight of the zero-centered normal mode.
    pub pi1: f64,
    /// Mixture weight of the skew-normal mode.
    pub pi2: f64,
    /// Fixed skewness of the skew-normal mode.
    pub alpha2: f64,
    /// Multiplier applied to the complement-subspace variance to obtain the search margin.
    pub sigma_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decayed with a cosine schedule over all steps.
    pub learning_rate: f64,
    pub seed: u64,
    /// Number of codebooks initialised inside the high-variance subspace.
    pub fast_quantizers: usize,
    /// Optional upper bound on the number of high-variance dimensions.
    pub psi_cap: Option<usize>,
    /// Weight of the classification loss when a linear embedder is trained.
    pub embed_weight: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self::new(16, 256)
    }
}

impl Config {
    pub fn new(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            gamma1: 0.1,
            gamma2: 1.0,
            pi1: 0.9,
            pi2: 0.1,
            alpha2: -10.0,
            sigma_scale: 1.0,
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-2,
            seed: 0,
            fast_quantizers: Self::default_fast_quantizers(k),
            psi_cap: None,
            embed_weight: 1.0,
        }
    }

    /// A quarter of the codebooks, at least one.
    pub fn default_fast_quantizers(k: usize) -> usize {
        (k / 4).max(1).min(k)
    }

    /// Code length in bits, `K * log2(m)`.
    pub fn code_length_bits(&self) -> f64 {
        self.k as f64 * (self.m as f64).log2()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.k == 0 {
            return fail("K must be at least 1".into());
        }
        if self.m < 2 || self.m > MAX_CODEBOOK_SIZE {
            return fail(format!("m must be in [2, {MAX_CODEBOOK_SIZE}], got {}", self.m));
        }
        if !(self.gamma1 >= 0.0 && self.gamma1.is_finite()) {
            return fail(format!("gamma1 must be a nonnegative finite real, got {}", self.gamma1));
        }
        if !(self.gamma2 >= 0.0 && self.gamma2.is_finite()) {
            return fail(format!("gamma2 must be a nonnegative finite real, got {}", self.gamma2));
        }
        if (self.pi1 + self.pi2 - 1.0).abs() > 1e-9 {
            return fail(format!("pi1 + pi2 must equal 1, got {}", self.pi1 + self.pi2));
        }
        if !(self.pi1 > self.pi2 && self.pi2 > 0.0) {
            return fail(format!("require pi1 > pi2 > 0, got pi1={} pi2={}", self.pi1, self.pi2));
        }
        if !(self.alpha2 < 0.0 && self.alpha2.is_finite()) {
            return fail(format!("alpha2 must be negative, got {}", self.alpha2));
        }
        if !(self.sigma_scale >= 0.0) || self.sigma_scale.is_nan() {
            return fail(format!("sigma_scale must be nonnegative, got {}", self.sigma_scale));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.fast_quantizers > self.k {
            return fail(format!(
                "fast_quantizers ({}) exceeds K ({})",
                self.fast_quantizers, self.k
            ));
        }
        if self.psi_cap == Some(0) {
            return fail("psi_cap must be positive when set".into());
        }
        if !(self.embed_weight >= 0.0 && self.embed_weight.is_finite()) {
            return fail(format!("embed_weight must be nonnegative, got {}", self.embed_weight));
        }
        Ok(())
    }
}

/// `key=value` pairs, one space apart, in field order.
impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "K={} m={} gamma1={} gamma2={} pi1={} pi2={} alpha2={} sigma_scale={} epochs={} \
             batch_size={} learning_rate={} seed={} fast_quantizers={} psi_cap={} embed_weight={}",
            self.k,
            self.m,
            self.gamma1,
            self.gamma2,
            self.pi1,
            self.pi2,
            self.alpha2,
            self.sigma_scale,
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.seed,
            self.fast_quantizers,
            self.psi_cap.map_or_else(|| "off".to_string(), |c| c.to_string()),
            self.embed_weight,
        )
    }
}
