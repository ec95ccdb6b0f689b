//! Optional linear embedding trained with a softmax classification loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::EmbeddedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedder {
    d_raw: usize,
    d: usize,
    classes: usize,
    /// `d × d_raw`, row-major.
    weight: Vec<f64>,
    /// `classes × d`, row-major.
    classifier: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient of the classification loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderGradient {
    pub weight: Vec<f64>,
    pub classifier: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearEmbedder {
    pub fn new(
        d_raw: usize,
        d: usize,
        classes: usize,
        weight: Vec<f64>,
        classifier: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if d_raw == 0 || d == 0 || classes == 0 {
            return Err(Error::Shape("embedder dimensions must be positive".into()));
        }
        if weight.len() != d * d_raw || classifier.len() != classes * d || bias.len() != classes {
            return Err(Error::Shape(format!(
                "embedder parameters do not match {d}x{d_raw} weight and {classes} classes"
            )));
        }
        if weight.iter().chain(&classifier).chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite embedder parameter".into()));
        }
        Ok(Self {
            d_raw,
            d,
            classes,
            weight,
            classifier,
            bias,
        })
    }

    /// Identity on the first `min(d, d_raw)` coordinates with a zero classifier.
    pub fn identity(d_raw: usize, d: usize, classes: usize) -> Result<Self> {
        let mut weight = vec![0.0; d * d_raw];
        for i in 0..d.min(d_raw) {
            weight[i * d_raw + i] = 1.0;
        }
        Self::new(d_raw, d, classes, weight, vec![0.0; classes * d], vec![0.0; classes])
    }

    /// Identity plus small Gaussian perturbation, so gradients are not symmetric.
    pub fn perturbed_identity<R: Rng>(d_raw: usize, d: usize, classes: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut e = Self::identity(d_raw, d, classes)?;
        let noise = Normal::new(0.0, scale).map_err(|err| Error::Domain(err.to_string()))?;
        e.weight.iter_mut().for_each(|w| *w += noise.sample(rng));
        Ok(e)
    }

    pub fn input_dim(&self) -> usize {
        self.d_raw
    }

    pub fn output_dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn classifier(&self) -> &[f64] {
        &self.classifier
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.weight, &mut self.classifier, &mut self.bias)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.classifier).chain(&self.bias).all(|v| v.is_finite())
    }

    fn embed_row(&self, x: &[f32], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(self.weight.chunks_exact(self.d_raw)) {
            *o = w.iter().zip(x).map(|(&a, &b)| a * b as f64).sum();
        }
    }

    /// Embeds every row of `raw`; labels are carried over.
    pub fn embed(&self, raw: &EmbeddedDataset) -> Result<EmbeddedDataset> {
        if raw.dim() != self.d_raw {
            return Err(Error::Shape(format!(
                "embedder expects width {}, got {}",
                self.d_raw,
                raw.dim()
            )));
        }
        let mut out = Vec::with_capacity(raw.len() * self.d);
        let mut buf = vec![0.0; self.d];
        for row in raw.rows() {
            self.embed_row(row, &mut buf);
            out.extend(buf.iter().map(|&v| v as f32));
        }
        EmbeddedDataset::new(self.d, out, raw.labels().map(<[u32]>::to_vec))
    }

    /// Mean softmax cross-entropy of the classifier over the embedded rows,
    /// with analytic gradients for all parameters.
    pub fn classification_loss(&self, raw: &EmbeddedDataset, labels: &[u32]) -> Result<(f64, EmbedderGradient)> {
        if raw.dim() != self.d_raw {
            return Err(Error::Shape(format!(
                "embedder expects width {}, got {}",
                self.d_raw,
                raw.dim()
            )));
        }
        if labels.len() != raw.len() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), raw.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        if raw.is_empty() {
            return Err(Error::Domain("classification loss over an empty batch".into()));
        }
        let n = raw.len() as f64;
        let mut grad = EmbedderGradient {
            weight: vec![0.0; self.weight.len()],
            classifier: vec![0.0; self.classifier.len()],
            bias: vec![0.0; self.classes],
        };
        let mut emb = vec![0.0; self.d];
        let mut logits = vec![0.0; self.classes];
        let mut d_emb = vec![0.0; self.d];
        let mut loss = 0.0;

        for (row, &label) in raw.rows().zip(labels) {
            self.embed_row(row, &mut emb);
            for ((l, a), b) in logits.iter_mut().zip(self.classifier.chunks_exact(self.d)).zip(&self.bias) {
                *l = a.iter().zip(&emb).map(|(x, y)| x * y).sum::<f64>() + b;
            }
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
            loss += log_z - logits[label as usize];

            d_emb.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..self.classes {
                let mut g = (logits[c] - log_z).exp();
                if c == label as usize {
                    g -= 1.0;
                }
                g /= n;
                grad.bias[c] += g;
                let a = &self.classifier[c * self.d..(c + 1) * self.d];
                let ga = &mut grad.classifier[c * self.d..(c + 1) * self.d];
                for j in 0..self.d {
                    ga[j] += g * emb[j];
                    d_emb[j] += g * a[j];
                }
            }
            for (gw, &de) in grad.weight.chunks_exact_mut(self.d_raw).zip(&d_emb) {
                for (w, &x) in gw.iter_mut().zip(row) {
                    *w += de * x as f64;
                }
            }
        }
        Ok((loss / n, grad))
    }
}
