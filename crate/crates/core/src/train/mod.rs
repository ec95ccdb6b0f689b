//! Joint training of codebooks, codes, prior parameters and (optionally) a
//! linear embedder.

mod encode;
mod init;
mod kmeans;
mod penalty;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use encode::{
    assign_codes, assign_codes_traced, encode, encode_with_starts, quantization_loss, ENCODE_STARTS, MAX_ICM_SWEEPS,
};
pub use init::{init_codebooks, init_codebooks_split, INIT_LLOYD_ITERS};
pub use penalty::{fast_set, icq_penalty, icq_penalty_grad, FastSet};

use crate::config::Config;
use crate::data::{CodeMatrix, CodebookSet, EmbeddedDataset};
use crate::embedder::LinearEmbedder;
use crate::error::{Error, Result};
use crate::moments::OnlineMoments;
use crate::prior::{prior_nll, prior_nll_and_grad, subspace_mask_capped, PriorParams, SubspaceMask};
use crate::search::SearchIndex;

/// Scale of the random perturbation around the identity for a fresh embedder.
const EMBED_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    /// Learn a linear embedding with a classification loss; requires labels.
    pub with_embedder: bool,
    /// Output dimension of the embedder; defaults to the input dimension.
    pub embed_dim: Option<usize>,
}

/// Loss terms at the end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub quantization_loss: f64,
    pub prior_loss: f64,
    pub penalty: f64,
    pub embedding_loss: f64,
    pub psi_dim: usize,
    pub fast_count: usize,
}

impl EpochRecord {
    /// Weighted objective `w·L^E + L^C + γ1·L^P + γ2·L^ICQ`.
    pub fn objective(&self, cfg: &Config) -> f64 {
        cfg.embed_weight * self.embedding_loss
            + self.quantization_loss
            + cfg.gamma1 * self.prior_loss
            + cfg.gamma2 * self.penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub initial_quantization_loss: f64,
    pub initial_penalty: f64,
    /// Loss trace of every end-of-epoch ICM pass.
    pub icm_traces: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub mask: SubspaceMask,
    pub fast: FastSet,
    pub prior: PriorParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub index: SearchIndex,
    pub report: TrainReport,
    pub embedder: Option<LinearEmbedder>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

fn full_moments(x: &EmbeddedDataset) -> Result<OnlineMoments> {
    let mut m = OnlineMoments::new(x.dim());
    m.update(x.vectors(), x.dim())?;
    Ok(m)
}

/// Trains from scratch. See [`train_from`] for a warm start.
pub fn train(ds: &EmbeddedDataset, cfg: &Config, opts: &TrainOptions) -> Result<TrainOutput> {
    run(ds, cfg, opts, None)
}

/// Trains starting from the given codebooks and codes instead of the k-means
/// initialisation. Not available together with an embedder.
pub fn train_from(
    ds: &EmbeddedDataset,
    cfg: &Config,
    books: CodebookSet,
    codes: CodeMatrix,
) -> Result<TrainOutput> {
    if books.num_codebooks() != cfg.k || books.codebook_size() != cfg.m || books.dim() != ds.dim() {
        return Err(Error::Shape("warm-start codebooks do not match config and data".into()));
    }
    if codes.len() != ds.len() || codes.num_codebooks() != cfg.k {
        return Err(Error::Shape("warm-start codes do not match config and data".into()));
    }
    run(ds, cfg, &TrainOptions::default(), Some((books, codes)))
}

fn run(
    raw: &EmbeddedDataset,
    cfg: &Config,
    opts: &TrainOptions,
    warm: Option<(CodebookSet, CodeMatrix)>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if raw.len() < cfg.m {
        return Err(Error::Domain(format!(
            "need at least m={} training points, got {}",
            cfg.m,
            raw.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut embedder = if opts.with_embedder {
        let labels = raw
            .labels()
            .ok_or_else(|| Error::Validation("training an embedder requires labels".into()))?;
        let classes = labels.iter().copied().max().map_or(0, |c| c as usize + 1);
        let d_out = opts.embed_dim.unwrap_or(raw.dim());
        Some(LinearEmbedder::perturbed_identity(
            raw.dim(),
            d_out,
            classes,
            EMBED_INIT_SCALE,
            &mut rng,
        )?)
    } else {
        None
    };
    let mut x = match &embedder {
        Some(e) => e.embed(raw)?,
        None => raw.clone(),
    };
    let d = x.dim();
    let n = x.len();

    let mut snapshot = full_moments(&x)?;
    let mut theta = PriorParams::initial(snapshot.variance(), cfg)?;
    let mu_scale = theta.mu2.abs().max(1e-6);
    let mut mask = subspace_mask_capped(snapshot.variance(), &theta, cfg.psi_cap)?;

    let init_seed = rand::Rng::random::<u64>(&mut rng);
    let (mut books, mut codes) = match warm {
        Some(w) => w,
        None => {
            let nf = cfg.fast_quantizers;
            let psi = mask.dim_psi();
            if nf > 0 && nf < cfg.k && psi > 0 && psi < d {
                init_codebooks_split(&x, cfg, &mask, nf, init_seed)?
            } else {
                init_codebooks(&x, cfg, init_seed)?
            }
        }
    };
    let initial_quantization_loss = quantization_loss(&x, &books, &codes)?;
    let initial_penalty = icq_penalty(&books, &mask)?;

    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut step = 0;
    let mut adam = Adam::new(3);
    let mut moments = OnlineMoments::new(d);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut icm_traces = Vec::with_capacity(cfg.epochs);

    let m = cfg.m;
    let mut grad_books = vec![0.0f64; cfg.k * m * d];
    let mut touched = vec![false; cfg.k * m];
    let mut recon = vec![0.0f64; d];
    let mut resid = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let lr = cosine_lr(cfg.learning_rate, step, total_steps);
            step += 1;
            let nb = chunk.len();

            let batch_raw = embedder.as_ref().map(|_| raw.select(chunk));
            let batch = match (&embedder, &batch_raw) {
                (Some(e), Some(r)) => e.embed(r)?,
                _ => x.select(chunk),
            };

            moments.update(batch.vectors(), d)?;
            let lambdas = moments.variance();

            if cfg.gamma1 > 0.0 {
                let (_, g) = prior_nll_and_grad(lambdas, &theta)?;
                let mut params = [theta.sigma1.ln(), theta.sigma2.ln(), theta.mu2 / mu_scale];
                let grad = [
                    cfg.gamma1 * g.sigma1 * theta.sigma1,
                    cfg.gamma1 * g.sigma2 * theta.sigma2,
                    cfg.gamma1 * g.mu2 * mu_scale,
                ];
                adam.step(&mut params, &grad, lr);
                theta.sigma1 = params[0].exp();
                theta.sigma2 = params[1].exp();
                theta.mu2 = params[2] * mu_scale;
                if theta.validate().is_err() {
                    return Err(Error::Divergence { term: "L_P", epoch });
                }
            }
            mask = subspace_mask_capped(lambdas, &theta, cfg.psi_cap)?;

            // Residuals with codes held fixed.
            resid.clear();
            for (row, &i) in batch.rows().zip(chunk) {
                books.reconstruct_into(codes.row(i), &mut recon);
                resid.extend(row.iter().zip(&recon).map(|(&v, &r)| v as f64 - r));
            }

            grad_books.iter_mut().for_each(|g| *g = 0.0);
            touched.iter_mut().for_each(|t| *t = false);
            let scale = 2.0 / nb as f64;
            for (r, &i) in resid.chunks_exact(d).zip(chunk) {
                for (k, &j) in codes.row(i).iter().enumerate() {
                    let slot = k * m + j as usize;
                    touched[slot] = true;
                    for (g, &v) in grad_books[slot * d..(slot + 1) * d].iter_mut().zip(r) {
                        *g -= scale * v;
                    }
                }
            }
            let words = books.as_mut_slice();
            for (slot, _) in touched.iter().enumerate().filter(|(_, &t)| t) {
                for (w, &g) in words[slot * d..(slot + 1) * d].iter_mut().zip(&grad_books[slot * d..]) {
                    *w = (*w as f64 - lr * g) as f32;
                }
            }
            if cfg.gamma2 > 0.0 {
                penalty::shrink_interleaved(&mut books, &mask, lr * cfg.gamma2);
            }
            if !books.is_finite() {
                return Err(Error::Divergence { term: "L_C", epoch });
            }

            if let (Some(e), Some(braw)) = (embedder.as_mut(), &batch_raw) {
                let labels = braw.labels().expect("labels checked above");
                let (_, g) = e.classification_loss(braw, labels)?;
                let d_raw = e.input_dim();
                let w = cfg.embed_weight;
                let (weight, classifier, bias) = e.params_mut();
                for (wi, gi) in weight.iter_mut().zip(&g.weight) {
                    *wi -= lr * w * gi;
                }
                // Straight-through quantization gradient on the embedding.
                for (r, xr) in resid.chunks_exact(d).zip(braw.rows()) {
                    for (wrow, &rv) in weight.chunks_exact_mut(d_raw).zip(r) {
                        let coef = lr * scale * rv;
                        for (wv, &xv) in wrow.iter_mut().zip(xr) {
                            *wv -= coef * xv as f64;
                        }
                    }
                }
                for (ci, gi) in classifier.iter_mut().zip(&g.classifier) {
                    *ci -= lr * w * gi;
                }
                for (bi, gi) in bias.iter_mut().zip(&g.bias) {
                    *bi -= lr * w * gi;
                }
                if !e.is_finite() {
                    return Err(Error::Divergence { term: "L_E", epoch });
                }
            }
        }

        let embedding_loss = match &embedder {
            Some(e) => {
                x = e.embed(raw).map_err(|_| Error::Divergence { term: "L_E", epoch })?;
                e.classification_loss(raw, raw.labels().expect("labels checked above"))?.0
            }
            None => 0.0,
        };
        let (new_codes, trace) = assign_codes_traced(&x, &books, &codes, MAX_ICM_SWEEPS)?;
        codes = new_codes;
        snapshot = moments.clone();
        moments.reset();

        let quantization_loss = *trace.last().expect("trace has a starting entry");
        let prior_loss = prior_nll(snapshot.variance(), &theta)?;
        let pen = icq_penalty(&books, &mask)?;
        for (term, v) in [
            ("L_C", quantization_loss),
            ("L_P", prior_loss),
            ("L_ICQ", pen),
            ("L_E", embedding_loss),
        ] {
            if !v.is_finite() {
                return Err(Error::Divergence { term, epoch });
            }
        }
        records.push(EpochRecord {
            epoch,
            quantization_loss,
            prior_loss,
            penalty: pen,
            embedding_loss,
            psi_dim: mask.dim_psi(),
            fast_count: fast_set(&books, &mask)?.count(),
        });
        icm_traces.push(trace);
    }

    let lambdas = snapshot.variance().to_vec();
    let final_mask = subspace_mask_capped(&lambdas, &theta, cfg.psi_cap)?;
    let fast = fast_set(&books, &final_mask)?;
    let sigma = snapshot.margin(&final_mask, cfg.sigma_scale)?;
    let index = SearchIndex::new(
        cfg.clone(),
        books,
        codes,
        final_mask.clone(),
        fast,
        sigma,
        lambdas.clone(),
    )?;
    let report = TrainReport {
        epochs: records,
        initial_quantization_loss,
        initial_penalty,
        icm_traces,
        lambdas,
        mask: final_mask,
        fast: index.fast().clone(),
        prior: theta,
    };
    Ok(TrainOutput {
        index,
        report,
        embedder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(n: usize, seed: u64) -> EmbeddedDataset {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let strong = Normal::new(0.0, 2.0).unwrap();
        let weak = Normal::new(0.0, 0.05).unwrap();
        let mut v = Vec::with_capacity(n * 8);
        for _ in 0..n {
            for j in 0..8 {
                let dist = if j < 2 { &strong } else { &weak };
                v.push(dist.sample(&mut rng) as f32);
            }
        }
        EmbeddedDataset::new(8, v, Some((0..n as u32).map(|i| i % 3).collect())).unwrap()
    }

    fn small_cfg() -> Config {
        let mut cfg = Config::new(4, 8);
        cfg.epochs = 3;
        cfg.batch_size = 64;
        cfg.fast_quantizers = 1;
        cfg
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 9, 10) > 0.0);
        assert!(cosine_lr(1.0, 5, 10) < 0.51);
    }

    #[test]
    fn plain_additive_quantization_improves() {
        let ds = planted(400, 1);
        let mut cfg = small_cfg();
        cfg.gamma1 = 0.0;
        cfg.gamma2 = 0.0;
        let out = train(&ds, &cfg, &TrainOptions::default()).unwrap();
        assert_eq!(out.report.epochs.len(), 3);
        let last = out.report.epochs.last().unwrap().quantization_loss;
        assert!(last <= out.report.initial_quantization_loss);
    }

    #[test]
    fn deterministic_and_finite() {
        let ds = planted(300, 2);
        let cfg = small_cfg();
        let a = train(&ds, &cfg, &TrainOptions::default()).unwrap();
        let b = train(&ds, &cfg, &TrainOptions::default()).unwrap();
        assert_eq!(a.index, b.index);
        assert_eq!(a.report, b.report);
        for r in &a.report.epochs {
            assert!(r.objective(&cfg).is_finite());
        }
        assert_eq!(a.report.mask.bits()[..2], [true, true]);
    }

    #[test]
    fn fast_set_is_a_prefix_and_recomputes() {
        let ds = planted(300, 3);
        let out = train(&ds, &small_cfg(), &TrainOptions::default()).unwrap();
        let idx = &out.index;
        let recomputed = fast_set(idx.books(), idx.mask()).unwrap();
        assert_eq!(&recomputed, idx.fast());
        let nf = idx.fast_count();
        assert!(idx.fast().bits().iter().enumerate().all(|(i, &b)| b == (i < nf)));
    }

    #[test]
    fn divergence_names_the_term() {
        let ds = planted(200, 4);
        let mut cfg = small_cfg();
        cfg.learning_rate = 1e300;
        cfg.gamma1 = 0.0;
        match train(&ds, &cfg, &TrainOptions::default()) {
            Err(Error::Divergence { term, epoch }) => {
                assert_eq!(term, "L_C");
                assert_eq!(epoch, 0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn embedder_requires_labels_and_trains() {
        let ds = planted(300, 5);
        let opts = TrainOptions {
            with_embedder: true,
            embed_dim: Some(6),
        };
        assert!(train(&ds.without_labels(), &small_cfg(), &opts).is_err());
        let out = train(&ds, &small_cfg(), &opts).unwrap();
        assert_eq!(out.index.dim(), 6);
        let e = out.embedder.unwrap();
        assert_eq!((e.input_dim(), e.output_dim()), (8, 6));
        assert!(out.report.epochs.iter().all(|r| r.embedding_loss > 0.0));
    }

    #[test]
    fn strong_penalty_removes_interleaving() {
        let ds = planted(400, 6);
        let mut cfg = small_cfg();
        cfg.gamma2 = 500.0;
        let (books, codes) = init_codebooks(&ds, &cfg, 0).unwrap();
        let out = train_from(&ds, &cfg, books, codes).unwrap();
        let initial = out.report.initial_penalty;
        assert!(initial > 0.0);
        assert!(out.report.epochs.last().unwrap().penalty <= 1e-3 * initial);
    }
}
