//! Synthetic classification data with a known set of informative dimensions.
//!
//! Classes sit on distinct vertices of a hypercube of half-side `class_sep`
//! inside the informative dimensions, with unit Gaussian scatter. Redundant
//! dimensions are fixed random linear combinations of the informative ones;
//! the rest is Gaussian noise. Columns are shuffled and the informative
//! column indices are reported.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::EmbeddedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub n_informative: usize,
    pub n_redundant: usize,
    pub n_classes: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Defaults for everything except sizes: half of the non-informative
    /// dimensions redundant, ten classes, separation 2, noise 0.05.
    pub fn new(n_train: usize, n_test: usize, d: usize, n_informative: usize) -> Self {
        Self {
            n_train,
            n_test,
            d,
            n_informative,
            n_redundant: d.saturating_sub(n_informative) / 2,
            n_classes: 10,
            class_sep: 2.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(m));
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if self.n_informative == 0 {
            return fail("need at least one informative dimension".into());
        }
        if self.n_informative + self.n_redundant > self.d {
            return fail(format!(
                "{} informative + {} redundant exceeds d={}",
                self.n_informative, self.n_redundant, self.d
            ));
        }
        if self.n_classes < 2 {
            return fail("need at least two classes".into());
        }
        if self.n_informative < 64 && (self.n_classes as u64) > 1u64 << self.n_informative {
            return fail(format!(
                "{} classes do not fit on the vertices of a {}-cube",
                self.n_classes, self.n_informative
            ));
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return fail(format!("class_sep must be positive, got {}", self.class_sep));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: EmbeddedDataset,
    pub test: EmbeddedDataset,
    /// Column indices of the informative dimensions, ascending.
    pub informative_dims: Vec<usize>,
    /// Column indices of the redundant dimensions, ascending.
    pub redundant_dims: Vec<usize>,
}

fn distinct_vertices(rng: &mut ChaCha8Rng, classes: usize, dims: usize) -> Vec<Vec<bool>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(classes);
    while out.len() < classes {
        let v: Vec<bool> = (0..dims).map(|_| rng.random::<bool>()).collect();
        if seen.insert(v.clone()) {
            out.push(v);
        }
    }
    out
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ni, nr, d) = (spec.n_informative, spec.n_redundant, spec.d);
    let vertices = distinct_vertices(&mut rng, spec.n_classes, ni);
    let mix: Vec<f64> = (0..ni * nr).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut columns: Vec<usize> = (0..d).collect();
    columns.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Domain(e.to_string()))?;

    let mut make = |n: usize| -> Result<EmbeddedDataset> {
        let mut labels: Vec<u32> = (0..n).map(|i| (i % spec.n_classes) as u32).collect();
        labels.shuffle(&mut rng);
        let mut vectors = vec![0.0f32; n * d];
        let mut row = vec![0.0f64; d];
        for (i, &label) in labels.iter().enumerate() {
            let vertex = &vertices[label as usize];
            for j in 0..ni {
                let centre = if vertex[j] { spec.class_sep } else { -spec.class_sep };
                let z: f64 = StandardNormal.sample(&mut rng);
                row[j] = centre + z;
            }
            for r in 0..nr {
                row[ni + r] = (0..ni).map(|j| row[j] * mix[j * nr + r]).sum();
            }
            for v in row[ni + nr..].iter_mut() {
                *v = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            }
            let out = &mut vectors[i * d..(i + 1) * d];
            for (src, &dst) in columns.iter().enumerate() {
                out[dst] = row[src] as f32;
            }
        }
        EmbeddedDataset::new(d, vectors, Some(labels))
    };
    let train = make(spec.n_train)?;
    let test = make(spec.n_test)?;

    let mut informative_dims: Vec<usize> = columns[..ni].to_vec();
    let mut redundant_dims: Vec<usize> = columns[ni..ni + nr].to_vec();
    informative_dims.sort_unstable();
    redundant_dims.sort_unstable();
    Ok(SynthData {
        train,
        test,
        informative_dims,
        redundant_dims,
    })
}

/// One index per line.
pub fn write_dims(dims: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for i in dims {
        writeln!(f, "{i}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_dims(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad dimension index {l:?} in {}", path.display())))
        })
        .collect()
}
