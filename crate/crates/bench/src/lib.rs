//! Shared fixtures for the criterion benches.

use icq::{generate, train, Config, EmbeddedDataset, SearchIndex, SynthSpec, TrainOptions};

pub struct Fixture {
    pub index: SearchIndex,
    pub database: EmbeddedDataset,
    pub queries: EmbeddedDataset,
}

/// Synthetic data (d=64, 8 informative dims) with a briefly trained index.
pub fn fixture(n: usize, k: usize, m: usize) -> Fixture {
    let data = generate(&SynthSpec {
        seed: 1,
        ..SynthSpec::new(n, 64, 64, 8)
    })
    .expect("valid generator parameters");
    let cfg = Config {
        epochs: 1,
        seed: 1,
        ..Config::new(k, m)
    };
    let out = train(&data.train, &cfg, &TrainOptions::default()).expect("training succeeds");
    Fixture {
        index: out.index,
        database: data.train,
        queries: data.test,
    }
}
