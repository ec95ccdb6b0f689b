use icq::search::{build_lut, exact_score, passes_fast_check};
use icq::{
    generate, search_bruteforce, search_exact, search_two_step, train, Config, EmbeddedDataset, FastSet,
    OpCounter, SearchIndex, SynthSpec, TrainOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_index() -> (SearchIndex, EmbeddedDataset, EmbeddedDataset) {
    let data = generate(&SynthSpec {
        seed: 3,
        ..SynthSpec::new(200, 50, 8, 4)
    })
    .unwrap();
    let cfg = Config {
        epochs: 6,
        batch_size: 50,
        seed: 3,
        ..Config::new(4, 16)
    };
    let out = train(&data.train, &cfg, &TrainOptions::default()).unwrap();
    (out.index, data.train, data.test)
}

fn recall(got: &[u32], want: &[u32]) -> f64 {
    got.iter().filter(|id| want.contains(id)).count() as f64 / want.len() as f64
}

#[test]
fn two_step_small_trained_index() {
    let (index, _, test) = small_index();
    assert!(index.fast_count() >= 1);
    let mut rec = 0.0;
    let (mut two_ops, mut exact_ops) = (0u64, 0u64);
    for q in test.rows() {
        let a = search_two_step(&index, q, 10).unwrap();
        let b = search_exact(&index, q, 10).unwrap();
        assert!(!a.fallback);
        rec += recall(&a.ids, &b.ids);
        two_ops += a.ops.fast_adds + a.ops.exact_adds;
        exact_ops += b.ops.exact_adds;
    }
    rec /= test.len() as f64;
    assert!(rec >= 0.95, "recall@10 {rec}");
    assert!(two_ops < exact_ops, "{two_ops} vs {exact_ops}");
}

#[test]
fn infinite_margin_never_prunes() {
    let (index, _, test) = small_index();
    let wide = index.with_sigma(f64::INFINITY).unwrap();
    let huge_scale = index.with_sigma_scale(1e300).unwrap();
    for q in test.rows() {
        let want = search_exact(&index, q, 10).unwrap();
        for idx in [&wide, &huge_scale] {
            if idx.sigma() == 0.0 {
                continue;
            }
            let mut got = search_two_step(idx, q, 10).unwrap().ids;
            let mut exp = want.ids.clone();
            got.sort_unstable();
            exp.sort_unstable();
            assert_eq!(got, exp);
        }
    }
}

#[test]
fn all_fast_zero_margin_is_exact() {
    let (index, _, test) = small_index();
    let idx = index.with_fast_set(FastSet::all(4)).unwrap().with_sigma(0.0).unwrap();
    for q in test.rows() {
        let a = search_two_step(&idx, q, 7).unwrap();
        let b = search_exact(&idx, q, 7).unwrap();
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.scores, b.scores);
    }
}

#[test]
fn two_step_counters_follow_cost_model() {
    let (index, _, test) = small_index();
    let (k, n, kk, nf) = (5u64, index.len() as u64, 4u64, index.fast_count() as u64);
    for q in test.rows() {
        let r = search_two_step(&index, q, 5).unwrap();
        assert_eq!(r.ops.fast_adds, (nf - 1) * (n - k));
        let refine = r.ops.exact_adds - (kk - 1) * k;
        if nf < kk {
            assert_eq!(refine % (kk - nf), 0);
            assert!(refine / (kk - nf) <= n - k);
        } else {
            assert_eq!(refine, 0);
        }
    }
}

#[test]
fn empty_fast_set_falls_back() {
    let (index, _, test) = small_index();
    let idx = index.with_fast_set(FastSet::none(4)).unwrap();
    let q = test.row(0);
    let r = search_two_step(&idx, q, 3).unwrap();
    assert!(r.fallback);
    assert_eq!(r.ids, search_exact(&idx, q, 3).unwrap().ids);
}

#[test]
fn exact_matches_full_sort_oracle() {
    let (index, _, test) = small_index();
    for q in test.rows().take(20) {
        let mut ops = OpCounter::default();
        let lut = build_lut(&index, q, &mut ops).unwrap();
        let mut all: Vec<(f32, u32)> = (0..index.len())
            .map(|i| (exact_score(&lut, index.codes().row(i), &mut ops), i as u32))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let r = search_exact(&index, q, 12).unwrap();
        let want: Vec<u32> = all[..12].iter().map(|p| p.1).collect();
        assert_eq!(r.ids, want);
        // Scores agree with a direct f64 evaluation of the surrogate.
        for (&id, &s) in r.ids.iter().zip(&r.scores) {
            let code = index.codes().row(id as usize);
            let direct: f64 = (0..4)
                .map(|k| {
                    index
                        .books()
                        .codeword(k, code[k] as usize)
                        .iter()
                        .zip(q)
                        .map(|(&c, &x)| (x as f64 - c as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            assert!((s as f64 - direct).abs() <= 1e-4 * direct.max(1.0));
        }
    }
}

#[test]
fn reconstruction_query_ranks_its_element_first() {
    let (index, _, _) = small_index();
    // A reconstruction minimises Σ‖q − c_k‖² only within its own codes, so use a
    // single-codebook index, where the surrogate is the plain distance.
    let books = index.books();
    let single = icq::CodebookSet::new(1, 16, 8, books.codebook(0).to_vec()).unwrap();
    let codes = icq::CodeMatrix::new(16, 1, (0..16).collect(), 16).unwrap();
    let idx = SearchIndex::new(
        Config {
            fast_quantizers: 1,
            ..Config::new(1, 16)
        },
        single,
        codes,
        index.mask().clone(),
        FastSet::all(1),
        0.0,
        index.lambdas().to_vec(),
    )
    .unwrap();
    for j in 0..16 {
        let q = idx.books().codeword(0, j).to_vec();
        let r = search_exact(&idx, &q, 1).unwrap();
        let s = r.scores[0];
        assert_eq!(s, 0.0);
        assert!(r.ids[0] as usize == j || idx.books().codeword(0, r.ids[0] as usize) == q.as_slice());
    }
}

#[test]
fn k_larger_than_n_is_rejected() {
    let (index, train_set, test) = small_index();
    let q = test.row(0);
    assert!(search_exact(&index, q, 201).is_err());
    assert!(search_two_step(&index, q, 201).is_err());
    assert!(search_bruteforce(&train_set, q, 201).is_err());
    assert!(search_exact(&index, q, 0).is_err());
}

fn integer_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddedDataset {
    let v = (0..n * d).map(|_| rng.random_range(-20i32..=20) as f32).collect();
    EmbeddedDataset::new(d, v, None).unwrap()
}

/// Second implementation: repeated selection of the minimum, quadratic in n.
fn naive_knn(ds: &EmbeddedDataset, q: &[f32], k: usize) -> Vec<u32> {
    let dist: Vec<f64> = ds
        .rows()
        .map(|r| r.iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum())
        .collect();
    let mut taken = vec![false; ds.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..ds.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b as u32);
    }
    out
}

#[test]
fn bruteforce_self_query_and_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = integer_dataset(&mut rng, 60, 5);
    let r = search_bruteforce(&ds, ds.row(7), 1).unwrap();
    assert_eq!((r.ids[0], r.scores[0]), (7, 0.0));

    let shift: Vec<f32> = (0..5).map(|_| rng.random_range(-100i32..=100) as f32).collect();
    let moved: Vec<f32> = ds.vectors().chunks(5).flat_map(|r| r.iter().zip(&shift).map(|(a, b)| a + b)).collect();
    let moved = EmbeddedDataset::new(5, moved, None).unwrap();
    for _ in 0..20 {
        let q: Vec<f32> = (0..5).map(|_| rng.random_range(-20i32..=20) as f32).collect();
        let qm: Vec<f32> = q.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let a = search_bruteforce(&ds, &q, 9).unwrap();
        let b = search_bruteforce(&moved, &qm, 9).unwrap();
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.scores, b.scores);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bruteforce_matches_naive(seed in any::<u64>(), n in 1usize..40, d in 1usize..6, k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = integer_dataset(&mut rng, n, d);
        let q: Vec<f32> = (0..d).map(|_| rng.random_range(-20i32..=20) as f32).collect();
        let k = k.min(n);
        prop_assert_eq!(search_bruteforce(&ds, &q, k).unwrap().ids, naive_knn(&ds, &q, k));
    }

    #[test]
    fn larger_margin_never_prunes_more(c in -1e3f32..1e3, inc in -1e3f32..1e3, s1 in 0.0f64..1e3, extra in 0.0f64..1e3) {
        if passes_fast_check(c, inc, s1) {
            prop_assert!(passes_fast_check(c, inc, s1 + extra));
        }
    }
}
