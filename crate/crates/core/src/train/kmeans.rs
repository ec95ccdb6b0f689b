//! Deterministic k-means used to seed the codebooks.

use rand::Rng;
use rayon::prelude::*;

use crate::data::dot_f32;

pub(crate) struct KMeans {
    /// `m × d`, row-major.
    pub centroids: Vec<f32>,
    pub assign: Vec<u16>,
}

/// Index of the centroid minimising `‖c‖² − 2·x·c`.
#[inline]
pub(crate) fn nearest(x: &[f32], centroids: &[f32], norms: &[f32]) -> usize {
    let d = x.len();
    let mut best = 0;
    let mut best_v = f32::INFINITY;
    for (j, c) in centroids.chunks_exact(d).enumerate() {
        let v = norms[j] - 2.0 * dot_f32(x, c);
        if v < best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

pub(crate) fn norms_of(centroids: &[f32], d: usize) -> Vec<f32> {
    centroids.chunks_exact(d).map(|c| dot_f32(c, c)).collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x as f64 - y as f64;
            t * t
        })
        .sum()
}

fn seed_plus_plus<R: Rng>(data: &[f32], d: usize, m: usize, rng: &mut R) -> Vec<f32> {
    let n = data.len() / d;
    let mut centroids = Vec::with_capacity(m * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * d..(first + 1) * d]);
    let mut min_d2: Vec<f64> = data.par_chunks_exact(d).map(|x| sq_dist(x, &centroids[..d])).collect();
    for _ in 1..m {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick * d..(pick + 1) * d].to_vec();
        min_d2
            .par_iter_mut()
            .zip(data.par_chunks_exact(d))
            .for_each(|(best, x)| *best = best.min(sq_dist(x, &c)));
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// k-means++ seeding followed by exactly `iters` Lloyd iterations. Empty
/// clusters keep their previous centroid. Requires `n ≥ 1`.
pub(crate) fn kmeans<R: Rng>(data: &[f32], d: usize, m: usize, iters: usize, rng: &mut R) -> KMeans {
    let n = data.len() / d;
    let mut centroids = seed_plus_plus(data, d, m, rng);
    let mut assign = vec![0u16; n];
    let assign_all = |centroids: &[f32], assign: &mut [u16]| {
        let norms = norms_of(centroids, d);
        assign
            .par_iter_mut()
            .zip(data.par_chunks_exact(d))
            .for_each(|(a, x)| *a = nearest(x, centroids, &norms) as u16);
    };
    for _ in 0..iters {
        assign_all(&centroids, &mut assign);
        let mut sums = vec![0.0f64; m * d];
        let mut counts = vec![0usize; m];
        for (x, &a) in data.chunks_exact(d).zip(&assign) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        for j in 0..m {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (c, &s) in centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = (s * inv) as f32;
            }
        }
    }
    assign_all(&centroids, &mut assign);
    KMeans { centroids, assign }
}
