//! Independent reference implementations shared by the integration tests.
//! Each one is written the slow, obvious way so it does not share code paths
//! with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsvad::ftb::FtbMode;
use wsvad::{Bag, FeatureSequence, Matrix, TransformedFeature};
use wsvad::features::VideoLabel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, random_vec(rng, rows * cols, scale))
}

pub fn random_sequence(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> FeatureSequence {
    FeatureSequence::new(random_matrix(rng, rows, cols, scale)).unwrap()
}

/// Orthonormal DCT-II by direct summation:
/// `X_k = c_k sum_n x_n cos(pi (2n + 1) k / 2N)`, `c_0 = sqrt(1/N)`,
/// `c_k = sqrt(2/N)` otherwise.
pub fn dct_direct(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let c = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    v * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()
                })
                .sum();
            c * sum
        })
        .collect()
}

/// Orthonormal DCT-III, the inverse of [`dct_direct`].
pub fn idct_direct(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len() as f64;
    (0..coeffs.len())
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let w = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    w * c * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()
                })
                .sum()
        })
        .collect()
}

/// AUC as the share of (positive, negative) pairs ranked correctly, ties
/// worth one half. Counted in half-units so the result is exact.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut half_wins: u64 = 0;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                half_wins += 2;
            } else if scores[i] == scores[j] {
                half_wins += 1;
            }
        }
    }
    half_wins as f64 / 2.0 / (p as f64 * n as f64)
}

/// Top-k by full sort of `(value, index)` pairs; returns ascending indices.
pub fn topk_sorted(values: &[f64], k: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = pairs.into_iter().take(k).map(|(_, i)| i).collect();
    idx.sort();
    idx
}

pub fn bag(id: &str, label: VideoLabel, data: Matrix) -> Bag {
    Bag {
        video_id: id.into(),
        label,
        snippets: TransformedFeature { data, mode: FtbMode::M3 },
    }
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
