//! Dense f64 linear algebra and seeded randomness.
//!
//! Everything downstream (attention, workloads, the entropy probe) is built
//! on the handful of primitives here, so they are deliberately boring:
//! row-major matrices, naive O(n·m) products, and a fully documented random
//! number pipeline (ChaCha12 keyed by a 64-bit seed, 53-bit uniform doubles,
//! Box-Muller for Gaussians). Same seed, same platform => bit-identical
//! output, which is what makes golden-trace tests and replayable reports
//! possible.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 64-bit seed for reproducible streams.
///
/// `derive` splits one root seed into independent sub-streams (weights,
/// workload, per-trial draws) with a splitmix64 mix, so callers never reuse
/// the same raw seed for two purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derive a sub-seed for an independent stream.
    pub fn derive(self, stream: u64) -> Seed {
        // splitmix64 finalizer over seed + stream tag
        let mut z = self.0.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        Seed(z ^ (z >> 31))
    }

    /// ChaCha12 generator keyed by this seed.
    pub fn rng(self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.0)
    }
}

/// Uniform double in (0, 1] from the top 53 bits of one `u64` draw.
fn uniform_open_closed(rng: &mut ChaCha12Rng) -> f64 {
    (((rng.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform double in [0, 1).
fn uniform_half_open(rng: &mut ChaCha12Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
}

/// One standard-normal draw via the Box-Muller transform.
///
/// Two uniforms are consumed per draw (the sine partner is discarded), which
/// keeps the stream layout trivial to reason about when replaying seeds.
pub fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1 = uniform_open_closed(rng);
    let u2 = uniform_half_open(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows * cols != data.len() {
            return Err(Error::invalid_argument(format!(
                "matrix shape {rows}x{cols} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("matrix entries must be finite"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from row slices; every row must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid_argument("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Standard matrix-vector product `m · v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    if m.cols() != v.len() {
        return Err(Error::invalid_argument(format!(
            "matvec dimension mismatch: matrix has {} cols, vector has {} entries",
            m.cols(),
            v.len()
        )));
    }
    Ok((0..m.rows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect())
}

/// Numerically stabilized softmax of `scale * scores`.
///
/// The maximum is subtracted before exponentiation; for any positive scale
/// the argmax of the input is preserved in the output.
pub fn softmax(scores: &[f64], scale: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid_argument("softmax of empty input"));
    }
    if !scale.is_finite() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid_argument("softmax inputs must be finite"));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Reproducible Gaussian matrix: ChaCha12 keyed by `seed`, entries drawn
/// row-major via Box-Muller and scaled by `std`.
pub fn seeded_gaussian_matrix(seed: Seed, rows: usize, cols: usize, std: f64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid_argument("matrix dimensions must be >= 1"));
    }
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::invalid_argument("std must be positive and finite"));
    }
    let mut rng = seed.rng();
    let data = (0..rows * cols).map(|_| std * standard_normal(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Seeded Gaussian vector with unit std.
pub fn seeded_gaussian_vec(seed: Seed, len: usize) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..len).map(|_| standard_normal(&mut rng)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Solve `m · x = b` by Gaussian elimination with partial pivoting.
///
/// Only used to invert the key projection when planting workload tokens;
/// random Gaussian matrices are well conditioned at the sizes used here.
pub fn solve_linear(m: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::invalid_argument("solve_linear requires a square matrix"));
    }
    if b.len() != n {
        return Err(Error::invalid_argument("rhs length must match matrix size"));
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::invalid_state("matrix is numerically singular"));
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (pivot_rows, rest) = a.split_at_mut(row);
            for (t, p) in rest[0][col..].iter_mut().zip(&pivot_rows[col][col..]) {
                *t -= f * p;
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col][col];
        for row in 0..col {
            x[row] -= a[row][col] * x[col];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity_passes_through() {
        let m = Matrix::identity(3);
        assert_eq!(matvec(&m, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn matvec_zero_matrix() {
        let m = Matrix::zeros(2, 2);
        assert_eq!(matvec(&m, &[5.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(matvec(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // the oracle is written in index form on purpose
    fn matvec_matches_triple_loop_oracle() {
        // 100 seeded cases against an independently written sum-of-products
        for seed in 0..100u64 {
            let m = seeded_gaussian_matrix(Seed(seed), 4, 4, 1.0).unwrap();
            let v = seeded_gaussian_vec(Seed(seed).derive(1), 4);
            let got = matvec(&m, &v).unwrap();
            for i in 0..4 {
                let mut want = 0.0;
                for j in 0..4 {
                    want += m.get(i, j) * v[j];
                }
                let denom = want.abs().max(1.0);
                assert!(
                    (got[i] - want).abs() / denom < 1e-12,
                    "seed {seed} row {i}: {} vs {}",
                    got[i],
                    want
                );
            }
        }
    }

    #[test]
    fn softmax_singleton_and_symmetry() {
        assert_eq!(softmax(&[3.7], 0.25).unwrap(), vec![1.0]);
        let p = softmax(&[1.5, 1.5], 2.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let p = softmax(&[1.0, 2.0, 3.0], 1.0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
        for (i, x) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((p[i] - x.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(softmax(&[], 1.0).is_err());
    }

    #[test]
    fn softmax_underflow_keeps_sum_and_argmax() {
        // a scaled gap beyond ~745 nats underflows the losing entries to
        // exactly zero; the distribution stays normalized and ordered
        let p = softmax(&[-500.0, 500.0], 1.0).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_keeps_argmax() {
        for seed in 0..50u64 {
            let v = seeded_gaussian_vec(Seed(seed), 17);
            for scale in [0.1, 1.0, 7.3] {
                let p = softmax(&v, scale).unwrap();
                let sum: f64 = p.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
                let arg_in = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
                let arg_out = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
                assert_eq!(arg_in, arg_out);
            }
        }
    }

    #[test]
    fn gaussian_matrix_is_deterministic_per_seed() {
        let a = seeded_gaussian_matrix(Seed(9), 6, 5, 0.5).unwrap();
        let b = seeded_gaussian_matrix(Seed(9), 6, 5, 0.5).unwrap();
        assert_eq!(a, b);
        let c = seeded_gaussian_matrix(Seed(10), 6, 5, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_sample_mean_near_zero() {
        let m = seeded_gaussian_matrix(Seed(1234), 1000, 1, 1.0).unwrap();
        let mean: f64 = (0..1000).map(|i| m.get(i, 0)).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.1, "sample mean {mean}");
    }

    #[test]
    fn solve_linear_roundtrip() {
        let m = seeded_gaussian_matrix(Seed(5), 8, 8, 1.0).unwrap();
        let x = seeded_gaussian_vec(Seed(6), 8);
        let b = matvec(&m, &x).unwrap();
        let got = solve_linear(&m, &b).unwrap();
        for i in 0..8 {
            assert!((got[i] - x[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        let s = Seed(42);
        assert_ne!(s.derive(0), s.derive(1));
        assert_eq!(s.derive(3), s.derive(3));
    }
}
