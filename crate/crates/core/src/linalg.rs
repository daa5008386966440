//! Small dense helpers for d-vectors stored as plain slices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `out = m * v`
pub fn mat_vec_into(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum();
    }
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    mat_vec_into(m, v, &mut out);
    out
}

/// `out = mᵀ * v`
pub fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)] * v[i]).sum())
        .collect()
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().max()
}

/// Solves the square system `a x = b`, `None` when `a` is singular.
pub fn solve(a: DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    if a.nrows() == 1 {
        let p = a[(0, 0)];
        return (p != 0.0).then(|| vec![b[0] / p]);
    }
    a.lu()
        .solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
}

/// Seeded generator shared by every sampling diagnostic, so reports are
/// reproducible across platforms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample from the axis-aligned box `[lo, hi]`.
pub fn sample_in_box<R: Rng>(rng: &mut R, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(a, b)| a + (b - a) * rng.random::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_norm_of_rotation_scaled() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let m = DMatrix::from_row_slice(2, 2, &[0.8 * c, -0.8 * s, 0.8 * s, 0.8 * c]);
        assert!((op_norm(&m) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn transpose_product() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mat_vec(&m, &[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(mat_t_vec(&m, &[1.0, 1.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn singular_solve_is_none() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(solve(m, &[1.0, 1.0]).is_none());
        assert!(solve(DMatrix::from_element(1, 1, 0.0), &[1.0]).is_none());
    }
}
