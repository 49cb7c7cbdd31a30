//! Second-difference roughness penalty over frames.
//!
//! For a trajectory `x` of length `T` the penalty is
//! `Σ_{t=0}^{T-3} (x_t − 2x_{t+1} + x_{t+2})² = xᵀ F x` with `F = D₂ᵀ D₂`,
//! where `D₂` is the `(T−2) × T` stencil matrix of rows `[1, −2, 1]`.
//! `F` is symmetric, positive semidefinite and pentadiagonal; its null space
//! is the affine trajectories. For `T < 3` there is no second difference and
//! `F` is zero.

use ndarray::Array2;

use crate::qp::BandedSymmetric;

const STENCIL: [f64; 3] = [1.0, -2.0, 1.0];

/// Dense `T × T` roughness matrix `F = D₂ᵀ D₂`.
pub fn second_difference_matrix(frames: usize) -> Array2<f64> {
    let mut f = Array2::zeros((frames, frames));
    for r in 0..frames.saturating_sub(2) {
        for a in 0..3 {
            for b in 0..3 {
                f[[r + a, r + b]] += STENCIL[a] * STENCIL[b];
            }
        }
    }
    f
}

/// `F` scaled by `scale`, in banded storage (bandwidth 2, or 0 when `T < 3`).
pub fn scaled_banded(frames: usize, scale: f64) -> BandedSymmetric {
    if frames < 3 || scale == 0.0 {
        return BandedSymmetric::diagonal(vec![0.0; frames]);
    }
    let mut bands = vec![
        vec![0.0; frames],
        vec![0.0; frames - 1],
        vec![0.0; frames - 2],
    ];
    for r in 0..frames - 2 {
        for a in 0..3 {
            for b in a..3 {
                bands[b - a][r + a] += scale * STENCIL[a] * STENCIL[b];
            }
        }
    }
    BandedSymmetric::from_bands(bands).expect("band lengths are consistent")
}

/// `xᵀ F x` evaluated directly as a sum of squared second differences.
pub fn roughness(x: &[f64]) -> f64 {
    x.windows(3)
        .map(|w| {
            let d = w[0] - 2.0 * w[1] + w[2];
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interior_row_pattern() {
        let f = second_difference_matrix(5);
        assert_eq!(f.row(2).to_vec(), vec![1.0, -4.0, 6.0, -4.0, 1.0]);
        assert_eq!(f.row(0).to_vec(), vec![1.0, -2.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.row(1).to_vec(), vec![-2.0, 5.0, -4.0, 1.0, 0.0]);
    }

    #[test]
    fn three_frames() {
        let f = second_difference_matrix(3);
        let want = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(f[[i, j]], want[i][j]);
            }
        }
    }

    #[test]
    fn short_sequences_are_zero() {
        assert!(second_difference_matrix(2).iter().all(|&v| v == 0.0));
        assert_eq!(second_difference_matrix(1).dim(), (1, 1));
        assert_eq!(roughness(&[0.3, 0.9]), 0.0);
        assert!(scaled_banded(2, 3.0).is_diagonal());
    }

    #[test]
    fn banded_matches_dense() {
        for t in [1, 2, 3, 4, 7, 12] {
            let dense = second_difference_matrix(t);
            let banded = scaled_banded(t, 2.5);
            for i in 0..t {
                for j in 0..t {
                    assert_eq!(banded.get(i, j), 2.5 * dense[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = second_difference_matrix(20);
        for _ in 0..50 {
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
            let fx = f.dot(&ndarray::Array1::from(x.clone()));
            let quad: f64 = x.iter().zip(fx.iter()).map(|(a, b)| a * b).sum();
            assert!((quad - roughness(&x)).abs() <= 1e-10);
        }
    }

    #[test]
    fn psd_and_affine_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = 15;
        let f = second_difference_matrix(t);
        for _ in 0..1000 {
            let x = ndarray::Array1::from_shape_fn(t, |_| rng.random_range(-1.0..1.0));
            assert!(x.dot(&f.dot(&x)) >= -1e-12);
        }
        let affine = ndarray::Array1::from_shape_fn(t, |i| 0.3 - 0.7 * i as f64);
        assert!(f.dot(&affine).iter().all(|v| v.abs() < 1e-12));
        let constant = ndarray::Array1::from_elem(t, 0.4);
        assert!(f.dot(&constant).iter().all(|v| v.abs() < 1e-12));
    }
}
