//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest eigenvalue modulus, via the real Schur form.
pub fn spectral_radius(m: &Mat) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Numerical rank by Gaussian elimination with full pivoting. Pivots
/// below `tol * max|entry|` count as zero.
pub fn rank(m: &Mat, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let scale = a.amax();
    if scale == 0.0 {
        return 0;
    }
    let cutoff = tol * scale;
    let mut r = 0;
    while r < rows.min(cols) {
        let mut best = (r, r, 0.0);
        for i in r..rows {
            for j in r..cols {
                let v = a[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        if best.2 <= cutoff {
            break;
        }
        a.swap_rows(r, best.0);
        a.swap_columns(r, best.1);
        let piv = a[(r, r)];
        for i in (r + 1)..rows {
            let f = a[(i, r)] / piv;
            if f != 0.0 {
                for j in r..cols {
                    let t = a[(r, j)];
                    a[(i, j)] -= f * t;
                }
            }
        }
        r += 1;
    }
    r
}

/// Euclidean norm of a slice.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_of_rotation_is_one() {
        let m = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_agrees_with_svd_on_low_rank_product() {
        let u = Mat::from_fn(7, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let v = Mat::from_fn(3, 5, |i, j| ((j + 2) as f64).powi(i as i32));
        let m = &u * &v;
        assert_eq!(rank(&m, 1e-10), 3);
        let svd_rank = m.singular_values().iter().filter(|s| **s > 1e-9).count();
        assert_eq!(svd_rank, 3);
    }

    #[test]
    fn rank_of_zero_is_zero() {
        assert_eq!(rank(&Mat::zeros(3, 4), 1e-12), 0);
    }
}
