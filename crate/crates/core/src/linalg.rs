//! Dense matrix primitives shared by every solver.
//!
//! Feature matrices are stored one sample per column (`d × n`). Covariances
//! use the unbiased `1/(n-1)` divisor throughout the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetry tolerance accepted by [`inv_sqrt_sym`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Per-row mean of a `d × n` sample matrix.
pub fn row_means(z: &Matrix) -> Vector {
    let n = z.ncols().max(1) as f64;
    Vector::from_iterator(z.nrows(), z.row_iter().map(|row| row.sum() / n))
}

/// Subtracts `mean` from every column.
pub fn subtract_mean(z: &Matrix, mean: &Vector) -> Matrix {
    let mut out = z.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out
}

/// Centers the columns of `z`, returning the centered matrix and the removed mean.
pub fn center(z: &Matrix) -> (Matrix, Vector) {
    let mean = row_means(z);
    (subtract_mean(z, &mean), mean)
}

/// `(1/(n-1)) Z Zᵀ + r I` for an already centered `d × n` matrix.
pub fn regularized_covariance(z: &Matrix, r: f64) -> Result<Matrix> {
    let n = z.ncols();
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Argument(format!("regularizer must be >= 0, got {r}")));
    }
    let mut c = z * z.transpose() / (n as f64 - 1.0);
    symmetrize(&mut c);
    for i in 0..c.nrows() {
        c[(i, i)] += r;
    }
    Ok(c)
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Argument(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::Argument(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub fn sym_eigen(m: &Matrix) -> Result<(Vector, Matrix)> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// `M^{-1/2}` for a symmetric positive-definite matrix.
pub fn inv_sqrt_sym(m: &Matrix) -> Result<Matrix> {
    let (values, q) = sym_eigen(m)?;
    let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest > 0.0) {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: smallest,
            hint: "",
        });
    }
    let scale = values.map(|l| 1.0 / l.sqrt());
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let mut out = scaled * q.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Leading `k` singular triplets of a matrix.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `d1 × k`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub s: Vector,
    /// `d2 × k`, orthonormal columns.
    pub v: Matrix,
}

/// Top-`k` SVD with a deterministic sign convention: the largest-magnitude
/// entry of every left singular vector is non-negative.
pub fn svd_topk(m: &Matrix, k: usize) -> Result<TruncatedSvd> {
    let p = m.nrows().min(m.ncols());
    if k == 0 || k > p {
        return Err(Error::Argument(format!(
            "k = {k} outside 1..={p} for a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let svd = m.clone().svd(true, true);
    let (u_full, vt_full) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Argument("SVD failed to produce singular vectors".into())),
    };
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut u = Matrix::zeros(m.nrows(), k);
    let mut v = Matrix::zeros(m.ncols(), k);
    let mut s = Vector::zeros(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let ucol = u_full.column(src);
        let vcol = vt_full.row(src).transpose();
        let pivot = ucol
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            });
        let sign = if pivot.1 < 0.0 { -1.0 } else { 1.0 };
        u.set_column(dst, &(ucol * sign));
        v.set_column(dst, &(vcol * sign));
        s[dst] = sv[src].max(0.0);
    }
    Ok(TruncatedSvd { u, s, v })
}

/// Returns an error naming `what` when any entry is NaN or infinite.
pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} contains non-finite entries")))
    }
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let a = random(n, n, seed);
        &a * a.transpose() + Matrix::identity(n, n) * 0.1
    }

    #[test]
    fn covariance_of_zero_data_is_regularizer() {
        let c = regularized_covariance(&Matrix::zeros(3, 10), 1e-4).unwrap();
        assert!((c - Matrix::identity(3, 3) * 1e-4).abs().max() < 1e-18);
    }

    #[test]
    fn covariance_of_replicated_feature_is_rank_one() {
        let base = [0.5, -1.0, 2.0, -1.5, 0.0];
        let z = Matrix::from_fn(3, 5, |_, j| base[j]);
        let (zc, _) = center(&z);
        let c = regularized_covariance(&zc, 0.0).unwrap();
        let mean = base.iter().sum::<f64>() / 5.0;
        let var = base.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((c.trace() - 3.0 * var).abs() < 1e-12);
        let (values, _) = sym_eigen(&c).unwrap();
        assert!(values[1].abs() < 1e-12 && values[2].abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_double_loop() {
        let (z, _) = center(&random(4, 50, 7));
        let r = 0.01;
        let c = regularized_covariance(&z, r).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let mut sum = 0.0;
                for i in 0..50 {
                    sum += z[(a, i)] * z[(b, i)];
                }
                let expected = sum / 49.0 + if a == b { r } else { 0.0 };
                assert!((c[(a, b)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_needs_two_samples() {
        assert!(matches!(
            regularized_covariance(&Matrix::zeros(2, 1), 0.0),
            Err(Error::DegenerateBatch(1))
        ));
    }

    #[test]
    fn inv_sqrt_closed_forms() {
        let i = Matrix::identity(4, 4);
        assert!((inv_sqrt_sym(&i).unwrap() - &i).abs().max() < 1e-14);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]));
        let r = inv_sqrt_sym(&d).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn inv_sqrt_whitens_random_spd() {
        let m = random_spd(5, 3);
        let r = inv_sqrt_sym(&m).unwrap();
        let err = &r * &m * &r - Matrix::identity(5, 5);
        assert!(max_abs(&err) < 1e-8);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -0.5]));
        match inv_sqrt_sym(&m) {
            Err(Error::NotPositiveDefinite { eigenvalue, .. }) => assert_eq!(eigenvalue, -0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn svd_closed_forms() {
        let s = svd_topk(&Matrix::identity(3, 3), 3).unwrap();
        assert!(s.s.iter().all(|x| (x - 1.0).abs() < 1e-14));
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 2.0, 1.0]));
        let s = svd_topk(&d, 2).unwrap();
        assert!((s.s[0] - 3.0).abs() < 1e-14 && (s.s[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn svd_rejects_bad_k() {
        assert!(svd_topk(&Matrix::identity(3, 2), 3).is_err());
        assert!(svd_topk(&Matrix::identity(3, 2), 0).is_err());
    }

    #[test]
    fn svd_sign_convention() {
        let m = random(5, 4, 11);
        let s = svd_topk(&m, 4).unwrap();
        for col in s.u.column_iter() {
            let pivot = col.iter().fold(0.0f64, |b, &x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot >= 0.0);
        }
        let again = svd_topk(&m, 4).unwrap();
        assert_eq!(s.u, again.u);
        assert_eq!(s.v, again.v);
    }

    #[test]
    fn svd_factors_are_orthonormal() {
        let m = random(6, 4, 5);
        let s = svd_topk(&m, 3).unwrap();
        assert!(max_abs(&(s.u.transpose() * &s.u - Matrix::identity(3, 3))) < 1e-8);
        assert!(max_abs(&(s.v.transpose() * &s.v - Matrix::identity(3, 3))) < 1e-8);
        assert!(s.s[0] >= s.s[1] && s.s[1] >= s.s[2] && s.s[2] >= 0.0);
    }

    /// Independent oracle: cyclic Jacobi on `MᵀM` gives squared singular values.
    fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
        let mut a = a.clone();
        let n = a.nrows();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        d.sort_by(|x, y| y.total_cmp(x));
        d
    }

    #[test]
    fn svd_matches_full_decomposition_oracle() {
        let m = random(6, 4, 21);
        let s = svd_topk(&m, 4).unwrap();
        let squared = jacobi_eigenvalues(&(m.transpose() * &m));
        for (i, l) in squared.iter().enumerate() {
            assert!((s.s[i] - l.max(0.0).sqrt()).abs() < 1e-10);
        }
        // full rank: reconstruction error of the oracle is zero
        let recon = &s.u * Matrix::from_diagonal(&s.s) * s.v.transpose();
        assert!(max_abs(&(recon - &m)) < 1e-10);

        // rank-2 truncation error equals the discarded oracle singular values
        let s2 = svd_topk(&m, 2).unwrap();
        let recon2 = &s2.u * Matrix::from_diagonal(&s2.s) * s2.v.transpose();
        let err2 = (recon2 - &m).norm_squared();
        let oracle2: f64 = squared[2..].iter().sum();
        assert!((err2 - oracle2).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn covariance_symmetric_with_floor(seed in 0u64..10_000, r in 0.0f64..0.5) {
                let (z, _) = center(&random(5, 12, seed));
                let c = regularized_covariance(&z, r).unwrap();
                prop_assert!(max_abs(&(&c - c.transpose())) <= 1e-12);
                let (values, _) = sym_eigen(&c).unwrap();
                prop_assert!(values[values.len() - 1] >= r - 1e-12);
            }

            #[test]
            fn inv_sqrt_whitens_up_to_condition_1e6(seed in 0u64..10_000, log_cond in 0.0f64..6.0) {
                let n = 5;
                let q = random(n, n, seed).qr().q();
                let eig = Vector::from_fn(n, |i, _| 10f64.powf(-log_cond * i as f64 / (n - 1) as f64));
                let mut m = &q * Matrix::from_diagonal(&eig) * q.transpose();
                symmetrize(&mut m);
                let r = inv_sqrt_sym(&m).unwrap();
                prop_assert!(max_abs(&(&r * &m * &r - Matrix::identity(n, n))) < 1e-8);
            }

            #[test]
            fn svd_values_match_oracle(seed in 0u64..10_000, k in 1usize..=4) {
                let m = random(7, 4, seed);
                let s = svd_topk(&m, k).unwrap();
                let squared = jacobi_eigenvalues(&(m.transpose() * &m));
                for i in 0..k {
                    prop_assert!((s.s[i] - squared[i].max(0.0).sqrt()).abs() < 1e-10);
                }
            }
        }
    }
}
