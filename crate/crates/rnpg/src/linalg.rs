//! Dense symmetric-positive-definite solves by Cholesky factorization.
//! The Fisher matrices here are small (d <= 226), so a direct factorization
//! is exact and cheap; no iterative solver is needed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("dimension mismatch: matrix {n}x{n}, vector {m}")]
    DimensionMismatch { n: usize, m: usize },
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { col: j, pivot: d });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solve L L^T x = b given the lower factor L.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        let mut v = y[i];
        for k in 0..i {
            v -= l[(i, k)] * y[k];
        }
        y[i] = v / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= l[(k, i)] * y[k];
        }
        y[i] = v / l[(i, i)];
    }
    y
}

/// Solve A x = b for symmetric positive definite A, returning the solution
/// and the residual norm ||A x - b||_2. One step of iterative refinement is
/// applied when the first residual exceeds 1e-10 * (||b||_2 + 1).
pub fn spd_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<(Array1<f64>, f64), LinalgError> {
    let n = a.nrows();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { n, m: b.len() });
    }
    let l = cholesky(a)?;
    let mut x = cholesky_solve(&l, b);
    let residual_norm = |x: &Array1<f64>| -> f64 {
        let r = &b.to_owned() - &a.dot(x);
        r.dot(&r).sqrt()
    };
    let mut res = residual_norm(&x);
    let b_norm = b.dot(&b).sqrt();
    if res > 1e-10 * (b_norm + 1.0) {
        let r = &b.to_owned() - &a.dot(&x);
        let dx = cholesky_solve(&l, r.view());
        x += &dx;
        res = residual_norm(&x);
    }
    Ok((x, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve_returns_rhs() {
        let a = Array2::<f64>::eye(3);
        let b = array![1.0, -2.0, 0.5];
        let (x, res) = spd_solve(a.view(), b.view()).unwrap();
        assert_eq!(x, b);
        assert_eq!(res, 0.0);
    }

    #[test]
    fn scalar_solve_is_division() {
        let a = array![[4.0]];
        let b = array![2.0];
        let (x, _) = spd_solve(a.view(), b.view()).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_spd_solves_meet_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(1..=20);
            let mut m = Array2::<f64>::zeros((n, n));
            for v in m.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let a = m.t().dot(&m) + Array2::<f64>::eye(n) * 0.01;
            let mut b = Array1::<f64>::zeros(n);
            for v in b.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let (x, res) = spd_solve(a.view(), b.view()).unwrap();
            let g_norm = b.dot(&b).sqrt();
            assert!(res <= 1e-8 * g_norm.max(1e-30), "residual {res} vs {g_norm}");
            let check = (&a.dot(&x) - &b).mapv(f64::abs).sum();
            assert!(check < 1e-7);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        let b = array![1.0, 1.0];
        assert!(spd_solve(a.view(), b.view()).is_err());
    }
}
