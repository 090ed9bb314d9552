//! The small amount of dense linear algebra the engine needs: a Cholesky
//! based SPD solve, symmetrization and a fixed-order dot product.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Dot product with a fixed summation order.
///
/// Every logit in the crate goes through this function so that the exact
/// and shortlisted inference paths produce bit-identical values.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        for l in 0..4 {
            let t = a[i + l] - b[i + l];
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let t = a[i] - b[i];
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Replace `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Array2<f64>) {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.ncols(),
        });
    }
    let mut l = vec![0.0f64; d * d];
    for i in 0..d {
        let (done, rest) = l.split_at_mut(i * d);
        let row_i = &mut rest[..d];
        for j in 0..i {
            let row_j = &done[j * d..j * d + j];
            row_i[j] = (a[[i, j]] - dot(&row_i[..j], row_j)) / done[j * d + j];
        }
        let pivot = a[[i, i]] - dot(&row_i[..i], &row_i[..i]);
        if !(pivot > 0.0 && pivot.is_finite()) {
            return Err(Error::NotPositiveDefinite { pivot: i, value: pivot });
        }
        row_i[i] = pivot.sqrt();
    }
    Ok(Array2::from_shape_vec((d, d), l).expect("square buffer"))
}

/// Solve `A X = B` for symmetric positive-definite `A`.
///
/// Factorizes `A` once and runs forward/back substitution per column of `B`;
/// no inverse is ever formed.
pub fn spd_solve(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    if b.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.nrows(),
        });
    }
    let l = cholesky(a)?;
    // Work on Bᵀ so each right-hand side is a contiguous row.
    let mut xt = b.t().as_standard_layout().into_owned();
    let l_slice = l.as_slice().expect("standard layout");
    let lt = l.t().as_standard_layout().into_owned();
    let lt_slice = lt.as_slice().expect("standard layout");
    for mut rhs in xt.rows_mut() {
        let y = rhs.as_slice_mut().expect("standard layout");
        // L y = b
        for i in 0..d {
            let li = &l_slice[i * d..i * d + i];
            y[i] = (y[i] - dot(li, &y[..i])) / l_slice[i * d + i];
        }
        // Lᵀ x = y
        for i in (0..d).rev() {
            let s = dot(&lt_slice[i * d + i + 1..(i + 1) * d], &y[i + 1..]);
            y[i] = (y[i] - s) / l_slice[i * d + i];
        }
    }
    Ok(xt.reversed_axes().as_standard_layout().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_spd(d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(&mut rng));
        m.t().dot(&m) + Array2::<f64>::eye(d)
    }

    fn max_abs(m: &Array2<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn identity_solve() {
        let i = Array2::<f64>::eye(4);
        let x = spd_solve(i.view(), i.view()).unwrap();
        assert_eq!(x, i);
    }

    #[test]
    fn scalar_matrix_solve() {
        let a = Array2::<f64>::eye(3) * 2.0;
        let x = spd_solve(a.view(), Array2::<f64>::eye(3).view()).unwrap();
        assert!(max_abs(&(x - Array2::<f64>::eye(3) * 0.5)) <= 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let a = random_spd(8, 7);
        let i = Array2::<f64>::eye(8);
        let x = spd_solve(a.view(), i.view()).unwrap();
        let r = a.dot(&x) - &i;
        assert!(max_abs(&r) < 1e-10, "residual {}", max_abs(&r));
    }

    #[test]
    fn solve_against_self_is_identity() {
        let a = random_spd(12, 3);
        let x = spd_solve(a.view(), a.view()).unwrap();
        assert!(max_abs(&(x - Array2::<f64>::eye(12))) < 1e-10);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        let err = spd_solve(a.view(), Array2::<f64>::eye(2).view()).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }));
        let z = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            cholesky(z.view()),
            Err(Error::NotPositiveDefinite { pivot: 0, .. })
        ));
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(f64::from).collect();
        let b = vec![1.0; 7];
        assert_eq!(dot(&a, &b), 21.0);
        assert_eq!(squared_distance(&a, &b), (0..7).map(|v| ((v - 1) * (v - 1)) as f64).sum());
    }
}
