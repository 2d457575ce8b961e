//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Relative singular-value cutoff used for rank decisions and pseudo-inverses.
pub const RANK_RTOL: f64 = 1e-9;

/// Minimum-norm least-squares solution of `a x = rhs` together with the
/// numerical rank used. Singular values below `rtol * sigma_max` are dropped.
pub fn min_norm_solve<T: Real>(a: &DMatrix<T>, rhs: &DVector<T>, rtol: f64) -> (DVector<T>, usize) {
    let n = a.ncols();
    if a.iter().all(|x| *x == T::zero()) {
        return (DVector::zeros(n), 0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = smax * T::lit(rtol);
    let rank = svd.singular_values.iter().filter(|s| **s > cut).count();
    let x = svd
        .solve(rhs, cut)
        .unwrap_or_else(|_| DVector::zeros(n));
    (x, rank)
}

/// Numerical rank with cutoff `rtol * sigma_max`.
pub fn rank<T: Real>(a: &DMatrix<T>, rtol: f64) -> usize {
    if a.iter().all(|x| *x == T::zero()) {
        return 0;
    }
    let sv = a.clone().singular_values();
    let cut = sv.max() * T::lit(rtol);
    sv.iter().filter(|s| **s > cut).count()
}

/// Ratio of smallest to largest singular value (0 for the zero matrix).
pub fn inverse_condition<T: Real>(a: &DMatrix<T>) -> T {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if smax == T::zero() {
        return T::zero();
    }
    sv.min() / smax
}

/// Solves a square system by LU, refusing numerically singular matrices.
pub fn solve_square<T: Real>(a: &DMatrix<T>, rhs: &DVector<T>, min_rcond: f64) -> Option<DVector<T>> {
    if inverse_condition(a) < T::lit(min_rcond) {
        return None;
    }
    let x = a.clone().lu().solve(rhs)?;
    x.iter().all(|v| v.finite()).then_some(x)
}

pub fn max_abs<T: Real>(v: impl IntoIterator<Item = T>) -> T {
    v.into_iter()
        .fold(T::zero(), |m, x| {
            let a = <T as nalgebra::ComplexField>::abs(x);
            if a > m {
                a
            } else {
                m
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_norm_on_rank_deficient_system() {
        // x + y = 2 has min-norm solution (1, 1).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let (x, r) = min_norm_solve(&a, &b, RANK_RTOL);
        assert_eq!(r, 1);
        assert!((x[0] - 1.0f64).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_system_gives_zero() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let (x, r) = min_norm_solve(&a, &DVector::zeros(3), RANK_RTOL);
        assert_eq!(r, 0);
        assert_eq!(x, DVector::zeros(3));
    }

    #[test]
    fn singular_square_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(solve_square(&a, &DVector::from_vec(vec![1.0, 1.0]), 1e-13).is_none());
    }
}
