//! Small dense numerical kernels: least squares, Newton root finding and
//! polynomial helpers.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};

/// Stopping rule for the Newton solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Absolute residual tolerance.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 100,
        }
    }
}

/// Least-squares solution of `a * x = b`.
///
/// Columns are equilibrated to unit norm before an SVD so that badly scaled
/// Vandermonde designs keep their numerical rank. Fails with
/// [`Error::RankDeficient`] when the scaled system has rank below its column
/// count.
pub fn solve_lsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if n == 0 || m < n {
        return Err(Error::DimensionMismatch(format!(
            "least squares needs rows >= cols >= 1, got {m}x{n}"
        )));
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} entries, matrix has {m} rows",
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    let scales: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    if scales.contains(&0.0) {
        return Err(Error::RankDeficient {
            rank: scales.iter().filter(|&&s| s > 0.0).count(),
            cols: n,
        });
    }
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }

    let svd = scaled.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let threshold = sigma_max * (m.max(n) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > threshold).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, cols: n });
    }
    let y = svd
        .solve(b, threshold)
        .map_err(|e| Error::NumericalFailure(e.to_string()))?;
    Ok(DVector::from_iterator(
        n,
        y.iter().zip(scales.iter()).map(|(v, s)| v / s),
    ))
}

/// Scalar Newton-Raphson for `f(x) = 0` starting at `x0`.
pub fn newton_scalar<F, D>(f: F, df: D, x0: f64, opts: &NewtonOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    newton_scalar_in(f, df, x0, f64::NEG_INFINITY, f64::INFINITY, opts)
}

/// Scalar Newton-Raphson with iterates clamped to `[lo, hi]`.
///
/// When the residual magnitude grows on two consecutive iterations the next
/// iterate is pulled halfway back toward the previous one.
pub fn newton_scalar_in<F, D>(
    f: F,
    df: D,
    x0: f64,
    lo: f64,
    hi: f64,
    opts: &NewtonOptions,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = x0.clamp(lo, hi);
    let mut fx = f(x);
    let mut growth = 0usize;
    for _ in 0..opts.max_iters {
        if !fx.is_finite() {
            return Err(Error::NonFinite);
        }
        if fx.abs() < opts.tol {
            return Ok(x);
        }
        let slope = df(x);
        if !slope.is_finite() || slope == 0.0 {
            return Err(Error::SingularJacobian);
        }
        let mut next = (x - fx / slope).clamp(lo, hi);
        let mut f_next = f(next);
        if f_next.abs() > fx.abs() {
            growth += 1;
            if growth >= 2 {
                next = 0.5 * (next + x);
                f_next = f(next);
                growth = 0;
            }
        } else {
            growth = 0;
        }
        if next == x {
            // Clamped against a bound with no further progress.
            break;
        }
        x = next;
        fx = f_next;
    }
    if fx.abs() < opts.tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence(opts.max_iters))
    }
}

/// Two-dimensional Newton-Raphson for `f(x) = 0` with an analytic Jacobian.
pub fn newton_2d<F, J>(f: F, jac: J, x0: Vector2<f64>, opts: &NewtonOptions) -> Result<Vector2<f64>>
where
    F: Fn(&Vector2<f64>) -> Vector2<f64>,
    J: Fn(&Vector2<f64>) -> Matrix2<f64>,
{
    let mut x = x0;
    let mut fx = f(&x);
    let mut growth = 0usize;
    for _ in 0..opts.max_iters {
        let norm = fx.amax();
        if !norm.is_finite() {
            return Err(Error::NonFinite);
        }
        if norm < opts.tol {
            return Ok(x);
        }
        let j = jac(&x);
        if j.determinant().abs() < 1e-14 {
            return Err(Error::SingularJacobian);
        }
        let step = j.lu().solve(&fx).ok_or(Error::SingularJacobian)?;
        let mut next = x - step;
        let mut f_next = f(&next);
        if f_next.amax() > norm {
            growth += 1;
            if growth >= 2 {
                next = 0.5 * (next + x);
                f_next = f(&next);
                growth = 0;
            }
        } else {
            growth = 0;
        }
        x = next;
        fx = f_next;
    }
    if fx.amax() < opts.tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence(opts.max_iters))
    }
}

/// Horner evaluation of `c[0] + c[1] x + c[2] x^2 + ...`.
pub fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Derivative of the polynomial with ascending coefficients `coeffs` at `x`.
pub fn poly_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
}

const MONOTONE_SAMPLES: usize = 1000;

/// True when the derivative is strictly positive on `[lo, hi]`, checked at
/// both endpoints and 1000 interior points.
pub fn poly_monotone_on(coeffs: &[f64], lo: f64, hi: f64) -> bool {
    (0..=MONOTONE_SAMPLES).all(|i| {
        let t = lo + (hi - lo) * i as f64 / MONOTONE_SAMPLES as f64;
        poly_derivative(coeffs, t) > 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lsq_identity() {
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = solve_lsq(&a, &b).unwrap();
        assert_relative_eq!(x, b, epsilon = 1e-15);
    }

    #[test]
    fn lsq_mean_of_inconsistent_rows() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 2.0]);
        let x = solve_lsq(&a, &b).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lsq_vandermonde_recovers_coefficients() {
        // KB-style odd powers of theta, forward generated.
        let truth = [-0.01, 0.002, -3e-4, 4e-5];
        let rows = 40;
        let mut a = DMatrix::zeros(rows, 4);
        let mut b = DVector::zeros(rows);
        for i in 0..rows {
            let theta = 0.05 + 1.6 * i as f64 / rows as f64;
            for j in 0..4 {
                a[(i, j)] = theta.powi(2 * j as i32 + 3);
            }
            b[i] = (0..4).map(|j| a[(i, j)] * truth[j]).sum();
        }
        let x = solve_lsq(&a, &b).unwrap();
        for j in 0..4 {
            assert!((x[j] - truth[j]).abs() < 1e-10, "{j}: {} vs {}", x[j], truth[j]);
        }
        let r = &a * &x - &b;
        let grad = a.transpose() * r;
        assert!(grad.amax() < 1e-8 * a.norm() * b.norm());
    }

    #[test]
    fn lsq_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            solve_lsq(&a, &b),
            Err(Error::RankDeficient { rank: 1, cols: 2 })
        ));
    }

    #[test]
    fn lsq_rejects_wide_systems() {
        let a = DMatrix::<f64>::zeros(1, 2);
        let b = DVector::zeros(1);
        assert!(matches!(solve_lsq(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn newton_scalar_identity() {
        let root = newton_scalar(|t| t - 0.3, |_| 1.0, 0.3, &NewtonOptions::default()).unwrap();
        assert_eq!(root, 0.3);
    }

    #[test]
    fn newton_scalar_cubic() {
        // 0.5 + 0.1 * 0.5^3 = 0.5125
        let d = |t: f64| t + 0.1 * t.powi(3);
        let root = newton_scalar(
            |t| d(t) - 0.5125,
            |t| 1.0 + 0.3 * t * t,
            0.5125,
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((root - 0.5).abs() < 1e-12);
        assert!((d(root) - 0.5125).abs() < 1e-12);
    }

    #[test]
    fn newton_scalar_zero_target() {
        let d = |t: f64| t - 0.05 * t.powi(3);
        let root = newton_scalar_in(
            d,
            |t| 1.0 - 0.15 * t * t,
            0.0,
            0.0,
            std::f64::consts::PI,
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(root, 0.0);
    }

    #[test]
    fn newton_scalar_reports_no_convergence() {
        // x^2 + 1 has no real root.
        let opts = NewtonOptions { tol: 1e-12, max_iters: 20 };
        let err = newton_scalar(|x| x * x + 1.0, |x| 2.0 * x, 0.7, &opts).unwrap_err();
        assert!(matches!(err, Error::NoConvergence(_) | Error::SingularJacobian));
    }

    fn distort(p: &Vector2<f64>, k1: f64, p1: f64, p2: f64) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2;
        Vector2::new(
            radial * x + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            radial * y + 2.0 * p2 * x * y + p1 * (r2 + 2.0 * y * y),
        )
    }

    fn distort_jac(p: &Vector2<f64>, k1: f64, p1: f64, p2: f64) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2;
        Matrix2::new(
            radial + 2.0 * k1 * x * x + 2.0 * p1 * y + 6.0 * p2 * x,
            2.0 * k1 * x * y + 2.0 * p1 * x + 2.0 * p2 * y,
            2.0 * k1 * x * y + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + 2.0 * k1 * y * y + 2.0 * p2 * x + 6.0 * p1 * y,
        )
    }

    #[test]
    fn newton_2d_identity_distortion() {
        let target = Vector2::new(0.3, -0.1);
        let root = newton_2d(
            |p| distort(p, 0.0, 0.0, 0.0) - target,
            |p| distort_jac(p, 0.0, 0.0, 0.0),
            target,
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(root, target);
    }

    #[test]
    fn newton_2d_recovers_distorted_points() {
        for (k1, p1, p2, x, y) in [
            (-0.1, 0.0, 0.0, 0.2, 0.1),
            (0.05, 0.001, -0.002, 0.3, -0.25),
        ] {
            let truth = Vector2::new(x, y);
            let target = distort(&truth, k1, p1, p2);
            let root = newton_2d(
                |p| distort(p, k1, p1, p2) - target,
                |p| distort_jac(p, k1, p1, p2),
                target,
                &NewtonOptions::default(),
            )
            .unwrap();
            assert!((root - truth).amax() < 1e-10);
        }
    }

    #[test]
    fn newton_2d_singular() {
        let err = newton_2d(
            |p| Vector2::new(p.x + p.y - 1.0, p.x + p.y - 1.0),
            |_| Matrix2::new(1.0, 1.0, 1.0, 1.0),
            Vector2::new(0.0, 0.0),
            &NewtonOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::SingularJacobian);
    }

    #[test]
    fn polynomial_helpers() {
        assert_eq!(poly_eval(&[0.0, 1.0], 2.0), 2.0);
        assert_eq!(poly_eval(&[1.0, 2.0, 3.0], 2.0), 17.0);
        assert_eq!(poly_derivative(&[1.0, 2.0, 3.0], 2.0), 14.0);
        let kb_identity = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(poly_monotone_on(&kb_identity, 0.0, std::f64::consts::PI));
        // d = t - t^3 has d'(0.8) = -0.92
        assert!(!poly_monotone_on(&[0.0, 1.0, 0.0, -1.0], 0.0, 1.0));
    }
}
