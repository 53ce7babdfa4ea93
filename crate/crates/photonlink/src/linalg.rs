//! Dense complex linear-algebra helpers: matrix exponential, Hermitian
//! square root, sorted eigendecompositions, and the probability-simplex
//! projection used by the tomography reconstructor.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, C64};

/// 1-norm (maximum absolute column sum).
pub fn one_norm(a: &DMatrix<C64>) -> f64 {
    let mut best = 0.0_f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// 1/2 (A + A^dag): forces exact Hermiticity after lossy numerics.
pub fn hermitize(a: &DMatrix<C64>) -> DMatrix<C64> {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Matrix exponential by scaling-and-squaring with a Pade(13) core.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    const THETA_13: f64 = 5.371_920_351_148_152;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");

    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a * C64::new(1.0 / 2f64.powi(s as i32), 0.0);

    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];

    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * C64::from(B[13]) + &a4 * C64::from(B[11]) + &a2 * C64::from(B[9]);
    let u = &scaled
        * (&a6 * u_inner
            + &a6 * C64::from(B[7])
            + &a4 * C64::from(B[5])
            + &a2 * C64::from(B[3])
            + &id * C64::from(B[1]));
    let v_inner = &a6 * C64::from(B[12]) + &a4 * C64::from(B[10]) + &a2 * C64::from(B[8]);
    let v = &a6 * v_inner
        + &a6 * C64::from(B[6])
        + &a4 * C64::from(B[4])
        + &a2 * C64::from(B[2])
        + &id * C64::from(B[0]);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = lhs
        .lu()
        .solve(&rhs)
        .expect("Pade denominator is singular; expm scaling failed");
    for _ in 0..s {
        x = &x * &x;
    }
    x
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn eigh(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let h = hermitize(a);
    let se = h.symmetric_eigen();
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::<C64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Principal square root of a positive semidefinite Hermitian matrix.
/// Small negative eigenvalues from roundoff are clamped to zero.
pub fn sqrtm_psd(a: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = eigh(a);
    let n = vals.len();
    let mut d = DMatrix::<C64>::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        d[(i, i)] = C64::from(v.max(0.0).sqrt());
    }
    &vecs * d * vecs.adjoint()
}

/// Euclidean projection of a real vector onto the probability simplex
/// {x : x_i >= 0, sum x_i = 1}.
pub fn project_simplex(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    assert!(n > 0, "cannot project an empty vector");
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    let mut found = false;
    for (j, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (j as f64 + 1.0);
        if v - t > 0.0 {
            theta = t;
            found = true;
        }
    }
    if !found {
        // all mass on the largest entry
        theta = sorted[0] - 1.0;
    }
    w.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Solve the transcendental equation f(x) = 0 on [lo, hi] by bisection
/// refined with Newton steps where the derivative is supplied.
/// The bracket must straddle a sign change.
pub fn bracketed_newton<F, G>(
    f: F,
    df: G,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::NonConvergence(format!(
            "no sign change on [{a:.6e}, {b:.6e}]"
        )));
    }
    let sign_a = fa > 0.0;
    let mut x = 0.5 * (a + b);
    for _ in 0..max_iter {
        let fx = f(x);
        if fx.abs() <= tol {
            return Ok(x);
        }
        if (fx > 0.0) == sign_a {
            a = x;
        } else {
            b = x;
        }
        let d = df(x);
        let newton = if d != 0.0 { x - fx / d } else { f64::NAN };
        x = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    let fx = f(x);
    if fx.abs() <= tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence(format!(
            "residual {fx:.3e} above tolerance {tol:.3e}"
        )))
    }
}

/// Find a root of a continuous function by plain bisection on a sign-change
/// bracket, to a relative abscissa tolerance.
pub fn bisect<F>(f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NonConvergence(format!(
            "no sign change on [{a:.6e}, {b:.6e}]"
        )));
    }
    let mut fa = fa;
    while (b - a).abs() > rel_tol * a.abs().max(b.abs()) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Nonnegative least squares: minimize |a x - y|_2 subject to x >= 0, via
/// the Lawson-Hanson active-set method. Components the data never supports
/// come back as exact zeros.
pub fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 || y.len() != m {
        return Err(Error::Dimension(format!(
            "nonnegative least squares needs a nonempty {m}x{n} matrix and {m} observations, got {}",
            y.len()
        )));
    }
    let a_max = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let y_max = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-12 * a_max.max(1.0) * y_max.max(1.0) * m.max(n) as f64;

    let solve_on = |passive: &[bool]| -> Result<DVector<f64>> {
        let cols: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let mut sub = DMatrix::<f64>::zeros(m, cols.len());
        for (c, &i) in cols.iter().enumerate() {
            sub.set_column(c, &a.column(i));
        }
        let sol = sub
            .svd(true, true)
            .solve(y, 1e-14)
            .map_err(|e| Error::Numerics(format!("least-squares subproblem failed: {e}")))?;
        let mut z = DVector::<f64>::zeros(n);
        for (c, &i) in cols.iter().enumerate() {
            z[i] = sol[c];
        }
        Ok(z)
    };

    let mut passive = vec![false; n];
    let mut x = DVector::<f64>::zeros(n);
    let cap = 3 * n.max(10);
    for _ in 0..cap {
        let w = a.transpose() * (y - a * &x);
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !passive[i] && w[i] > tol && best.is_none_or(|b| w[i] > w[b]) {
                best = Some(i);
            }
        }
        let Some(j) = best else {
            return Ok(x);
        };
        passive[j] = true;

        let mut feasible = false;
        for _ in 0..cap {
            let z = solve_on(&passive)?;
            let violating: Vec<usize> = (0..n).filter(|&i| passive[i] && z[i] <= 0.0).collect();
            if violating.is_empty() {
                x = z;
                feasible = true;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &i in &violating {
                let step = x[i] / (x[i] - z[i]);
                if step < alpha {
                    alpha = step;
                }
            }
            x = &x + (&z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol.max(1e-300) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
        if !feasible {
            return Err(Error::NonConvergence(
                "nonnegative least squares cycled without reaching feasibility".into(),
            ));
        }
    }
    Err(Error::NonConvergence(
        "nonnegative least squares exceeded its iteration budget".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_zero_is_identity() {
        let z = DMatrix::<C64>::zeros(4, 4);
        let e = expm(&z);
        assert_relative_eq!(
            one_norm(&(e - DMatrix::<C64>::identity(4, 4))),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn expm_diagonal() {
        let mut a = DMatrix::<C64>::zeros(3, 3);
        a[(0, 0)] = C64::new(1.0, 0.0);
        a[(1, 1)] = C64::new(-2.0, 0.5);
        a[(2, 2)] = C64::new(0.0, 3.0);
        let e = expm(&a);
        for i in 0..3 {
            let want = a[(i, i)].exp();
            assert!((e[(i, i)] - want).norm() < 1e-13);
        }
    }

    #[test]
    fn expm_pauli_rotation() {
        // exp(-i theta sigma_x / 2) has cos(theta/2) diagonal
        let theta = 0.7_f64;
        let mut sx = DMatrix::<C64>::zeros(2, 2);
        sx[(0, 1)] = C64::from(1.0);
        sx[(1, 0)] = C64::from(1.0);
        let a = sx * C64::new(0.0, -theta / 2.0);
        let e = expm(&a);
        assert!((e[(0, 0)].re - (theta / 2.0).cos()).abs() < 1e-14);
        assert!((e[(0, 1)].im + (theta / 2.0).sin()).abs() < 1e-14);
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        let mut a = DMatrix::<C64>::zeros(2, 2);
        a[(0, 0)] = C64::from(20.0);
        a[(1, 1)] = C64::from(-30.0);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)].re, 20f64.exp(), max_relative = 1e-12);
        assert_relative_eq!(e[(1, 1)].re, (-30f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn sqrtm_squares_back() {
        let b = DMatrix::<C64>::from_fn(4, 4, |i, j| {
            C64::new((i + 2 * j) as f64, (i as f64) - (j as f64))
        });
        let a = &b * b.adjoint(); // PSD
        let r = sqrtm_psd(&a);
        assert!(one_norm(&(&r * &r - &a)) < 1e-10 * one_norm(&a).max(1.0));
    }

    #[test]
    fn simplex_projection_basics() {
        let p = project_simplex(&[0.5, 0.5]);
        assert_relative_eq!(p[0], 0.5);
        let p = project_simplex(&[2.0, 0.0]);
        assert_relative_eq!(p[0], 1.0);
        assert_relative_eq!(p[1], 0.0);
        let p = project_simplex(&[-1.0, -2.0]);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bracketed_newton_tight_residual() {
        let f = |x: f64| x + 0.33 * x.sin() - 1.9;
        let df = |x: f64| 1.0 + 0.33 * x.cos();
        let r = bracketed_newton(f, df, 0.0, 3.0, 1e-13, 100).unwrap();
        assert!(f(r).abs() <= 1e-13);
    }

    #[test]
    fn nnls_recovers_consistent_nonnegative_solution() {
        let a = DMatrix::<f64>::from_row_slice(
            4,
            3,
            &[
                1.0, 0.2, 0.0, //
                0.0, 1.0, 0.3, //
                0.5, 0.0, 1.0, //
                0.1, 0.4, 0.2,
            ],
        );
        let x_true = DVector::<f64>::from_column_slice(&[2.0, 0.0, 0.7]);
        let y = &a * &x_true;
        let x = nnls(&a, &y).unwrap();
        assert!((x - x_true).amax() < 1e-9);
    }

    #[test]
    fn nnls_clips_components_the_data_pulls_negative() {
        let a = DMatrix::<f64>::identity(2, 2);
        let y = DVector::<f64>::from_column_slice(&[3.0, -2.0]);
        let x = nnls(&a, &y).unwrap();
        assert_relative_eq!(x[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 0.0);
    }

    #[test]
    fn nnls_satisfies_stationarity_on_the_support() {
        let a = DMatrix::<f64>::from_row_slice(
            5,
            3,
            &[
                1.0, 1.0, 0.0, //
                1.0, 0.0, 1.0, //
                0.0, 1.0, 1.0, //
                1.0, 1.0, 1.0, //
                0.2, 0.9, 0.4,
            ],
        );
        let y = DVector::<f64>::from_column_slice(&[1.0, 2.0, -0.5, 1.5, 0.3]);
        let x = nnls(&a, &y).unwrap();
        assert!(x.iter().all(|&v| v >= 0.0));
        let grad = a.transpose() * (&y - &a * &x);
        for i in 0..3 {
            if x[i] > 0.0 {
                assert!(
                    grad[i].abs() < 1e-9,
                    "gradient {} on active column",
                    grad[i]
                );
            } else {
                assert!(grad[i] < 1e-9, "positive descent direction left behind");
            }
        }
    }
}
