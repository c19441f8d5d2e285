//! Small dense kernels used by the solver and the simulator.
//!
//! Everything here works on `nalgebra` dynamic matrices. The matrices are tiny
//! (a few dozen rows at most), so the routines favour determinism and
//! accuracy over speed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`factor_spd`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalue ratio below which a matrix is rejected as not positive definite.
pub const PD_RATIO_TOL: f64 = 1e-12;

/// Cached spectral factors of a symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactorization {
    /// Symmetric square root `R^{1/2}`.
    pub sqrt: DMatrix<f64>,
    /// Symmetric inverse square root `R^{-1/2}`.
    pub inv_sqrt: DMatrix<f64>,
    /// `R^{-1}`, formed from the eigendecomposition.
    pub inverse: DMatrix<f64>,
    /// Largest eigenvalue.
    pub lambda_max: f64,
    /// Smallest eigenvalue.
    pub lambda_min: f64,
    /// Lower-triangular Cholesky factor, `L Lᵀ = R`.
    pub chol: DMatrix<f64>,
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.sqrt.nrows()
    }

    /// Reassembles `R` from its square root.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.sqrt * &self.sqrt
    }
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigenvalues in ascending order with matching eigenvector columns.
fn sorted_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

fn spectral_function(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * f(values[j]));
    let out = &scaled * vectors.transpose();
    // exact symmetry keeps downstream products reproducible
    (&out + out.transpose()) * 0.5
}

/// Factors a symmetric positive-definite matrix through its eigendecomposition.
pub fn factor_spd(r: &DMatrix<f64>) -> Result<SpdFactorization> {
    if r.nrows() != r.ncols() || r.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "expected a non-empty square matrix, got {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("matrix contains non-finite entries".into()));
    }
    let asym = asymmetry(r);
    if asym > SYMMETRY_TOL * max_abs(r).max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = (r + r.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(&sym);
    let n = values.len();
    let lambda_min = values[0];
    let lambda_max = values[n - 1];
    if !(lambda_max > 0.0) || lambda_min <= PD_RATIO_TOL * lambda_max {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: lambda_min,
            largest: lambda_max,
        });
    }
    let chol = sym
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            eigenvalue: lambda_min,
            largest: lambda_max,
        })?
        .l();
    Ok(SpdFactorization {
        sqrt: spectral_function(&values, &vectors, f64::sqrt),
        inv_sqrt: spectral_function(&values, &vectors, |l| 1.0 / l.sqrt()),
        inverse: spectral_function(&values, &vectors, |l| 1.0 / l),
        lambda_max,
        lambda_min,
        chol,
    })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_psd(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Thin singular value decomposition `A = U diag(sigma) Vᵀ` of an `m x n`
/// matrix with `m >= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// `U diag(gammas) Vᵀ`, the matrix with the same singular vectors and
    /// replaced singular values.
    pub fn recompose(&self, gammas: &[f64]) -> DMatrix<f64> {
        assert_eq!(gammas.len(), self.sigma.len());
        let scaled = DMatrix::from_fn(self.u.nrows(), self.u.ncols(), |i, j| self.u[(i, j)] * gammas[j]);
        scaled * self.v.transpose()
    }
}

/// Thin SVD with descending singular values and a fixed sign convention: in
/// every column of `V` the entry of largest magnitude (first one on ties) is
/// nonnegative.
pub fn thin_svd(a: &DMatrix<f64>) -> ThinSvd {
    let (m, n) = a.shape();
    assert!(m >= n, "thin_svd expects rows >= cols, got {m}x{n}");
    let svd = a.clone().svd(true, true);
    let u_raw = svd.u.expect("left singular vectors requested");
    let v_raw = svd.v_t.expect("right singular vectors requested").transpose();
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

    let mut u = DMatrix::zeros(m, n);
    let mut v = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u_raw.column(src).clone_owned();
        let mut vcol = v_raw.column(src).clone_owned();
        let mut pivot = 0;
        for i in 1..n {
            if vcol[i].abs() > vcol[pivot].abs() {
                pivot = i;
            }
        }
        if vcol[pivot] < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
        sigma.push(sv[src].max(0.0));
    }
    ThinSvd { u, sigma, v }
}

/// The unique positive root of `rho_lambda * g^4 - sigma * g^3 - 2 = 0`.
///
/// The polynomial has one sign change, hence exactly one positive root; it
/// is bracketed by `[min(1, c), max(1, sigma / rho_lambda + c)]` with
/// `c = (2 / rho_lambda)^(1/4)` and refined with safeguarded Newton steps.
pub fn positive_quartic_root(rho_lambda: f64, sigma: f64) -> f64 {
    debug_assert!(rho_lambda > 0.0 && sigma >= 0.0);
    let p = |g: f64| {
        let g3 = g * g * g;
        rho_lambda * g3 * g - sigma * g3 - 2.0
    };
    let dp = |g: f64| {
        let g2 = g * g;
        4.0 * rho_lambda * g2 * g - 3.0 * sigma * g2
    };
    let c = (2.0 / rho_lambda).powf(0.25);
    let mut lo = c.min(1.0);
    let mut hi = (sigma / rho_lambda + c).max(1.0);
    if p(lo) >= 0.0 {
        return lo;
    }
    if p(hi) <= 0.0 {
        return hi;
    }
    let mut x = hi;
    for _ in 0..200 {
        let fx = p(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = dp(x);
        let newton = x - fx / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return next;
        }
        x = next;
    }
    x
}

/// Draws `L z` with `z` i.i.d. standard normal taken from `rng`.
pub fn sample_correlated_noise<R: Rng + ?Sized>(chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(chol.nrows(), (0..chol.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    chol * z
}

/// Relative Frobenius distance `‖a - b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn scaled_identity_factors() {
        let f = factor_spd(&(DMatrix::identity(3, 3) * 4.0)).unwrap();
        assert!((f.sqrt.clone() - DMatrix::identity(3, 3) * 2.0).norm() < 1e-14);
        assert!((f.lambda_max - 4.0).abs() < 1e-14);
        assert!((f.chol.clone() - DMatrix::identity(3, 3) * 2.0).norm() < 1e-14);
    }

    #[test]
    fn two_by_two_lambda_max() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = factor_spd(&r).unwrap();
        assert!((f.lambda_max - 3.0).abs() < 1e-14);
        assert!((f.lambda_min - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 2.0]);
        assert!(matches!(factor_spd(&r), Err(Error::NotSymmetric { .. })));
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match factor_spd(&r) {
            Err(Error::NotPositiveDefinite { eigenvalue, .. }) => assert!((eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spd_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..100 {
            let n = 2 + k % 11;
            let r = random_spd(&mut rng, n);
            let f = factor_spd(&r).unwrap();
            assert!(rel_frobenius(&(&f.sqrt * &f.sqrt), &r) <= 1e-10);
            let eye = DMatrix::identity(n, n);
            assert!(rel_frobenius(&(&f.sqrt * &f.inv_sqrt), &eye) <= 1e-10);
            assert!(rel_frobenius(&(&f.chol * f.chol.transpose()), &r) <= 1e-10);
            for _ in 0..100 {
                let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
                let rq = (v.transpose() * &r * &v)[(0, 0)];
                assert!(f.lambda_max >= rq - 1e-12 * f.lambda_max);
            }
        }
    }

    #[test]
    fn svd_simple_cases() {
        let a = DMatrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let s = thin_svd(&a);
        assert!((s.sigma[0] - 3.0).abs() < 1e-14 && (s.sigma[1] - 2.0).abs() < 1e-14);
        let z = thin_svd(&DMatrix::zeros(4, 3));
        assert!(z.sigma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn svd_reconstruction_and_sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
        let s = thin_svd(&a);
        assert!(rel_frobenius(&s.recompose(&s.sigma), &a) < 1e-10);
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..3 {
            let col = s.v.column(j);
            let mut pivot = 0;
            for i in 1..3 {
                if col[i].abs() > col[pivot].abs() {
                    pivot = i;
                }
            }
            assert!(col[pivot] >= 0.0);
        }
        let utu = s.u.transpose() * &s.u;
        assert!((utu - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert_eq!(thin_svd(&a), s);
    }

    #[test]
    fn max_eigenvalues() {
        assert!((max_eig_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0]))) - 5.0).abs() < 1e-12);
        assert!((max_eig_psd(&DMatrix::from_element(4, 4, 1.0)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn quartic_examples() {
        assert!((positive_quartic_root(2.0, 0.0) - 1.0).abs() < 1e-14);
        // frozen from a 200-step bisection of g^4 - g^3 - 2 on [1, 2]
        assert!((positive_quartic_root(1.0, 1.0) - 1.543_689_012_692_076).abs() < 1e-12);
        // bisection of g^4 - 10 g^3 - 2 on [10, 11]
        assert!((positive_quartic_root(1.0, 10.0) - 10.001_998_801_198_546).abs() < 1e-12);
    }

    #[test]
    fn quartic_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let a = 10f64.powf(rng.random_range(-3.0..3.0));
            let s = if rng.random_bool(0.1) { 0.0 } else { 10f64.powf(rng.random_range(-3.0..3.0)) };
            let g = positive_quartic_root(a, s);
            let res = a * g.powi(4) - s * g.powi(3) - 2.0;
            assert!(g > 0.0);
            assert!(res.abs() <= 1e-12 * (s * g.powi(3)).max(1.0), "a={a} s={s} g={g} res={res}");
        }
    }

    #[test]
    fn noise_scaling() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let mut r3 = ChaCha8Rng::seed_from_u64(9);
        let raw: Vec<f64> = (0..3).map(|_| r1.sample::<f64, _>(StandardNormal)).collect();
        let d1 = sample_correlated_noise(&eye, &mut r2);
        assert_eq!(d1.as_slice(), raw.as_slice());
        let d4 = sample_correlated_noise(&(eye * 2.0), &mut r3);
        assert_eq!(d4, d1 * 2.0);
    }
}
