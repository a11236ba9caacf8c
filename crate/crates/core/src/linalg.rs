//! Dense linear-algebra primitives used by the estimator and its diagnostics.
//!
//! Everything here works on `nalgebra` dynamic matrices; the factorizations
//! themselves are delegated to `faer`. Singular value decompositions are
//! always returned with a nonincreasing spectrum, and any
//! singular value below `RANK_TOLERANCE * sigma_1` is treated as an exact zero
//! when forming pseudoinverses, projections and thresholded matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Thin SVD `M = U diag(s) V^T` with `s` sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `n x k` matrix with orthonormal columns.
    pub left: Matrix,
    pub singular_values: Vec<f64>,
    /// `p x k` matrix with orthonormal columns.
    pub right: Matrix,
}

fn to_faer(m: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("matrix has non-finite entries".into()))
    }
}

impl SvdFactors {
    pub fn compute(m: &Matrix) -> Result<Self> {
        check_finite(m)?;
        let k = m.nrows().min(m.ncols());
        if k == 0 {
            return Ok(Self {
                left: Matrix::zeros(m.nrows(), 0),
                singular_values: Vec::new(),
                right: Matrix::zeros(m.ncols(), 0),
            });
        }
        let svd = to_faer(m)
            .thin_svd()
            .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
        let s = svd.S().column_vector();
        Ok(Self {
            left: from_faer(svd.U()),
            singular_values: (0..k).map(|i| s[i].max(0.0)).collect(),
            right: from_faer(svd.V()),
        })
    }

    pub fn largest(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Absolute cutoff implied by a relative zero tolerance.
    pub fn zero_cutoff(&self, zero_tolerance: f64) -> f64 {
        zero_tolerance * self.largest()
    }

    /// Indices of singular values that are numerically nonzero and strictly above `lambda`.
    pub fn retained(&self, lambda: f64, zero_tolerance: f64) -> impl Iterator<Item = usize> + '_ {
        let cutoff = self.zero_cutoff(zero_tolerance);
        self.singular_values
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s > lambda && s > cutoff)
            .map(|(i, _)| i)
    }

    pub fn rank(&self, zero_tolerance: f64) -> usize {
        self.retained(0.0, zero_tolerance).count()
    }

    /// `sum_i f(s_i) u_i v_i^T` over the retained indices.
    fn spectral_sum(&self, idx: &[usize], f: impl Fn(f64) -> f64) -> Matrix {
        let mut out = Matrix::zeros(self.left.nrows(), self.right.nrows());
        for &i in idx {
            let scale = f(self.singular_values[i]);
            out.ger(scale, &self.left.column(i), &self.right.column(i), 1.0);
        }
        out
    }

    /// `sum_i f(s_i) v_i u_i^T` over the retained indices (pseudoinverse shape).
    fn spectral_sum_transposed(&self, idx: &[usize], f: impl Fn(f64) -> f64) -> Matrix {
        let mut out = Matrix::zeros(self.right.nrows(), self.left.nrows());
        for &i in idx {
            let scale = f(self.singular_values[i]);
            out.ger(scale, &self.right.column(i), &self.left.column(i), 1.0);
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        let all: Vec<usize> = (0..self.singular_values.len()).collect();
        self.spectral_sum(&all, |s| s)
    }

    /// Hard-thresholded reconstruction keeping `s_i > lambda`.
    pub fn thresholded(&self, policy: &ThresholdPolicy) -> Matrix {
        let idx: Vec<usize> = self.retained(policy.lambda, policy.zero_tolerance).collect();
        self.spectral_sum(&idx, |s| s)
    }

    /// Pseudoinverse of the hard-thresholded matrix, `[S_lambda(M)]^+`.
    pub fn thresholded_pinv(&self, policy: &ThresholdPolicy) -> Matrix {
        let idx: Vec<usize> = self.retained(policy.lambda, policy.zero_tolerance).collect();
        self.spectral_sum_transposed(&idx, |s| 1.0 / s)
    }

    /// Projection onto the span of the retained right singular vectors.
    pub fn row_projection(&self, policy: &ThresholdPolicy) -> Matrix {
        let p = self.right.nrows();
        let mut out = Matrix::zeros(p, p);
        for i in self.retained(policy.lambda, policy.zero_tolerance) {
            out.ger(1.0, &self.right.column(i), &self.right.column(i), 1.0);
        }
        out
    }

    /// Projection onto the span of the retained left singular vectors.
    pub fn col_projection(&self, policy: &ThresholdPolicy) -> Matrix {
        let n = self.left.nrows();
        let mut out = Matrix::zeros(n, n);
        for i in self.retained(policy.lambda, policy.zero_tolerance) {
            out.ger(1.0, &self.left.column(i), &self.left.column(i), 1.0);
        }
        out
    }
}

/// Threshold `lambda` for hard singular value thresholding plus the relative
/// cutoff that decides numerical zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub lambda: f64,
    pub zero_tolerance: f64,
}

impl ThresholdPolicy {
    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_tolerance(lambda, RANK_TOLERANCE)
    }

    pub fn with_tolerance(lambda: f64, zero_tolerance: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be nonnegative, got {lambda}"
            )));
        }
        if !(zero_tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "zero tolerance must be positive, got {zero_tolerance}"
            )));
        }
        Ok(Self {
            lambda,
            zero_tolerance,
        })
    }

    /// No thresholding beyond the numerical-rank cutoff.
    pub fn exact() -> Self {
        Self {
            lambda: 0.0,
            zero_tolerance: RANK_TOLERANCE,
        }
    }
}

/// Hard singular value thresholding: drops every singular value `<= lambda`.
pub fn svt(m: &Matrix, policy: &ThresholdPolicy) -> Result<Matrix> {
    Ok(SvdFactors::compute(m)?.thresholded(policy))
}

pub fn pseudoinverse(m: &Matrix, zero_tolerance: f64) -> Result<Matrix> {
    let policy = ThresholdPolicy::with_tolerance(0.0, zero_tolerance)?;
    Ok(SvdFactors::compute(m)?.thresholded_pinv(&policy))
}

/// `M^+ M`, the orthogonal projection onto the row space of `M`.
pub fn row_projection(m: &Matrix) -> Result<Matrix> {
    Ok(SvdFactors::compute(m)?.row_projection(&ThresholdPolicy::exact()))
}

/// `M M^+`, the orthogonal projection onto the column space of `M`.
pub fn col_projection(m: &Matrix) -> Result<Matrix> {
    Ok(SvdFactors::compute(m)?.col_projection(&ThresholdPolicy::exact()))
}

/// Smallest nonzero singular value strictly above `lambda`, or `+inf` if none.
pub fn sigma_lambda(m: &Matrix, lambda: f64) -> Result<f64> {
    Ok(sigma_lambda_of(&SvdFactors::compute(m)?, lambda))
}

pub fn sigma_lambda_of(factors: &SvdFactors, lambda: f64) -> f64 {
    factors
        .retained(lambda, RANK_TOLERANCE)
        .map(|i| factors.singular_values[i])
        .fold(f64::INFINITY, f64::min)
}

/// Operator 2-norm.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let s = to_faer(m)
        .singular_values()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    Ok(s.into_iter().fold(0.0, f64::max))
}

/// Eigenvalues (nondecreasing) and matching orthonormal eigenvectors of a
/// symmetric matrix; only the lower triangle is read.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    check_finite(m)?;
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let evd = to_faer(m)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    Ok(((0..m.nrows()).map(|i| s[i]).collect(), from_faer(evd.U())))
}

pub fn min_symmetric_eigenvalue(m: &Matrix) -> Result<f64> {
    check_finite(m)?;
    let e = to_faer(m)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    Ok(e.into_iter().fold(f64::INFINITY, f64::min))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// `(x^T S^+ x)^{1/2}` for a positive semidefinite `S`.
pub fn mahalanobis_seminorm(x: &Vector, s: &Matrix) -> Result<f64> {
    if !s.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "Mahalanobis matrix must be square, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.nrows() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} against {}x{} matrix",
            x.len(),
            s.nrows(),
            s.ncols()
        )));
    }
    let pinv = pseudoinverse(&symmetrize(s), RANK_TOLERANCE)?;
    Ok(x.dot(&(pinv * x)).max(0.0).sqrt())
}

/// Frobenius norm of the residual of the exact pseudoinverse perturbation
/// identity
///
/// ```text
/// Z^+ - X^+ = -Z^+ P_col(Z) (Z - X) P_row(X) X^+
///             + Z^+ P_col(Z) (I - P_col(X))
///             - (I - P_row(Z)) P_row(X) X^+
/// ```
pub fn pinv_perturbation_residual(x: &Matrix, z: &Matrix) -> Result<f64> {
    if x.shape() != z.shape() {
        return Err(Error::ShapeMismatch(format!(
            "X is {:?} but Z is {:?}",
            x.shape(),
            z.shape()
        )));
    }
    let (n, p) = x.shape();
    let exact = ThresholdPolicy::exact();
    let fx = SvdFactors::compute(x)?;
    let fz = SvdFactors::compute(z)?;
    let x_pinv = fx.thresholded_pinv(&exact);
    let z_pinv = fz.thresholded_pinv(&exact);
    let row_x = fx.row_projection(&exact);
    let col_x = fx.col_projection(&exact);
    let row_z = fz.row_projection(&exact);
    let col_z = fz.col_projection(&exact);

    let lhs = &z_pinv - &x_pinv;
    let term1 = -(&z_pinv * &col_z * (z - x) * &row_x * &x_pinv);
    let term2 = &z_pinv * &col_z * (Matrix::identity(n, n) - &col_x);
    let term3 = -((Matrix::identity(p, p) - &row_z) * &row_x * &x_pinv);
    Ok((lhs - term1 - term2 - term3).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    /// SVT computed through the eigendecomposition of `M^T M`, independent of
    /// the SVD routine.
    fn svt_oracle(m: &Matrix, lambda: f64) -> Matrix {
        let gram = m.transpose() * m;
        let eig = SymmetricEigen::new(gram);
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for (i, &e) in eig.eigenvalues.iter().enumerate() {
            let s = e.max(0.0).sqrt();
            if s > lambda && s > 1e-9 {
                let v = eig.eigenvectors.column(i).into_owned();
                let u = (m * &v) / s;
                out += s * &u * v.transpose();
            }
        }
        out
    }

    #[test]
    fn svd_factors_sorted_and_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = gaussian(6, 4, &mut rng);
        let f = SvdFactors::compute(&m).unwrap();
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!((f.reconstruct() - &m).norm() <= 1e-10 * (1.0 + m.norm()));
    }

    #[test]
    fn svd_rank_deficient_tall_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let mut m = gaussian(30, 2, &mut rng) * gaussian(2, 10, &mut rng);
            let mean = m.row_mean();
            for mut row in m.row_iter_mut() {
                row -= &mean;
            }
            let f = SvdFactors::compute(&m).unwrap();
            assert!((f.reconstruct() - &m).norm() <= 1e-10 * m.norm());
            assert_eq!(f.rank(RANK_TOLERANCE), 2);
            let oracle = SymmetricEigen::new(m.transpose() * &m).eigenvalues;
            let mut top: Vec<f64> = oracle.iter().map(|e| e.max(0.0).sqrt()).collect();
            top.sort_by(|a, b| b.total_cmp(a));
            for k in 0..2 {
                assert_abs_diff_eq!(f.singular_values[k], top[k], epsilon = 1e-9 * top[0]);
            }
        }
    }

    #[test]
    fn symmetric_eigen_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = gaussian(5, 5, &mut rng);
        let m = &g + g.transpose();
        let (values, vectors) = symmetric_eigen(&m).unwrap();
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
        let recon = &vectors * Matrix::from_diagonal(&Vector::from_vec(values.clone())) * vectors.transpose();
        assert!((recon - &m).norm() < 1e-10);
        let mut oracle: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (a, b) in values.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(min_symmetric_eigenvalue(&m).unwrap(), oracle[0], epsilon = 1e-10);
    }

    #[test]
    fn decompositions_reject_non_finite_input() {
        let mut m = Matrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(SvdFactors::compute(&m).is_err());
        assert!(spectral_norm(&m).is_err());
        assert!(symmetric_eigen(&m).is_err());
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = gaussian(5, 7, &mut rng);
        let out = svt(&m, &ThresholdPolicy::new(0.0).unwrap()).unwrap();
        assert!((out - &m).norm() <= 1e-10);
    }

    #[test]
    fn svt_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        let out = svt(&m, &ThresholdPolicy::new(2.0).unwrap()).unwrap();
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 0.0]));
        assert!((out - expected).norm() <= 1e-12);
    }

    #[test]
    fn svt_tie_at_threshold_is_removed() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 2.0]));
        let out = svt(&m, &ThresholdPolicy::new(2.0).unwrap()).unwrap();
        assert_abs_diff_eq!(out[(1, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn svt_above_spectrum_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gaussian(4, 3, &mut rng);
        let lambda = spectral_norm(&m).unwrap() + 1e-6;
        assert_eq!(svt(&m, &ThresholdPolicy::new(lambda).unwrap()).unwrap().norm(), 0.0);
    }

    #[test]
    fn svt_matches_eigen_oracle_at_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let m = gaussian(5, 4, &mut rng);
            let f = SvdFactors::compute(&m).unwrap();
            let median = 0.5 * (f.singular_values[1] + f.singular_values[2]);
            let ours = svt(&m, &ThresholdPolicy::new(median).unwrap()).unwrap();
            let oracle = svt_oracle(&m, median);
            assert!((ours - oracle).norm() <= 1e-9);
        }
    }

    #[test]
    fn svt_idempotent_and_rank_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = gaussian(8, 6, &mut rng);
        let s = SvdFactors::compute(&m).unwrap().singular_values;
        let mut last_rank = usize::MAX;
        for lambda in [0.0, s[4], 0.5 * (s[2] + s[3]), s[1], s[0] * 2.0] {
            let policy = ThresholdPolicy::new(lambda).unwrap();
            let once = svt(&m, &policy).unwrap();
            let twice = svt(&once, &policy).unwrap();
            assert!((&twice - &once).norm() <= 1e-10);
            let rank = SvdFactors::compute(&once).unwrap().rank(RANK_TOLERANCE);
            assert!(rank <= last_rank);
            last_rank = rank;
        }
    }

    #[test]
    fn pseudoinverse_examples() {
        let eye = Matrix::identity(3, 3);
        assert!((pseudoinverse(&eye, RANK_TOLERANCE).unwrap() - &eye).norm() < 1e-14);

        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]));
        assert!((pseudoinverse(&d, RANK_TOLERANCE).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn pseudoinverse_moore_penrose_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = gaussian(4, 2, &mut rng) * gaussian(2, 3, &mut rng);
        let pinv = pseudoinverse(&m, RANK_TOLERANCE).unwrap();
        let scale = 1.0 + m.norm();
        assert!((&m * &pinv * &m - &m).norm() <= 1e-8 * scale);
        assert!((&pinv * &m * &pinv - &pinv).norm() <= 1e-8 * (1.0 + pinv.norm()));
        let mp = &m * &pinv;
        let pm = &pinv * &m;
        assert!((&mp - mp.transpose()).norm() <= 1e-8);
        assert!((&pm - pm.transpose()).norm() <= 1e-8);
    }

    #[test]
    fn projections_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tall = gaussian(6, 3, &mut rng);
        assert!((row_projection(&tall).unwrap() - Matrix::identity(3, 3)).norm() < 1e-10);

        let zero = Matrix::zeros(3, 4);
        assert_eq!(row_projection(&zero).unwrap().norm(), 0.0);
        assert_eq!(col_projection(&zero).unwrap().norm(), 0.0);

        let u = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = Vector::from_vec(vec![3.0, 1.0, -1.0, 2.0]);
        let rank_one = &u * v.transpose();
        let expected = (&v * v.transpose()) / v.norm_squared();
        assert!((row_projection(&rank_one).unwrap() - expected).norm() < 1e-10);
    }

    #[test]
    fn projections_idempotent_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = gaussian(7, 2, &mut rng) * gaussian(2, 5, &mut rng);
        for proj in [row_projection(&m).unwrap(), col_projection(&m).unwrap()] {
            assert!((&proj * &proj - &proj).norm() < 1e-10);
            assert!((&proj - proj.transpose()).norm() < 1e-12);
            assert_abs_diff_eq!(proj.trace(), 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sigma_lambda_examples() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        assert_eq!(sigma_lambda(&d, 2.0).unwrap(), 3.0);
        assert_eq!(sigma_lambda(&d, 5.0).unwrap(), f64::INFINITY);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = gaussian(5, 3, &mut rng);
        let oracle = SymmetricEigen::new(m.transpose() * &m)
            .eigenvalues
            .iter()
            .map(|e| e.max(0.0).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(sigma_lambda(&m, 0.0).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn sigma_lambda_skips_numerical_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = gaussian(6, 2, &mut rng) * gaussian(2, 4, &mut rng);
        let f = SvdFactors::compute(&m).unwrap();
        assert_abs_diff_eq!(sigma_lambda(&m, 0.0).unwrap(), f.singular_values[1], epsilon = 1e-12);
    }

    #[test]
    fn mahalanobis_examples() {
        let s = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 0.0]));
        let x = Vector::from_vec(vec![2.0, 7.0]);
        assert_abs_diff_eq!(mahalanobis_seminorm(&x, &s).unwrap(), 1.0, epsilon = 1e-12);

        let eye = Matrix::identity(3, 3);
        let y = Vector::from_vec(vec![1.0, 2.0, 2.0]);
        assert_abs_diff_eq!(mahalanobis_seminorm(&y, &eye).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(mahalanobis_seminorm(&Vector::zeros(3), &eye).unwrap(), 0.0);

        let rect = Matrix::zeros(2, 3);
        assert!(matches!(
            mahalanobis_seminorm(&Vector::zeros(2), &rect),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pinv_perturbation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = gaussian(4, 4, &mut rng);
        assert!(pinv_perturbation_residual(&x, &x).unwrap() < 1e-10);

        let z = &x + gaussian(4, 4, &mut rng) * 0.01;
        let scale = 1.0 + pseudoinverse(&x, RANK_TOLERANCE).unwrap().norm() + pseudoinverse(&z, RANK_TOLERANCE).unwrap().norm();
        assert!(pinv_perturbation_residual(&x, &z).unwrap() <= 1e-8 * scale);

        let x_low = gaussian(5, 2, &mut rng) * gaussian(2, 4, &mut rng);
        let z_any = gaussian(5, 4, &mut rng);
        let scale = 1.0
            + pseudoinverse(&x_low, RANK_TOLERANCE).unwrap().norm()
            + pseudoinverse(&z_any, RANK_TOLERANCE).unwrap().norm();
        assert!(pinv_perturbation_residual(&x_low, &z_any).unwrap() <= 1e-8 * scale);

        assert!(matches!(
            pinv_perturbation_residual(&x, &Matrix::zeros(3, 4)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn threshold_policy_validation() {
        assert!(ThresholdPolicy::new(-1.0).is_err());
        assert!(ThresholdPolicy::new(f64::NAN).is_err());
        assert!(ThresholdPolicy::with_tolerance(1.0, 0.0).is_err());
    }
}
