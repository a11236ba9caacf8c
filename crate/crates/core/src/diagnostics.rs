//! Computable forms of the consistency, rate and de-noising guarantees.
//!
//! The estimator thresholds the covariance `Sigma = X_ctr^T X_ctr / n` at
//! `lambda`, while the perturbation bounds are stated in terms of singular
//! values of the centered design `X_ctr`. A covariance eigenvalue `e` equals
//! `s^2 / n` for a design singular value `s`, so the design-scale threshold
//! that keeps the same directions is `sqrt(n * lambda)`; see
//! [`design_threshold`].

use crate::error::{Error, Result};
use crate::linalg::{sigma_lambda_of, spectral_norm, symmetrize, Matrix, SvdFactors, Vector, RANK_TOLERANCE};
use crate::metric::{distance, MetricPoint, MetricSpaceKind};
use crate::regression::{CovariateStats, FittedModel};

/// Relative residual below which a query counts as lying in `mu + rowspace(X_ctr)`.
pub const ROWSPACE_TOLERANCE: f64 = 1e-8;

/// Constants of the growth condition `d(y, phi)^alpha <= (objective gap) / C_g`
/// for `d(y, phi) < D_g`, plus the diameter of the response space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConstants {
    pub c_g: f64,
    pub alpha: f64,
    /// `D_g`; `+inf` when the growth condition holds globally.
    pub d_g: f64,
    /// `diam(M)`; only used when `d_g` is finite.
    pub diameter: f64,
}

impl Default for GrowthConstants {
    /// `C_g = 1`, `alpha = 2`, `D_g = +inf`: exact for Euclidean, quantile and
    /// correlation responses.
    fn default() -> Self {
        Self {
            c_g: 1.0,
            alpha: 2.0,
            d_g: f64::INFINITY,
            diameter: f64::INFINITY,
        }
    }
}

impl GrowthConstants {
    pub fn new(c_g: f64, alpha: f64, d_g: f64, diameter: f64) -> Result<Self> {
        if !(c_g > 0.0) || !c_g.is_finite() {
            return Err(Error::InvalidArgument(format!("C_g must be positive, got {c_g}")));
        }
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
        }
        if !(d_g > 0.0) {
            return Err(Error::InvalidArgument(format!("D_g must be positive, got {d_g}")));
        }
        if !(diameter > 0.0) {
            return Err(Error::InvalidArgument(format!("diameter must be positive, got {diameter}")));
        }
        Ok(Self {
            c_g,
            alpha,
            d_g,
            diameter,
        })
    }
}

/// Threshold on the singular values of `X_ctr` matching a covariance threshold `lambda`.
pub fn design_threshold(lambda: f64, n: usize) -> f64 {
    (n as f64 * lambda).sqrt()
}

fn check_pair(x: &Matrix, z: &Matrix) -> Result<()> {
    if x.shape() != z.shape() {
        return Err(Error::ShapeMismatch(format!(
            "X is {:?} but Z is {:?}",
            x.shape(),
            z.shape()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("need at least 2 rows".into()));
    }
    Ok(())
}

/// `min(sigma^(l)(X_ctr), sigma^(l)(Z_ctr))` at the design-scale threshold `l`.
pub fn signal_floor(x_stats: &CovariateStats, z_stats: &CovariateStats, lambda: f64) -> f64 {
    let l = design_threshold(lambda, x_stats.n());
    sigma_lambda_of(x_stats.centered_svd(), l).min(sigma_lambda_of(z_stats.centered_svd(), l))
}

/// Noise-to-signal ratio `||Z - X|| / floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrReport {
    /// Zero when there is no noise or when the floor is `+inf`.
    pub ratio: f64,
    pub noise_norm: f64,
    pub floor: f64,
}

pub fn snr_reciprocal(x: &Matrix, z: &Matrix, lambda: f64) -> Result<SnrReport> {
    check_pair(x, z)?;
    let xs = CovariateStats::compute(x)?;
    let zs = CovariateStats::compute(z)?;
    let noise_norm = spectral_norm(&(z - x))?;
    let floor = signal_floor(&xs, &zs, lambda);
    let ratio = if noise_norm == 0.0 || floor.is_infinite() {
        0.0
    } else {
        noise_norm / floor
    };
    Ok(SnrReport {
        ratio,
        noise_norm,
        floor,
    })
}

/// `b_lambda(x) = rank(D)^{1/2} ||x - mu||_D` with `D = Sigma - S_lambda(Sigma)`.
pub fn bias_term(sigma: &Matrix, mu: &Vector, lambda: f64, x: &Vector) -> Result<f64> {
    if !sigma.is_square() || sigma.nrows() != mu.len() || mu.len() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "Sigma {:?}, mu {}, x {}",
            sigma.shape(),
            mu.len(),
            x.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {lambda}")));
    }
    let f = SvdFactors::compute(&symmetrize(sigma))?;
    let cutoff = f.zero_cutoff(RANK_TOLERANCE);
    let diff = x - mu;
    let mut rank = 0usize;
    let mut seminorm_sq = 0.0;
    for (i, &s) in f.singular_values.iter().enumerate() {
        if s > cutoff && s <= lambda {
            rank += 1;
            let c = f.right.column(i).dot(&diff);
            seminorm_sq += c * c / s;
        }
    }
    Ok((rank as f64).sqrt() * seminorm_sq.sqrt())
}

/// `||x - mu||_Sigma` from precomputed statistics.
pub fn stats_seminorm(stats: &CovariateStats, x: &Vector) -> f64 {
    let f = stats.covariance_svd();
    let diff = x - stats.mean();
    f.retained(0.0, RANK_TOLERANCE)
        .map(|i| {
            let c = f.right.column(i).dot(&diff);
            c * c / f.singular_values[i]
        })
        .sum::<f64>()
        .sqrt()
}

/// Relative distance from `x - mu` to the row space of `X_ctr`.
pub fn rowspace_residual(stats: &CovariateStats, x: &Vector) -> f64 {
    let diff = x - stats.mean();
    let norm = diff.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let f = stats.centered_svd();
    let mut projected = Vector::zeros(diff.len());
    for i in f.retained(0.0, RANK_TOLERANCE) {
        projected.axpy(f.right.column(i).dot(&diff), &f.right.column(i), 1.0);
    }
    (diff - projected).norm() / norm
}

/// Both sides of the weight stability inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStability {
    /// `||w_Z(x) - w_X(x)||_2`
    pub lhs: f64,
    /// `sqrt(n) ||Z - X|| / floor * (2 ||x - mu||_Sigma + 1)`
    pub rhs: f64,
}

impl WeightStability {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

pub fn weight_stability_check(x: &Matrix, z: &Matrix, lambda: f64, query: &Vector) -> Result<WeightStability> {
    check_pair(x, z)?;
    let xs = CovariateStats::compute(x)?;
    let zs = CovariateStats::compute(z)?;
    check_query_len(&xs, query)?;
    let residual = rowspace_residual(&xs, query);
    if residual > ROWSPACE_TOLERANCE {
        return Err(Error::RowspaceViolation(residual));
    }
    let wx = weights_at(&xs, lambda, query)?;
    let wz = weights_at(&zs, lambda, query)?;
    let lhs = (wz - wx).norm();
    let noise = spectral_norm(&(z - x))?;
    let floor = signal_floor(&xs, &zs, lambda);
    let radius = 2.0 * stats_seminorm(&xs, query) + 1.0;
    let rhs = if noise == 0.0 {
        0.0
    } else {
        (xs.n() as f64).sqrt() * noise / floor * radius
    };
    Ok(WeightStability { lhs, rhs })
}

fn check_query_len(stats: &CovariateStats, query: &Vector) -> Result<()> {
    if query.len() != stats.p() {
        return Err(Error::ShapeMismatch(format!(
            "query has length {} but the design has {} columns",
            query.len(),
            stats.p()
        )));
    }
    Ok(())
}

fn weights_at(stats: &CovariateStats, lambda: f64, query: &Vector) -> Result<Vector> {
    crate::regression::weight_vector(stats, lambda, query)
}

/// Quantities of the de-noising bound for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoisingReport {
    pub noise_norm: f64,
    pub signal_floor: f64,
    pub rowspace_residual: f64,
    /// Row-space membership and the radius condition on `||x - mu||_Sigma`.
    pub precondition_ok: bool,
    pub bound_rhs: f64,
    /// `d(phi_Z(x), phi_X(x))`, when the two predictions were computed.
    pub observed_lhs: Option<f64>,
}

impl DenoisingReport {
    /// `None` without an observed distance; `Some(true)` when the precondition
    /// fails, since the bound then makes no claim.
    pub fn holds(&self) -> Option<bool> {
        self.observed_lhs
            .map(|lhs| !self.precondition_ok || lhs <= self.bound_rhs)
    }
}

/// Right-hand side of the de-noising inequality.
///
/// `dist_phi` and `dist_phi_tilde` hold `d^2(Y_i, phi)` over the training
/// responses for the clean and noisy predictions.
pub fn denoising_bound(
    x: &Matrix,
    z: &Matrix,
    lambda: f64,
    query: &Vector,
    constants: &GrowthConstants,
    dist_phi: &Vector,
    dist_phi_tilde: &Vector,
) -> Result<DenoisingReport> {
    check_pair(x, z)?;
    let n = x.nrows();
    if dist_phi.len() != n || dist_phi_tilde.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "distance vectors of length {} and {} for {n} observations",
            dist_phi.len(),
            dist_phi_tilde.len()
        )));
    }
    let xs = CovariateStats::compute(x)?;
    let zs = CovariateStats::compute(z)?;
    check_query_len(&xs, query)?;
    let noise_norm = spectral_norm(&(z - x))?;
    let floor = signal_floor(&xs, &zs, lambda);
    let seminorm = stats_seminorm(&xs, query);
    let residual = rowspace_residual(&xs, query);

    let radius_ok = if constants.d_g.is_infinite() || noise_norm == 0.0 {
        true
    } else {
        let limit = 0.5
            * (constants.c_g * constants.d_g.powf(constants.alpha) / (2.0 * constants.diameter) * floor
                / noise_norm
                - 1.0);
        seminorm <= limit
    };

    let bound_rhs = if noise_norm == 0.0 {
        0.0
    } else if floor.is_infinite() || floor == 0.0 {
        f64::INFINITY
    } else {
        let base = noise_norm / floor * (2.0 * seminorm + 1.0) / constants.c_g
            * (dist_phi_tilde.norm() + dist_phi.norm())
            / (n as f64).sqrt();
        base.powf(1.0 / constants.alpha)
    };

    Ok(DenoisingReport {
        noise_norm,
        signal_floor: floor,
        rowspace_residual: residual,
        precondition_ok: residual <= ROWSPACE_TOLERANCE && radius_ok,
        bound_rhs,
        observed_lhs: None,
    })
}

/// `(d^2(Y_1, y), ..., d^2(Y_n, y))`
pub fn squared_distance_vector(kind: &MetricSpaceKind, responses: &[MetricPoint], y: &MetricPoint) -> Result<Vector> {
    let d: Result<Vec<f64>> = responses
        .iter()
        .map(|r| distance(kind, r, y).map(|v| v * v))
        .collect();
    Ok(Vector::from_vec(d?))
}

/// Fits the clean and noisy models, predicts at `query`, and evaluates the
/// de-noising bound together with the observed distance.
pub fn denoise_diagnostics(
    x: &Matrix,
    z: &Matrix,
    responses: &[MetricPoint],
    kind: &MetricSpaceKind,
    lambda: f64,
    query: &Vector,
    constants: &GrowthConstants,
) -> Result<DenoisingReport> {
    check_pair(x, z)?;
    let clean = FittedModel::with_stats(CovariateStats::compute(x)?.into(), lambda, responses, kind)?;
    let noisy = FittedModel::with_stats(CovariateStats::compute(z)?.into(), lambda, responses, kind)?;
    let phi = clean.predict(query)?;
    let phi_tilde = noisy.predict(query)?;
    let dist_phi = squared_distance_vector(kind, responses, &phi)?;
    let dist_phi_tilde = squared_distance_vector(kind, responses, &phi_tilde)?;
    let mut report = denoising_bound(x, z, lambda, query, constants, &dist_phi, &dist_phi_tilde)?;
    report.observed_lhs = Some(distance(kind, &phi, &phi_tilde)?);
    Ok(report)
}
