//! Global Fréchet regression with a singular-value-thresholded covariance.
//!
//! For a query `x` the estimator weights the training responses by
//!
//! ```text
//! w_i(x) = 1 + (X_i - mu)^T [S_lambda(Sigma)]^+ (x - mu)
//! ```
//!
//! and returns their weighted Fréchet mean. `lambda = 0` recovers the plain
//! sample-analogue estimator.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SvdFactors, ThresholdPolicy, Vector, RANK_TOLERANCE};
use crate::metric::{project_affine, weighted_frechet_mean, MetricPoint, MetricSpaceKind};

/// Covariates paired with responses from a single metric space.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Matrix,
    responses: Vec<MetricPoint>,
    kind: MetricSpaceKind,
}

impl Dataset {
    pub fn new(covariates: Matrix, responses: Vec<MetricPoint>, kind: MetricSpaceKind) -> Result<Self> {
        let n = covariates.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 observations, got {n}")));
        }
        if covariates.ncols() == 0 {
            return Err(Error::InvalidArgument("covariates have no columns".into()));
        }
        if responses.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} covariate rows but {} responses",
                responses.len()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates contain non-finite values".into()));
        }
        let dim = responses[0].coordinate_len();
        for (i, r) in responses.iter().enumerate() {
            kind.check(r)?;
            if r.coordinate_len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "response {i} has dimension {} but response 0 has {dim}",
                    r.coordinate_len()
                )));
            }
        }
        Ok(Self {
            covariates,
            responses,
            kind,
        })
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn responses(&self) -> &[MetricPoint] {
        &self.responses
    }

    pub fn kind(&self) -> &MetricSpaceKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }
}

/// Sample mean and covariance of a design matrix.
#[derive(Debug, Clone)]
pub struct CovariateStats {
    mean: Vector,
    covariance: Matrix,
    centered: Matrix,
    centered_svd: SvdFactors,
    covariance_svd: SvdFactors,
}

impl CovariateStats {
    pub fn compute(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 rows, got {n}")));
        }
        let mean = x.row_mean().transpose();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let covariance = (centered.transpose() * &centered) / n as f64;
        let mut centered_svd = SvdFactors::compute(&centered)?;
        // Left vectors with nonzero singular values are orthogonal to the ones vector;
        // restoring that exactly keeps the weights summing to n.
        let cutoff = centered_svd.zero_cutoff(RANK_TOLERANCE);
        for (k, &s) in centered_svd.singular_values.clone().iter().enumerate() {
            if s > cutoff {
                let mut col = centered_svd.left.column_mut(k);
                let m = col.mean();
                col.add_scalar_mut(-m);
            }
        }
        // Sigma = V diag(s^2 / n) V^T, read off the design SVD.
        let covariance_svd = SvdFactors {
            left: centered_svd.right.clone(),
            singular_values: centered_svd
                .singular_values
                .iter()
                .map(|s| s * s / n as f64)
                .collect(),
            right: centered_svd.right.clone(),
        };
        Ok(Self {
            mean,
            covariance,
            centered,
            centered_svd,
            covariance_svd,
        })
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Row-centered design `X - 1 mu^T`.
    pub fn centered(&self) -> &Matrix {
        &self.centered
    }

    pub fn centered_svd(&self) -> &SvdFactors {
        &self.centered_svd
    }

    /// Eigendecomposition of the covariance in [`SvdFactors`] form.
    pub fn covariance_svd(&self) -> &SvdFactors {
        &self.covariance_svd
    }

    pub fn n(&self) -> usize {
        self.centered.nrows()
    }

    pub fn p(&self) -> usize {
        self.centered.ncols()
    }

    /// `[S_lambda(Sigma)]^+`
    pub fn svt_pinv(&self, lambda: f64) -> Result<Matrix> {
        let policy = ThresholdPolicy::new(lambda)?;
        Ok(self.covariance_svd.thresholded_pinv(&policy))
    }

    /// Retained directions of `S_lambda(Sigma)` as `(V_r, U_r, 1 / s_r)` from the design SVD.
    fn retained_factors(&self, lambda: f64) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let policy = ThresholdPolicy::new(lambda)?;
        let idx: Vec<usize> = self
            .covariance_svd
            .retained(policy.lambda, policy.zero_tolerance)
            .collect();
        let f = &self.centered_svd;
        Ok((
            f.right.select_columns(&idx),
            f.left.select_columns(&idx),
            idx.iter().map(|&k| 1.0 / f.singular_values[k]).collect(),
        ))
    }

    /// Weight matrix for pre-centered queries (one per row).
    ///
    /// Uses `C [S_lambda(Sigma)]^+ d = n U_r diag(1/s_r) V_r^T d`, which avoids squaring the
    /// design's condition number.
    fn centered_weights(&self, lambda: f64, shifted: &Matrix) -> Result<Matrix> {
        let (v, u, inv) = self.retained_factors(lambda)?;
        let n = self.n() as f64;
        let mut scores = shifted * v;
        for (k, &f) in inv.iter().enumerate() {
            scores.column_mut(k).scale_mut(n * f);
        }
        Ok((scores * u.transpose()).add_scalar(1.0))
    }
}

pub fn covariate_stats(x: &Matrix) -> Result<CovariateStats> {
    CovariateStats::compute(x)
}

fn check_query(stats: &CovariateStats, x: &Vector) -> Result<()> {
    if x.len() != stats.p() {
        return Err(Error::ShapeMismatch(format!(
            "query has length {} but the design has {} columns",
            x.len(),
            stats.p()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("query contains non-finite values".into()));
    }
    Ok(())
}

/// Regression weights `w_i(x)` for every training row; their mean is one.
pub fn weight_vector(stats: &CovariateStats, lambda: f64, x: &Vector) -> Result<Vector> {
    check_query(stats, x)?;
    let d = x - &stats.mean;
    let shifted = Matrix::from_row_slice(1, d.len(), d.as_slice());
    Ok(stats.centered_weights(lambda, &shifted)?.row(0).transpose())
}

/// Regularized estimator bound to a training sample.
#[derive(Debug, Clone)]
pub struct FittedModel<'a> {
    stats: Arc<CovariateStats>,
    lambda: f64,
    svt_pinv: Matrix,
    responses: &'a [MetricPoint],
    kind: &'a MetricSpaceKind,
}

pub fn fit(data: &Dataset, lambda: f64) -> Result<FittedModel<'_>> {
    let stats = Arc::new(CovariateStats::compute(&data.covariates)?);
    FittedModel::with_stats(stats, lambda, &data.responses, &data.kind)
}

impl<'a> FittedModel<'a> {
    /// Reuses precomputed covariate statistics, e.g. across a `lambda` grid.
    pub fn with_stats(
        stats: Arc<CovariateStats>,
        lambda: f64,
        responses: &'a [MetricPoint],
        kind: &'a MetricSpaceKind,
    ) -> Result<Self> {
        if responses.len() != stats.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} responses for {} covariate rows",
                responses.len(),
                stats.n()
            )));
        }
        let svt_pinv = stats.svt_pinv(lambda)?;
        Ok(Self {
            stats,
            lambda,
            svt_pinv,
            responses,
            kind,
        })
    }

    pub fn stats(&self) -> &CovariateStats {
        &self.stats
    }

    pub fn shared_stats(&self) -> Arc<CovariateStats> {
        Arc::clone(&self.stats)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn svt_pinv(&self) -> &Matrix {
        &self.svt_pinv
    }

    pub fn responses(&self) -> &'a [MetricPoint] {
        self.responses
    }

    pub fn kind(&self) -> &'a MetricSpaceKind {
        self.kind
    }

    pub fn weights(&self, x: &Vector) -> Result<Vector> {
        weight_vector(&self.stats, self.lambda, x)
    }

    /// Weights for every query row: entry `(j, i)` is `w_i(x_j)`.
    pub fn weight_matrix(&self, queries: &Matrix) -> Result<Matrix> {
        if queries.ncols() != self.stats.p() {
            return Err(Error::ShapeMismatch(format!(
                "queries have {} columns but the design has {}",
                queries.ncols(),
                self.stats.p()
            )));
        }
        if queries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("queries contain non-finite values".into()));
        }
        let mut shifted = queries.clone();
        for mut row in shifted.row_iter_mut() {
            row -= self.stats.mean.transpose();
        }
        self.stats.centered_weights(self.lambda, &shifted)
    }

    pub fn predict(&self, x: &Vector) -> Result<MetricPoint> {
        let w = self.weights(x)?;
        weighted_frechet_mean(self.kind, self.responses, w.as_slice())
    }

    /// Predictions for every row of `queries`, computed in parallel.
    pub fn predict_batch(&self, queries: &Matrix) -> Result<Vec<MetricPoint>> {
        let weights = self.weight_matrix(queries)?;
        predict_from_weights(self.kind, self.responses, &weights)
    }
}

/// Weighted Fréchet means for each row of `weights` (one row per query).
pub fn predict_from_weights(
    kind: &MetricSpaceKind,
    responses: &[MetricPoint],
    weights: &Matrix,
) -> Result<Vec<MetricPoint>> {
    if weights.ncols() != responses.len() {
        return Err(Error::ShapeMismatch(format!(
            "weight rows have length {} but there are {} responses",
            weights.ncols(),
            responses.len()
        )));
    }
    if !kind.mean_is_projection() || responses.is_empty() {
        return (0..weights.nrows())
            .into_par_iter()
            .map(|j| {
                let w: Vec<f64> = weights.row(j).iter().copied().collect();
                weighted_frechet_mean(kind, responses, &w)
            })
            .collect();
    }

    let dim = responses[0].coordinate_len();
    let mut coords = Matrix::zeros(responses.len(), dim);
    for (i, r) in responses.iter().enumerate() {
        if r.coordinate_len() != dim {
            return Err(Error::ShapeMismatch("responses have differing dimensions".into()));
        }
        for (k, v) in r.coordinates().into_iter().enumerate() {
            coords[(i, k)] = v;
        }
    }
    let totals: Vec<f64> = weights.row_iter().map(|r| r.sum()).collect();
    if let Some(t) = totals.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::DegenerateWeights(*t));
    }
    let affine = weights * coords;
    (0..affine.nrows())
        .into_par_iter()
        .map(|j| {
            let row: Vec<f64> = affine.row(j).iter().map(|v| v / totals[j]).collect();
            project_affine(kind, row)
        })
        .collect()
}

/// Queries and training rows expressed in the covariance eigenbasis, so the
/// weight matrix for any `lambda` costs one small product.
#[derive(Debug, Clone)]
pub struct QueryScores {
    train: Matrix,
    query: Matrix,
    eigenvalues: Vec<f64>,
    cutoff: f64,
}

impl QueryScores {
    pub fn new(stats: &CovariateStats, queries: &Matrix) -> Result<Self> {
        if queries.ncols() != stats.p() {
            return Err(Error::ShapeMismatch(format!(
                "queries have {} columns but the design has {}",
                queries.ncols(),
                stats.p()
            )));
        }
        if queries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("queries contain non-finite values".into()));
        }
        let factors = stats.covariance_svd();
        let cutoff = factors.zero_cutoff(RANK_TOLERANCE);
        let basis = &factors.right;
        let mut shifted = queries.clone();
        for mut row in shifted.row_iter_mut() {
            row -= stats.mean().transpose();
        }
        // C V = U diag(s), taken from the SVD rather than the product
        let design = stats.centered_svd();
        let mut train = design.left.clone();
        for (k, &sv) in design.singular_values.iter().enumerate() {
            train.column_mut(k).scale_mut(sv);
        }
        Ok(Self {
            train,
            query: shifted * basis,
            eigenvalues: factors.singular_values.clone(),
            cutoff,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.query.nrows()
    }

    /// Same layout as [`FittedModel::weight_matrix`].
    pub fn weight_matrix(&self, lambda: f64) -> Result<Matrix> {
        ThresholdPolicy::new(lambda)?;
        let mut scaled = self.query.clone();
        for (k, &e) in self.eigenvalues.iter().enumerate() {
            let factor = if e > lambda && e > self.cutoff { 1.0 / e } else { 0.0 };
            scaled.column_mut(k).scale_mut(factor);
        }
        Ok((scaled * self.train.transpose()).add_scalar(1.0))
    }
}

/// Closed form of the Euclidean estimator, `y(x) = intercept + coefficients^T (x - center)`.
#[derive(Debug, Clone)]
pub struct PcrFit {
    pub intercept: Vector,
    /// `p x d`
    pub coefficients: Matrix,
    pub center: Vector,
}

impl PcrFit {
    pub fn predict(&self, x: &Vector) -> Vector {
        &self.intercept + self.coefficients.transpose() * (x - &self.center)
    }
}

/// Regularized principal component regression coefficients
/// `[S_lambda(Sigma)]^+ (1/n) sum_i (x_i - mu)(y_i - ybar)^T` for Euclidean responses.
pub fn pcr_coefficients(data: &Dataset, lambda: f64) -> Result<PcrFit> {
    if data.kind != MetricSpaceKind::Euclidean {
        return Err(Error::KindMismatch(format!(
            "principal component regression needs Euclidean responses, got {}",
            data.kind.name()
        )));
    }
    let stats = CovariateStats::compute(&data.covariates)?;
    let n = data.n();
    let d = data.responses[0].coordinate_len();
    let mut y = Matrix::zeros(n, d);
    for (i, r) in data.responses.iter().enumerate() {
        let v = r.as_vector().expect("checked by Dataset::new");
        y.set_row(i, &v.transpose());
    }
    let intercept = y.row_mean().transpose();
    for mut row in y.row_iter_mut() {
        row -= intercept.transpose();
    }
    // P C^T y / n = V_r diag(1/s_r) U_r^T y
    let (v, u, inv) = stats.retained_factors(lambda)?;
    let mut scores = u.transpose() * y;
    for (k, &f) in inv.iter().enumerate() {
        scores.row_mut(k).scale_mut(f);
    }
    let coefficients = v * scores;
    Ok(PcrFit {
        intercept,
        coefficients,
        center: stats.mean,
    })
}

/// Smallest covariance eigenvalue treated as nonzero, or `+inf` for a zero covariance.
pub fn smallest_nonzero_eigenvalue(stats: &CovariateStats) -> f64 {
    let f = stats.covariance_svd();
    f.retained(0.0, RANK_TOLERANCE)
        .map(|i| f.singular_values[i])
        .fold(f64::INFINITY, f64::min)
}
