//! Monte Carlo harness: covariates with an effectively low-rank covariance,
//! measurement error, random distributional or vector responses, and the
//! REF / EIV / SVT comparison with bias-variance summaries.
//!
//! Every random draw comes from a ChaCha stream keyed by the master seed, the
//! `(n, p)` cell and a slot (the trial index, or a reserved slot for the
//! covariance basis, the evaluation points and the linear coefficients), so
//! results do not depend on scheduling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::metric::{
    distance, project_affine, weighted_frechet_mean, MetricPoint, MetricSpaceKind, QuantileFunction, QuantileGrid,
};
use crate::regression::{predict_from_weights, CovariateStats, Dataset, FittedModel, QueryScores};

const BASIS_SLOT: u64 = 0xFFFF_FFFF;
const EVAL_SLOT: u64 = 0xFFFF_FFFE;
const MODEL_SLOT: u64 = 0xFFFF_FFFD;

pub const DEFAULT_GRID_POINTS: usize = 40;
pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Laplace with scale `sigma_eps` (standard deviation `sqrt(2) sigma_eps`).
    Laplace,
    /// Laplace rescaled to standard deviation `sigma_eps`.
    LaplaceVarianceMatched,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
            NoiseKind::LaplaceVarianceMatched => "laplace_variance_matched",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            "laplace" | "laplacian" => Ok(NoiseKind::Laplace),
            "laplace_variance_matched" => Ok(NoiseKind::LaplaceVarianceMatched),
            other => Err(Error::InvalidArgument(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaGrid {
    /// `0` plus `points` equally spaced values on `(0, sqrt(lambda_1 p / n)]`,
    /// with `lambda_1` the top noisy covariance eigenvalue averaged over trials.
    Auto { points: usize },
    Explicit(Vec<f64>),
}

impl LambdaGrid {
    pub fn resolve(&self, mean_top_eigenvalue: f64, n: usize, p: usize) -> Result<Vec<f64>> {
        let mut grid = match self {
            LambdaGrid::Auto { points } => {
                if *points == 0 {
                    return Err(Error::InvalidArgument("lambda grid needs at least one point".into()));
                }
                let upper = (mean_top_eigenvalue * p as f64 / n as f64).sqrt();
                std::iter::once(0.0)
                    .chain((1..=*points).map(|k| upper * k as f64 / *points as f64))
                    .collect::<Vec<_>>()
            }
            LambdaGrid::Explicit(values) => values.clone(),
        };
        if grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument("lambda grid values must be finite and non-negative".into()));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        Ok(grid)
    }
}

/// Parameters of one simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    pub test_size: usize,
    pub eval_points: usize,
    pub grid_size: usize,
    pub noise: NoiseKind,
    pub sigma_eps: f64,
    pub sigma_eta: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub alpha_intercept: f64,
    pub condition_number: f64,
    pub lambda_grid: LambdaGrid,
    pub master_seed: u64,
}

impl SimConfig {
    /// Desk-scale defaults.
    pub fn new(n: usize, p: usize, noise: NoiseKind) -> Self {
        Self {
            n,
            p,
            trials: 50,
            test_size: 500,
            eval_points: 100,
            grid_size: 101,
            noise,
            sigma_eps: 0.05,
            sigma_eta: 0.5,
            ig_shape: 18.0,
            ig_scale: 17.0,
            alpha_intercept: 1.0,
            condition_number: 1e3,
            lambda_grid: LambdaGrid::Auto {
                points: DEFAULT_GRID_POINTS,
            },
            master_seed: DEFAULT_MASTER_SEED,
        }
    }

    pub fn full_scale(mut self) -> Self {
        self.trials = 500;
        self.test_size = 1000;
        self.eval_points = 500;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.p < 2 {
            return fail(format!("p must be at least 2, got {}", self.p));
        }
        if self.trials == 0 || self.test_size == 0 || self.eval_points == 0 || self.grid_size == 0 {
            return fail("trials, test_size, eval_points and grid_size must be positive".into());
        }
        if !(self.ig_shape > 2.0) || !self.ig_shape.is_finite() {
            return fail(format!("ig_shape must exceed 2, got {}", self.ig_shape));
        }
        if !(self.ig_scale > 0.0) || !self.ig_scale.is_finite() {
            return fail(format!("ig_scale must be positive, got {}", self.ig_scale));
        }
        if !(self.condition_number > 1.0) || !self.condition_number.is_finite() {
            return fail(format!("condition_number must exceed 1, got {}", self.condition_number));
        }
        for (name, v) in [("sigma_eps", self.sigma_eps), ("sigma_eta", self.sigma_eta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.alpha_intercept.is_finite() {
            return fail("alpha_intercept must be finite".into());
        }
        if let LambdaGrid::Auto { points: 0 } = self.lambda_grid {
            return fail("lambda grid needs at least one point".into());
        }
        Ok(())
    }

    fn cell_key(&self) -> u64 {
        ((self.n as u64) << 32) | self.p as u64
    }
}

/// Independent stream for `(master seed, cell, slot)`.
pub fn stream_rng(master_seed: u64, cell: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(slot);
    rng
}

/// Geometric decay from 1 to `1 / condition_number`, rescaled to sum to `p`.
pub fn make_spectrum(p: usize, condition_number: f64) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("spectrum needs p >= 2, got {p}")));
    }
    if !(condition_number >= 1.0) || !condition_number.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "condition number must be finite and at least 1, got {condition_number}"
        )));
    }
    let a: Vec<f64> = (0..p)
        .map(|j| condition_number.powf(-(j as f64) / (p - 1) as f64))
        .collect();
    let total: f64 = a.iter().sum();
    Ok(a.into_iter().map(|v| p as f64 * v / total).collect())
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `N(0, Q diag(kappa) Q^T)`.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    basis: Matrix,
    spectrum: Vec<f64>,
    factor: Matrix,
}

impl CovarianceModel {
    pub fn new(spectrum: Vec<f64>, basis: Matrix) -> Result<Self> {
        let p = spectrum.len();
        if basis.nrows() != p || basis.ncols() != p {
            return Err(Error::ShapeMismatch(format!(
                "basis is {}x{} for a spectrum of length {p}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        if spectrum.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(Error::InvalidArgument("spectrum must be finite and non-negative".into()));
        }
        let gram = basis.transpose() * &basis;
        if (gram - Matrix::identity(p, p)).amax() > 1e-8 {
            return Err(Error::InvalidArgument("basis is not orthogonal".into()));
        }
        let mut factor = basis.transpose();
        for (j, k) in spectrum.iter().enumerate() {
            factor.row_mut(j).scale_mut(k.sqrt());
        }
        Ok(Self {
            basis,
            spectrum,
            factor,
        })
    }

    pub fn random<R: Rng + ?Sized>(spectrum: Vec<f64>, rng: &mut R) -> Result<Self> {
        let basis = random_orthogonal(spectrum.len(), rng);
        Self::new(spectrum, basis)
    }

    pub fn p(&self) -> usize {
        self.spectrum.len()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn covariance(&self) -> Matrix {
        self.factor.transpose() * &self.factor
    }

    /// `n` rows drawn independently.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let g = Matrix::from_fn(n, self.p(), |_, _| StandardNormal.sample(rng));
        g * &self.factor
    }
}

pub fn gen_covariates<R: Rng + ?Sized>(n: usize, model: &CovarianceModel, rng: &mut R) -> Matrix {
    model.sample(n, rng)
}

fn noise_draw<R: Rng + ?Sized>(kind: NoiseKind, sigma: f64, rng: &mut R) -> f64 {
    match kind {
        NoiseKind::Gaussian => {
            let g: f64 = StandardNormal.sample(rng);
            sigma * g
        }
        NoiseKind::Laplace | NoiseKind::LaplaceVarianceMatched => {
            let b = if kind == NoiseKind::Laplace {
                sigma
            } else {
                sigma / std::f64::consts::SQRT_2
            };
            let u: f64 = Exp1.sample(rng);
            let v: f64 = Exp1.sample(rng);
            b * (u - v)
        }
    }
}

/// `Z = X + E` with i.i.d. entries of `E`.
pub fn add_noise<R: Rng + ?Sized>(x: &Matrix, kind: NoiseKind, sigma_eps: f64, rng: &mut R) -> Result<Matrix> {
    if !(sigma_eps >= 0.0) || !sigma_eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and non-negative, got {sigma_eps}"
        )));
    }
    let mut z = x.clone();
    // row-major draw order
    for i in 0..z.nrows() {
        for j in 0..z.ncols() {
            z[(i, j)] += noise_draw(kind, sigma_eps, rng);
        }
    }
    Ok(z)
}

/// `E[tau]` for `tau^2 ~ InverseGamma(shape, scale)`.
pub fn expected_tau(shape: f64, scale: f64) -> f64 {
    scale.sqrt() * (ln_gamma(shape - 0.5) - ln_gamma(shape)).exp()
}

pub fn standard_normal_quantile(t: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * t);
    if !z.is_finite() {
        return z;
    }
    // one Newton step on the CDF
    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    z - (cdf - t) / density
}

/// Source of random responses together with the true regression function.
pub trait ResponseModel: Sync {
    fn kind(&self) -> &MetricSpaceKind;

    fn sample<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<Vec<MetricPoint>>;

    fn truth(&self, x: &Vector) -> Result<MetricPoint>;
}

/// Latent draws behind one distributional response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDraw {
    pub location: f64,
    pub eta: f64,
    pub tau: f64,
}

/// Responses are quantile functions `t -> alpha + beta^T x + eta + tau Phi^{-1}(t)`
/// with `beta = p^{-1/2} 1`, `eta ~ N(0, sigma_eta^2)` and
/// `tau^2 ~ InverseGamma(ig_shape, ig_scale)`.
#[derive(Debug, Clone)]
pub struct WassersteinModel {
    alpha: f64,
    beta: Vector,
    sigma_eta: f64,
    tau_law: Gamma<f64>,
    ig_scale: f64,
    mean_tau: f64,
    kind: MetricSpaceKind,
    normal_quantiles: Vec<f64>,
}

impl WassersteinModel {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = QuantileGrid::uniform(cfg.grid_size)?;
        let normal_quantiles = grid.levels().iter().map(|&t| standard_normal_quantile(t)).collect();
        let tau_law = Gamma::new(cfg.ig_shape, 1.0)
            .map_err(|e| Error::InvalidArgument(format!("inverse gamma shape: {e}")))?;
        Ok(Self {
            alpha: cfg.alpha_intercept,
            beta: Vector::from_element(cfg.p, 1.0 / (cfg.p as f64).sqrt()),
            sigma_eta: cfg.sigma_eta,
            tau_law,
            ig_scale: cfg.ig_scale,
            mean_tau: expected_tau(cfg.ig_shape, cfg.ig_scale),
            kind: MetricSpaceKind::Wasserstein(grid),
            normal_quantiles,
        })
    }

    pub fn grid(&self) -> &QuantileGrid {
        match &self.kind {
            MetricSpaceKind::Wasserstein(g) => g,
            _ => unreachable!("wasserstein model always carries a quantile grid"),
        }
    }

    pub fn mean_tau(&self) -> f64 {
        self.mean_tau
    }

    pub fn location(&self, x: &[f64]) -> f64 {
        self.alpha + x.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn sample_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.ig_scale / self.tau_law.sample(rng)).sqrt()
    }

    pub fn quantile(&self, shift: f64, spread: f64) -> QuantileFunction {
        let values = self.normal_quantiles.iter().map(|z| shift + spread * z).collect();
        QuantileFunction::from_monotone(values)
    }

    /// Responses for every row of `x` and the latent draws behind them.
    pub fn sample_with_latent<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        rng: &mut R,
    ) -> Result<(Vec<MetricPoint>, Vec<LatentDraw>)> {
        if x.ncols() != self.beta.len() {
            return Err(Error::ShapeMismatch(format!(
                "covariates have {} columns, model expects {}",
                x.ncols(),
                self.beta.len()
            )));
        }
        let mut responses = Vec::with_capacity(x.nrows());
        let mut latent = Vec::with_capacity(x.nrows());
        for row in x.row_iter() {
            let location = self.location(&row.iter().copied().collect::<Vec<_>>());
            let z: f64 = StandardNormal.sample(rng);
            let eta = self.sigma_eta * z;
            let tau = self.sample_tau(rng);
            responses.push(MetricPoint::Quantile(self.quantile(location + eta, tau)));
            latent.push(LatentDraw { location, eta, tau });
        }
        Ok((responses, latent))
    }
}

impl ResponseModel for WassersteinModel {
    fn kind(&self) -> &MetricSpaceKind {
        &self.kind
    }

    fn sample<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<Vec<MetricPoint>> {
        Ok(self.sample_with_latent(x, rng)?.0)
    }

    fn truth(&self, x: &Vector) -> Result<MetricPoint> {
        Ok(MetricPoint::Quantile(true_regression_quantile(x, self)?))
    }
}

pub fn gen_wasserstein_responses<R: Rng + ?Sized>(
    x: &Matrix,
    model: &WassersteinModel,
    rng: &mut R,
) -> Result<(Vec<MetricPoint>, Vec<LatentDraw>)> {
    model.sample_with_latent(x, rng)
}

/// `t -> alpha + beta^T x + E[tau] Phi^{-1}(t)`.
pub fn true_regression_quantile(x: &Vector, model: &WassersteinModel) -> Result<QuantileFunction> {
    if x.len() != model.beta.len() {
        return Err(Error::ShapeMismatch(format!(
            "query has length {}, model expects {}",
            x.len(),
            model.beta.len()
        )));
    }
    Ok(model.quantile(model.location(x.as_slice()), model.mean_tau))
}

/// Vector responses `Y = intercept + coefficients^T x + eta`, `eta ~ N(0, sd^2 I)`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub intercept: Vector,
    pub coefficients: Matrix,
    pub response_sd: f64,
    kind: MetricSpaceKind,
}

impl LinearModel {
    pub fn new(intercept: Vector, coefficients: Matrix, response_sd: f64, kind: MetricSpaceKind) -> Result<Self> {
        if coefficients.ncols() != intercept.len() || intercept.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients are {}x{} for an intercept of length {}",
                coefficients.nrows(),
                coefficients.ncols(),
                intercept.len()
            )));
        }
        if !matches!(
            kind,
            MetricSpaceKind::Euclidean | MetricSpaceKind::L1Vector | MetricSpaceKind::LinfVector
        ) {
            return Err(Error::KindMismatch(format!("linear model needs a vector metric, got {}", kind.name())));
        }
        if !(response_sd >= 0.0) || !response_sd.is_finite() {
            return Err(Error::InvalidArgument(format!("response sd must be non-negative, got {response_sd}")));
        }
        Ok(Self {
            intercept,
            coefficients,
            response_sd,
            kind,
        })
    }

    /// `intercept = 1 + 0.1 g`, `coefficients = d^{-1/2} 1 + 0.1 G`, sd 0.5.
    pub fn random<R: Rng + ?Sized>(p: usize, d: usize, kind: MetricSpaceKind, rng: &mut R) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::InvalidArgument("linear model needs p >= 1 and d >= 1".into()));
        }
        let intercept = Vector::from_fn(d, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            1.0 + 0.1 * g
        });
        let base = 1.0 / (d as f64).sqrt();
        let coefficients = Matrix::from_fn(p, d, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            base + 0.1 * g
        });
        Self::new(intercept, coefficients, 0.5, kind)
    }

    pub fn mean(&self, x: &Vector) -> Vector {
        &self.intercept + self.coefficients.transpose() * x
    }
}

impl ResponseModel for LinearModel {
    fn kind(&self) -> &MetricSpaceKind {
        &self.kind
    }

    fn sample<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<Vec<MetricPoint>> {
        if x.ncols() != self.coefficients.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "covariates have {} columns, model expects {}",
                x.ncols(),
                self.coefficients.nrows()
            )));
        }
        let d = self.intercept.len();
        Ok(x.row_iter()
            .map(|row| {
                let mut y = self.mean(&row.transpose());
                for k in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    y[k] += self.response_sd * z;
                }
                MetricPoint::Euclidean(y)
            })
            .collect())
    }

    fn truth(&self, x: &Vector) -> Result<MetricPoint> {
        if x.len() != self.coefficients.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "query has length {}, model expects {}",
                x.len(),
                self.coefficients.nrows()
            )));
        }
        Ok(MetricPoint::Euclidean(self.mean(x)))
    }
}

pub fn gen_linear_responses<R: Rng + ?Sized>(x: &Matrix, model: &LinearModel, rng: &mut R) -> Result<Vec<MetricPoint>> {
    model.sample(x, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// `lambda = 0` on the error-free covariates.
    #[serde(rename = "REF")]
    Ref,
    /// `lambda = 0` on the noisy covariates.
    #[serde(rename = "EIV")]
    Eiv,
    /// Thresholded fit on the noisy covariates.
    #[serde(rename = "SVT")]
    Svt,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Ref, Estimator::Eiv, Estimator::Svt];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ref => "REF",
            Estimator::Eiv => "EIV",
            Estimator::Svt => "SVT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub mspe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub trial: usize,
    pub reference: ErrorMetrics,
    pub eiv: ErrorMetrics,
    pub svt: ErrorMetrics,
    pub lambda: f64,
}

impl TrialReport {
    pub fn metrics(&self, e: Estimator) -> ErrorMetrics {
        match e {
            Estimator::Ref => self.reference,
            Estimator::Eiv => self.eiv,
            Estimator::Svt => self.svt,
        }
    }
}

fn mean_squared_distance(kind: &MetricSpaceKind, preds: &[MetricPoint], targets: &[MetricPoint]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in preds.iter().zip(targets) {
        total += distance(kind, a, b)?.powi(2);
    }
    Ok(total / preds.len() as f64)
}

/// Mean squared distance of `points` to their own Fréchet mean.
pub fn spread(kind: &MetricSpaceKind, points: &[MetricPoint]) -> Result<f64> {
    let ones = vec![1.0; points.len()];
    let center = weighted_frechet_mean(kind, points, &ones)?;
    let centers = vec![center; points.len()];
    mean_squared_distance(kind, points, &centers)
}

/// Error of REF, EIV and the SVT path across a lambda grid for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialProfile {
    pub reference: ErrorMetrics,
    pub eiv: ErrorMetrics,
    pub svt: Vec<ErrorMetrics>,
    /// Mean squared distance of the test responses to their Fréchet mean.
    pub test_spread: f64,
}

struct TrialInputs<'a> {
    kind: &'a MetricSpaceKind,
    x: &'a Matrix,
    z: &'a Matrix,
    y: &'a [MetricPoint],
    test_x: &'a Matrix,
    test_y: &'a [MetricPoint],
}

fn profile_inputs(inp: &TrialInputs<'_>, grid: &[f64]) -> Result<TrialProfile> {
    let kind = inp.kind;
    let errors = |lambda: f64, train: &QueryScores, test: &QueryScores| -> Result<ErrorMetrics> {
        let fit = predict_from_weights(kind, inp.y, &train.weight_matrix(lambda)?)?;
        let pred = predict_from_weights(kind, inp.y, &test.weight_matrix(lambda)?)?;
        Ok(ErrorMetrics {
            mse: mean_squared_distance(kind, &fit, inp.y)?,
            mspe: mean_squared_distance(kind, &pred, inp.test_y)?,
        })
    };

    let stats_x = CovariateStats::compute(inp.x)?;
    let reference = errors(
        0.0,
        &QueryScores::new(&stats_x, inp.x)?,
        &QueryScores::new(&stats_x, inp.test_x)?,
    )?;

    // in-sample error of the noisy fits is measured at the clean covariates
    let stats_z = CovariateStats::compute(inp.z)?;
    let train = QueryScores::new(&stats_z, inp.x)?;
    let test = QueryScores::new(&stats_z, inp.test_x)?;
    let eiv = errors(0.0, &train, &test)?;
    let svt = grid
        .iter()
        .map(|&l| errors(l, &train, &test))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialProfile {
        reference,
        eiv,
        svt,
        test_spread: spread(kind, inp.test_y)?,
    })
}

/// First index of the minimum; `NaN` entries never win.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

fn check_trial_datasets(train: &Dataset, train_noisy: &Dataset, test: &Dataset) -> Result<()> {
    if train.n() != train_noisy.n() || train.p() != train_noisy.p() || train.p() != test.p() {
        return Err(Error::ShapeMismatch(format!(
            "train is {}x{}, noisy train {}x{}, test has {} columns",
            train.n(),
            train.p(),
            train_noisy.n(),
            train_noisy.p(),
            test.p()
        )));
    }
    if train.kind() != train_noisy.kind() || train.kind() != test.kind() {
        return Err(Error::KindMismatch("train and test datasets use different metric spaces".into()));
    }
    if train.responses().len() != train_noisy.responses().len()
        || train
            .responses()
            .iter()
            .zip(train_noisy.responses())
            .any(|(a, b)| a != b)
    {
        return Err(Error::InvalidArgument(
            "clean and noisy training sets must share their responses".into(),
        ));
    }
    Ok(())
}

/// MSPE of the thresholded fit on `train_noisy` at each grid value.
pub fn mspe_profile(train_noisy: &Dataset, test: &Dataset, grid: &[f64]) -> Result<Vec<f64>> {
    if train_noisy.p() != test.p() {
        return Err(Error::ShapeMismatch("train and test have different widths".into()));
    }
    if train_noisy.kind() != test.kind() {
        return Err(Error::KindMismatch("train and test datasets use different metric spaces".into()));
    }
    let stats = CovariateStats::compute(train_noisy.covariates())?;
    let scores = QueryScores::new(&stats, test.covariates())?;
    grid.iter()
        .map(|&l| {
            let pred = predict_from_weights(train_noisy.kind(), train_noisy.responses(), &scores.weight_matrix(l)?)?;
            mean_squared_distance(test.kind(), &pred, test.responses())
        })
        .collect()
}

/// Grid value with the smallest test MSPE; ties go to the smaller lambda.
pub fn tune_lambda(train_noisy: &Dataset, test: &Dataset, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let profile = mspe_profile(train_noisy, test, &sorted)?;
    let i = argmin_first(&profile).ok_or_else(|| Error::InvalidArgument("MSPE profile is all NaN".into()))?;
    Ok(sorted[i])
}

/// REF, EIV and SVT errors for one trial, with lambda tuned on this trial's test set.
pub fn evaluate_trial(train: &Dataset, train_noisy: &Dataset, test: &Dataset, lambda_grid: &[f64]) -> Result<TrialReport> {
    check_trial_datasets(train, train_noisy, test)?;
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let profile = profile_inputs(
        &TrialInputs {
            kind: train.kind(),
            x: train.covariates(),
            z: train_noisy.covariates(),
            y: train.responses(),
            test_x: test.covariates(),
            test_y: test.responses(),
        },
        &grid,
    )?;
    let mspe: Vec<f64> = profile.svt.iter().map(|m| m.mspe).collect();
    let i = argmin_first(&mspe).ok_or_else(|| Error::InvalidArgument("MSPE profile is all NaN".into()))?;
    Ok(TrialReport {
        trial: 0,
        reference: profile.reference,
        eiv: profile.eiv,
        svt: profile.svt[i],
        lambda: grid[i],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BiasVariance {
    /// Mean over evaluation points of `d^2(mean prediction, truth)`.
    pub bias2: f64,
    /// Mean over evaluation points of the spread of predictions about their mean.
    pub var: f64,
    /// Mean over evaluation points and trials of `d^2(prediction, truth)`.
    pub truth_error: f64,
}

/// Bias-variance summary from `predictions[b][m]`, trial `b` at evaluation point `m`.
pub fn aggregate(kind: &MetricSpaceKind, predictions: &[Vec<MetricPoint>], truths: &[MetricPoint]) -> Result<BiasVariance> {
    let b = predictions.len();
    let m = truths.len();
    if b == 0 || m == 0 {
        return Err(Error::InvalidArgument("aggregate needs at least one trial and one point".into()));
    }
    if predictions.iter().any(|row| row.len() != m) {
        return Err(Error::ShapeMismatch(format!("every trial needs {m} predictions")));
    }
    let ones = vec![1.0; b];
    let mut out = BiasVariance::default();
    for (j, truth) in truths.iter().enumerate() {
        let column: Vec<MetricPoint> = predictions.iter().map(|row| row[j].clone()).collect();
        let center = weighted_frechet_mean(kind, &column, &ones)?;
        out.bias2 += distance(kind, &center, truth)?.powi(2);
        for pred in &column {
            out.var += distance(kind, pred, &center)?.powi(2) / b as f64;
            out.truth_error += distance(kind, pred, truth)?.powi(2) / b as f64;
        }
    }
    out.bias2 /= m as f64;
    out.var /= m as f64;
    out.truth_error /= m as f64;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub lambda: f64,
    pub bias2: f64,
    pub var: f64,
    pub truth_error: f64,
    pub mse: f64,
    pub mspe: f64,
}

impl EstimatorSummary {
    pub fn bias(&self) -> f64 {
        self.bias2.sqrt()
    }

    pub fn sqrt_var(&self) -> f64 {
        self.var.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub reference: EstimatorSummary,
    pub eiv: EstimatorSummary,
    pub svt: EstimatorSummary,
}

impl AggregateReport {
    pub fn get(&self, e: Estimator) -> &EstimatorSummary {
        match e {
            Estimator::Ref => &self.reference,
            Estimator::Eiv => &self.eiv,
            Estimator::Svt => &self.svt,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &EstimatorSummary> {
        [&self.reference, &self.eiv, &self.svt].into_iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub lambda: f64,
    pub mse: f64,
    pub mspe: f64,
    pub nmspe: f64,
}

/// One row of the Table-1 style results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub n: usize,
    pub p: usize,
    pub noise_kind: String,
    pub estimator: String,
    pub bias: f64,
    pub sqrt_var: f64,
    pub mse: f64,
    pub mspe: f64,
    pub lambda_hat: f64,
}

/// One row of the NMSPE-versus-lambda file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub n: usize,
    pub p: usize,
    pub noise_kind: String,
    pub estimator: String,
    pub lambda: f64,
    pub nmspe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub config: SimConfig,
    pub mean_top_eigenvalue: f64,
    pub lambda_grid: Vec<f64>,
    pub lambda_hat: f64,
    pub trials: Vec<TrialReport>,
    pub profile: Vec<ProfilePoint>,
    pub reference_nmspe: f64,
    pub eiv_nmspe: f64,
    pub aggregate: AggregateReport,
}

impl CellReport {
    pub fn result_rows(&self) -> Vec<ResultRow> {
        self.aggregate
            .iter()
            .map(|s| ResultRow {
                n: self.config.n,
                p: self.config.p,
                noise_kind: self.config.noise.name().to_string(),
                estimator: s.estimator.name().to_string(),
                bias: s.bias(),
                sqrt_var: s.sqrt_var(),
                mse: s.mse,
                mspe: s.mspe,
                lambda_hat: s.lambda,
            })
            .collect()
    }

    /// SVT follows the lambda path; REF and EIV are flat lines.
    pub fn profile_rows(&self) -> Vec<ProfileRow> {
        let row = |estimator: Estimator, lambda: f64, nmspe: f64| ProfileRow {
            n: self.config.n,
            p: self.config.p,
            noise_kind: self.config.noise.name().to_string(),
            estimator: estimator.name().to_string(),
            lambda,
            nmspe,
        };
        let mut rows = Vec::with_capacity(3 * self.profile.len());
        for point in &self.profile {
            rows.push(row(Estimator::Ref, point.lambda, self.reference_nmspe));
            rows.push(row(Estimator::Eiv, point.lambda, self.eiv_nmspe));
            rows.push(row(Estimator::Svt, point.lambda, point.nmspe));
        }
        rows
    }

    /// Profile point with the smallest NMSPE.
    pub fn best_profile_point(&self) -> Option<&ProfilePoint> {
        let v: Vec<f64> = self.profile.iter().map(|p| p.nmspe).collect();
        argmin_first(&v).map(|i| &self.profile[i])
    }
}

struct TrialData {
    x: Matrix,
    z: Matrix,
    y: Vec<MetricPoint>,
    test_x: Matrix,
    test_y: Vec<MetricPoint>,
}

struct Cell<'a, M: ResponseModel> {
    cfg: &'a SimConfig,
    model: &'a M,
    covariance: CovarianceModel,
    eval_x: Matrix,
    truths: Vec<MetricPoint>,
}

impl<'a, M: ResponseModel> Cell<'a, M> {
    fn new(cfg: &'a SimConfig, model: &'a M) -> Result<Self> {
        cfg.validate()?;
        let spectrum = make_spectrum(cfg.p, cfg.condition_number)?;
        let mut basis_rng = stream_rng(cfg.master_seed, cfg.cell_key(), BASIS_SLOT);
        let covariance = CovarianceModel::random(spectrum, &mut basis_rng)?;
        let mut eval_rng = stream_rng(cfg.master_seed, cfg.cell_key(), EVAL_SLOT);
        let eval_x = covariance.sample(cfg.eval_points, &mut eval_rng);
        let truths = eval_x
            .row_iter()
            .map(|r| model.truth(&r.transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            model,
            covariance,
            eval_x,
            truths,
        })
    }

    fn kind(&self) -> &MetricSpaceKind {
        self.model.kind()
    }

    fn design(&self, rng: &mut ChaCha8Rng) -> Result<(Matrix, Matrix)> {
        let x = self.covariance.sample(self.cfg.n, rng);
        let z = add_noise(&x, self.cfg.noise, self.cfg.sigma_eps, rng)?;
        Ok((x, z))
    }

    fn trial_rng(&self, b: usize) -> ChaCha8Rng {
        stream_rng(self.cfg.master_seed, self.cfg.cell_key(), b as u64)
    }

    fn trial(&self, b: usize) -> Result<TrialData> {
        let mut rng = self.trial_rng(b);
        let (x, z) = self.design(&mut rng)?;
        let y = self.model.sample(&x, &mut rng)?;
        let test_x = self.covariance.sample(self.cfg.test_size, &mut rng);
        let test_y = self.model.sample(&test_x, &mut rng)?;
        Ok(TrialData {
            x,
            z,
            y,
            test_x,
            test_y,
        })
    }

    fn top_eigenvalue(&self, b: usize) -> Result<f64> {
        let (_, z) = self.design(&mut self.trial_rng(b))?;
        Ok(CovariateStats::compute(&z)?.covariance_svd().largest())
    }

    fn profile(&self, b: usize, grid: &[f64]) -> Result<TrialProfile> {
        let t = self.trial(b)?;
        profile_inputs(
            &TrialInputs {
                kind: self.kind(),
                x: &t.x,
                z: &t.z,
                y: &t.y,
                test_x: &t.test_x,
                test_y: &t.test_y,
            },
            grid,
        )
    }

    /// Predictions at the evaluation points, ordered REF, EIV, SVT.
    fn eval_predictions(&self, b: usize, lambda_hat: f64) -> Result<[Vec<MetricPoint>; 3]> {
        let t = self.trial(b)?;
        let kind = self.kind();
        let stats_x = Arc::new(CovariateStats::compute(&t.x)?);
        let stats_z = Arc::new(CovariateStats::compute(&t.z)?);
        let reference = FittedModel::with_stats(stats_x, 0.0, &t.y, kind)?.predict_batch(&self.eval_x)?;
        let eiv = FittedModel::with_stats(Arc::clone(&stats_z), 0.0, &t.y, kind)?.predict_batch(&self.eval_x)?;
        let svt = FittedModel::with_stats(stats_z, lambda_hat, &t.y, kind)?.predict_batch(&self.eval_x)?;
        Ok([reference, eiv, svt])
    }
}

fn with_trial<T>(b: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Trial {
        trial: b,
        source: Box::new(e),
    })
}

fn trial_chunk() -> usize {
    4 * rayon::current_num_threads().max(1)
}

fn bias_variance_streaming<M: ResponseModel>(cell: &Cell<'_, M>, lambda_hat: f64) -> Result<[BiasVariance; 3]> {
    let kind = cell.kind();
    let b_total = cell.cfg.trials;
    let m_total = cell.truths.len();
    let all: Vec<usize> = (0..b_total).collect();

    if !kind.mean_is_projection() {
        let mut stored: [Vec<Vec<MetricPoint>>; 3] = Default::default();
        for chunk in all.chunks(trial_chunk()) {
            let preds = chunk
                .par_iter()
                .map(|&b| with_trial(b, cell.eval_predictions(b, lambda_hat)))
                .collect::<Result<Vec<_>>>()?;
            for trial in preds {
                for (e, p) in trial.into_iter().enumerate() {
                    stored[e].push(p);
                }
            }
        }
        let mut out = [BiasVariance::default(); 3];
        for e in 0..3 {
            out[e] = aggregate(kind, &stored[e], &cell.truths)?;
        }
        return Ok(out);
    }

    // first sweep: coordinate sums give the equal-weight Fréchet means
    let dim = cell.truths[0].coordinate_len();
    let mut sums = vec![vec![vec![0.0; dim]; m_total]; 3];
    for chunk in all.chunks(trial_chunk()) {
        let preds = chunk
            .par_iter()
            .map(|&b| with_trial(b, cell.eval_predictions(b, lambda_hat)))
            .collect::<Result<Vec<_>>>()?;
        for trial in &preds {
            for e in 0..3 {
                for (j, p) in trial[e].iter().enumerate() {
                    for (s, c) in sums[e][j].iter_mut().zip(p.coordinates()) {
                        *s += c;
                    }
                }
            }
        }
    }
    let centers = sums
        .into_iter()
        .map(|per_point| {
            per_point
                .into_iter()
                .map(|s| project_affine(kind, s.into_iter().map(|v| v / b_total as f64).collect()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // second sweep: deviations about those means and about the truth
    let mut out = [BiasVariance::default(); 3];
    for chunk in all.chunks(trial_chunk()) {
        let preds = chunk
            .par_iter()
            .map(|&b| with_trial(b, cell.eval_predictions(b, lambda_hat)))
            .collect::<Result<Vec<_>>>()?;
        for trial in &preds {
            for e in 0..3 {
                for (j, p) in trial[e].iter().enumerate() {
                    out[e].var += distance(kind, p, &centers[e][j])?.powi(2);
                    out[e].truth_error += distance(kind, p, &cell.truths[j])?.powi(2);
                }
            }
        }
    }
    let scale = (b_total * m_total) as f64;
    for e in 0..3 {
        out[e].var /= scale;
        out[e].truth_error /= scale;
        for (c, t) in centers[e].iter().zip(&cell.truths) {
            out[e].bias2 += distance(kind, c, t)?.powi(2);
        }
        out[e].bias2 /= m_total as f64;
    }
    Ok(out)
}

/// Full Monte Carlo cell: lambda grid from the noisy spectra, per-trial error
/// profiles, one universal lambda minimizing the trial-averaged MSPE, then
/// bias and variance at fixed evaluation points.
pub fn run_cell_with<M: ResponseModel>(cfg: &SimConfig, model: &M) -> Result<CellReport> {
    let cell = Cell::new(cfg, model)?;
    let b_total = cfg.trials;

    let tops = (0..b_total)
        .into_par_iter()
        .map(|b| with_trial(b, cell.top_eigenvalue(b)))
        .collect::<Result<Vec<_>>>()?;
    let mean_top_eigenvalue = tops.iter().sum::<f64>() / b_total as f64;
    let grid = cfg.lambda_grid.resolve(mean_top_eigenvalue, cfg.n, cfg.p)?;

    let profiles = (0..b_total)
        .into_par_iter()
        .map(|b| with_trial(b, cell.profile(b, &grid)))
        .collect::<Result<Vec<_>>>()?;

    let avg = |f: &dyn Fn(&TrialProfile) -> f64| profiles.iter().map(f).sum::<f64>() / b_total as f64;
    let mean_spread = avg(&|t| t.test_spread);
    let profile: Vec<ProfilePoint> = grid
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let mspe = avg(&|t| t.svt[k].mspe);
            ProfilePoint {
                lambda,
                mse: avg(&|t| t.svt[k].mse),
                mspe,
                nmspe: mspe / mean_spread,
            }
        })
        .collect();
    let mspe_path: Vec<f64> = profile.iter().map(|p| p.mspe).collect();
    let k_hat = argmin_first(&mspe_path).ok_or_else(|| Error::InvalidArgument("MSPE profile is all NaN".into()))?;
    let lambda_hat = grid[k_hat];

    let trials: Vec<TrialReport> = profiles
        .iter()
        .enumerate()
        .map(|(b, t)| TrialReport {
            trial: b,
            reference: t.reference,
            eiv: t.eiv,
            svt: t.svt[k_hat],
            lambda: lambda_hat,
        })
        .collect();

    let bv = bias_variance_streaming(&cell, lambda_hat)?;
    let summary = |e: Estimator, lambda: f64| {
        let i = e as usize;
        EstimatorSummary {
            estimator: e,
            lambda,
            bias2: bv[i].bias2,
            var: bv[i].var,
            truth_error: bv[i].truth_error,
            mse: trials.iter().map(|t| t.metrics(e).mse).sum::<f64>() / b_total as f64,
            mspe: trials.iter().map(|t| t.metrics(e).mspe).sum::<f64>() / b_total as f64,
        }
    };
    let aggregate = AggregateReport {
        reference: summary(Estimator::Ref, 0.0),
        eiv: summary(Estimator::Eiv, 0.0),
        svt: summary(Estimator::Svt, lambda_hat),
    };
    let reference_nmspe = aggregate.reference.mspe / mean_spread;
    let eiv_nmspe = aggregate.eiv.mspe / mean_spread;

    Ok(CellReport {
        config: cfg.clone(),
        mean_top_eigenvalue,
        lambda_grid: grid,
        lambda_hat,
        trials,
        profile,
        reference_nmspe,
        eiv_nmspe,
        aggregate,
    })
}

/// Distributional-response cell with the model built from `cfg`.
pub fn run_cell(cfg: &SimConfig) -> Result<CellReport> {
    let model = WassersteinModel::from_config(cfg)?;
    run_cell_with(cfg, &model)
}

/// Vector linear-model cell with `d` response coordinates under `kind`;
/// the coefficients are drawn once per cell.
pub fn run_linear_cell(cfg: &SimConfig, d: usize, kind: MetricSpaceKind) -> Result<CellReport> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.master_seed, cfg.cell_key(), MODEL_SLOT);
    let model = LinearModel::random(cfg.p, d, kind, &mut rng)?;
    run_cell_with(cfg, &model)
}

/// Linear-model defaults: covariate noise sd 0.5.
pub fn linear_config(n: usize, p: usize) -> SimConfig {
    SimConfig {
        sigma_eps: 0.5,
        ..SimConfig::new(n, p, NoiseKind::Gaussian)
    }
}
