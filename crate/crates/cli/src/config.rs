//! Campaign files for `simulate`.
//!
//! ```toml
//! seed = 20240601
//! trials = 50
//!
//! [[cell]]
//! n = 100
//! p = 150
//! noise = "gaussian"
//!
//! [[cell]]
//! n = 100
//! p = 50
//! model = "linear"
//! response_dim = 5
//! metric = "l1"
//! ```
//!
//! Top-level keys set defaults for every cell; the same keys inside a cell
//! override them.

use frechet_svt::simulation::{linear_config, LambdaGrid, NoiseKind, SimConfig, DEFAULT_MASTER_SEED};
use frechet_svt::MetricSpaceKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Distributional responses with a quantile-function metric.
    #[default]
    Wasserstein,
    /// Vector responses from a random linear model.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMetric {
    #[default]
    Euclidean,
    L1,
    Linf,
}

impl VectorMetric {
    pub fn kind(self) -> MetricSpaceKind {
        match self {
            VectorMetric::Euclidean => MetricSpaceKind::Euclidean,
            VectorMetric::L1 => MetricSpaceKind::L1Vector,
            VectorMetric::Linf => MetricSpaceKind::LinfVector,
        }
    }
}

/// Simulation parameters that may appear at the top level or in a cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    pub trials: Option<usize>,
    pub test_size: Option<usize>,
    pub eval_points: Option<usize>,
    pub grid_size: Option<usize>,
    pub sigma_eps: Option<f64>,
    pub sigma_eta: Option<f64>,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
    pub alpha_intercept: Option<f64>,
    pub condition_number: Option<f64>,
    pub lambda_points: Option<usize>,
    pub lambda_grid: Option<Vec<f64>>,
}

impl Params {
    fn apply(&self, cfg: &mut SimConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(trials, test_size, eval_points, grid_size, sigma_eps, sigma_eta, ig_shape, ig_scale, alpha_intercept, condition_number);
        if let Some(points) = self.lambda_points {
            cfg.lambda_grid = LambdaGrid::Auto { points };
        }
        if let Some(grid) = &self.lambda_grid {
            cfg.lambda_grid = LambdaGrid::Explicit(grid.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    #[serde(default)]
    pub model: ModelKind,
    /// Response dimension of the linear model.
    pub response_dim: Option<usize>,
    /// Metric on linear-model responses.
    pub metric: Option<VectorMetric>,
    pub trials: Option<usize>,
    pub test_size: Option<usize>,
    pub eval_points: Option<usize>,
    pub grid_size: Option<usize>,
    pub sigma_eps: Option<f64>,
    pub sigma_eta: Option<f64>,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
    pub alpha_intercept: Option<f64>,
    pub condition_number: Option<f64>,
    pub lambda_points: Option<usize>,
    pub lambda_grid: Option<Vec<f64>>,
}

fn default_noise() -> NoiseKind {
    NoiseKind::Gaussian
}

impl CellSpec {
    fn params(&self) -> Params {
        Params {
            trials: self.trials,
            test_size: self.test_size,
            eval_points: self.eval_points,
            grid_size: self.grid_size,
            sigma_eps: self.sigma_eps,
            sigma_eta: self.sigma_eta,
            ig_shape: self.ig_shape,
            ig_scale: self.ig_scale,
            alpha_intercept: self.alpha_intercept,
            condition_number: self.condition_number,
            lambda_points: self.lambda_points,
            lambda_grid: self.lambda_grid.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub test_size: Option<usize>,
    pub eval_points: Option<usize>,
    pub grid_size: Option<usize>,
    pub sigma_eps: Option<f64>,
    pub sigma_eta: Option<f64>,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
    pub alpha_intercept: Option<f64>,
    pub condition_number: Option<f64>,
    pub lambda_points: Option<usize>,
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub cell: Vec<CellSpec>,
}

impl CampaignFile {
    fn params(&self) -> Params {
        Params {
            trials: self.trials,
            test_size: self.test_size,
            eval_points: self.eval_points,
            grid_size: self.grid_size,
            sigma_eps: self.sigma_eps,
            sigma_eta: self.sigma_eta,
            ig_shape: self.ig_shape,
            ig_scale: self.ig_scale,
            alpha_intercept: self.alpha_intercept,
            condition_number: self.condition_number,
            lambda_points: self.lambda_points,
            lambda_grid: self.lambda_grid.clone(),
        }
    }
}

/// One cell with every parameter filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedCell {
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<VectorMetric>,
    pub sim: SimConfig,
}

impl ResolvedCell {
    pub fn label(&self) -> String {
        format!("n={} p={} noise={}", self.sim.n, self.sim.p, self.sim.noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Campaign {
    pub master_seed: u64,
    pub cells: Vec<ResolvedCell>,
}

impl Campaign {
    /// Parses and validates a campaign; `seed` overrides the file's seed.
    pub fn parse(text: &str, seed: Option<u64>) -> CliResult<Self> {
        let file: CampaignFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        file.resolve(seed)
    }

    /// Campaign file that reproduces this campaign exactly.
    pub fn to_file(&self) -> CampaignFile {
        let cell = self
            .cells
            .iter()
            .map(|c| {
                let s = &c.sim;
                let (lambda_points, lambda_grid) = match &s.lambda_grid {
                    LambdaGrid::Auto { points } => (Some(*points), None),
                    LambdaGrid::Explicit(g) => (None, Some(g.clone())),
                };
                CellSpec {
                    n: s.n,
                    p: s.p,
                    noise: s.noise,
                    model: c.model,
                    response_dim: c.response_dim,
                    metric: c.metric,
                    trials: Some(s.trials),
                    test_size: Some(s.test_size),
                    eval_points: Some(s.eval_points),
                    grid_size: Some(s.grid_size),
                    sigma_eps: Some(s.sigma_eps),
                    sigma_eta: Some(s.sigma_eta),
                    ig_shape: Some(s.ig_shape),
                    ig_scale: Some(s.ig_scale),
                    alpha_intercept: Some(s.alpha_intercept),
                    condition_number: Some(s.condition_number),
                    lambda_points,
                    lambda_grid,
                }
            })
            .collect();
        CampaignFile {
            seed: Some(self.master_seed),
            trials: None,
            test_size: None,
            eval_points: None,
            grid_size: None,
            sigma_eps: None,
            sigma_eta: None,
            ig_shape: None,
            ig_scale: None,
            alpha_intercept: None,
            condition_number: None,
            lambda_points: None,
            lambda_grid: None,
            cell,
        }
    }
}

impl CampaignFile {
    pub fn resolve(&self, seed: Option<u64>) -> CliResult<Campaign> {
        if self.cell.is_empty() {
            return Err(CliError::Config("no [[cell]] sections".into()));
        }
        let global = self.params();
        let master_seed = seed.or(self.seed).unwrap_or(DEFAULT_MASTER_SEED);
        let cells = self
            .cell
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let ctx = |msg: String| CliError::Config(format!("cell {} (n={}, p={}): {msg}", i + 1, spec.n, spec.p));
                let mut sim = match spec.model {
                    ModelKind::Wasserstein => SimConfig::new(spec.n, spec.p, spec.noise),
                    ModelKind::Linear => SimConfig {
                        noise: spec.noise,
                        ..linear_config(spec.n, spec.p)
                    },
                };
                global.apply(&mut sim);
                spec.params().apply(&mut sim);
                sim.master_seed = master_seed;
                let (response_dim, metric) = match spec.model {
                    ModelKind::Wasserstein => {
                        if spec.response_dim.is_some() || spec.metric.is_some() {
                            return Err(ctx("response_dim and metric apply only to model = \"linear\"".into()));
                        }
                        (None, None)
                    }
                    ModelKind::Linear => {
                        let d = spec.response_dim.unwrap_or(5);
                        if d == 0 {
                            return Err(ctx("response_dim must be positive".into()));
                        }
                        (Some(d), Some(spec.metric.unwrap_or_default()))
                    }
                };
                sim.validate().map_err(|e| ctx(e.to_string()))?;
                Ok(ResolvedCell {
                    model: spec.model,
                    response_dim,
                    metric,
                    sim,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Campaign { master_seed, cells })
    }
}
