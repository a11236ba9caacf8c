//! Randomized checks of the projection and perturbation identities behind
//! the estimator, plus the weight-stability and de-noising inequalities.
//!
//! Each instance draws from its own seed, reported with any violation so a
//! failing case can be replayed in isolation.

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diagnostics::{denoise_diagnostics, weight_stability_check, GrowthConstants};
use crate::error::Result;
use crate::linalg::{pinv_perturbation_residual, spectral_norm, Matrix, SvdFactors, ThresholdPolicy, Vector};
use crate::metric::{MetricPoint, MetricSpaceKind, QuantileFunction, QuantileGrid};
use crate::regression::CovariateStats;

pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Idempotence, symmetry, `X P_row = X`, `P_col X = X`, the Moore-Penrose
    /// conditions, and `X P_row(S_l(X)) X^+ = P_col(S_l(X))`.
    ProjectionIdentities,
    /// Exact expansion of `Z^+ - X^+`.
    PinvPerturbation,
    /// `||P_col(Z) - P_col(X)|| <= max(||(Z - X) X^+||, ||(Z - X) Z^+||)`.
    ProjectionPerturbation,
    /// `||w(Z) - w(X)|| <= sqrt(n) ||Z - X|| / floor (2 ||x - mu|| + 1)`.
    WeightStability,
    /// `d(phi_Z(x), phi_X(x))` against the de-noising bound, Euclidean and Wasserstein.
    DenoisingBound,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::ProjectionIdentities,
        Check::PinvPerturbation,
        Check::ProjectionPerturbation,
        Check::WeightStability,
        Check::DenoisingBound,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Check::ProjectionIdentities => "projection_identities",
            Check::PinvPerturbation => "pinv_perturbation",
            Check::ProjectionPerturbation => "projection_perturbation",
            Check::WeightStability => "weight_stability",
            Check::DenoisingBound => "denoising_bound",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluated inequality `value <= limit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Outcome {
    pub check: Check,
    pub instance: usize,
    pub seed: u64,
    pub value: f64,
    pub limit: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    /// Corrupts the projection identity by `1e-4` so the suite must fail.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            instances: 100,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub outcomes: Vec<Outcome>,
}

impl VerificationReport {
    pub fn violations(&self) -> impl Iterator<Item = &Outcome> {
        self.outcomes.iter().filter(|o| !o.passed())
    }

    pub fn passed(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn count(&self, check: Check) -> usize {
        self.outcomes.iter().filter(|o| o.check == check).count()
    }

    /// Plain-text summary, byte-identical for identical options.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for check in Check::ALL {
            let rows: Vec<&Outcome> = self.outcomes.iter().filter(|o| o.check == check).collect();
            if rows.is_empty() {
                continue;
            }
            let failures = rows.iter().filter(|o| !o.passed()).count();
            let worst = rows
                .iter()
                .map(|o| if o.limit > 0.0 { o.value / o.limit } else if o.value > 0.0 { f64::INFINITY } else { 0.0 })
                .fold(0.0, f64::max);
            out.push_str(&format!(
                "{} {:<24} checks={:<5} failures={:<4} worst_ratio={:.3e}\n",
                if failures == 0 { "PASS" } else { "FAIL" },
                check.name(),
                rows.len(),
                failures,
                worst
            ));
        }
        for v in self.violations() {
            out.push_str(&format!(
                "violation {} instance={} seed={:#018x} value={:.6e} limit={:.6e}\n",
                v.check, v.instance, v.seed, v.value, v.limit
            ));
        }
        out
    }
}

fn instance_seed(master: u64, i: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random `n x p` matrix, rank-deficient about half the time.
fn random_design(rng: &mut ChaCha8Rng) -> Matrix {
    let n = rng.random_range(3..=12);
    let p = rng.random_range(2..=10);
    let full = n.min(p);
    let rank = if rng.random_bool(0.5) { full } else { rng.random_range(1..=full) };
    gaussian(n, rank, rng) * gaussian(rank, p, rng)
}

fn projection_identities(x: &Matrix, lambda: f64, fault: bool) -> Result<f64> {
    let exact = ThresholdPolicy::exact();
    let f = SvdFactors::compute(x)?;
    let pinv = f.thresholded_pinv(&exact);
    let row = f.row_projection(&exact);
    let col = f.col_projection(&exact);
    let policy = ThresholdPolicy::new(lambda)?;
    let thresholded = SvdFactors::compute(&f.thresholded(&policy))?;
    let row_l = thresholded.row_projection(&exact);
    let mut col_l = thresholded.col_projection(&exact);
    if fault {
        col_l[(0, 0)] += 1e-4;
    }
    let residuals = [
        (&row * &row - &row).norm(),
        (&row - row.transpose()).norm(),
        (&col * &col - &col).norm(),
        (&col - col.transpose()).norm(),
        (x * &row - x).norm(),
        (&col * x - x).norm(),
        // Moore-Penrose conditions, relative to the matrix they reproduce
        (x * &pinv * x - x).norm() / (1.0 + x.norm()),
        (&pinv * x * &pinv - &pinv).norm() / (1.0 + pinv.norm()),
        (x * &row_l * &pinv - &col_l).norm(),
    ];
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

fn projection_perturbation(x: &Matrix, z: &Matrix) -> Result<(f64, f64)> {
    let exact = ThresholdPolicy::exact();
    let fx = SvdFactors::compute(x)?;
    let fz = SvdFactors::compute(z)?;
    let diff = z - x;
    let lhs = spectral_norm(&(fz.col_projection(&exact) - fx.col_projection(&exact)))?;
    let a = spectral_norm(&(&diff * fx.thresholded_pinv(&exact)))?;
    let b = spectral_norm(&(&diff * fz.thresholded_pinv(&exact)))?;
    Ok((lhs, a.max(b)))
}

struct StabilityInstance {
    x: Matrix,
    z: Matrix,
    query: Vector,
    lambdas: [f64; 2],
}

/// Exact low rank design, small noise, query in the mean plus row space, and
/// thresholds at 0 and inside the signal/noise gap.
fn stability_instance(rng: &mut ChaCha8Rng) -> Result<StabilityInstance> {
    let n = rng.random_range(20..=40);
    let p = rng.random_range(5..=12);
    let rank = rng.random_range(1..=3);
    let x = gaussian(n, rank, rng) * gaussian(rank, p, rng);
    let z = &x + gaussian(n, p, rng) * 1e-3;
    let stats = CovariateStats::compute(&x)?;
    let a = Vector::from_fn(n, |_, _| rng.random_range(-0.05..0.05));
    let query = stats.mean() + stats.centered().transpose() * a;
    let s_r = stats.centered_svd().singular_values[rank - 1];
    let gap = (s_r / 4.0).powi(2) / n as f64;
    Ok(StabilityInstance {
        x,
        z,
        query,
        lambdas: [0.0, gap],
    })
}

fn stability_responses(x: &Matrix, wasserstein: bool, rng: &mut ChaCha8Rng) -> Result<(Vec<MetricPoint>, MetricSpaceKind)> {
    let p = x.ncols();
    let beta = Vector::from_fn(p, |_, _| StandardNormal.sample(rng));
    let locations: Vec<f64> = x
        .row_iter()
        .map(|r| {
            let e: f64 = StandardNormal.sample(rng);
            r.transpose().dot(&beta) + 0.3 * e
        })
        .collect();
    if wasserstein {
        let grid = QuantileGrid::uniform(9)?;
        let responses = locations
            .iter()
            .map(|&loc| {
                let scale = rng.random_range(0.5..1.5);
                let values = grid.levels().iter().map(|t| loc + scale * (t - 0.5)).collect();
                QuantileFunction::new(values, &grid).map(MetricPoint::Quantile)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((responses, MetricSpaceKind::Wasserstein(grid)))
    } else {
        let responses = locations
            .iter()
            .map(|&loc| {
                let e: f64 = StandardNormal.sample(rng);
                MetricPoint::Euclidean(Vector::from_vec(vec![loc, 0.5 * loc + e]))
            })
            .collect();
        Ok((responses, MetricSpaceKind::Euclidean))
    }
}

/// Runs every check on `instances` random instances per check family.
pub fn verify_lemmas(opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut outcomes = Vec::new();
    let constants = GrowthConstants::default();
    for i in 0..opts.instances {
        let seed = instance_seed(opts.seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let push = |outcomes: &mut Vec<Outcome>, check, value, limit| {
            outcomes.push(Outcome {
                check,
                instance: i,
                seed,
                value,
                limit,
            })
        };

        let x = random_design(&mut rng);
        let z = if rng.random_bool(0.5) {
            &x + gaussian(x.nrows(), x.ncols(), &mut rng) * 0.01
        } else {
            random_design_like(&x, &mut rng)
        };

        let sv = SvdFactors::compute(&x)?.singular_values;
        let mid = rng.random_range(0.0..=sv[0]);
        for lambda in [0.0, mid, 2.0 * sv[0]] {
            let r = projection_identities(&x, lambda, opts.inject_fault)?;
            push(&mut outcomes, Check::ProjectionIdentities, r, IDENTITY_TOLERANCE);
        }

        let exact = ThresholdPolicy::exact();
        let scale = 1.0
            + SvdFactors::compute(&x)?.thresholded_pinv(&exact).norm()
            + SvdFactors::compute(&z)?.thresholded_pinv(&exact).norm();
        push(
            &mut outcomes,
            Check::PinvPerturbation,
            pinv_perturbation_residual(&x, &z)?,
            IDENTITY_TOLERANCE * scale,
        );

        let (lhs, rhs) = projection_perturbation(&x, &z)?;
        push(&mut outcomes, Check::ProjectionPerturbation, lhs, rhs * (1.0 + 1e-10) + 1e-12);

        let inst = stability_instance(&mut rng)?;
        for lambda in inst.lambdas {
            let w = weight_stability_check(&inst.x, &inst.z, lambda, &inst.query)?;
            push(&mut outcomes, Check::WeightStability, w.lhs, w.rhs);
        }
        for wasserstein in [false, true] {
            let (responses, kind) = stability_responses(&inst.x, wasserstein, &mut rng)?;
            let lambda = inst.lambdas[1];
            let report = denoise_diagnostics(&inst.x, &inst.z, &responses, &kind, lambda, &inst.query, &constants)?;
            if report.precondition_ok {
                push(
                    &mut outcomes,
                    Check::DenoisingBound,
                    report.observed_lhs.unwrap_or(0.0),
                    report.bound_rhs,
                );
            }
        }
    }
    Ok(VerificationReport { outcomes })
}

/// Same shape as `x`, independently drawn, possibly of different rank.
fn random_design_like(x: &Matrix, rng: &mut ChaCha8Rng) -> Matrix {
    let (n, p) = x.shape();
    let rank = rng.random_range(1..=n.min(p));
    gaussian(n, rank, rng) * gaussian(rank, p, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = verify_lemmas(&VerifyOptions {
            instances: 40,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.count(Check::ProjectionIdentities), 120);
        assert_eq!(report.count(Check::WeightStability), 80);
        assert!(report.count(Check::DenoisingBound) >= 60);
    }

    #[test]
    fn injected_fault_is_detected() {
        let report = verify_lemmas(&VerifyOptions {
            instances: 3,
            inject_fault: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.passed());
        let v = report.violations().next().unwrap();
        assert_eq!(v.check, Check::ProjectionIdentities);
        assert_eq!(v.seed, instance_seed(7, v.instance));
        assert!(report.render().contains("violation projection_identities"));
    }

    #[test]
    fn reports_are_reproducible() {
        let opts = VerifyOptions {
            instances: 5,
            seed: 99,
            inject_fault: false,
        };
        assert_eq!(verify_lemmas(&opts).unwrap().render(), verify_lemmas(&opts).unwrap().render());
        let other = VerifyOptions { seed: 100, ..opts };
        assert_ne!(verify_lemmas(&opts).unwrap().outcomes, verify_lemmas(&other).unwrap().outcomes);
    }

    #[test]
    fn instance_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| instance_seed(3, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
