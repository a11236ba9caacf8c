//! Response spaces and their weighted Fréchet mean solvers.
//!
//! Regression weights can be negative, so every solver here minimizes
//! `sum_i w_i d(y_i, y)^2` for an arbitrary real weight vector whose total is
//! positive. For the Hilbert-like spaces (Euclidean, quantile functions,
//! correlation matrices) that minimizer is the projection of the affine
//! combination `sum_i w_i y_i / sum_i w_i` onto the space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_symmetric_eigenvalue, symmetric_eigen, symmetrize, Matrix, Vector};

/// Slack allowed when validating monotonicity of quantile values.
pub const MONOTONE_SLACK: f64 = 1e-10;
pub const CORRELATION_SYMMETRY_TOL: f64 = 1e-10;
pub const CORRELATION_DIAGONAL_TOL: f64 = 1e-10;
pub const CORRELATION_EIGEN_TOL: f64 = 1e-8;

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ITER: usize = 1000;

pub const SUBGRADIENT_ITERATIONS: usize = 500;

/// Probability levels shared by every quantile function of a dataset, with
/// the quadrature weights of the discretized `L^2(0,1)` inner product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    levels: Vec<f64>,
    weights: Vec<f64>,
}

impl QuantileGrid {
    /// Levels must be strictly increasing inside `(0, 1)`.
    ///
    /// Each level owns the cell between the midpoints to its neighbours, with
    /// the outer cells extended to 0 and 1, so the weights always sum to one.
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("quantile grid is empty".into()));
        }
        if levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidArgument(
                "quantile grid levels must lie strictly inside (0, 1)".into(),
            ));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "quantile grid levels must be strictly increasing".into(),
            ));
        }
        let m = levels.len();
        let weights = (0..m)
            .map(|k| {
                let lower = if k == 0 { 0.0 } else { 0.5 * (levels[k - 1] + levels[k]) };
                let upper = if k + 1 == m { 1.0 } else { 0.5 * (levels[k] + levels[k + 1]) };
                upper - lower
            })
            .collect();
        Ok(Self { levels, weights })
    }

    /// Midpoint grid `t_k = (k - 1/2) / m`, `k = 1..m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("quantile grid needs m >= 1".into()));
        }
        Self::new((1..=m).map(|k| (k as f64 - 0.5) / m as f64).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Squared discretized `L^2` distance between two value vectors.
    pub fn squared_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum()
    }
}

/// Quantile function sampled on a [`QuantileGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFunction {
    values: Vec<f64>,
}

impl QuantileFunction {
    pub fn new(values: Vec<f64>, grid: &QuantileGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "quantile function has {} values but the grid has {} levels",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("quantile values must be finite".into()));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] < w[0] - MONOTONE_SLACK) {
            return Err(Error::InvalidArgument(format!(
                "quantile values decrease between positions {} and {}",
                k + 1,
                k + 2
            )));
        }
        Ok(Self { values })
    }

    /// Skips validation; callers guarantee monotone values of the right length.
    pub(crate) fn from_monotone(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Symmetric positive semidefinite matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(Matrix);

impl CorrelationMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "correlation matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if (&m - m.transpose()).amax() > CORRELATION_SYMMETRY_TOL {
            return Err(Error::InvalidArgument("correlation matrix is not symmetric".into()));
        }
        if m.diagonal().iter().any(|d| (d - 1.0).abs() > CORRELATION_DIAGONAL_TOL) {
            return Err(Error::InvalidArgument(
                "correlation matrix diagonal is not all ones".into(),
            ));
        }
        let min_eig = min_symmetric_eigenvalue(&symmetrize(&m))?;
        if min_eig < -CORRELATION_EIGEN_TOL {
            return Err(Error::InvalidArgument(format!(
                "correlation matrix is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// A response value.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricPoint {
    /// Finite-dimensional vector; shared by the l1, l2 and l-infinity spaces.
    Euclidean(Vector),
    Quantile(QuantileFunction),
    Correlation(CorrelationMatrix),
}

impl MetricPoint {
    pub fn as_vector(&self) -> Option<&Vector> {
        match self {
            MetricPoint::Euclidean(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_quantile(&self) -> Option<&QuantileFunction> {
        match self {
            MetricPoint::Quantile(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_correlation(&self) -> Option<&CorrelationMatrix> {
        match self {
            MetricPoint::Correlation(c) => Some(c),
            _ => None,
        }
    }

    pub fn coordinate_len(&self) -> usize {
        match self {
            MetricPoint::Euclidean(v) => v.len(),
            MetricPoint::Quantile(q) => q.values.len(),
            MetricPoint::Correlation(c) => c.0.len(),
        }
    }

    /// `acc += scale * coordinates()`
    fn accumulate(&self, scale: f64, acc: &mut [f64]) {
        match self {
            MetricPoint::Euclidean(v) => acc.iter_mut().zip(v.iter()).for_each(|(a, v)| *a += scale * v),
            MetricPoint::Quantile(q) => acc.iter_mut().zip(&q.values).for_each(|(a, v)| *a += scale * v),
            MetricPoint::Correlation(c) => {
                let r = c.dim();
                for i in 0..r {
                    for j in 0..r {
                        acc[i * r + j] += scale * c.0[(i, j)];
                    }
                }
            }
        }
    }

    /// Flat coordinates: vector entries, quantile values, or the row-major matrix.
    pub fn coordinates(&self) -> Vec<f64> {
        match self {
            MetricPoint::Euclidean(v) => v.iter().copied().collect(),
            MetricPoint::Quantile(q) => q.values.clone(),
            MetricPoint::Correlation(c) => c.0.transpose().iter().copied().collect(),
        }
    }
}

/// The response space `(M, d)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpaceKind {
    Euclidean,
    L1Vector,
    LinfVector,
    Wasserstein(QuantileGrid),
    Correlation(usize),
}

impl MetricSpaceKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricSpaceKind::Euclidean => "euclidean",
            MetricSpaceKind::L1Vector => "l1",
            MetricSpaceKind::LinfVector => "linf",
            MetricSpaceKind::Wasserstein(_) => "wasserstein",
            MetricSpaceKind::Correlation(_) => "correlation",
        }
    }

    /// True when the weighted Fréchet mean is the metric projection of the
    /// affine combination of the points.
    pub fn mean_is_projection(&self) -> bool {
        !matches!(self, MetricSpaceKind::L1Vector | MetricSpaceKind::LinfVector)
    }

    /// Checks that `point` is a member of this space.
    pub fn check(&self, point: &MetricPoint) -> Result<()> {
        match (self, point) {
            (
                MetricSpaceKind::Euclidean | MetricSpaceKind::L1Vector | MetricSpaceKind::LinfVector,
                MetricPoint::Euclidean(_),
            ) => Ok(()),
            (MetricSpaceKind::Wasserstein(grid), MetricPoint::Quantile(q)) => {
                if q.values.len() == grid.len() {
                    Ok(())
                } else {
                    Err(Error::ShapeMismatch(format!(
                        "quantile function has {} values, grid has {}",
                        q.values.len(),
                        grid.len()
                    )))
                }
            }
            (MetricSpaceKind::Correlation(r), MetricPoint::Correlation(c)) => {
                if c.dim() == *r {
                    Ok(())
                } else {
                    Err(Error::ShapeMismatch(format!(
                        "correlation matrix is {0}x{0}, expected {1}x{1}",
                        c.dim(),
                        r
                    )))
                }
            }
            _ => Err(Error::KindMismatch(format!(
                "point does not belong to the {} space",
                self.name()
            ))),
        }
    }
}

fn vector_pair<'a>(a: &'a MetricPoint, b: &'a MetricPoint) -> Result<(&'a Vector, &'a Vector)> {
    match (a, b) {
        (MetricPoint::Euclidean(x), MetricPoint::Euclidean(y)) if x.len() == y.len() => Ok((x, y)),
        (MetricPoint::Euclidean(x), MetricPoint::Euclidean(y)) => Err(Error::ShapeMismatch(
            format!("vectors of length {} and {}", x.len(), y.len()),
        )),
        _ => Err(Error::KindMismatch("expected two vectors".into())),
    }
}

fn l1_norm(v: &Vector) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn linf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Metric distance between two points of `kind`.
pub fn distance(kind: &MetricSpaceKind, a: &MetricPoint, b: &MetricPoint) -> Result<f64> {
    kind.check(a)?;
    kind.check(b)?;
    Ok(match kind {
        MetricSpaceKind::Euclidean => {
            let (x, y) = vector_pair(a, b)?;
            (x - y).norm()
        }
        MetricSpaceKind::L1Vector => {
            let (x, y) = vector_pair(a, b)?;
            l1_norm(&(x - y))
        }
        MetricSpaceKind::LinfVector => {
            let (x, y) = vector_pair(a, b)?;
            linf_norm(&(x - y))
        }
        MetricSpaceKind::Wasserstein(grid) => {
            let (MetricPoint::Quantile(x), MetricPoint::Quantile(y)) = (a, b) else {
                unreachable!("checked above");
            };
            grid.squared_distance(&x.values, &y.values).sqrt()
        }
        MetricSpaceKind::Correlation(_) => {
            let (MetricPoint::Correlation(x), MetricPoint::Correlation(y)) = (a, b) else {
                unreachable!("checked above");
            };
            (&x.0 - &y.0).norm()
        }
    })
}

/// Minimizer over the space of `sum_i w_i d(y_i, y)^2`.
pub fn weighted_frechet_mean(
    kind: &MetricSpaceKind,
    points: &[MetricPoint],
    weights: &[f64],
) -> Result<MetricPoint> {
    if points.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to average".into()));
    }
    let dim = points[0].coordinate_len();
    for p in points {
        kind.check(p)?;
        if p.coordinate_len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "points of dimension {dim} and {}",
                p.coordinate_len()
            )));
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights(total));
    }

    match kind {
        MetricSpaceKind::L1Vector => Ok(MetricPoint::Euclidean(subgradient_mean(
            points,
            weights,
            total,
            VectorNorm::L1,
        ))),
        MetricSpaceKind::LinfVector => Ok(MetricPoint::Euclidean(subgradient_mean(
            points,
            weights,
            total,
            VectorNorm::Linf,
        ))),
        _ => {
            // c + sum_i w_i (y_i - c) / W around the plain mean c
            let scale = 1.0 / points.len() as f64;
            let mut center = vec![0.0; dim];
            for p in points {
                p.accumulate(scale, &mut center);
            }
            let mut acc = center.clone();
            for (p, &w) in points.iter().zip(weights) {
                let f = w / total;
                for ((a, y), c) in acc.iter_mut().zip(p.coordinates()).zip(&center) {
                    *a += f * (y - c);
                }
            }
            project_affine(kind, acc)
        }
    }
}

/// Maps an affine combination of points, given in flat coordinates, to the
/// weighted Fréchet mean. Valid only for spaces where
/// [`MetricSpaceKind::mean_is_projection`] holds.
pub fn project_affine(kind: &MetricSpaceKind, coords: Vec<f64>) -> Result<MetricPoint> {
    match kind {
        MetricSpaceKind::Euclidean => Ok(MetricPoint::Euclidean(Vector::from_vec(coords))),
        MetricSpaceKind::Wasserstein(grid) => {
            if coords.len() != grid.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} coordinates for a grid of {} levels",
                    coords.len(),
                    grid.len()
                )));
            }
            let projected = isotonic_project(&coords, grid.weights())?;
            Ok(MetricPoint::Quantile(QuantileFunction::from_monotone(projected)))
        }
        MetricSpaceKind::Correlation(r) => {
            if coords.len() != r * r {
                return Err(Error::ShapeMismatch(format!(
                    "{} coordinates for a {r}x{r} matrix",
                    coords.len()
                )));
            }
            let a = Matrix::from_row_slice(*r, *r, &coords);
            let c = nearest_correlation(&symmetrize(&a), DYKSTRA_TOL, DYKSTRA_MAX_ITER)?;
            Ok(MetricPoint::Correlation(c))
        }
        MetricSpaceKind::L1Vector | MetricSpaceKind::LinfVector => Err(Error::KindMismatch(format!(
            "the {} Fréchet mean is not a projection of the affine combination",
            kind.name()
        ))),
    }
}

fn affine_vector(points: &[MetricPoint], weights: &[f64], total: f64) -> Vector {
    let dim = points[0].as_vector().expect("vector points").len();
    let mut acc = Vector::zeros(dim);
    for (p, &w) in points.iter().zip(weights) {
        acc.axpy(w, p.as_vector().expect("vector points"), 1.0);
    }
    acc / total
}

#[derive(Clone, Copy)]
enum VectorNorm {
    L1,
    Linf,
}

impl VectorNorm {
    /// Norm of `v - y` and the index carrying the l-infinity maximum.
    fn of_difference(self, v: &[f64], y: &[f64]) -> (f64, usize) {
        match self {
            VectorNorm::L1 => (v.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(), 0),
            VectorNorm::Linf => {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for (j, (a, b)) in v.iter().zip(y).enumerate() {
                    let d = (a - b).abs();
                    if d >= best {
                        best = d;
                        arg = j;
                    }
                }
                (best, arg)
            }
        }
    }
}

/// Objective `sum_i w_i ||y_i - y||^2` and a subgradient of it at `y`.
fn objective_and_subgradient(norm: VectorNorm, flat: &[f64], weights: &[f64], y: &[f64], g: &mut [f64]) -> f64 {
    let dim = y.len();
    g.fill(0.0);
    let mut value = 0.0;
    for (v, &w) in flat.chunks_exact(dim).zip(weights) {
        let (d, arg) = norm.of_difference(v, y);
        value += w * d * d;
        if d > 0.0 {
            let scale = 2.0 * w * d;
            match norm {
                VectorNorm::L1 => {
                    for ((gj, a), b) in g.iter_mut().zip(v).zip(y) {
                        let diff = a - b;
                        if diff != 0.0 {
                            *gj -= scale * diff.signum();
                        }
                    }
                }
                VectorNorm::Linf => g[arg] -= scale * (v[arg] - y[arg]).signum(),
            }
        }
    }
    value
}

/// Normalized subgradient descent on `sum_i w_i ||y_i - y||^2` for a
/// non-Euclidean norm, started at the weighted l2 mean. Returns the best
/// iterate seen, so the objective never exceeds its value at the start.
///
/// With negative weights the objective need not be convex; the result is a
/// local solution.
fn subgradient_mean(points: &[MetricPoint], weights: &[f64], total: f64, norm: VectorNorm) -> Vector {
    let start = affine_vector(points, weights, total);
    let dim = start.len();
    let flat: Vec<f64> = points
        .iter()
        .flat_map(|p| p.as_vector().expect("vector points").iter().copied())
        .collect();

    let mut y: Vec<f64> = start.iter().copied().collect();
    let mut g = vec![0.0; dim];
    let mut best = y.clone();
    let mut best_value = objective_and_subgradient(norm, &flat, weights, &y, &mut g);
    let abs_total: f64 = weights.iter().map(|w| w.abs()).sum();
    let step_scale = (best_value.abs() / abs_total).sqrt();
    if !(step_scale > 0.0) {
        return start;
    }

    for k in 1..=SUBGRADIENT_ITERATIONS {
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if g_norm == 0.0 {
            break;
        }
        let step = step_scale / (k as f64).sqrt() / g_norm;
        for (yj, gj) in y.iter_mut().zip(&g) {
            *yj -= step * gj;
        }
        let value = objective_and_subgradient(norm, &flat, weights, &y, &mut g);
        if value < best_value {
            best_value = value;
            best.copy_from_slice(&y);
        }
    }
    Vector::from_vec(best)
}

/// Weighted least-squares projection onto nondecreasing sequences
/// (pool adjacent violators).
pub fn isotonic_project(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "isotonic weights must be positive and finite, got {w}"
        )));
    }

    // (weighted mean, total weight, block length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut block = (v, w, 1usize);
        while let Some(&(prev_mean, prev_weight, prev_len)) = blocks.last() {
            if prev_mean <= block.0 {
                break;
            }
            blocks.pop();
            let weight = prev_weight + block.1;
            block = (
                (prev_mean * prev_weight + block.0 * block.1) / weight,
                weight,
                prev_len + block.2,
            );
        }
        blocks.push(block);
    }

    let mut out = Vec::with_capacity(values.len());
    for (mean, _, len) in blocks {
        out.extend(std::iter::repeat_n(mean, len));
    }
    Ok(out)
}

/// Projection onto the positive semidefinite cone by eigenvalue clipping.
pub fn psd_project(a: &Matrix) -> Result<Matrix> {
    let (values, v) = symmetric_eigen(&symmetrize(a))?;
    let clipped = Vector::from_iterator(values.len(), values.into_iter().map(|e| e.max(0.0)));
    let scaled = &v * Matrix::from_diagonal(&clipped);
    Ok(symmetrize(&(scaled * v.transpose())))
}

/// Frobenius-nearest correlation matrix via Dykstra's alternating projections
/// between the PSD cone and the unit-diagonal affine set.
///
/// Stops once successive iterates move by less than `tol` in Frobenius norm.
pub fn nearest_correlation(a: &Matrix, tol: f64, max_iter: usize) -> Result<CorrelationMatrix> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let a = symmetrize(a);
    let mut y = a.clone();
    let mut correction = Matrix::zeros(a.nrows(), a.ncols());
    let mut last_change = f64::INFINITY;

    for _ in 0..max_iter {
        let r = &y - &correction;
        let x = psd_project(&r)?;
        correction = &x - &r;
        let mut next = x;
        next.fill_diagonal(1.0);
        last_change = (&next - &y).norm();
        y = next;
        if last_change < tol {
            return Ok(CorrelationMatrix(y));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_change,
        last_iterate: Box::new(y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use nalgebra::SymmetricEigen;
    use statrs::distribution::{ContinuousCDF, Normal};

    /// Exact weighted monotone least squares by enumerating every partition
    /// of the indices into consecutive blocks.
    fn monotone_qp_oracle(values: &[f64], weights: &[f64]) -> Vec<f64> {
        let m = values.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (m - 1)) {
            let mut fitted = vec![0.0; m];
            let mut start = 0;
            let mut means = Vec::new();
            for end in 1..=m {
                let boundary = end == m || mask & (1 << (end - 1)) != 0;
                if boundary {
                    let w: f64 = weights[start..end].iter().sum();
                    let mean = values[start..end]
                        .iter()
                        .zip(&weights[start..end])
                        .map(|(v, w)| v * w)
                        .sum::<f64>()
                        / w;
                    fitted[start..end].iter_mut().for_each(|f| *f = mean);
                    means.push(mean);
                    start = end;
                }
            }
            if means.windows(2).any(|w| w[1] < w[0]) {
                continue;
            }
            let obj: f64 = fitted
                .iter()
                .zip(values)
                .zip(weights)
                .map(|((f, v), w)| w * (f - v) * (f - v))
                .sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, fitted));
            }
        }
        best.unwrap().1
    }

    fn random_correlation(r: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let g = Matrix::from_fn(r, r + 2, |_, _| StandardNormal.sample(rng));
        let cov = &g * g.transpose();
        let d = cov.diagonal().map(|v| 1.0 / v.sqrt());
        let dm = Matrix::from_diagonal(&d);
        symmetrize(&(&dm * cov * &dm)).map_with_location(|i, j, v| if i == j { 1.0 } else { v })
    }

    fn quantile(values: Vec<f64>) -> MetricPoint {
        MetricPoint::Quantile(QuantileFunction::from_monotone(values))
    }

    #[test]
    fn grid_weights_sum_to_one() {
        let g = QuantileGrid::uniform(101).unwrap();
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(g.weights().iter().all(|w| (w - 1.0 / 101.0).abs() < 1e-12));
        let irregular = QuantileGrid::new(vec![0.1, 0.2, 0.7]).unwrap();
        assert_abs_diff_eq!(irregular.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(QuantileGrid::new(vec![0.2, 0.2]).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn quantile_function_rejects_decreasing_values() {
        let g = QuantileGrid::uniform(3).unwrap();
        assert!(QuantileFunction::new(vec![0.0, 1.0, 0.5], &g).is_err());
        assert!(QuantileFunction::new(vec![0.0, 1.0], &g).is_err());
        assert!(QuantileFunction::new(vec![0.0, 1.0, 1.0 - 1e-12], &g).is_ok());
    }

    #[test]
    fn distance_examples() {
        let g = QuantileGrid::uniform(11).unwrap();
        let kind = MetricSpaceKind::Wasserstein(g.clone());
        let zero = quantile(vec![0.0; 11]);
        let shifted = quantile(vec![-2.5; 11]);
        assert_eq!(distance(&kind, &zero, &zero).unwrap(), 0.0);
        assert_abs_diff_eq!(distance(&kind, &zero, &shifted).unwrap(), 2.5, epsilon = 1e-12);

        let x = MetricPoint::Euclidean(Vector::from_vec(vec![1.0, -2.0]));
        let y = MetricPoint::Euclidean(Vector::from_vec(vec![4.0, 2.0]));
        assert_abs_diff_eq!(distance(&MetricSpaceKind::Euclidean, &x, &y).unwrap(), 5.0);
        assert_abs_diff_eq!(distance(&MetricSpaceKind::L1Vector, &x, &y).unwrap(), 7.0);
        assert_abs_diff_eq!(distance(&MetricSpaceKind::LinfVector, &x, &y).unwrap(), 4.0);

        let c1 = MetricPoint::Correlation(CorrelationMatrix::new(Matrix::identity(2, 2)).unwrap());
        let c2 = MetricPoint::Correlation(
            CorrelationMatrix::new(Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap(),
        );
        let kc = MetricSpaceKind::Correlation(2);
        assert_abs_diff_eq!(distance(&kc, &c1, &c2).unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn distance_rejects_mismatches() {
        let x = MetricPoint::Euclidean(Vector::from_vec(vec![1.0, 2.0]));
        let y = MetricPoint::Euclidean(Vector::from_vec(vec![1.0]));
        assert!(matches!(
            distance(&MetricSpaceKind::Euclidean, &x, &y),
            Err(Error::ShapeMismatch(_))
        ));
        let kind = MetricSpaceKind::Wasserstein(QuantileGrid::uniform(2).unwrap());
        assert!(matches!(distance(&kind, &x, &x), Err(Error::KindMismatch(_))));
    }

    #[test]
    fn wasserstein_gaussian_mean_shift() {
        let grid = QuantileGrid::uniform(1001).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let q0: Vec<f64> = grid.levels().iter().map(|&t| normal.inverse_cdf(t)).collect();
        let q1: Vec<f64> = q0.iter().map(|v| v + 1.0).collect();
        let kind = MetricSpaceKind::Wasserstein(grid);
        let d = distance(&kind, &quantile(q0), &quantile(q1)).unwrap();
        assert!((d - 1.0).abs() < 1e-3);
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let grid = QuantileGrid::uniform(7).unwrap();
        let kinds = [
            MetricSpaceKind::Euclidean,
            MetricSpaceKind::L1Vector,
            MetricSpaceKind::LinfVector,
            MetricSpaceKind::Wasserstein(grid.clone()),
            MetricSpaceKind::Correlation(3),
        ];
        for kind in &kinds {
            for _ in 0..50 {
                let mut draw = || match kind {
                    MetricSpaceKind::Wasserstein(_) => {
                        let mut v: Vec<f64> = (0..7).map(|_| StandardNormal.sample(&mut rng)).collect();
                        v.sort_by(f64::total_cmp);
                        quantile(v)
                    }
                    MetricSpaceKind::Correlation(r) => MetricPoint::Correlation(
                        CorrelationMatrix::new(random_correlation(*r, &mut rng)).unwrap(),
                    ),
                    _ => MetricPoint::Euclidean(Vector::from_fn(4, |_, _| StandardNormal.sample(&mut rng))),
                };
                let (a, b, c) = (draw(), draw(), draw());
                let ab = distance(kind, &a, &b).unwrap();
                assert_eq!(ab, distance(kind, &b, &a).unwrap());
                assert!(ab <= distance(kind, &a, &c).unwrap() + distance(kind, &c, &b).unwrap() + 1e-10);
                assert!(distance(kind, &a, &a).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn frechet_mean_simple_cases() {
        let single = quantile(vec![0.0, 1.0, 2.0]);
        let kind = MetricSpaceKind::Wasserstein(QuantileGrid::uniform(3).unwrap());
        let mean = weighted_frechet_mean(&kind, std::slice::from_ref(&single), &[1.0]).unwrap();
        assert_eq!(mean, single);

        let pts = vec![
            MetricPoint::Euclidean(Vector::from_vec(vec![0.0, 0.0])),
            MetricPoint::Euclidean(Vector::from_vec(vec![2.0, 0.0])),
        ];
        let mean = weighted_frechet_mean(&MetricSpaceKind::Euclidean, &pts, &[1.0, 1.0]).unwrap();
        assert_eq!(mean, MetricPoint::Euclidean(Vector::from_vec(vec![1.0, 0.0])));
    }

    #[test]
    fn frechet_mean_rejects_degenerate_weights() {
        let pts = vec![
            MetricPoint::Euclidean(Vector::from_vec(vec![0.0])),
            MetricPoint::Euclidean(Vector::from_vec(vec![1.0])),
        ];
        assert!(matches!(
            weighted_frechet_mean(&MetricSpaceKind::Euclidean, &pts, &[1.0, -1.0]),
            Err(Error::DegenerateWeights(_))
        ));
        assert!(matches!(
            weighted_frechet_mean(&MetricSpaceKind::Euclidean, &pts, &[1.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn euclidean_mean_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<MetricPoint> = (0..6)
            .map(|_| MetricPoint::Euclidean(Vector::from_fn(3, |_, _| StandardNormal.sample(&mut rng))))
            .collect();
        let w = [1.5, -0.3, 2.0, 0.7, -0.4, 2.5];
        let mean = weighted_frechet_mean(&MetricSpaceKind::Euclidean, &pts, &w).unwrap();
        let mean = mean.as_vector().unwrap();
        let mut grad = Vector::zeros(3);
        for (p, wi) in pts.iter().zip(w) {
            grad += (p.as_vector().unwrap() - mean) * wi;
        }
        assert!(grad.norm() < 1e-10);
    }

    #[test]
    fn wasserstein_mean_negative_weights_matches_qp_oracle() {
        let grid = QuantileGrid::uniform(5).unwrap();
        let kind = MetricSpaceKind::Wasserstein(grid.clone());
        let q1 = vec![-1.0, -0.2, 0.0, 0.3, 1.0];
        let q2 = vec![-3.0, 0.5, 0.6, 0.7, 4.0];
        let points = vec![quantile(q1.clone()), quantile(q2.clone())];
        let mean = weighted_frechet_mean(&kind, &points, &[1.5, -0.5]).unwrap();
        let affine: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| 1.5 * a - 0.5 * b).collect();
        let oracle = monotone_qp_oracle(&affine, grid.weights());
        for (a, b) in mean.as_quantile().unwrap().values().iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(mean.as_quantile().unwrap().values().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn wasserstein_mean_keeps_monotone_affine_combination() {
        let kind = MetricSpaceKind::Wasserstein(QuantileGrid::uniform(4).unwrap());
        let points = vec![quantile(vec![0.0, 1.0, 2.0, 3.0]), quantile(vec![0.0, 0.5, 1.0, 1.5])];
        let mean = weighted_frechet_mean(&kind, &points, &[2.0, -0.5]).unwrap();
        let expected: Vec<f64> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .zip([0.0, 0.5, 1.0, 1.5])
            .map(|(a, b)| (2.0 * a - 0.5 * b) / 1.5)
            .collect();
        for (a, b) in mean.as_quantile().unwrap().values().iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn isotonic_examples() {
        let w = [1.0; 4];
        assert_eq!(isotonic_project(&[1.0, 2.0, 2.0, 5.0], &w).unwrap(), vec![1.0, 2.0, 2.0, 5.0]);
        assert_eq!(isotonic_project(&[2.0, 1.0], &[1.0, 1.0]).unwrap(), vec![1.5, 1.5]);
        assert!(isotonic_project(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(isotonic_project(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn isotonic_matches_qp_oracle_length_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let weights = [1.0, 2.0, 1.0, 1.0, 3.0, 1.0];
        for _ in 0..200 {
            let values: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ours = isotonic_project(&values, &weights).unwrap();
            let oracle = monotone_qp_oracle(&values, &weights);
            for (a, b) in ours.iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn isotonic_idempotent_and_nonexpansive(
            pair in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0.1f64..5.0), 1..20)
        ) {
            let a: Vec<f64> = pair.iter().map(|t| t.0).collect();
            let b: Vec<f64> = pair.iter().map(|t| t.1).collect();
            let w: Vec<f64> = pair.iter().map(|t| t.2).collect();
            let pa = isotonic_project(&a, &w).unwrap();
            let pb = isotonic_project(&b, &w).unwrap();
            prop_assert!(pa.windows(2).all(|x| x[0] <= x[1]));
            let again = isotonic_project(&pa, &w).unwrap();
            for (x, y) in again.iter().zip(&pa) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            let dist = |x: &[f64], y: &[f64]| -> f64 {
                x.iter().zip(y).zip(&w).map(|((p, q), wi)| wi * (p - q) * (p - q)).sum::<f64>().sqrt()
            };
            prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-9);
            let (lo, hi) = a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            prop_assert!(pa.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }
    }

    #[test]
    fn nearest_correlation_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = random_correlation(4, &mut rng);
        let out = nearest_correlation(&c, DYKSTRA_TOL, DYKSTRA_MAX_ITER).unwrap();
        assert!((out.as_matrix() - &c).norm() < 1e-9);
    }

    #[test]
    fn nearest_correlation_two_by_two_clips_to_boundary() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let out = nearest_correlation(&a, DYKSTRA_TOL, DYKSTRA_MAX_ITER).unwrap();
        // 1-D grid search over rho in [-1, 1]
        let best_rho = (0..=200_000)
            .map(|k| -1.0 + 2.0 * k as f64 / 200_000.0)
            .min_by(|x, y| {
                let fx = 2.0 * (2.0 - x) * (2.0 - x);
                let fy = 2.0 * (2.0 - y) * (2.0 - y);
                fx.total_cmp(&fy)
            })
            .unwrap();
        assert_abs_diff_eq!(out.as_matrix()[(0, 1)], best_rho, epsilon = 1e-6);
        assert_abs_diff_eq!(out.as_matrix()[(0, 1)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn nearest_correlation_beats_random_feasible_candidates() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 0.9, -0.8, 0.9, 1.0, 0.9, -0.8, 0.9, 1.0]);
        assert!(SymmetricEigen::new(a.clone()).eigenvalues.min() < 0.0);
        let out = nearest_correlation(&a, DYKSTRA_TOL, DYKSTRA_MAX_ITER).unwrap();
        let m = out.as_matrix();
        assert!((m - m.transpose()).amax() < 1e-12);
        assert!(m.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-10));
        assert!(SymmetricEigen::new(m.clone()).eigenvalues.min() >= -1e-8);
        let objective = (m - &a).norm();

        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..10_000 {
            let cand = random_correlation(3, &mut rng);
            assert!(objective <= (&cand - &a).norm() + 1e-9);
        }
    }

    #[test]
    fn nearest_correlation_beats_rescaled_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let g = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let mut a = symmetrize(&g);
            a.fill_diagonal(1.0);
            let out = nearest_correlation(&a, DYKSTRA_TOL, DYKSTRA_MAX_ITER).unwrap();
            // one PSD projection rescaled to unit diagonal is feasible
            let psd = psd_project(&a).unwrap();
            let d = Matrix::from_diagonal(&psd.diagonal().map(|v| 1.0 / v.sqrt()));
            let mut feasible = &d * psd * &d;
            feasible.fill_diagonal(1.0);
            assert!((out.as_matrix() - &a).norm() <= (feasible - &a).norm() + 1e-9);
            assert!(SymmetricEigen::new(out.as_matrix().clone()).eigenvalues.min() >= -1e-8);
        }
    }

    #[test]
    fn nearest_correlation_reports_non_convergence() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 0.9, -0.8, 0.9, 1.0, 0.9, -0.8, 0.9, 1.0]);
        match nearest_correlation(&a, 1e-14, 2) {
            Err(Error::NonConvergence { iterations, last_iterate, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last_iterate.nrows(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn correlation_mean_of_psd_average_is_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let a = random_correlation(3, &mut rng);
        let b = random_correlation(3, &mut rng);
        let pts = vec![
            MetricPoint::Correlation(CorrelationMatrix::new(a.clone()).unwrap()),
            MetricPoint::Correlation(CorrelationMatrix::new(b.clone()).unwrap()),
        ];
        let mean = weighted_frechet_mean(&MetricSpaceKind::Correlation(3), &pts, &[1.0, 1.0]).unwrap();
        let avg = (a + b) * 0.5;
        assert!((mean.as_correlation().unwrap().as_matrix() - avg).norm() < 1e-9);
    }

    #[test]
    fn l1_and_linf_means_descend_from_l2_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for kind in [MetricSpaceKind::L1Vector, MetricSpaceKind::LinfVector] {
            for _ in 0..10 {
                let pts: Vec<MetricPoint> = (0..8)
                    .map(|_| MetricPoint::Euclidean(Vector::from_fn(3, |_, _| StandardNormal.sample(&mut rng))))
                    .collect();
                let w: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..2.0)).collect();
                if w.iter().sum::<f64>() <= 0.5 {
                    continue;
                }
                let objective = |y: &MetricPoint| -> f64 {
                    pts.iter()
                        .zip(&w)
                        .map(|(p, wi)| wi * distance(&kind, p, y).unwrap().powi(2))
                        .sum()
                };
                let start = weighted_frechet_mean(&MetricSpaceKind::Euclidean, &pts, &w).unwrap();
                let ours = weighted_frechet_mean(&kind, &pts, &w).unwrap();
                assert!(objective(&ours) <= objective(&start) + 1e-12);
            }
        }
    }

    #[test]
    fn l1_mean_of_identical_points() {
        let p = MetricPoint::Euclidean(Vector::from_vec(vec![1.0, 2.0]));
        let pts = vec![p.clone(), p.clone()];
        let mean = weighted_frechet_mean(&MetricSpaceKind::L1Vector, &pts, &[0.5, 0.5]).unwrap();
        assert_eq!(mean, p);
    }
}
