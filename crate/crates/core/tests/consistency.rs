//! Error to the true regression function as the sample grows.

use frechet_svt::{fit, Dataset, Matrix, MetricPoint, MetricSpaceKind, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const P: usize = 5;
const REPLICATIONS: usize = 20;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Median over replications and queries of `|predict(x) - E[Y | x]|` for a linear model.
fn median_error(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = Vector::from_fn(P, |j, _| 1.0 / (j + 1) as f64);
    let queries: Vec<Vector> = (0..5).map(|_| Vector::from_fn(P, |_, _| normal(&mut rng))).collect();
    let mut errors = Vec::new();
    for _ in 0..REPLICATIONS {
        let x = Matrix::from_fn(n, P, |_, _| normal(&mut rng));
        let responses = (0..n)
            .map(|i| {
                let mean = 0.5 + x.row(i).transpose().dot(&beta);
                MetricPoint::Euclidean(Vector::from_vec(vec![mean + normal(&mut rng)]))
            })
            .collect();
        let data = Dataset::new(x, responses, MetricSpaceKind::Euclidean).unwrap();
        let model = fit(&data, 0.0).unwrap();
        for q in &queries {
            let pred = model.predict(q).unwrap().as_vector().unwrap()[0];
            errors.push((pred - 0.5 - q.dot(&beta)).abs());
        }
    }
    errors.sort_by(f64::total_cmp);
    let k = errors.len() / 2;
    0.5 * (errors[k - 1] + errors[k])
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn euclidean_error_rate_in_n() {
    let ns = [50usize, 100, 200, 400];
    let medians: Vec<f64> = ns.iter().map(|&n| median_error(n, 9000 + n as u64)).collect();
    let log_n: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let log_e: Vec<f64> = medians.iter().map(|e| e.ln()).collect();
    let slope = least_squares_slope(&log_n, &log_e);
    assert!(slope <= -0.3, "slope {slope:.3}, medians {medians:?}");
}

#[test]
fn slope_helper_recovers_power_law() {
    let x: Vec<f64> = [50.0f64, 100.0, 200.0, 400.0].iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = x.iter().map(|l| 2.0 - 0.5 * l).collect();
    assert!((least_squares_slope(&x, &y) + 0.5).abs() < 1e-12);
}
