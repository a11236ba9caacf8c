//! Runs one desk-scale simulation cell and prints the summary table.
//!
//! ```text
//! cargo run --release --example table_cell -- 100 150 gaussian
//! ```

use std::time::Instant;

use frechet_svt::simulation::{run_cell, NoiseKind, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let p = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(150);
    let noise: NoiseKind = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(NoiseKind::Gaussian);
    let mut cfg = SimConfig::new(n, p, noise);
    if let Some(b) = args.get(3) {
        cfg.trials = b.parse()?;
    }
    if let Some(seed) = args.get(4) {
        cfg.master_seed = seed.parse()?;
    }
    if let Some(sigma) = args.get(5) {
        cfg.sigma_eps = sigma.parse()?;
    }

    let start = Instant::now();
    let report = run_cell(&cfg)?;
    println!(
        "n={n} p={p} noise={noise} lambda_hat={:.4} grid_max={:.4} ({:.1}s)",
        report.lambda_hat,
        report.lambda_grid.last().copied().unwrap_or(0.0),
        start.elapsed().as_secs_f64()
    );
    println!("{:>4} {:>8} {:>8} {:>8} {:>8}", "", "bias", "sqrt_var", "mse", "mspe");
    for row in report.result_rows() {
        println!(
            "{:>4} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            row.estimator, row.bias, row.sqrt_var, row.mse, row.mspe
        );
    }
    Ok(())
}
