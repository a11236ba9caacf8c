//! NMSPE against lambda for the vector linear model.
//!
//! ```text
//! cargo run --release --example linear_profile -- 100 50 5
//! ```

use frechet_svt::simulation::{linear_config, run_linear_cell};
use frechet_svt::MetricSpaceKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(100);
    let p = args.get(1).copied().unwrap_or(50);
    let d = args.get(2).copied().unwrap_or(5);

    let report = run_linear_cell(&linear_config(n, p), d, MetricSpaceKind::Euclidean)?;
    println!("REF nmspe {:.4}  EIV nmspe {:.4}", report.reference_nmspe, report.eiv_nmspe);
    for point in &report.profile {
        let mark = if point.lambda == report.lambda_hat { " *" } else { "" };
        println!("{:>9.4} {:>8.4}{mark}", point.lambda, point.nmspe);
    }
    Ok(())
}
