//! Seed sweep checking that tracking errors stay inside the GP-derived
//! ultimate bounds. Pass the number of seeds as the first argument.
use std::path::Path;

use hexafault::harness::{monte_carlo, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let cfg = ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/montecarlo.toml"))?;
    let report = monte_carlo(&cfg, seeds)?;
    println!("{:>6} {:>7} {:>10} {:>10} {:>10} {:>10}", "seed", "scale", "max ‖ζ‖", "b_n", "max ‖η‖", "c_n");
    for o in &report.outcomes {
        let m = &o.metrics;
        println!(
            "{:>6} {:>7.3} {:>10.4} {:>10.2} {:>10.4} {:>10.2}",
            o.seed, o.disturbance_scale, m.max_zeta_after, m.b_n, m.max_eta_after, m.c_n
        );
    }
    println!(
        "inside b_n: {:.0}%  inside c_n: {:.0}%  (target ≥ {:.0}%)",
        100.0 * report.zeta_fraction,
        100.0 * report.eta_fraction,
        100.0 * report.delta
    );
    Ok(())
}
