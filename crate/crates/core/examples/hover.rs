//! Nominal hover from a 0.5 m offset with noise-free sensing.
use std::path::Path;

use hexafault::harness::{compute_metrics, emit, run_scenario, NoiseConfig, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/hover.toml"))?;
    cfg.noise = NoiseConfig::silent();
    let log = run_scenario(&cfg)?;
    for r in log.rows.iter().step_by(1000) {
        println!("t={:5.2}s  ‖e‖={:.4} m  Ψ={:.2e}  pwm={:.1?}", r.t, r.e_norm, r.psi, r.pwm.as_slice());
    }
    let settled = log.rows.iter().rposition(|r| r.e_norm >= 0.01).map_or(0.0, |i| log.rows[i].t);
    println!("position error below 1 cm from t = {settled:.2} s");
    let out = std::env::temp_dir().join("hexafault-hover");
    emit(&log, &compute_metrics(&log), &out)?;
    println!("log and plots in {}", out.display());
    Ok(())
}
