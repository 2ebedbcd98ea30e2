//! Rotor failure during hover: detection latency, tilt reconfiguration and
//! online GP learning of the post-failure disturbance.
use std::path::Path;

use hexafault::harness::{compute_metrics, emit, run_scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/fault_recovery.toml"))?;
    let log = run_scenario(&cfg)?;
    let t_r = log.reconfigure_time.expect("fault enabled");
    println!("rotor {} stopped at {:.2} s, reconfigured at {t_r:.2} s", cfg.fault.rotor, cfg.fault.time);

    let peak = log.rows.iter().filter(|r| r.t >= cfg.fault.time).map(|r| r.psi).fold(0.0, f64::max);
    let recovered = log.rows.iter().rposition(|r| r.psi >= 0.1).map_or(t_r, |i| log.rows[i].t);
    println!("peak Ψ after the failure {peak:.4}, Ψ < 0.1 from t = {recovered:.2} s");

    let last = log.rows.last().unwrap();
    println!("final PWM {:.1?}", last.pwm.as_slice());
    println!("GP: {} points, {} refits, ρ̄ = {:.2}", last.n_data, log.refits, last.rho_bar);

    let report = compute_metrics(&log);
    println!("post-failure position MSE {:.3e} m²", report.position_mse_total);
    let out = std::env::temp_dir().join("hexafault-fault-recovery");
    emit(&log, &report, &out)?;
    println!("log and plots in {}", out.display());
    Ok(())
}
