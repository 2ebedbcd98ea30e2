//! Figure-8 tracking through a rotor failure with and without GP compensation.
use std::path::Path;

use hexafault::harness::{compare_runs, emit, write_key_values, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/figure8_compare.toml"))?;
    let cmp = compare_runs(&cfg)?;
    println!("{:<24} {:>12} {:>12}", "", "GP on", "GP off");
    for (name, on, off) in [
        ("position MSE [m²]", cmp.with_gp.position_mse_total, cmp.without_gp.position_mse_total),
        ("attitude mean Ψ", cmp.with_gp.attitude_mse, cmp.without_gp.attitude_mse),
        ("PWM roughness [%/tick]", cmp.with_gp.pwm_roughness, cmp.without_gp.pwm_roughness),
    ] {
        println!("{name:<24} {on:>12.5e} {off:>12.5e}");
    }
    println!("position MSE improvement {:.1}%", cmp.improvement_pct);

    let out = std::env::temp_dir().join("hexafault-compare");
    emit(&cmp.with_log, &cmp.with_gp, &out.join("on"))?;
    emit(&cmp.without_log, &cmp.without_gp, &out.join("off"))?;
    write_key_values(&out.join("comparison.txt"), &cmp.key_values())?;
    println!("outputs in {}", out.display());
    Ok(())
}
