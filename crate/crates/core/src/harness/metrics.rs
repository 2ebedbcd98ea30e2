use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::sim::{run_scenario, RunStatus, ScenarioLog};
use super::HarnessError;
use crate::control::{ultimate_bound_attitude, ultimate_bound_position};
use crate::dynamics::RigidState;
use crate::gp::encode_state;
use crate::se3::RotationMatrix;

/// Post-failure performance summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Analysis window `[start, end]`, s.
    pub window: (f64, f64),
    pub samples: usize,
    /// Mean squared world position error per axis, m².
    pub position_mse: [f64; 3],
    pub position_mse_total: f64,
    /// Mean of Ψ over the window.
    pub attitude_mse: f64,
    /// Mean per-tick |Δu| averaged over the commanded rotors, %/tick.
    pub pwm_roughness: f64,
    /// Fraction of ticks after `t_bound` outside either ultimate bound.
    pub bound_violation_fraction: f64,
    /// Time after which ‖ζ‖ and ‖η‖ stay settled, s.
    pub settling_time: f64,
    pub t_bound: f64,
    pub max_rho: f64,
    pub b_n: f64,
    pub c_n: f64,
    pub max_zeta_after: f64,
    pub max_eta_after: f64,
    pub completed: bool,
}

impl MetricsReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("completed".to_string(), self.completed.to_string()),
            ("window_start_s".into(), self.window.0.to_string()),
            ("window_end_s".into(), self.window.1.to_string()),
            ("samples".into(), self.samples.to_string()),
        ];
        for (axis, v) in ["x", "y", "z"].iter().zip(self.position_mse) {
            kv.push((format!("position_mse_{axis}_m2"), v.to_string()));
        }
        kv.extend([
            ("position_mse_total_m2".into(), self.position_mse_total.to_string()),
            ("attitude_mse_psi".into(), self.attitude_mse.to_string()),
            ("pwm_roughness_pct_per_tick".into(), self.pwm_roughness.to_string()),
            ("bound_violation_fraction".into(), self.bound_violation_fraction.to_string()),
            ("settling_time_s".into(), self.settling_time.to_string()),
            ("t_bound_s".into(), self.t_bound.to_string()),
            ("max_rho".into(), self.max_rho.to_string()),
            ("b_n".into(), self.b_n.to_string()),
            ("c_n".into(), self.c_n.to_string()),
            ("max_zeta_after".into(), self.max_zeta_after.to_string()),
            ("max_eta_after".into(), self.max_eta_after.to_string()),
        ]);
        kv
    }
}

/// First time after which `signal` stays at or below `factor` times its
/// maximum over the final quarter of `rows`.
fn settle(ts: &[f64], signal: &[f64], factor: f64) -> f64 {
    let n = signal.len();
    if n == 0 {
        return 0.0;
    }
    let tail_max = signal[n - n.div_ceil(4)..].iter().copied().fold(0.0, f64::max);
    let thr = factor * tail_max;
    match signal.iter().rposition(|&x| x > thr) {
        Some(i) if i + 1 < n => ts[i + 1],
        Some(i) => ts[i],
        None => ts[0],
    }
}

/// Largest ρ̄ of the final model over the states visited after
/// reconfiguration (or over the whole run without a fault).
fn max_rho(log: &ScenarioLog) -> f64 {
    if let Some(r) = log.config.bounds.max_rho_override {
        return r;
    }
    let (Some(model), Some(bounds)) = (&log.final_model, &log.final_bounds) else {
        return f64::INFINITY;
    };
    let from = log.reconfigure_time.unwrap_or(0.0);
    let stride = log.config.loop_divisors().map(|d| d.1).unwrap_or(50).max(1);
    log.rows
        .iter()
        .step_by(stride)
        .filter(|r| r.t >= from)
        .map(|r| {
            let s = RigidState {
                rotation: RotationMatrix::from_matrix_unchecked(r.rotation),
                position: r.position,
                omega: r.omega,
                velocity: r.velocity,
            };
            bounds.rho_bar(model, &encode_state(&s))
        })
        .fold(0.0, f64::max)
}

pub fn compute_metrics(log: &ScenarioLog) -> MetricsReport {
    let cfg = &log.config;
    let start = cfg.analysis_start();
    let end = log.rows.last().map_or(start, |r| r.t);
    let window: Vec<_> = log.rows.iter().filter(|r| r.t >= start).collect();
    let n = window.len();
    let mean = |f: &dyn Fn(&super::sim::LogRow) -> f64| {
        if n == 0 {
            0.0
        } else {
            window.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    let position_mse: [f64; 3] = std::array::from_fn(|i| mean(&|r| (r.position[i] - r.p_d[i]).powi(2)));
    let attitude_mse = mean(&|r| r.psi);

    let failed = cfg.fault.enabled.then(|| cfg.fault.rotor - 1);
    let active: Vec<usize> = (0..6).filter(|&i| Some(i) != failed).collect();
    let pwm_roughness = if n < 2 {
        0.0
    } else {
        window
            .windows(2)
            .map(|w| active.iter().map(|&i| (w[1].pwm[i] - w[0].pwm[i]).abs()).sum::<f64>() / active.len() as f64)
            .sum::<f64>()
            / (n - 1) as f64
    };

    let ts: Vec<f64> = window.iter().map(|r| r.t).collect();
    let zetas: Vec<f64> = window.iter().map(|r| r.zeta).collect();
    let etas: Vec<f64> = window.iter().map(|r| r.eta).collect();
    let f = cfg.bounds.settle_factor;
    let settling_time = settle(&ts, &zetas, f).max(settle(&ts, &etas, f));
    let t_bound = start.max(settling_time);

    let rho = max_rho(log);
    let inertia = cfg.inertia().map(|p| p.inertia).unwrap_or_default();
    let b_n = ultimate_bound_position(&cfg.gains, cfg.vehicle.mass, rho);
    let c_n = ultimate_bound_attitude(&cfg.gains, &inertia, cfg.bounds.c1, cfg.bounds.c2, rho);
    let after: Vec<_> = window.iter().filter(|r| r.t >= t_bound).collect();
    let violations = after.iter().filter(|r| r.zeta > b_n || r.eta > c_n).count();

    MetricsReport {
        window: (start, end),
        samples: n,
        position_mse,
        position_mse_total: position_mse.iter().sum(),
        attitude_mse,
        pwm_roughness,
        bound_violation_fraction: if after.is_empty() { 0.0 } else { violations as f64 / after.len() as f64 },
        settling_time,
        t_bound,
        max_rho: rho,
        b_n,
        c_n,
        max_zeta_after: after.iter().map(|r| r.zeta).fold(0.0, f64::max),
        max_eta_after: after.iter().map(|r| r.eta).fold(0.0, f64::max),
        completed: log.status == RunStatus::Completed,
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub with_gp: MetricsReport,
    pub without_gp: MetricsReport,
    /// `(MSE_off − MSE_on)/MSE_off`, %.
    pub improvement_pct: f64,
    pub with_log: ScenarioLog,
    pub without_log: ScenarioLog,
}

fn completed(log: ScenarioLog) -> Result<ScenarioLog, HarnessError> {
    match &log.status {
        RunStatus::Completed => Ok(log),
        RunStatus::Aborted { t, reason } => Err(HarnessError::Run(format!("`{}` aborted at t={t:.3}: {reason}", log.config.name))),
    }
}

impl Comparison {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![("improvement_pct".to_string(), self.improvement_pct.to_string())];
        for (tag, m) in [("on", &self.with_gp), ("off", &self.without_gp)] {
            kv.extend(m.key_values().into_iter().map(|(k, v)| (format!("{tag}.{k}"), v)));
        }
        kv
    }
}

/// Runs the scenario with GP compensation on and off, same seed and fault.
pub fn compare_runs(cfg: &ScenarioConfig) -> Result<Comparison, HarnessError> {
    let mut on = cfg.clone();
    on.gp.compensate = true;
    let mut off = cfg.clone();
    off.gp.compensate = false;
    let (a, b) = rayon::join(|| run_scenario(&on), || run_scenario(&off));
    let (with_log, without_log) = (completed(a?)?, completed(b?)?);
    let with_gp = compute_metrics(&with_log);
    let without_gp = compute_metrics(&without_log);
    let off_mse = without_gp.position_mse_total;
    let improvement_pct = if off_mse > 0.0 { 100.0 * (off_mse - with_gp.position_mse_total) / off_mse } else { 0.0 };
    Ok(Comparison { with_gp, without_gp, improvement_pct, with_log, without_log })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub completed: bool,
    pub disturbance_scale: f64,
    pub metrics: MetricsReport,
    pub zeta_ok: bool,
    pub eta_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub outcomes: Vec<SeedOutcome>,
    /// Fraction of runs with ‖ζ‖ ≤ b_n for all t ≥ T.
    pub zeta_fraction: f64,
    /// Fraction of runs with ‖η‖ ≤ c_n for all t ≥ T.
    pub eta_fraction: f64,
    pub delta: f64,
}

impl MonteCarloReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("runs".to_string(), self.outcomes.len().to_string()),
            ("delta".into(), self.delta.to_string()),
            ("zeta_fraction".into(), self.zeta_fraction.to_string()),
            ("eta_fraction".into(), self.eta_fraction.to_string()),
        ];
        for o in &self.outcomes {
            let m = &o.metrics;
            kv.push((
                format!("seed_{}", o.seed),
                format!(
                    "completed={} zeta_ok={} eta_ok={} b_n={} c_n={} max_zeta={} max_eta={} t_bound={}",
                    o.completed, o.zeta_ok, o.eta_ok, m.b_n, m.c_n, m.max_zeta_after, m.max_eta_after, m.t_bound
                ),
            ));
        }
        kv
    }
}

/// Runs seeds `cfg.seed .. cfg.seed + n_seeds` in parallel and counts the
/// runs that stay inside their ultimate bounds after settling. Aborted runs
/// count as outside.
pub fn monte_carlo(cfg: &ScenarioConfig, n_seeds: usize) -> Result<MonteCarloReport, HarnessError> {
    if n_seeds < 2 {
        return Err(HarnessError::Config(format!("need at least 2 seeds, got {n_seeds}")));
    }
    cfg.validate()?;
    let outcomes = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            let log = run_scenario(&c)?;
            let m = compute_metrics(&log);
            let ok = m.completed;
            Ok(SeedOutcome {
                seed: c.seed,
                completed: ok,
                disturbance_scale: log.disturbance_scale,
                zeta_ok: ok && m.max_zeta_after <= m.b_n,
                eta_ok: ok && m.max_eta_after <= m.c_n,
                metrics: m,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let frac = |f: fn(&SeedOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / outcomes.len() as f64;
    Ok(MonteCarloReport {
        zeta_fraction: frac(|o| o.zeta_ok),
        eta_fraction: frac(|o| o.eta_ok),
        delta: cfg.gp.delta,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::NoiseConfig;

    #[test]
    fn settle_finds_last_excursion() {
        let ts: Vec<f64> = (0..8).map(f64::from).collect();
        let sig = [5.0, 4.0, 3.0, 0.1, 2.0, 0.1, 0.1, 0.1];
        assert_eq!(settle(&ts, &sig, 1.5), 5.0);
        assert_eq!(settle(&ts, &[0.1; 8], 1.5), 0.0);
        assert_eq!(settle(&[], &[], 1.5), 0.0);
    }

    #[test]
    fn override_and_missing_model() {
        let mut cfg = ScenarioConfig { duration: 0.5, ..Default::default() };
        cfg.gp.collect = false;
        let log = run_scenario(&cfg).unwrap();
        let m = compute_metrics(&log);
        assert!(m.max_rho.is_infinite() && m.b_n.is_infinite());
        cfg.bounds.max_rho_override = Some(0.2);
        let m = compute_metrics(&run_scenario(&cfg).unwrap());
        assert_eq!(m.max_rho, 0.2);
        assert!((m.b_n - ultimate_bound_position(&cfg.gains, cfg.vehicle.mass, 0.2)).abs() < 1e-15);
    }

    #[test]
    fn compare_without_disturbance_is_neutral() {
        let mut cfg = ScenarioConfig { duration: 8.0, ..Default::default() };
        cfg.trajectory.kind = "figure8".into();
        cfg.gp.collect_delay = 0.5;
        cfg.gp.refit = false;
        let c = compare_runs(&cfg).unwrap();
        assert!(c.improvement_pct.abs() <= 2.0, "{}", c.improvement_pct);
        assert!(c.key_values().iter().any(|(k, _)| k == "on.position_mse_total_m2"));
    }

    #[test]
    fn monte_carlo_seed_count_and_quiet_runs() {
        let cfg = ScenarioConfig { duration: 1.0, noise: NoiseConfig::silent(), ..Default::default() };
        assert!(matches!(monte_carlo(&cfg, 1), Err(HarnessError::Config(_))));
        let mut quiet = cfg.clone();
        quiet.bounds.max_rho_override = Some(1.0);
        let r = monte_carlo(&quiet, 3).unwrap();
        assert_eq!(r.outcomes.iter().map(|o| o.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!((r.zeta_fraction, r.eta_fraction), (1.0, 1.0));
    }
}
