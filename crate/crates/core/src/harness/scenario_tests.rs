use crate::allocation::reconfigure;
use crate::dynamics::{training_output, DisturbanceParams, InertiaParams, RigidState, StateDerivative, Wrench};
use super::{compare_runs, compute_metrics, emit, run_scenario, LogRow, NoiseConfig, ScenarioConfig};
use crate::se3::RotationMatrix;
use nalgebra::{Matrix3, Vector3, Vector6};

fn short_fault() -> ScenarioConfig {
    let mut c = ScenarioConfig { name: "short".into(), duration: 5.0, noise: NoiseConfig::silent(), ..Default::default() };
    c.fault.enabled = true;
    c.fault.time = 1.0;
    c.disturbance = DisturbanceParams::tilt_aero_default();
    c.gp.collect_delay = 0.3;
    c.gp.update_period = 0.5;
    c.gp.refit = false;
    c
}

fn state(r: &LogRow) -> RigidState {
    RigidState {
        rotation: RotationMatrix::from_matrix_unchecked(r.rotation),
        position: r.position,
        omega: r.omega,
        velocity: r.velocity,
    }
}

#[test]
fn training_rows_match_offline_recomputation() {
    let cfg = short_fault();
    let log = run_scenario(&cfg).unwrap();
    let params: InertiaParams = cfg.inertia().unwrap();
    let (_, alloc) = reconfigure(&cfg.layout().unwrap(), cfg.fault.rotor).unwrap();
    assert!(log.training.len() > 20);
    let mut worst_truth = 0.0f64;
    for rec in &log.training {
        let k = (rec.point.t / cfg.dt).round() as usize;
        let (a, b, c) = (&log.rows[k - 50], &log.rows[k], &log.rows[k + 50]);
        let span = c.t - a.t;
        let mut wrench = Vector6::zeros();
        for r in &log.rows[k - 50..k + 50] {
            let w = alloc.a * r.pwm;
            wrench += Vector6::new(w[0], w[1], w[2], 0.0, 0.0, w[3]);
        }
        wrench /= 100.0;
        let deriv = StateDerivative {
            rotation: Matrix3::zeros(),
            position: Vector3::zeros(),
            omega: (c.omega - a.omega) / span,
            velocity: (c.velocity - a.velocity) / span,
        };
        let u = Wrench::new(wrench.fixed_rows::<3>(0).into_owned(), wrench.fixed_rows::<3>(3).into_owned());
        let y = training_output(&state(b), &deriv, &u, &params);
        assert!((y - rec.point.output).amax() < 1e-9, "t={}: {:?} vs {:?}", b.t, y, rec.point.output);
        worst_truth = worst_truth.max((rec.point.output - rec.truth).fixed_rows::<3>(3).amax());
    }
    // torque labels also absorb the tilted rotor's unmodelled moment, which is small
    assert!(worst_truth < 0.2, "{worst_truth}");
}

#[test]
fn untrained_gp_compensation_changes_nothing() {
    let mut cfg = short_fault();
    cfg.gp.collect = false;
    let c = compare_runs(&cfg).unwrap();
    assert_eq!(c.improvement_pct, 0.0);
    assert_eq!(c.with_gp.position_mse_total, c.without_gp.position_mse_total);
}

#[test]
fn re_emitting_a_log_is_byte_identical() {
    let log = run_scenario(&short_fault()).unwrap();
    let report = compute_metrics(&log);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = emit(&log, &report, a.path()).unwrap();
    let fb = emit(&log, &report, b.path()).unwrap();
    assert_eq!(std::fs::read(fa.log_csv).unwrap(), std::fs::read(fb.log_csv).unwrap());
    assert_eq!(std::fs::read(fa.metrics).unwrap(), std::fs::read(fb.metrics).unwrap());
}

#[test]
fn post_reconfiguration_attitude_recovers() {
    let log = run_scenario(&short_fault()).unwrap();
    let t_r = log.reconfigure_time.unwrap();
    let peak = log.rows.iter().filter(|r| r.t >= 1.0).max_by(|a, b| a.psi.total_cmp(&b.psi)).unwrap();
    assert!(peak.t <= t_r + 0.5, "peak Ψ at {}", peak.t);
    let tail: Vec<f64> = log.rows.iter().filter(|r| r.t >= t_r + 1.0).map(|r| r.psi).collect();
    assert!(tail.iter().all(|&p| p < 0.5 * peak.psi));
    let pre = log.rows.iter().filter(|r| r.t < 1.0).map(|r| r.psi).fold(0.0, f64::max);
    let window = log.rows.iter().filter(|r| r.fault && !r.reconfigured).map(|r| r.psi).fold(0.0, f64::max);
    assert!(window > 10.0 * pre.max(1e-12));
}
