use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{KernelSharing, ScenarioConfig};
use super::HarnessError;
use crate::allocation::{allocate, build_a, plant_wrench, reconfigure, PwmCommand};
use crate::control::{attitude_error, attitude_law, outer_to_inner, position_error, position_law};
use crate::dynamics::{
    step_rk4, training_output, GroundTruthDisturbance, InertiaParams, RigidState, StateDerivative, Wrench,
};
use crate::gp::{
    build_model, encode_state, fit_hyperparameters, BoundBundle, Dataset, FitOptions, GpModel, Hyperparams,
    MeanFunction, OutputKernels, Prediction, TrainingPoint, UpdateOutcome, OUTPUTS,
};
use crate::se3::{exp_so3, RotationMatrix};

/// One physics tick. State and errors are sampled at `t`; commands are those
/// applied over `[t, t + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub p_d: Vector3<f64>,
    pub pdot_d: Vector3<f64>,
    pub yaw_d: f64,
    pub r_d: Matrix3<f64>,
    pub u1: Vector3<f64>,
    pub u2: Vector3<f64>,
    /// Magnitude of the commanded world force, N.
    pub thrust: f64,
    /// Collective force handed to the allocator, N.
    pub f_z: f64,
    pub pwm: Vector6<f64>,
    pub saturated: u8,
    pub gp_mean: Vector6<f64>,
    pub gp_var: Vector6<f64>,
    pub rho_bar: f64,
    /// Ground-truth `(f_v, f_ω)` acting on the plant.
    pub disturbance: Vector6<f64>,
    pub e_norm: f64,
    pub z_norm: f64,
    pub chi_norm: f64,
    pub omega_err_norm: f64,
    pub zeta: f64,
    pub eta: f64,
    pub psi: f64,
    pub fault: bool,
    pub reconfigured: bool,
    pub degenerate: bool,
    pub n_data: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub point: TrainingPoint,
    /// True disturbance at the sampled state.
    pub truth: Vector6<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Aborted { t: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct ScenarioLog {
    pub config: ScenarioConfig,
    pub rows: Vec<LogRow>,
    pub training: Vec<TrainingRecord>,
    pub status: RunStatus,
    pub fault_time: Option<f64>,
    pub reconfigure_time: Option<f64>,
    /// Per-seed multiplier applied to the disturbance model.
    pub disturbance_scale: f64,
    pub final_model: Option<GpModel>,
    pub final_bounds: Option<BoundBundle>,
    pub dataset_switches: u64,
    pub refits: usize,
}

impl ScenarioLog {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

fn normal3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    Vector3::new(draw(), draw(), draw()) * sigma
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn initial_kernels(cfg: &ScenarioConfig) -> Result<OutputKernels, HarnessError> {
    let g = &cfg.gp;
    let ls = g.scales.lengthscales(g.lengthscale);
    let make = |j: usize| Hyperparams::new(ls.clone(), g.signal_var[j], g.noise_var[j]);
    let k = match g.kernels {
        KernelSharing::Shared => make(0).map(OutputKernels::Shared),
        KernelSharing::PerOutput => (0..OUTPUTS).map(make).collect::<Result<Vec<_>, _>>().map(OutputKernels::PerOutput),
    };
    k.map_err(|e| HarnessError::Config(e.to_string()))
}

fn refit(kernels: &OutputKernels, data: &Dataset, cfg: &ScenarioConfig, seed: u64) -> OutputKernels {
    let inputs = data.inputs();
    let y = data.outputs();
    let floor = (cfg.gp.lengthscale_floor > 0.0).then(|| cfg.gp.scales.lengthscales(cfg.gp.lengthscale_floor));
    let opts = FitOptions {
        budget: cfg.gp.fit_budget,
        starts: cfg.gp.fit_starts.max(1),
        seed,
        min_lengthscales: floor,
        ..Default::default()
    };
    let fit = |h: &Hyperparams, cols: DMatrix<f64>| match fit_hyperparameters(&inputs, &cols, h, &opts) {
        Ok(r) => r.hyperparams,
        Err(e) => {
            log::warn!("hyperparameter fit failed, keeping previous kernel: {e}");
            h.clone()
        }
    };
    match kernels {
        OutputKernels::Shared(h) => OutputKernels::Shared(fit(h, y)),
        OutputKernels::PerOutput(hs) => {
            OutputKernels::PerOutput(hs.iter().enumerate().map(|(j, h)| fit(h, y.columns(j, 1).into_owned())).collect())
        }
    }
}

fn bound_candidates(data: &Dataset, limit: usize) -> Vec<DVector<f64>> {
    let inputs = data.inputs();
    if inputs.len() <= limit {
        return inputs;
    }
    (0..limit).map(|i| inputs[i * inputs.len() / limit].clone()).collect()
}

/// Measured state plus the running integral of the nominal wrench, taken at
/// a position tick.
#[derive(Clone, Copy)]
struct Snapshot {
    t: f64,
    state: RigidState,
    truth: Vector6<f64>,
    wrench_sum: Vector6<f64>,
    ticks: usize,
}

/// Online learner: batches training points, commits them as dataset
/// switches and keeps the posterior and bound machinery current.
struct Learner {
    data: Dataset,
    kernels: OutputKernels,
    model: Option<GpModel>,
    bounds: Option<BoundBundle>,
    batch: Vec<TrainingPoint>,
    refitted: bool,
    refits: usize,
}

impl Learner {
    fn commit(&mut self, cfg: &ScenarioConfig, fit_rng: &mut ChaCha8Rng) {
        if self.batch.is_empty() {
            return;
        }
        let batch = std::mem::take(&mut self.batch);
        match self.data.update_batch(batch) {
            Ok(UpdateOutcome::Refused) => return,
            Ok(_) => {}
            Err(e) => {
                log::warn!("dropping training batch: {e}");
                return;
            }
        }
        if cfg.gp.refit && !self.refitted && self.data.len() >= cfg.gp.refit_after.max(5) {
            self.kernels = refit(&self.kernels, &self.data, cfg, rand::Rng::random(fit_rng));
            self.refitted = true;
            self.refits += 1;
        }
        self.rebuild(cfg);
    }

    fn rebuild(&mut self, cfg: &ScenarioConfig) {
        if self.data.is_empty() {
            self.model = None;
            self.bounds = None;
            return;
        }
        match build_model(&self.data, self.kernels.clone(), MeanFunction::Zero) {
            Ok(m) => {
                let cands = bound_candidates(&self.data, cfg.gp.bound_candidates.max(1));
                self.bounds = BoundBundle::compute(&m, &self.data, &cands, cfg.gp.delta, cfg.caps())
                    .map_err(|e| log::warn!("bound computation failed: {e}"))
                    .ok();
                self.model = Some(m);
            }
            Err(e) => log::warn!("keeping previous GP model: {e}"),
        }
    }
}

/// Simulates one scenario. Configuration problems are returned as errors; a
/// run that blows up or cannot allocate returns the partial log with an
/// aborted status.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioLog, HarnessError> {
    cfg.validate()?;
    let params: InertiaParams = cfg.inertia()?;
    let traj = cfg.trajectory.build().map_err(|e| HarnessError::Config(e.to_string()))?;
    let (att_div, pos_div) = cfg.loop_divisors()?;
    let gains = cfg.gains;
    let dt = cfg.dt;
    let j = params.inertia;

    let mut ctrl_layout = cfg.layout()?;
    let mut alloc = build_a(&ctrl_layout);
    let mut plant_layout = ctrl_layout.clone();

    let mut sensor_rng = stream(cfg.seed, 0);
    let mut dist_rng = stream(cfg.seed, 1);
    let mut fit_rng = stream(cfg.seed, 2);
    let z: f64 = StandardNormal.sample(&mut dist_rng);
    let disturbance_scale = (1.0 + cfg.disturbance_jitter * z).max(0.0);
    let truth = GroundTruthDisturbance::from_params(&cfg.disturbance)
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .scaled(disturbance_scale);

    let ticks = (cfg.duration / dt).round() as usize;
    let tick_of = |t: f64| (t / dt).round() as usize;
    let fault_rotor = cfg.fault.enabled.then(|| cfg.fault.rotor - 1);
    let fault_tick = cfg.fault.enabled.then(|| tick_of(cfg.fault.time));
    let reconfig_tick = cfg.reconfigure_time().map(tick_of);

    let ref0 = traj.eval(0.0);
    let yaw0 = RotationMatrix::from_axis_angle(&Vector3::z_axis(), ref0.yaw);
    let mut s = RigidState {
        rotation: yaw0,
        position: ref0.p + Vector3::from_row_slice(&cfg.trajectory.initial_offset),
        omega: Vector3::zeros(),
        velocity: Vector3::zeros(),
    };

    let mut learner = Learner {
        data: Dataset::new(cfg.gp.capacity, cfg.gp.policy, Some(cfg.gp.max_switches)),
        kernels: initial_kernels(cfg)?,
        model: None,
        bounds: None,
        batch: Vec::new(),
        refitted: false,
        refits: 0,
    };
    let mut collect_start = if cfg.fault.enabled { f64::INFINITY } else { cfg.gp.collect_delay };
    let mut next_commit = collect_start + cfg.gp.update_period;

    let mut meas = s;
    let mut r_d = yaw0;
    let mut f_des_world = Vector3::new(0.0, 0.0, params.mass * params.gravity);
    let mut u2 = Vector3::zeros();
    let mut u1 = Vector3::zeros();
    let mut thrust = f_des_world.norm();
    let mut f_z = thrust;
    let mut degenerate = false;
    let mut pwm = PwmCommand { u: Vector6::zeros(), raw: Vector6::zeros(), saturated: [false; 6] };
    let mut pred = Prediction { mean: Vector6::zeros(), variance: Vector6::zeros() };
    let mut rho = 0.0;
    let mut reconfigured = false;
    let mut wrench_sum = Vector6::zeros();
    let mut history: Vec<Snapshot> = Vec::with_capacity(3);

    let mut rows = Vec::with_capacity(ticks);
    let mut training = Vec::new();
    let mut status = RunStatus::Completed;

    for k in 0..ticks {
        let t = k as f64 * dt;
        let fault_on = fault_tick.is_some_and(|f| k >= f);

        if reconfig_tick == Some(k) {
            let rotor = cfg.fault.rotor;
            match reconfigure(&ctrl_layout, rotor) {
                Ok((l, a)) => {
                    ctrl_layout = l;
                    alloc = a;
                    plant_layout = ctrl_layout.clone();
                }
                Err(e) => {
                    status = RunStatus::Aborted { t, reason: format!("reconfiguration failed: {e}") };
                    break;
                }
            }
            reconfigured = true;
            log::debug!("t={t:.3}: rotor {rotor} reconfigured");
            history.clear();
            learner.batch.clear();
            if cfg.gp.reset_on_reconfigure && !learner.data.is_empty() {
                learner.data.clear();
                learner.rebuild(cfg);
            }
            collect_start = t + cfg.gp.collect_delay;
            next_commit = collect_start + cfg.gp.update_period;
        }

        let reference = traj.eval(t);
        let dist_now = truth.sample(&s, reconfigured);

        if k % att_div == 0 {
            let n = &cfg.noise;
            meas.rotation = s.rotation * exp_so3(&normal3(&mut sensor_rng, n.attitude));
            meas.omega = s.omega + normal3(&mut sensor_rng, n.gyro);
            meas.velocity = s.velocity + normal3(&mut sensor_rng, n.velocity);
            if k % pos_div == 0 {
                meas.position = s.position + normal3(&mut sensor_rng, n.position);
            }
            if let (Some(m), Some(b)) = (&learner.model, &learner.bounds) {
                let x = encode_state(&meas);
                pred = m.predict(&x);
                rho = crate::gp::rho_bar(&b.beta, &pred);
            } else {
                pred = Prediction { mean: Vector6::zeros(), variance: Vector6::zeros() };
                rho = 0.0;
            }
        }
        let comp = if cfg.gp.compensate && learner.model.is_some() { pred.mean } else { Vector6::zeros() };

        if k % pos_div == 0 {
            if cfg.gp.collect && (!cfg.fault.enabled || reconfigured) {
                history.push(Snapshot { t, state: meas, truth: dist_now.stacked(), wrench_sum, ticks: k });
                if history.len() > 3 {
                    history.remove(0);
                }
                if history.len() == 3 && history[0].t >= collect_start - 1e-9 {
                    let (a, b, c) = (&history[0], &history[1], &history[2]);
                    let span = c.t - a.t;
                    let mean_wrench = (c.wrench_sum - a.wrench_sum) / (c.ticks - a.ticks) as f64;
                    let deriv = StateDerivative {
                        rotation: Matrix3::zeros(),
                        position: Vector3::zeros(),
                        omega: (c.state.omega - a.state.omega) / span,
                        velocity: (c.state.velocity - a.state.velocity) / span,
                    };
                    let w = Wrench::new(mean_wrench.fixed_rows::<3>(0).into_owned(), mean_wrench.fixed_rows::<3>(3).into_owned());
                    let y = training_output(&b.state, &deriv, &w, &params);
                    let point = TrainingPoint { input: encode_state(&b.state), output: y, t: b.t };
                    training.push(TrainingRecord { point: point.clone(), truth: b.truth });
                    learner.batch.push(point);
                }
            }
            if t + 1e-9 >= next_commit {
                learner.commit(cfg, &mut fit_rng);
                next_commit += cfg.gp.update_period;
            }

            let fv = comp.fixed_rows::<3>(0).into_owned();
            u2 = position_law(&meas, &reference.p, &reference.pdot, &params, &gains, &fv);
            f_des_world = meas.rotation * (u2 - params.gravity_body(&meas.rotation));
            let sp = outer_to_inner(&f_des_world, reference.yaw, &params, &r_d);
            r_d = sp.r_d;
            thrust = sp.thrust;
            degenerate = sp.degenerate;
        }

        if k % att_div == 0 {
            let fw = comp.fixed_rows::<3>(3).into_owned();
            u1 = attitude_law(&meas, &r_d, &gains, &j, &fw);
            f_z = f_des_world.dot(&(meas.rotation * Vector3::z())).max(0.0);
            pwm = match allocate(&alloc, &ctrl_layout, &u1, f_z) {
                Ok(p) => p,
                Err(e) => {
                    status = RunStatus::Aborted { t, reason: format!("allocation failed: {e}") };
                    break;
                }
            };
        }

        let pos_err = position_error(&s, &reference.p, &reference.pdot, &gains);
        let att_err = attitude_error(&s, &r_d, &gains);
        rows.push(LogRow {
            t,
            rotation: *s.rotation.matrix(),
            position: s.position,
            omega: s.omega,
            velocity: s.velocity,
            p_d: reference.p,
            pdot_d: reference.pdot,
            yaw_d: reference.yaw,
            r_d: *r_d.matrix(),
            u1,
            u2,
            thrust,
            f_z,
            pwm: pwm.u,
            saturated: pwm.saturated.iter().filter(|&&x| x).count() as u8,
            gp_mean: pred.mean,
            gp_var: pred.variance,
            rho_bar: rho,
            disturbance: dist_now.stacked(),
            e_norm: pos_err.e.norm(),
            z_norm: pos_err.z.norm(),
            chi_norm: att_err.chi.norm(),
            omega_err_norm: att_err.omega_err.norm(),
            zeta: pos_err.zeta().norm(),
            eta: att_err.eta().norm(),
            psi: att_err.psi,
            fault: fault_on,
            reconfigured,
            degenerate,
            n_data: learner.data.len(),
        });

        let nominal = alloc.a * pwm.u;
        wrench_sum += Vector6::new(nominal[0], nominal[1], nominal[2], 0.0, 0.0, nominal[3]);

        let (torque, force) = plant_wrench(&plant_layout, &pwm.u, fault_on.then_some(fault_rotor).flatten(), &cfg.actuator);
        let flag = reconfigured;
        match step_rk4(&s, &Wrench::new(torque, force), |x| truth.sample(x, flag), dt, &params) {
            Ok(next) => s = next,
            Err(e) => {
                status = RunStatus::Aborted { t, reason: e.to_string() };
                break;
            }
        }
    }

    if let RunStatus::Aborted { t, reason } = &status {
        log::warn!("run `{}` aborted at t={t:.3}: {reason}", cfg.name);
    }
    Ok(ScenarioLog {
        config: cfg.clone(),
        rows,
        training,
        status,
        fault_time: cfg.fault.enabled.then_some(cfg.fault.time),
        reconfigure_time: cfg.reconfigure_time(),
        disturbance_scale,
        final_model: learner.model,
        final_bounds: learner.bounds,
        dataset_switches: learner.data.switches(),
        refits: learner.refits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DisturbanceParams;
    use crate::harness::{write_log_csv, NoiseConfig};

    fn short_fault() -> ScenarioConfig {
        let mut c = ScenarioConfig { name: "short-fault".into(), duration: 4.0, ..Default::default() };
        c.fault.enabled = true;
        c.fault.time = 1.0;
        c.fault.latency = 0.2;
        c.disturbance = DisturbanceParams::tilt_aero_default();
        c.gp.collect_delay = 0.3;
        c.gp.update_period = 0.5;
        c.gp.refit_after = 20;
        c.gp.fit_budget = 10;
        c.gp.fit_starts = 1;
        c
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let cfg = short_fault();
        let csv = |log: &ScenarioLog| {
            let mut buf = Vec::new();
            write_log_csv(log, &mut buf).unwrap();
            buf
        };
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert!(a.refits > 0 && !a.training.is_empty());
        assert_eq!(csv(&a), csv(&b));
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(csv(&a), csv(&run_scenario(&other).unwrap()));
    }

    #[test]
    fn zero_duration_yields_no_rows() {
        let log = run_scenario(&ScenarioConfig { duration: 0.0, ..Default::default() }).unwrap();
        assert!(log.rows.is_empty() && log.is_completed());
    }

    #[test]
    fn loops_update_at_their_own_rates() {
        let cfg = ScenarioConfig { duration: 1.0, ..Default::default() };
        let (att, pos) = cfg.loop_divisors().unwrap();
        assert_eq!((att, pos), (5, 50));
        let log = run_scenario(&cfg).unwrap();
        for (k, w) in log.rows.windows(2).enumerate() {
            let k = k + 1;
            if k % att != 0 {
                assert_eq!(w[0].pwm, w[1].pwm, "pwm changed at tick {k}");
                assert_eq!(w[0].u1, w[1].u1);
            }
            if k % pos != 0 {
                assert_eq!(w[0].r_d, w[1].r_d, "setpoint changed at tick {k}");
                assert_eq!(w[0].u2, w[1].u2);
            }
        }
    }

    #[test]
    fn fault_then_reconfiguration_after_latency() {
        let mut cfg = short_fault();
        cfg.gp.collect = false;
        cfg.duration = 2.0;
        let log = run_scenario(&cfg).unwrap();
        let first = |f: fn(&LogRow) -> bool| log.rows.iter().find(|r| f(r)).unwrap().t;
        assert!((first(|r| r.fault) - 1.0).abs() < 1e-9);
        assert!((first(|r| r.reconfigured) - 1.2).abs() < 1e-9);
        let failed = cfg.fault.rotor - 1;
        for r in log.rows.iter().filter(|r| r.reconfigured) {
            assert_eq!(r.pwm[failed], 0.0);
        }
        assert!(log.rows.iter().any(|r| r.fault && !r.reconfigured && r.pwm[failed] > 0.0));
        assert_eq!(log.reconfigure_time, Some(1.2));
    }

    #[test]
    fn dead_rotor_produces_no_wrench() {
        let layout = ScenarioConfig::default().layout().unwrap();
        let pwm = Vector6::from_element(50.0);
        let mut only = Vector6::zeros();
        only[2] = 50.0;
        let (tau, f) = plant_wrench(&layout, &only, Some(2), &Default::default());
        assert_eq!((tau.norm(), f.norm()), (0.0, 0.0));
        let (_, f_all) = plant_wrench(&layout, &pwm, None, &Default::default());
        let (_, f_dead) = plant_wrench(&layout, &pwm, Some(2), &Default::default());
        assert!((f_all.z - f_dead.z - f_all.z / 6.0).abs() < 1e-9);
    }

    #[test]
    fn silent_hover_needs_no_learning() {
        let mut cfg = ScenarioConfig { duration: 3.0, noise: NoiseConfig::silent(), ..Default::default() };
        cfg.gp.collect_delay = 0.5;
        cfg.gp.update_period = 0.5;
        let log = run_scenario(&cfg).unwrap();
        assert!(log.training.len() > 10);
        for rec in &log.training {
            assert!(rec.point.output.amax() < 0.05, "{:?}", rec.point.output);
        }
        let last = log.rows.last().unwrap();
        assert!(last.e_norm < 1e-6 && last.n_data > 0);
    }
}
