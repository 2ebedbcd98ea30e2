//! Rigid-body dynamics with additive unknown force/torque, a fixed-step RK4
//! integrator, synthetic ground-truth disturbances and the inversion that turns
//! measured motion into learning targets.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{hat, reproject, RotationMatrix, Se3Error};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid inertia parameters: {0}")]
    InvalidInertia(String),
    #[error("integration step {0} s outside (0, 0.01]")]
    InvalidStep(f64),
    #[error("integration blew up (non-finite state)")]
    IntegrationBlowup,
    #[error("unknown disturbance model `{0}` (expected zero, constant-bias, state-linear or tilt-aero)")]
    UnknownModel(String),
    #[error("invalid disturbance parameters: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Se3(#[from] Se3Error),
}

/// Full state `q = ((R, p), (ω, v))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    pub rotation: RotationMatrix,
    /// World-frame position, m.
    pub position: Vector3<f64>,
    /// Body angular velocity, rad/s.
    pub omega: Vector3<f64>,
    /// Body linear velocity, m/s.
    pub velocity: Vector3<f64>,
}

impl Default for RigidState {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl RigidState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            position,
            omega: Vector3::zeros(),
            velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|x| x.is_finite())
            && self.position.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
    }

    /// World-frame velocity `ṗ = R v`.
    pub fn world_velocity(&self) -> Vector3<f64> {
        self.rotation * self.velocity
    }
}

/// Time derivative of a [`RigidState`], with `Ṙ` kept in the ambient 3×3 space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// How gravity enters the body-frame translational equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GravityConvention {
    /// `−m g Rᵀ e₃`: gravity pulls along world −z, expressed in body axes.
    #[default]
    BodyFrame,
    /// `+m g R e₃`, an alternative sign and frame convention for comparison runs.
    RotatedAxis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaParams {
    /// kg
    pub mass: f64,
    /// kg·m², symmetric positive definite
    pub inertia: Matrix3<f64>,
    /// m/s²
    pub gravity: f64,
    pub convention: GravityConvention,
}

impl InertiaParams {
    pub fn new(mass: f64, inertia: Matrix3<f64>, gravity: f64) -> Result<Self, DynamicsError> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(DynamicsError::InvalidInertia(format!("mass must be > 0, got {mass}")));
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm().max(1.0) {
            return Err(DynamicsError::InvalidInertia("inertia tensor is not symmetric".into()));
        }
        let min_eig = inertia.symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(DynamicsError::InvalidInertia(format!(
                "inertia tensor is not positive definite (λ_min = {min_eig})"
            )));
        }
        if !(gravity.is_finite() && gravity >= 0.0) {
            return Err(DynamicsError::InvalidInertia(format!("gravity must be ≥ 0, got {gravity}")));
        }
        Ok(Self { mass, inertia, gravity, convention: GravityConvention::BodyFrame })
    }

    pub fn with_convention(mut self, convention: GravityConvention) -> Self {
        self.convention = convention;
        self
    }

    /// 2.8 kg F550-class hexarotor.
    pub fn hexarotor() -> Self {
        Self::new(2.8, Matrix3::from_diagonal(&Vector3::new(0.035, 0.035, 0.065)), 9.81)
            .expect("default inertia is valid")
    }

    /// Gravity force in body axes under the configured convention.
    pub fn gravity_body(&self, rotation: &RotationMatrix) -> Vector3<f64> {
        let e3 = Vector3::z();
        let mg = self.mass * self.gravity;
        match self.convention {
            GravityConvention::BodyFrame => -mg * (rotation.inverse() * e3),
            GravityConvention::RotatedAxis => mg * (rotation * e3),
        }
    }

    pub fn lambda_min(&self) -> f64 {
        self.inertia.symmetric_eigenvalues().min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.inertia.symmetric_eigenvalues().max()
    }
}

/// Body-frame control wrench: `u1` torque (N·m) and `u2` force (N).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub torque: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl Wrench {
    pub fn new(torque: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self { torque, force }
    }
}

/// Unknown force `f_v` (N) and torque `f_ω` (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceSample {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl DisturbanceSample {
    /// `(f_v, f_ω)`, the ordering used for learning targets.
    pub fn stacked(&self) -> Vector6<f64> {
        let mut f = Vector6::zeros();
        f.fixed_rows_mut::<3>(0).copy_from(&self.force);
        f.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        f
    }

    pub fn from_stacked(f: &Vector6<f64>) -> Self {
        Self { force: f.fixed_rows::<3>(0).into_owned(), torque: f.fixed_rows::<3>(3).into_owned() }
    }
}

/// Continuous dynamics:
///
/// ```text
/// Ṙ = R S(ω),  ṗ = R v
/// J ω̇ = −ω × Jω + u1 + f_ω
/// m v̇ = −ω × m v + gravity + u2 + f_v
/// ```
pub fn derivatives(
    s: &RigidState,
    u: &Wrench,
    f: &DisturbanceSample,
    params: &InertiaParams,
) -> StateDerivative {
    let r = s.rotation.matrix();
    let j = &params.inertia;
    let m = params.mass;
    let jw = j * s.omega;
    let torque = -s.omega.cross(&jw) + u.torque + f.torque;
    // J is SPD by construction
    let omega_dot = j.cholesky().expect("inertia is SPD").solve(&torque);
    let force = -s.omega.cross(&(m * s.velocity)) + params.gravity_body(&s.rotation) + u.force + f.force;
    StateDerivative {
        rotation: r * hat(&s.omega),
        position: r * s.velocity,
        omega: omega_dot,
        velocity: force / m,
    }
}

/// Learning target `y = [(m v̇ + ω×mv − gravity − u2)ᵀ, (J ω̇ + ω×Jω − u1)ᵀ]ᵀ`.
/// With exact derivatives this returns the injected `(f_v, f_ω)`.
pub fn training_output(
    s: &RigidState,
    s_dot: &StateDerivative,
    u: &Wrench,
    params: &InertiaParams,
) -> Vector6<f64> {
    let m = params.mass;
    let j = &params.inertia;
    let fv = m * s_dot.velocity + s.omega.cross(&(m * s.velocity)) - params.gravity_body(&s.rotation) - u.force;
    let fw = j * s_dot.omega + s.omega.cross(&(j * s.omega)) - u.torque;
    let mut y = Vector6::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&fv);
    y.fixed_rows_mut::<3>(3).copy_from(&fw);
    y
}

/// Maximum admissible integration step, s.
pub const MAX_STEP: f64 = 0.01;

/// One classical RK4 step on `(R, p, ω, v)` followed by polar reprojection of
/// `R`. The wrench is held over the step; the disturbance is re-evaluated at
/// every stage.
pub fn step_rk4<F>(
    s: &RigidState,
    u: &Wrench,
    disturbance: F,
    dt: f64,
    params: &InertiaParams,
) -> Result<RigidState, DynamicsError>
where
    F: Fn(&RigidState) -> DisturbanceSample,
{
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let eval = |x: &RawState| {
        let st = x.as_state();
        derivatives(&st, u, &disturbance(&st), params)
    };
    let x0 = RawState::from(s);
    let k1 = eval(&x0);
    let k2 = eval(&x0.advance(&k1, 0.5 * dt));
    let k3 = eval(&x0.advance(&k2, 0.5 * dt));
    let k4 = eval(&x0.advance(&k3, dt));
    let rotation = x0.rotation + dt / 6.0 * (k1.rotation + 2.0 * k2.rotation + 2.0 * k3.rotation + k4.rotation);
    let position = x0.position + dt / 6.0 * (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position);
    let omega = x0.omega + dt / 6.0 * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega);
    let velocity = x0.velocity + dt / 6.0 * (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity);
    if !(rotation.iter().chain(position.iter()).chain(omega.iter()).chain(velocity.iter()))
        .all(|x| x.is_finite())
    {
        return Err(DynamicsError::IntegrationBlowup);
    }
    let rotation = reproject(&rotation).map_err(|_| DynamicsError::IntegrationBlowup)?;
    Ok(RigidState { rotation, position, omega, velocity })
}

/// Stage state for RK4: the rotation lives in ℝ³ˣ³ between stages.
struct RawState {
    rotation: Matrix3<f64>,
    position: Vector3<f64>,
    omega: Vector3<f64>,
    velocity: Vector3<f64>,
}

impl From<&RigidState> for RawState {
    fn from(s: &RigidState) -> Self {
        Self { rotation: *s.rotation.matrix(), position: s.position, omega: s.omega, velocity: s.velocity }
    }
}

impl RawState {
    fn advance(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            rotation: self.rotation + h * d.rotation,
            position: self.position + h * d.position,
            omega: self.omega + h * d.omega,
            velocity: self.velocity + h * d.velocity,
        }
    }

    fn as_state(&self) -> RigidState {
        RigidState {
            rotation: RotationMatrix::from_matrix_unchecked(self.rotation),
            position: self.position,
            omega: self.omega,
            velocity: self.velocity,
        }
    }
}

/// When a ground-truth disturbance is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceGate {
    /// Only after the failure has been handled (tilt deployed).
    #[default]
    Fault,
    Always,
}

/// Parameters shared by the registered disturbance models. Unused fields are
/// ignored by models that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceParams {
    /// `zero`, `constant-bias`, `state-linear` or `tilt-aero`.
    pub model: String,
    pub gate: DisturbanceGate,
    /// Constant part `(f_v, f_ω)`, N and N·m.
    pub bias: [f64; 6],
    /// Per-axis force gain on body velocity, N/(m/s).
    pub velocity_gain: [f64; 3],
    /// Per-axis torque gain on body rate, N·m/(rad/s).
    pub omega_gain: [f64; 3],
    /// Roll/pitch moment per unit horizontal body velocity (blade flapping), N·m/(m/s).
    pub flapping: f64,
    /// Saturation of each force component, N.
    pub force_cap: f64,
    /// Saturation of each torque component, N·m.
    pub torque_cap: f64,
}

impl Default for DisturbanceParams {
    fn default() -> Self {
        Self {
            model: "zero".into(),
            gate: DisturbanceGate::Fault,
            bias: [0.0; 6],
            velocity_gain: [0.0; 3],
            omega_gain: [0.0; 3],
            flapping: 0.0,
            force_cap: 4.0,
            torque_cap: 0.3,
        }
    }
}

impl DisturbanceParams {
    /// Smooth post-failure aerodynamic stand-in used by the example scenarios.
    pub fn tilt_aero_default() -> Self {
        Self {
            model: "tilt-aero".into(),
            gate: DisturbanceGate::Fault,
            bias: [0.8, -0.6, 0.4, 0.03, -0.02, 0.015],
            velocity_gain: [-0.35, -0.35, -0.2],
            omega_gain: [0.0; 3],
            flapping: 0.04,
            force_cap: 3.0,
            torque_cap: 0.25,
        }
    }
}

/// Deterministic map `(state, fault flag) → (f_v, f_ω)` standing in for the
/// unknown dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruthDisturbance {
    Zero,
    ConstantBias { gate: DisturbanceGate, bias: Vector6<f64> },
    StateLinear {
        gate: DisturbanceGate,
        bias: Vector6<f64>,
        velocity_gain: Vector3<f64>,
        omega_gain: Vector3<f64>,
    },
    TiltAero {
        gate: DisturbanceGate,
        bias: Vector6<f64>,
        drag: Vector3<f64>,
        flapping: f64,
        rate_gain: Vector3<f64>,
        force_cap: f64,
        torque_cap: f64,
    },
}

impl GroundTruthDisturbance {
    pub const REGISTERED: [&'static str; 4] = ["zero", "constant-bias", "state-linear", "tilt-aero"];

    pub fn from_params(p: &DisturbanceParams) -> Result<Self, DynamicsError> {
        let bias = Vector6::from_row_slice(&p.bias);
        let vg = Vector3::from_row_slice(&p.velocity_gain);
        let wg = Vector3::from_row_slice(&p.omega_gain);
        Ok(match p.model.as_str() {
            "zero" => Self::Zero,
            "constant-bias" => Self::ConstantBias { gate: p.gate, bias },
            "state-linear" => Self::StateLinear { gate: p.gate, bias, velocity_gain: vg, omega_gain: wg },
            "tilt-aero" => {
                if !(p.force_cap > 0.0 && p.torque_cap > 0.0) {
                    return Err(DynamicsError::InvalidModel("tilt-aero caps must be positive".into()));
                }
                Self::TiltAero {
                    gate: p.gate,
                    bias,
                    drag: vg,
                    flapping: p.flapping,
                    rate_gain: wg,
                    force_cap: p.force_cap,
                    torque_cap: p.torque_cap,
                }
            }
            other => return Err(DynamicsError::UnknownModel(other.to_string())),
        })
    }

    /// Same model with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self.clone() {
            Self::Zero => Self::Zero,
            Self::ConstantBias { gate, bias } => Self::ConstantBias { gate, bias: bias * factor },
            Self::StateLinear { gate, bias, velocity_gain, omega_gain } => Self::StateLinear {
                gate,
                bias: bias * factor,
                velocity_gain: velocity_gain * factor,
                omega_gain: omega_gain * factor,
            },
            Self::TiltAero { gate, bias, drag, flapping, rate_gain, force_cap, torque_cap } => Self::TiltAero {
                gate,
                bias: bias * factor,
                drag: drag * factor,
                flapping: flapping * factor,
                rate_gain: rate_gain * factor,
                force_cap,
                torque_cap,
            },
        }
    }

    fn gate(&self) -> DisturbanceGate {
        match self {
            Self::Zero => DisturbanceGate::Always,
            Self::ConstantBias { gate, .. } | Self::StateLinear { gate, .. } | Self::TiltAero { gate, .. } => *gate,
        }
    }

    pub fn sample(&self, s: &RigidState, fault_active: bool) -> DisturbanceSample {
        if self.gate() == DisturbanceGate::Fault && !fault_active {
            return DisturbanceSample::default();
        }
        match self {
            Self::Zero => DisturbanceSample::default(),
            Self::ConstantBias { bias, .. } => DisturbanceSample::from_stacked(bias),
            Self::StateLinear { bias, velocity_gain, omega_gain, .. } => {
                let mut out = DisturbanceSample::from_stacked(bias);
                out.force += velocity_gain.component_mul(&s.velocity);
                out.torque += omega_gain.component_mul(&s.omega);
                out
            }
            Self::TiltAero { bias, drag, flapping, rate_gain, force_cap, torque_cap, .. } => {
                let base = DisturbanceSample::from_stacked(bias);
                let raw_force = base.force + drag.component_mul(&s.velocity);
                let horizontal = Vector3::new(s.velocity.x, s.velocity.y, 0.0);
                let raw_torque =
                    base.torque + *flapping * Vector3::z().cross(&horizontal) + rate_gain.component_mul(&s.omega);
                DisturbanceSample {
                    force: raw_force.map(|x| force_cap * (x / force_cap).tanh()),
                    torque: raw_torque.map(|x| torque_cap * (x / torque_cap).tanh()),
                }
            }
        }
    }
}

/// Look up a registered model by id and evaluate it.
pub fn synth_disturbance(
    model_id: &str,
    params: &DisturbanceParams,
    s: &RigidState,
    fault_active: bool,
) -> Result<DisturbanceSample, DynamicsError> {
    let p = DisturbanceParams { model: model_id.to_string(), ..params.clone() };
    Ok(GroundTruthDisturbance::from_params(&p)?.sample(s, fault_active))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{axis_angle, orthogonality_defect};
    use approx::assert_relative_eq;

    fn params() -> InertiaParams {
        InertiaParams::hexarotor()
    }

    fn hover_wrench(p: &InertiaParams) -> Wrench {
        Wrench::new(Vector3::zeros(), Vector3::new(0.0, 0.0, p.mass * p.gravity))
    }

    #[test]
    fn inertia_validation() {
        assert!(InertiaParams::new(0.0, Matrix3::identity(), 9.81).is_err());
        let asym = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(InertiaParams::new(1.0, asym, 9.81).is_err());
        assert!(InertiaParams::new(1.0, -Matrix3::identity(), 9.81).is_err());
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = params();
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, 2.0));
        let d = derivatives(&s, &hover_wrench(&p), &DisturbanceSample::default(), &p);
        assert_eq!(d.rotation, Matrix3::zeros());
        assert_eq!(d.position, Vector3::zeros());
        assert_eq!(d.omega, Vector3::zeros());
        assert!(d.velocity.norm() < 1e-15);
    }

    #[test]
    fn principal_axis_spin_is_steady() {
        let p = params();
        let s = RigidState { omega: Vector3::x(), ..Default::default() };
        let d = derivatives(&s, &hover_wrench(&p), &DisturbanceSample::default(), &p);
        assert!(d.omega.norm() < 1e-15);
    }

    #[test]
    fn rk4_hover_stays_put() {
        let p = params();
        let s = RigidState::at_rest(Vector3::new(1.0, 2.0, 3.0));
        let next = step_rk4(&s, &hover_wrench(&p), |_| DisturbanceSample::default(), 1e-3, &p).unwrap();
        assert!((next.position - s.position).norm() <= 1e-12);
        assert!(next.velocity.norm() <= 1e-12);
        assert!((next.rotation.matrix() - s.rotation.matrix()).norm() <= 1e-12);
    }

    #[test]
    fn rk4_free_fall_one_second() {
        let p = params();
        let mut s = RigidState::default();
        for _ in 0..1000 {
            s = step_rk4(&s, &Wrench::default(), |_| DisturbanceSample::default(), 1e-3, &p).unwrap();
        }
        assert_relative_eq!(s.position.z, -0.5 * p.gravity, epsilon = 1e-6);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let p = params();
        let s = RigidState::default();
        for dt in [0.0, -1e-3, 0.02] {
            let err = step_rk4(&s, &Wrench::default(), |_| DisturbanceSample::default(), dt, &p).unwrap_err();
            assert_eq!(err, DynamicsError::InvalidStep(dt));
        }
    }

    #[test]
    fn rk4_reports_blowup() {
        let p = params();
        let s = RigidState::default();
        let huge = Wrench::new(Vector3::new(f64::INFINITY, 0.0, 0.0), Vector3::zeros());
        let err = step_rk4(&s, &huge, |_| DisturbanceSample::default(), 1e-3, &p).unwrap_err();
        assert_eq!(err, DynamicsError::IntegrationBlowup);
    }

    /// One-step error against a fine-step reference should drop ~16× when dt halves
    /// (local error O(dt⁵) over a fixed horizon of a few steps ⇒ global O(dt⁴)).
    #[test]
    fn rk4_is_fourth_order() {
        let p = params();
        let s0 = RigidState {
            rotation: axis_angle(&Vector3::new(0.3, 1.0, 0.2), 0.4),
            position: Vector3::zeros(),
            omega: Vector3::new(2.0, -1.5, 3.0),
            velocity: Vector3::new(1.0, 0.5, -0.3),
        };
        let u = Wrench::new(Vector3::new(0.02, -0.01, 0.005), Vector3::new(0.3, -0.2, 25.0));
        let horizon = 0.08;
        let run = |dt: f64| {
            let n = (horizon / dt).round() as usize;
            let mut s = s0;
            for _ in 0..n {
                s = step_rk4(&s, &u, |_| DisturbanceSample::default(), dt, &p).unwrap();
            }
            s
        };
        let reference = run(1e-5);
        let err = |s: RigidState| (s.omega - reference.omega).norm() + (s.velocity - reference.velocity).norm();
        let e1 = err(run(0.01));
        let e2 = err(run(0.005));
        let ratio = e1 / e2;
        assert!((10.0..24.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn training_output_inverts_derivatives() {
        let p = params();
        let s = RigidState {
            rotation: axis_angle(&Vector3::new(1.0, 0.0, 1.0), 0.6),
            position: Vector3::new(0.1, 0.2, 0.3),
            omega: Vector3::new(0.3, -0.2, 0.5),
            velocity: Vector3::new(-0.4, 0.2, 0.1),
        };
        let u = Wrench::new(Vector3::new(0.01, 0.02, -0.03), Vector3::new(0.0, 0.0, 27.0));
        let zero = derivatives(&s, &u, &DisturbanceSample::default(), &p);
        assert!(training_output(&s, &zero, &u, &p).norm() <= 1e-12);
        let f = DisturbanceSample::from_stacked(&Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0));
        let d = derivatives(&s, &u, &f, &p);
        let y = training_output(&s, &d, &u, &p);
        assert!((y - Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)).norm() <= 1e-10);
    }

    #[test]
    fn rotated_axis_gravity_differs() {
        let p = params().with_convention(GravityConvention::RotatedAxis);
        let g = p.gravity_body(&RotationMatrix::identity());
        assert_relative_eq!(g.z, p.mass * p.gravity);
        let p = params();
        assert_relative_eq!(p.gravity_body(&RotationMatrix::identity()).z, -p.mass * p.gravity);
    }

    #[test]
    fn registered_models() {
        let s = RigidState::default();
        let base = DisturbanceParams::default();
        let zero = synth_disturbance("zero", &base, &s, true).unwrap();
        assert_eq!(zero.stacked(), Vector6::zeros());

        let bias = DisturbanceParams { bias: [0.3, 0.0, 0.0, 0.0, 0.0, 0.0], ..base.clone() };
        let f = synth_disturbance("constant-bias", &bias, &s, true).unwrap();
        assert_eq!(f.force, Vector3::new(0.3, 0.0, 0.0));
        assert_eq!(f.torque, Vector3::zeros());
        let gated = synth_disturbance("constant-bias", &bias, &s, false).unwrap();
        assert_eq!(gated.stacked(), Vector6::zeros());

        let aero = DisturbanceParams::tilt_aero_default();
        let hover = synth_disturbance("tilt-aero", &aero, &s, false).unwrap();
        assert_eq!(hover.stacked(), Vector6::zeros());

        let err = synth_disturbance("vortex-ring", &base, &s, true).unwrap_err();
        assert_eq!(err, DynamicsError::UnknownModel("vortex-ring".into()));
    }

    #[test]
    fn tilt_aero_is_capped_and_smooth() {
        let aero = GroundTruthDisturbance::from_params(&DisturbanceParams::tilt_aero_default()).unwrap();
        let fast = RigidState { velocity: Vector3::new(100.0, -80.0, 50.0), omega: Vector3::new(9.0, 9.0, 9.0), ..Default::default() };
        let f = aero.sample(&fast, true);
        assert!(f.force.amax() <= 3.0 + 1e-12);
        assert!(f.torque.amax() <= 0.25 + 1e-12);
        let a = aero.sample(&RigidState { velocity: Vector3::new(0.5, 0.0, 0.0), ..Default::default() }, true);
        let b = aero.sample(&RigidState { velocity: Vector3::new(0.5 + 1e-6, 0.0, 0.0), ..Default::default() }, true);
        assert!((a.stacked() - b.stacked()).norm() < 1e-5);
    }

    #[test]
    fn reprojection_keeps_orthogonality_over_long_runs() {
        let p = params();
        let mut s = RigidState { omega: Vector3::new(3.0, -2.0, 1.0), ..Default::default() };
        for _ in 0..10_000 {
            s = step_rk4(&s, &Wrench::default(), |_| DisturbanceSample::default(), 1e-3, &p).unwrap();
        }
        assert!(orthogonality_defect(s.rotation.matrix()) <= 1e-12);
    }
}
