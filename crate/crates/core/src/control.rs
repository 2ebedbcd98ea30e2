//! Tracking laws on SE(3) with additive disturbance compensation, the
//! outer-to-inner loop conversion, ultimate-bound radii and the invariance
//! test on the attitude error.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{InertiaParams, RigidState};
use crate::se3::{chi_error, chi_rate, hat, psi_error, RotationMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    /// Outer (position) loop rate, Hz.
    pub position_hz: f64,
    /// Inner (attitude) loop rate, Hz.
    pub attitude_hz: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self { k1: 2.0, k2: 4.0, k3: 8.0, k4: 0.5, k5: 2.0, position_hz: 20.0, attitude_hz: 200.0 }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, k) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3), ("k4", self.k4), ("k5", self.k5)] {
            if !(k.is_finite() && k > 0.0) {
                return Err(ControlError::InvalidGains(format!("{name} = {k} must be positive")));
            }
        }
        if self.k5 <= 1.0 {
            return Err(ControlError::InvalidGains(format!("k5 = {} must exceed 1", self.k5)));
        }
        if !(self.position_hz > 0.0 && self.attitude_hz.is_finite()) {
            return Err(ControlError::InvalidGains("loop rates must be positive".into()));
        }
        if self.attitude_hz < self.position_hz {
            return Err(ControlError::InvalidGains(format!(
                "attitude rate {} Hz below position rate {} Hz",
                self.attitude_hz, self.position_hz
            )));
        }
        Ok(())
    }

    /// `k₆ = max_ρ min{(k₅−1)ρ/2, (k₅−1)/(2ρ)} = (k₅−1)/2`.
    pub fn k6(&self) -> f64 {
        0.5 * (self.k5 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionErrorState {
    /// `Rᵀ(p − p_d)`, m
    pub e: Vector3<f64>,
    /// `v − v_d`, m/s
    pub z: Vector3<f64>,
}

impl PositionErrorState {
    pub fn zeta(&self) -> Vector6<f64> {
        Vector6::new(self.e.x, self.e.y, self.e.z, self.z.x, self.z.y, self.z.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeErrorState {
    pub psi: f64,
    pub chi: Vector3<f64>,
    /// `ω − ω_d`, rad/s
    pub omega_err: Vector3<f64>,
}

impl AttitudeErrorState {
    pub fn eta(&self) -> Vector6<f64> {
        Vector6::new(self.chi.x, self.chi.y, self.chi.z, self.omega_err.x, self.omega_err.y, self.omega_err.z)
    }
}

/// Desired body velocity `v_d = −k₁e + Rᵀṗ_d`.
fn desired_velocity(s: &RigidState, e: &Vector3<f64>, pdot_d: &Vector3<f64>, k1: f64) -> Vector3<f64> {
    -k1 * e + s.rotation.inverse() * pdot_d
}

pub fn position_error(s: &RigidState, p_d: &Vector3<f64>, pdot_d: &Vector3<f64>, gains: &Gains) -> PositionErrorState {
    let e = s.rotation.inverse() * (s.position - p_d);
    let z = s.velocity - desired_velocity(s, &e, pdot_d, gains.k1);
    PositionErrorState { e, z }
}

/// Body-frame force command `u₂`, excluding gravity compensation.
///
/// `u₂ = −k₂z − e + ω×mv + m·v̇_d − f̂_v` with
/// `m·v̇_d = −k₁m(v − ω×e − Rᵀṗ_d) − m·ω×Rᵀṗ_d`, which follows from
/// `ė = −ω×e + v − Rᵀṗ_d`.
pub fn position_law(
    s: &RigidState,
    p_d: &Vector3<f64>,
    pdot_d: &Vector3<f64>,
    params: &InertiaParams,
    gains: &Gains,
    gp_mean_fv: &Vector3<f64>,
) -> Vector3<f64> {
    let m = params.mass;
    let err = position_error(s, p_d, pdot_d, gains);
    let w = hat(&s.omega);
    let pdot_body = s.rotation.inverse() * pdot_d;
    let m_vd_dot = -gains.k1 * m * (s.velocity - w * err.e - pdot_body) - m * w * pdot_body;
    -gains.k2 * err.z - err.e + m * s.omega.cross(&s.velocity) + m_vd_dot - gp_mean_fv
}

pub fn attitude_error(s: &RigidState, r_d: &RotationMatrix, gains: &Gains) -> AttitudeErrorState {
    let chi = chi_error(&s.rotation, r_d);
    AttitudeErrorState { psi: psi_error(&s.rotation, r_d), chi, omega_err: s.omega + gains.k3 * chi }
}

/// Body torque command `u₁ = −k₄Ω − k₅χ + ω×Jω − k₃Jχ̇ − f̂_ω` with `ω_d = −k₃χ`
/// and `R_d` held constant between outer-loop updates.
pub fn attitude_law(
    s: &RigidState,
    r_d: &RotationMatrix,
    gains: &Gains,
    inertia: &Matrix3<f64>,
    gp_mean_fw: &Vector3<f64>,
) -> Vector3<f64> {
    let err = attitude_error(s, r_d, gains);
    let chi_dot = chi_rate(&s.rotation, r_d, &s.omega);
    -gains.k4 * err.omega_err - gains.k5 * err.chi + s.omega.cross(&(inertia * s.omega))
        - gains.k3 * inertia * chi_dot
        - gp_mean_fw
}

/// Fraction of `mg` below which the commanded force direction is ignored.
pub const DEGENERATE_FORCE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSetpoint {
    pub r_d: RotationMatrix,
    /// N
    pub thrust: f64,
    pub degenerate: bool,
}

/// Attitude and collective thrust realizing a world-frame force command.
///
/// The third column of `R_d` is aligned with the force and the heading is
/// chosen as close to `yaw_d` as possible. Near-zero forces and forces lying
/// along the heading direction keep `previous` and set `degenerate`.
pub fn outer_to_inner(
    f_des_world: &Vector3<f64>,
    yaw_d: f64,
    params: &InertiaParams,
    previous: &RotationMatrix,
) -> InnerSetpoint {
    let norm = f_des_world.norm();
    let hold = InnerSetpoint { r_d: *previous, thrust: norm, degenerate: true };
    if !(norm > DEGENERATE_FORCE_FRACTION * params.mass * params.gravity) {
        return hold;
    }
    let b3 = f_des_world / norm;
    let b1c = Vector3::new(yaw_d.cos(), yaw_d.sin(), 0.0);
    let b2 = b3.cross(&b1c);
    let n2 = b2.norm();
    if n2 < 1e-6 {
        return hold;
    }
    let b2 = b2 / n2;
    let b1 = b2.cross(&b3);
    let r = Matrix3::from_columns(&[b1, b2, b3]);
    InnerSetpoint { r_d: RotationMatrix::from_matrix_unchecked(r), thrust: norm, degenerate: false }
}

/// Lower and upper constants of a quadratic Lyapunov sandwich.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lower: f64,
    pub upper: f64,
    /// `(upper, lower)`, for diagnostics.
    pub swapped: (f64, f64),
}

/// `½min{1, m} ‖ζ‖² ≤ ½‖e‖² + ½m‖z‖² ≤ ½max{1, m} ‖ζ‖²`.
pub fn position_sandwich(mass: f64) -> Sandwich {
    let lower = 0.5 * mass.min(1.0);
    let upper = 0.5 * mass.max(1.0);
    Sandwich { lower, upper, swapped: (upper, lower) }
}

/// Sandwich for the attitude function `Ψ + ½ΩᵀJΩ` given `c₁‖χ‖² ≤ Ψ ≤ c₂‖χ‖²`.
pub fn attitude_sandwich(lambda_min: f64, lambda_max: f64, c1: f64, c2: f64) -> Sandwich {
    let lower = c1.min(0.5 * lambda_min);
    let upper = c2.max(0.5 * lambda_max);
    Sandwich { lower, upper, swapped: (upper, lower) }
}

/// Ultimate radius for `‖ζ‖`: `√(Λ_hi/Λ_lo) · max ρ̄ / min{k₁, k₂}`.
pub fn ultimate_bound_position(gains: &Gains, mass: f64, max_rho: f64) -> f64 {
    let s = position_sandwich(mass);
    (s.upper / s.lower).sqrt() * max_rho.max(0.0) / gains.k1.min(gains.k2)
}

/// Ultimate radius for `‖η‖`: `√(K_hi/K_lo) · max ρ̄ / min{k₃, k₄, k₆}`.
pub fn ultimate_bound_attitude(gains: &Gains, inertia: &Matrix3<f64>, c1: f64, c2: f64, max_rho: f64) -> f64 {
    let eig = inertia.symmetric_eigenvalues();
    let s = attitude_sandwich(eig.min(), eig.max(), c1, c2);
    let kmin = gains.k3.min(gains.k4).min(gains.k6());
    (s.upper / s.lower).sqrt() * max_rho.max(0.0) / kmin
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltimateBounds {
    /// Radius for `‖ζ‖`.
    pub b_n: f64,
    /// Radius for `‖η‖`.
    pub c_n: f64,
    /// Time after which the radii apply, s.
    pub t_settle: f64,
    pub delta: f64,
}

/// Initial conditions from which `Ψ < 2` is guaranteed to persist:
/// `Ψ(R₀, R_d) < 2` and `‖Ω₀‖² < (2 − Ψ)/λ_min(J)`.
pub fn invariance_check(r0: &RotationMatrix, omega0: &Vector3<f64>, r_d: &RotationMatrix, inertia: &Matrix3<f64>) -> bool {
    let psi = psi_error(r0, r_d);
    let lambda_min = inertia.symmetric_eigenvalues().min();
    psi < 2.0 && omega0.norm_squared() < (2.0 - psi) / lambda_min
}
