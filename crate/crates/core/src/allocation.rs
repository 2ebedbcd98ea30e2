//! Hexarotor geometry, the 4×6 allocation matrix, pseudoinverse mixing with
//! saturation, failure reconfiguration by rotor tilting, and the attainable
//! torque envelope.

use nalgebra::{DMatrix, DVector, Matrix4x6, Matrix6x4, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::InertiaParams;

pub const ROTORS: usize = 6;
pub const PWM_MAX: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("allocation matrix has rank {0}, need 4")]
    RankDeficient(usize),
    #[error("rotor index {0} out of range 1..=6")]
    BadRotor(usize),
    #[error("rotor {0} already failed; multiple failures are not supported")]
    SecondFailure(usize),
    #[error("direction must be a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorSpec {
    /// Body-frame hub position, m.
    pub position: Vector3<f64>,
    /// Nominal (undeployed) thrust axis.
    pub axis: Vector3<f64>,
    /// +1 or −1; sign of the reaction torque along the thrust axis.
    pub spin: f64,
    /// N per % PWM.
    pub c_f: f64,
    /// N·m per % PWM.
    pub c_tau: f64,
    pub tiltable: bool,
    /// Deployed tilt about the arm, rad.
    pub tilt: f64,
}

impl RotorSpec {
    /// Thrust axis after rotating the nominal axis about the arm direction by
    /// `tilt`: `cos θ·n + sin θ·(r̂ × n)`.
    pub fn thrust_axis(&self) -> Vector3<f64> {
        self.axis_with_tilt(self.tilt)
    }

    pub fn axis_with_tilt(&self, tilt: f64) -> Vector3<f64> {
        if tilt == 0.0 {
            return self.axis;
        }
        let arm = Vector3::new(self.position.x, self.position.y, 0.0);
        let radial = if arm.norm() > 0.0 { arm.normalize() } else { Vector3::x() };
        let side = radial.cross(&self.axis);
        (tilt.cos() * self.axis + tilt.sin() * side).normalize()
    }
}

/// Which rotor tilts, and by how much, when a given rotor fails (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltPairing {
    pub failed: usize,
    pub tilt_rotor: usize,
    /// rad
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotorLayout {
    pub rotors: [RotorSpec; ROTORS],
    pub failed: Option<usize>,
    pub deployed: Option<(usize, f64)>,
    pub pairing: Vec<TiltPairing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    /// Hub distance from the center, m.
    pub arm_length: f64,
    /// N at 100 % PWM per rotor.
    pub max_thrust: f64,
    /// Drag-torque to thrust ratio, m.
    pub torque_ratio: f64,
    /// Angle of rotor 1 from the body x axis, deg.
    pub first_rotor_deg: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self { arm_length: 0.275, max_thrust: 9.81, torque_ratio: 0.016, first_rotor_deg: 30.0 }
    }
}

/// Default failure → tilt table with 0-based indices: rotor 1 covers
/// failures of rotors 3 and 5, rotor 4 covers rotors 2 and 6.
pub fn default_pairing(angle_deg: f64) -> Vec<TiltPairing> {
    let a = angle_deg.to_radians();
    vec![
        TiltPairing { failed: 2, tilt_rotor: 0, angle: -a },
        TiltPairing { failed: 4, tilt_rotor: 0, angle: -a },
        TiltPairing { failed: 1, tilt_rotor: 3, angle: a },
        TiltPairing { failed: 5, tilt_rotor: 3, angle: a },
    ]
}

impl RotorLayout {
    /// Flat regular hexagon with alternating spins, rotors 1 and 4 tiltable.
    pub fn hexarotor(geometry: &GeometryParams, pairing: Vec<TiltPairing>) -> Result<Self, AllocationError> {
        let c_f = geometry.max_thrust / PWM_MAX;
        let rotors = std::array::from_fn(|i| {
            let psi = (geometry.first_rotor_deg + 60.0 * i as f64).to_radians();
            RotorSpec {
                position: Vector3::new(psi.cos(), psi.sin(), 0.0) * geometry.arm_length,
                axis: Vector3::z(),
                spin: if i % 2 == 0 { 1.0 } else { -1.0 },
                c_f,
                c_tau: c_f * geometry.torque_ratio,
                tiltable: i == 0 || i == 3,
                tilt: 0.0,
            }
        });
        let layout = Self { rotors, failed: None, deployed: None, pairing };
        layout.validate()?;
        Ok(layout)
    }

    pub fn default_hexarotor() -> Self {
        Self::hexarotor(&GeometryParams::default(), default_pairing(25.0)).expect("default layout is valid")
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        for (i, r) in self.rotors.iter().enumerate() {
            if (r.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(AllocationError::InvalidLayout(format!("rotor {} axis is not unit", i + 1)));
            }
            if !(r.c_f > 0.0 && r.c_tau > 0.0) {
                return Err(AllocationError::InvalidLayout(format!("rotor {} coefficients must be positive", i + 1)));
            }
            if r.spin.abs() != 1.0 {
                return Err(AllocationError::InvalidLayout(format!("rotor {} spin must be ±1", i + 1)));
            }
        }
        for p in &self.pairing {
            if p.failed >= ROTORS || p.tilt_rotor >= ROTORS {
                return Err(AllocationError::InvalidLayout("pairing index out of range".into()));
            }
            if p.failed == p.tilt_rotor {
                return Err(AllocationError::InvalidLayout(format!("rotor {} cannot tilt for itself", p.failed + 1)));
            }
            if !self.rotors[p.tilt_rotor].tiltable {
                return Err(AllocationError::InvalidLayout(format!("rotor {} is not tiltable", p.tilt_rotor + 1)));
            }
        }
        if self.rotors.iter().filter(|r| r.tiltable).count() > 2 {
            return Err(AllocationError::InvalidLayout("at most two rotors may be tiltable".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.failed != Some(i)
    }

    pub fn pairing_for(&self, failed: usize) -> Option<TiltPairing> {
        self.pairing.iter().copied().find(|p| p.failed == failed)
    }
}

/// `u` as the fraction of full-scale actuation delivered by the plant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum PwmCurve {
    #[default]
    Linear,
    /// `(1 − b)u + b·u²/100`; equal to the linear curve at 0 and 100 %.
    Quadratic { blend: f64 },
}

impl PwmCurve {
    pub fn effective(&self, u: f64) -> f64 {
        match *self {
            Self::Linear => u,
            Self::Quadratic { blend } => (1.0 - blend) * u + blend * u * u / PWM_MAX,
        }
    }
}

/// Plant-side actuator model: PWM nonlinearity and deployment error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorModel {
    pub pwm_curve: PwmCurve,
    /// Added to any deployed tilt, deg.
    pub tilt_error_deg: f64,
}

/// Body torque and force produced by `pwm` on the plant.
///
/// Unlike the allocation matrix, this keeps every force component, so tilted
/// rotors also push sideways. Rotors in `dead` produce nothing.
pub fn plant_wrench(
    layout: &RotorLayout,
    pwm: &Vector6<f64>,
    dead: Option<usize>,
    actuator: &ActuatorModel,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut torque = Vector3::zeros();
    let mut force = Vector3::zeros();
    for (i, r) in layout.rotors.iter().enumerate() {
        if dead == Some(i) {
            continue;
        }
        let tilt = if r.tilt != 0.0 { r.tilt + actuator.tilt_error_deg.to_radians() } else { 0.0 };
        let n = r.axis_with_tilt(tilt);
        let g = actuator.pwm_curve.effective(pwm[i].clamp(0.0, PWM_MAX));
        let f = r.c_f * g * n;
        force += f;
        torque += r.position.cross(&f) + r.spin * r.c_tau * g * n;
    }
    (torque, force)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    /// Rows `(τ_x, τ_y, τ_z, f_z)`.
    pub a: Matrix4x6<f64>,
    pub pinv: Matrix6x4<f64>,
    pub rank: usize,
    pub singular_values: Vector4<f64>,
}

const RANK_TOL: f64 = 1e-9;

pub fn build_a(layout: &RotorLayout) -> AllocationMatrix {
    let mut a = Matrix4x6::zeros();
    for (i, r) in layout.rotors.iter().enumerate() {
        if !layout.is_active(i) {
            continue;
        }
        let n = r.thrust_axis();
        let tau = r.position.cross(&(r.c_f * n)) + r.spin * r.c_tau * n;
        a.set_column(i, &Vector4::new(tau.x, tau.y, tau.z, r.c_f * n.z));
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax.max(1e-300)).count();
    let pinv = svd.pseudo_inverse(RANK_TOL * smax).unwrap_or_else(|_| Matrix6x4::zeros());
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|x, y| y.total_cmp(x));
    AllocationMatrix { a, pinv, rank, singular_values: sv }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwmCommand {
    /// Clamped command, %.
    pub u: Vector6<f64>,
    /// Pseudoinverse solution before clamping.
    pub raw: Vector6<f64>,
    pub saturated: [bool; ROTORS],
}

impl PwmCommand {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// `u = clamp(A†[τ; f_z], 0, 100)` with the failed rotor forced to zero.
pub fn allocate(
    alloc: &AllocationMatrix,
    layout: &RotorLayout,
    torque: &Vector3<f64>,
    f_z: f64,
) -> Result<PwmCommand, AllocationError> {
    if alloc.rank < 4 {
        return Err(AllocationError::RankDeficient(alloc.rank));
    }
    let w = Vector4::new(torque.x, torque.y, torque.z, f_z);
    let raw = alloc.pinv * w;
    let mut u = Vector6::zeros();
    let mut saturated = [false; ROTORS];
    for i in 0..ROTORS {
        if !layout.is_active(i) {
            continue;
        }
        u[i] = raw[i].clamp(0.0, PWM_MAX);
        saturated[i] = raw[i] < 0.0 || raw[i] > PWM_MAX;
        if saturated[i] {
            log::trace!("rotor {} saturated at {:.1}%", i + 1, raw[i]);
        }
    }
    Ok(PwmCommand { u, raw, saturated })
}

/// Marks rotor `failed` (1-based) as lost and deploys its paired tilt.
pub fn reconfigure(layout: &RotorLayout, failed: usize) -> Result<(RotorLayout, AllocationMatrix), AllocationError> {
    if !(1..=ROTORS).contains(&failed) {
        return Err(AllocationError::BadRotor(failed));
    }
    if let Some(f) = layout.failed {
        return Err(AllocationError::SecondFailure(f + 1));
    }
    let idx = failed - 1;
    let mut next = layout.clone();
    next.failed = Some(idx);
    if let Some(p) = layout.pairing_for(idx) {
        next.rotors[p.tilt_rotor].tilt = p.angle;
        next.deployed = Some((p.tilt_rotor, p.angle));
    }
    let a = build_a(&next);
    Ok((next, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeMethod {
    /// Exact feasibility by enumerating vertices of the null-space polytope.
    #[default]
    Exact,
    /// Feasible when the clamped pseudoinverse solution needs no clamping.
    PinvClamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    /// Largest α with `[α·d; f_z]` attainable, N·m.
    pub alpha: f64,
    pub method: EnvelopeMethod,
    /// False when even the pure-thrust wrench is unattainable.
    pub feasible_at_zero: bool,
}

fn feasible_exact(alloc: &AllocationMatrix, layout: &RotorLayout, w: &Vector4<f64>) -> bool {
    let active: Vec<usize> = (0..ROTORS).filter(|&i| layout.is_active(i)).collect();
    let n = active.len();
    let a = DMatrix::from_fn(4, n, |r, c| alloc.a[(r, active[c])]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let Ok(pinv) = svd.clone().pseudo_inverse(RANK_TOL * smax) else { return false };
    let up = &pinv * DVector::from_column_slice(w.as_slice());
    if (&a * &up - DVector::from_column_slice(w.as_slice())).amax() > 1e-9 * (1.0 + w.amax()) {
        return false;
    }
    // null-space basis from the full SVD of Aᵀ A
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let null: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k].abs() <= 1e-12 * scale)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    let k = null.len();
    let ok = |u: &DVector<f64>| u.iter().all(|&x| (-1e-9..=PWM_MAX + 1e-9).contains(&x));
    if k == 0 {
        return ok(&up);
    }
    let nmat = DMatrix::from_columns(&null);
    // constraints: 0 ≤ up_i + N_i t ≤ 100 for each active rotor
    let bounds: Vec<(usize, f64)> = (0..n).flat_map(|i| [(i, -up[i]), (i, PWM_MAX - up[i])]).collect();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let m = DMatrix::from_fn(k, k, |r, c| nmat[(bounds[idx[r]].0, c)]);
        let rhs = DVector::from_fn(k, |r, _| bounds[idx[r]].1);
        if let Some(t) = m.lu().solve(&rhs) {
            if ok(&(&up + &nmat * t)) {
                return true;
            }
        }
        // next k-combination of the 2n constraint rows
        let total = bounds.len();
        let mut i = k;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if idx[i] < total - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn feasible(alloc: &AllocationMatrix, layout: &RotorLayout, w: &Vector4<f64>, method: EnvelopeMethod) -> bool {
    match method {
        EnvelopeMethod::Exact => feasible_exact(alloc, layout, w),
        EnvelopeMethod::PinvClamp => {
            let u = alloc.pinv * w;
            (0..ROTORS).all(|i| !layout.is_active(i) || (-1e-9..=PWM_MAX + 1e-9).contains(&u[i]))
                && (alloc.a * u - w).amax() <= 1e-9 * (1.0 + w.amax())
        }
    }
}

/// Largest torque magnitude attainable along `direction` while holding `f_z`.
pub fn torque_envelope(
    alloc: &AllocationMatrix,
    layout: &RotorLayout,
    f_z: f64,
    direction: &Vector3<f64>,
    method: EnvelopeMethod,
) -> Result<Envelope, AllocationError> {
    let dn = direction.norm();
    if (dn - 1.0).abs() > 1e-9 {
        return Err(AllocationError::NotUnit(dn));
    }
    if alloc.rank < 4 {
        return Err(AllocationError::RankDeficient(alloc.rank));
    }
    let w = |alpha: f64| Vector4::new(alpha * direction.x, alpha * direction.y, alpha * direction.z, f_z);
    if !feasible(alloc, layout, &w(0.0), method) {
        return Ok(Envelope { alpha: 0.0, method, feasible_at_zero: false });
    }
    let mut lo = 0.0;
    let mut hi = 0.05;
    while feasible(alloc, layout, &w(hi), method) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Ok(Envelope { alpha: lo, method, feasible_at_zero: true });
        }
    }
    while hi - lo > 1e-7 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if feasible(alloc, layout, &w(mid), method) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Envelope { alpha: lo, method, feasible_at_zero: true })
}

/// `n` roughly uniform unit vectors on the sphere (Fibonacci lattice).
pub fn sphere_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            Vector3::new(r * th.cos(), r * th.sin(), y)
        })
        .collect()
}

/// Smallest envelope over the given directions, with the minimizing direction.
pub fn worst_direction(
    alloc: &AllocationMatrix,
    layout: &RotorLayout,
    f_z: f64,
    directions: &[Vector3<f64>],
    method: EnvelopeMethod,
) -> Result<(f64, Vector3<f64>), AllocationError> {
    let mut best = (f64::INFINITY, Vector3::z());
    for d in directions {
        let e = torque_envelope(alloc, layout, f_z, d, method)?;
        if e.alpha < best.0 {
            best = (e.alpha, *d);
        }
    }
    Ok(best)
}

/// Per-rotor hover PWM for the layout, `A†[0; mg]`.
pub fn hover_pwm(alloc: &AllocationMatrix, layout: &RotorLayout, params: &InertiaParams) -> Result<PwmCommand, AllocationError> {
    allocate(alloc, layout, &Vector3::zeros(), params.mass * params.gravity)
}
