//! Rotation and skew-matrix algebra on SO(3)/SE(3) plus the attitude error
//! functions shared by the dynamics, the learner and the controllers.
//!
//! Rotations are carried as [`nalgebra::Rotation3`]; everything else is plain
//! `nalgebra` vectors and matrices. All angles are in radians, all frames are
//! right-handed and the body z-axis points up through the rotor plane.

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Vector3, Vector6};
use thiserror::Error;

/// Attitude of the vehicle, body-to-world.
pub type RotationMatrix = Rotation3<f64>;

/// Tolerance used to decide whether a matrix is skew-symmetric.
pub const SKEW_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not skew-symmetric (‖M + Mᵀ‖_F = {0:e})")]
    NotSkew(f64),
    #[error("cannot reproject a matrix with det = {0:e} onto SO(3)")]
    NotReprojectable(f64),
}

/// Body-frame twist ξ = [ωᵀ, vᵀ]ᵀ.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyTwist {
    /// Angular velocity, rad/s.
    pub omega: Vector3<f64>,
    /// Linear velocity, m/s.
    pub velocity: Vector3<f64>,
}

impl BodyTwist {
    pub fn new(omega: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self { omega, velocity }
    }

    /// Stacked `[ω; v]`.
    pub fn stacked(&self) -> Vector6<f64> {
        let mut xi = Vector6::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        xi.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        xi
    }

    pub fn from_stacked(xi: &Vector6<f64>) -> Self {
        Self {
            omega: xi.fixed_rows::<3>(0).into_owned(),
            velocity: xi.fixed_rows::<3>(3).into_owned(),
        }
    }
}

/// `ω ↦ S(ω)`, the skew matrix with `S(ω)x = ω × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds
/// [`SKEW_TOLERANCE`]; the antisymmetric part is averaged out of both
/// triangles.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, Se3Error> {
    let asym = (m + m.transpose()).norm();
    if asym > SKEW_TOLERANCE {
        return Err(Se3Error::NotSkew(asym));
    }
    Ok(vee_unchecked(m))
}

/// [`vee`] of the skew part of `m`, without the symmetry check.
pub(crate) fn vee_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `ξ ↦ S̆(ξ) ∈ se(3)`.
pub fn breve(xi: &BodyTwist) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.omega));
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.velocity);
    out
}

/// Homogeneous pose `G = [R p; 0 1]`.
pub fn pose_matrix(rotation: &RotationMatrix, position: &Vector3<f64>) -> Matrix4<f64> {
    let mut g = Matrix4::identity();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation.matrix());
    g.fixed_view_mut::<3, 1>(0, 3).copy_from(position);
    g
}

/// Coriolis block matrix `D(ω, v) = [−S(ω) −S(v); 0 −S(ω)]`.
pub fn d_matrix(omega: &Vector3<f64>, velocity: &Vector3<f64>) -> Matrix6<f64> {
    let mut d = Matrix6::zeros();
    let sw = hat(omega);
    d.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-sw));
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(velocity)));
    d.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-sw));
    d
}

/// Scalar attitude error `Ψ(R, R_d) = ½ Tr(I − R_dᵀR) ∈ [0, 2]`.
pub fn psi_error(r: &RotationMatrix, rd: &RotationMatrix) -> f64 {
    let tr = (rd.matrix().transpose() * r.matrix()).trace();
    (0.5 * (3.0 - tr)).clamp(0.0, 2.0)
}

/// Vector attitude error `χ(R, R_d) = ½ S⁻¹(R_dᵀR − RᵀR_d)`.
///
/// For `R_dᵀR = exp(θ S(a))` this equals `sin θ · a`. On `Ψ ≤ 1` the pair
/// satisfies `½‖χ‖² ≤ Ψ ≤ ‖χ‖²`, see [`CHI_PSI_LOWER`] and [`CHI_PSI_UPPER`].
pub fn chi_error(r: &RotationMatrix, rd: &RotationMatrix) -> Vector3<f64> {
    let q = rd.matrix().transpose() * r.matrix();
    0.5 * vee_unchecked(&(q - q.transpose()))
}

/// Time derivative of χ for a constant `R_d` and body rate `ω`:
/// `χ̇ = ½ S⁻¹(R_dᵀR S(ω) + S(ω) RᵀR_d)`.
pub fn chi_rate(r: &RotationMatrix, rd: &RotationMatrix, omega: &Vector3<f64>) -> Vector3<f64> {
    let q = rd.matrix().transpose() * r.matrix();
    let w = hat(omega);
    0.5 * vee_unchecked(&(q * w + w * q.transpose()))
}

/// Lower sandwich constant `c₁` in `c₁‖χ‖² ≤ Ψ`, certified on `Ψ ≤ 1`.
pub const CHI_PSI_LOWER: f64 = 0.5;
/// Upper sandwich constant `c₂` in `Ψ ≤ c₂‖χ‖²`, certified on `Ψ ≤ 1`.
pub const CHI_PSI_UPPER: f64 = 1.0;
/// Largest Ψ on which the (c₁, c₂) pair above is certified.
pub const CHI_PSI_CERTIFIED_PSI: f64 = 1.0;

/// Nearest rotation to `m` in the Frobenius sense (orthogonal polar factor).
pub fn reproject(m: &Matrix3<f64>) -> Result<RotationMatrix, Se3Error> {
    let det = m.determinant();
    if !(det.is_finite() && det > 0.0) {
        return Err(Se3Error::NotReprojectable(det));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Se3Error::NotReprojectable(det)),
    };
    Ok(Rotation3::from_matrix_unchecked(u * v_t))
}

/// `‖RᵀR − I‖_F`.
pub fn orthogonality_defect(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Rotation by `angle` about the unit axis `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> RotationMatrix {
    Rotation3::from_scaled_axis(axis.normalize() * angle)
}

/// Exponential map `exp(S(φ))` for a rotation vector `φ`.
pub fn exp_so3(phi: &Vector3<f64>) -> RotationMatrix {
    Rotation3::from_scaled_axis(*phi)
}
