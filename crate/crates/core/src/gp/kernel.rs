use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{GpError, OUTPUTS};
use crate::dynamics::RigidState;
use crate::se3::reproject;

/// Length of the state embedding: 9 rotation entries (row-major), p, ω, v.
pub const ENCODING_DIM: usize = 18;

/// Embeds `q = ((R, p), (ω, v))` as an 18-vector.
pub fn encode_state(s: &RigidState) -> DVector<f64> {
    let r = s.rotation.matrix();
    let mut x = DVector::zeros(ENCODING_DIM);
    for i in 0..3 {
        for j in 0..3 {
            x[3 * i + j] = r[(i, j)];
        }
    }
    x.rows_mut(9, 3).copy_from(&s.position);
    x.rows_mut(12, 3).copy_from(&s.omega);
    x.rows_mut(15, 3).copy_from(&s.velocity);
    x
}

/// Inverse of [`encode_state`]; the rotation block is reprojected onto SO(3).
pub fn decode_state(x: &DVector<f64>) -> Result<RigidState, GpError> {
    if x.len() != ENCODING_DIM {
        return Err(GpError::DimensionMismatch { expected: ENCODING_DIM, got: x.len() });
    }
    let r = nalgebra::Matrix3::from_row_slice(&x.as_slice()[0..9]);
    let rotation = reproject(&r).map_err(|e| GpError::Domain(e.to_string()))?;
    Ok(RigidState {
        rotation,
        position: Vector3::from_row_slice(&x.as_slice()[9..12]),
        omega: Vector3::from_row_slice(&x.as_slice()[12..15]),
        velocity: Vector3::from_row_slice(&x.as_slice()[15..18]),
    })
}

/// Per-block normalization of the state embedding. Distances are measured in
/// units of these scales times the per-dimension lengthscale multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingScales {
    pub rotation: f64,
    /// m
    pub position: f64,
    /// rad/s
    pub omega: f64,
    /// m/s
    pub velocity: f64,
}

impl Default for EncodingScales {
    fn default() -> Self {
        Self { rotation: 1.0, position: 20.0, omega: 3.0, velocity: 2.0 }
    }
}

impl EncodingScales {
    /// Lengthscale vector for the 18-dim embedding, `multiplier × scale`.
    pub fn lengthscales(&self, multiplier: f64) -> DVector<f64> {
        DVector::from_fn(ENCODING_DIM, |d, _| {
            multiplier
                * match d {
                    0..=8 => self.rotation,
                    9..=11 => self.position,
                    12..=14 => self.omega,
                    _ => self.velocity,
                }
        })
    }
}

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// One positive lengthscale per input dimension.
    pub lengthscales: DVector<f64>,
    /// σ_f²
    pub signal_var: f64,
    /// σ² of the additive observation noise
    pub noise_var: f64,
}

impl Hyperparams {
    pub fn new(lengthscales: DVector<f64>, signal_var: f64, noise_var: f64) -> Result<Self, GpError> {
        let h = Self { lengthscales, signal_var, noise_var };
        h.validate()?;
        Ok(h)
    }

    pub fn isotropic(dim: usize, lengthscale: f64, signal_var: f64, noise_var: f64) -> Result<Self, GpError> {
        Self::new(DVector::from_element(dim, lengthscale), signal_var, noise_var)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(GpError::InvalidHyperparams("lengthscales must be finite and > 0".into()));
        }
        if !ok(self.signal_var) {
            return Err(GpError::InvalidHyperparams(format!("signal variance {} must be > 0", self.signal_var)));
        }
        if !ok(self.noise_var) {
            return Err(GpError::InvalidHyperparams(format!("noise variance {} must be > 0", self.noise_var)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Packs `(ln ℓ_1..ln ℓ_d, ln σ_f², ln σ²)`.
    pub(crate) fn to_log(&self) -> DVector<f64> {
        let d = self.dim();
        let mut t = DVector::zeros(d + 2);
        for i in 0..d {
            t[i] = self.lengthscales[i].ln();
        }
        t[d] = self.signal_var.ln();
        t[d + 1] = self.noise_var.ln();
        t
    }

    pub(crate) fn from_log(t: &DVector<f64>) -> Self {
        let d = t.len() - 2;
        Self {
            lengthscales: DVector::from_fn(d, |i, _| t[i].exp()),
            signal_var: t[d].exp(),
            noise_var: t[d + 1].exp(),
        }
    }
}

/// `σ_f² exp(−½ Σ_d (a_d − b_d)² / ℓ_d²)`.
pub fn kernel_se(a: &DVector<f64>, b: &DVector<f64>, h: &Hyperparams) -> f64 {
    debug_assert_eq!(a.len(), h.dim());
    debug_assert_eq!(b.len(), h.dim());
    let mut r2 = 0.0;
    for d in 0..a.len() {
        let diff = (a[d] - b[d]) / h.lengthscales[d];
        r2 += diff * diff;
    }
    h.signal_var * (-0.5 * r2).exp()
}

/// Kernel assignment across the six outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputKernels {
    /// One kernel and one Gram factorization for all outputs.
    Shared(Hyperparams),
    /// One kernel per output, `(f_vx, f_vy, f_vz, f_ωx, f_ωy, f_ωz)`.
    PerOutput(Vec<Hyperparams>),
}

impl OutputKernels {
    pub fn validate(&self) -> Result<(), GpError> {
        match self {
            Self::Shared(h) => h.validate(),
            Self::PerOutput(hs) => {
                if hs.len() != OUTPUTS {
                    return Err(GpError::InvalidHyperparams(format!("expected {OUTPUTS} kernels, got {}", hs.len())));
                }
                let d = hs[0].dim();
                for h in hs {
                    h.validate()?;
                    if h.dim() != d {
                        return Err(GpError::InvalidHyperparams("per-output kernels disagree on input dimension".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn for_output(&self, j: usize) -> &Hyperparams {
        match self {
            Self::Shared(h) => h,
            Self::PerOutput(hs) => &hs[j],
        }
    }

    pub fn dim(&self) -> usize {
        self.for_output(0).dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::axis_angle;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_reference_values() {
        let h = Hyperparams::isotropic(1, 1.0, 1.0, 0.1).unwrap();
        let a = DVector::from_element(1, 0.3);
        let b = DVector::from_element(1, 1.3);
        assert_relative_eq!(kernel_se(&a, &b, &h), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(kernel_se(&b, &a, &h), 0.606_530_659_712_633, epsilon = 1e-12);
        let h2 = Hyperparams::isotropic(1, 1.0, 2.5, 0.1).unwrap();
        assert_eq!(kernel_se(&a, &a, &h2), 2.5);
        let far = DVector::from_element(1, 1e6);
        assert_eq!(kernel_se(&a, &far, &h2), 0.0);
    }

    #[test]
    fn hyperparams_reject_nonpositive() {
        assert!(Hyperparams::isotropic(2, 0.0, 1.0, 0.1).is_err());
        assert!(Hyperparams::isotropic(2, 1.0, -1.0, 0.1).is_err());
        assert!(Hyperparams::isotropic(2, 1.0, 1.0, 0.0).is_err());
        assert!(Hyperparams::isotropic(2, f64::NAN, 1.0, 0.1).is_err());
    }

    #[test]
    fn log_packing_round_trips() {
        let h = Hyperparams::new(DVector::from_vec(vec![0.5, 2.0]), 1.5, 0.01).unwrap();
        let back = Hyperparams::from_log(&h.to_log());
        assert!((back.lengthscales - h.lengthscales).norm() < 1e-14);
        assert_relative_eq!(back.signal_var, 1.5, epsilon = 1e-14);
        assert_relative_eq!(back.noise_var, 0.01, epsilon = 1e-16);
    }

    #[test]
    fn encoding_round_trip() {
        let s = RigidState {
            rotation: axis_angle(&Vector3::new(0.2, -0.4, 1.0), 0.8),
            position: Vector3::new(1.0, 2.0, 3.0),
            omega: Vector3::new(0.1, 0.2, 0.3),
            velocity: Vector3::new(-1.0, 0.5, 0.25),
        };
        let x = encode_state(&s);
        assert_eq!(x.len(), ENCODING_DIM);
        assert_eq!(x[1], s.rotation.matrix()[(0, 1)]);
        let back = decode_state(&x).unwrap();
        assert!((back.rotation.matrix() - s.rotation.matrix()).norm() < 1e-12);
        assert_eq!(back.position, s.position);
        assert_eq!(back.omega, s.omega);
        assert_eq!(back.velocity, s.velocity);
        assert!(decode_state(&DVector::zeros(5)).is_err());
    }
}
