use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("unknown trajectory `{0}` (expected hover, figure8 or waypoint-loop)")]
    UnknownId(String),
    #[error("invalid trajectory parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// `hover`, `figure8` or `waypoint-loop`.
    pub kind: String,
    /// Hover point, figure-8 center, m.
    pub center: [f64; 3],
    /// Figure-8 extent along x, m.
    pub width: f64,
    /// Figure-8 extent along y, m.
    pub height: f64,
    /// Figure-8 period, s.
    pub period: f64,
    /// rad
    pub yaw: f64,
    pub waypoints: Vec<[f64; 3]>,
    /// Time between consecutive waypoints, s.
    pub segment_time: f64,
    /// Initial vehicle position relative to the reference at t = 0, m.
    pub initial_offset: [f64; 3],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            kind: "hover".into(),
            center: [0.0, 0.0, 1.5],
            width: 2.0,
            height: 1.0,
            period: 20.0,
            yaw: 0.0,
            waypoints: vec![[0.0, 0.0, 1.5], [1.0, 0.0, 1.5], [1.0, 1.0, 2.0], [0.0, 1.0, 1.5]],
            segment_time: 4.0,
            initial_offset: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub p: Vector3<f64>,
    pub pdot: Vector3<f64>,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Hover { p: Vector3<f64>, yaw: f64 },
    /// `(c_x + a sin Ωt, c_y + b sin 2Ωt, c_z)`
    Figure8 { center: Vector3<f64>, a: f64, b: f64, omega: f64, yaw: f64 },
    /// Closed loop through the waypoints with minimum-jerk segments.
    WaypointLoop { points: Vec<Vector3<f64>>, segment_time: f64, yaw: f64 },
}

impl TrajectoryConfig {
    pub fn build(&self) -> Result<Trajectory, TrajectoryError> {
        let center = Vector3::from_row_slice(&self.center);
        if !center.iter().all(|v| v.is_finite()) || !self.yaw.is_finite() {
            return Err(TrajectoryError::Invalid("center and yaw must be finite".into()));
        }
        match self.kind.as_str() {
            "hover" => Ok(Trajectory::Hover { p: center, yaw: self.yaw }),
            "figure8" => {
                if !(self.period > 0.0 && self.width >= 0.0 && self.height >= 0.0) {
                    return Err(TrajectoryError::Invalid("figure8 needs period > 0 and non-negative extent".into()));
                }
                Ok(Trajectory::Figure8 {
                    center,
                    a: 0.5 * self.width,
                    b: 0.5 * self.height,
                    omega: 2.0 * PI / self.period,
                    yaw: self.yaw,
                })
            }
            "waypoint-loop" => {
                if self.waypoints.len() < 2 || !(self.segment_time > 0.0) {
                    return Err(TrajectoryError::Invalid("waypoint-loop needs ≥ 2 waypoints and segment_time > 0".into()));
                }
                Ok(Trajectory::WaypointLoop {
                    points: self.waypoints.iter().map(|w| Vector3::from_row_slice(w)).collect(),
                    segment_time: self.segment_time,
                    yaw: self.yaw,
                })
            }
            other => Err(TrajectoryError::UnknownId(other.to_string())),
        }
    }
}

/// Minimum-jerk blend `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵` and its derivative.
fn min_jerk(tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (10.0 * t3 - 15.0 * t3 * tau + 6.0 * t3 * t2, 30.0 * t2 - 60.0 * t3 + 30.0 * t2 * t2)
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> Reference {
        match self {
            Self::Hover { p, yaw } => Reference { p: *p, pdot: Vector3::zeros(), yaw: *yaw },
            Self::Figure8 { center, a, b, omega, yaw } => {
                let (s1, c1) = (omega * t).sin_cos();
                let (s2, c2) = (2.0 * omega * t).sin_cos();
                Reference {
                    p: center + Vector3::new(a * s1, b * s2, 0.0),
                    pdot: Vector3::new(a * omega * c1, 2.0 * b * omega * c2, 0.0),
                    yaw: *yaw,
                }
            }
            Self::WaypointLoop { points, segment_time, yaw } => {
                let n = points.len();
                let cycle = segment_time * n as f64;
                let tc = t.rem_euclid(cycle);
                let k = ((tc / segment_time) as usize).min(n - 1);
                let tau = (tc - k as f64 * segment_time) / segment_time;
                let (s, ds) = min_jerk(tau);
                let from = points[k];
                let to = points[(k + 1) % n];
                Reference { p: from + (to - from) * s, pdot: (to - from) * (ds / segment_time), yaw: *yaw }
            }
        }
    }
}
