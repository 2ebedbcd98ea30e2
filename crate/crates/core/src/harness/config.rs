use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::trajectory::TrajectoryConfig;
use super::HarnessError;
use crate::allocation::{default_pairing, ActuatorModel, GeometryParams, RotorLayout, TiltPairing, ROTORS};
use crate::control::Gains;
use crate::dynamics::{DisturbanceParams, GravityConvention, InertiaParams};
use crate::gp::{EncodingScales, UpdatePolicy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// s
    pub duration: f64,
    /// Physics step, s.
    pub dt: f64,
    pub vehicle: VehicleConfig,
    pub geometry: GeometryParams,
    pub tilt: TiltConfig,
    pub actuator: ActuatorModel,
    pub gains: Gains,
    pub trajectory: TrajectoryConfig,
    /// Relative standard deviation of a per-seed scale factor on the
    /// disturbance model.
    pub disturbance_jitter: f64,
    pub disturbance: DisturbanceParams,
    pub fault: FaultConfig,
    pub gp: GpConfig,
    pub noise: NoiseConfig,
    pub bounds: BoundsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "scenario".into(),
            seed: 1,
            duration: 20.0,
            dt: 1e-3,
            vehicle: VehicleConfig::default(),
            geometry: GeometryParams::default(),
            tilt: TiltConfig::default(),
            actuator: ActuatorModel::default(),
            gains: Gains::default(),
            trajectory: TrajectoryConfig::default(),
            disturbance_jitter: 0.0,
            disturbance: DisturbanceParams::default(),
            fault: FaultConfig::default(),
            gp: GpConfig::default(),
            noise: NoiseConfig::default(),
            bounds: BoundsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    /// kg
    pub mass: f64,
    /// Principal moments, kg·m².
    pub inertia: [f64; 3],
    /// m/s²
    pub gravity: f64,
    pub gravity_convention: GravityConvention,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self { mass: 2.8, inertia: [0.035, 0.035, 0.065], gravity: 9.81, gravity_convention: GravityConvention::BodyFrame }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingEntry {
    /// 1-based failed rotor.
    pub failed: usize,
    /// 1-based tilting rotor.
    pub rotor: usize,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltConfig {
    /// Magnitude used by the built-in pairing table, deg.
    pub angle_deg: f64,
    /// Overrides the built-in table when non-empty.
    pub pairing: Vec<PairingEntry>,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self { angle_deg: 25.0, pairing: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    pub enabled: bool,
    /// 1-based rotor index.
    pub rotor: usize,
    /// s
    pub time: f64,
    /// Detection latency, s.
    pub latency: f64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self { enabled: false, rotor: 3, time: 35.0, latency: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSharing {
    Shared,
    #[default]
    PerOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Collect training data.
    pub collect: bool,
    /// Feed the posterior mean into both control laws.
    pub compensate: bool,
    pub capacity: usize,
    pub policy: UpdatePolicy,
    /// Dataset updates allowed before the set is frozen.
    pub max_switches: u64,
    /// Interval between dataset updates, s.
    pub update_period: f64,
    /// Wait after reconfiguration (or start, without a fault) before collecting, s.
    pub collect_delay: f64,
    /// Forget data gathered before reconfiguration.
    pub reset_on_reconfigure: bool,
    pub kernels: KernelSharing,
    pub scales: EncodingScales,
    /// Multiplier on the encoding scales giving the initial lengthscales.
    pub lengthscale: f64,
    /// Fitted lengthscales never drop below this multiple of the encoding
    /// scales; 0 disables the floor.
    pub lengthscale_floor: f64,
    pub signal_var: [f64; 6],
    pub noise_var: [f64; 6],
    /// Refit hyperparameters once, at the first update holding at least
    /// `refit_after` points.
    pub refit: bool,
    pub refit_after: usize,
    pub fit_budget: usize,
    pub fit_starts: usize,
    /// Confidence level of the error bound.
    pub delta: f64,
    /// RKHS norm caps; twice the largest |y_j| when absent.
    pub caps: Option<[f64; 6]>,
    /// Candidate states used for the information gain.
    pub bound_candidates: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            collect: true,
            compensate: true,
            capacity: 300,
            policy: UpdatePolicy::SlidingWindow,
            max_switches: 30,
            update_period: 1.0,
            collect_delay: 1.0,
            reset_on_reconfigure: true,
            kernels: KernelSharing::PerOutput,
            scales: EncodingScales::default(),
            lengthscale: 1.0,
            lengthscale_floor: 1.0,
            signal_var: [1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3],
            noise_var: [0.2, 0.2, 0.2, 1e-5, 1e-5, 1e-5],
            refit: true,
            refit_after: 100,
            fit_budget: 60,
            fit_starts: 4,
            delta: 0.9,
            caps: None,
            bound_candidates: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// σ of position fixes at the outer-loop rate, m.
    pub position: f64,
    /// σ of body velocity, m/s.
    pub velocity: f64,
    /// σ of attitude error angle per axis, rad.
    pub attitude: f64,
    /// σ of body rate, rad/s.
    pub gyro: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { position: 0.02, velocity: 0.01, attitude: 0.002, gyro: 0.005 }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self { position: 0.0, velocity: 0.0, attitude: 0.0, gyro: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Replaces the computed max ρ̄ when set.
    pub max_rho_override: Option<f64>,
    /// c₁ and c₂ of the Ψ/χ sandwich.
    pub c1: f64,
    pub c2: f64,
    /// Settling: the first time after which ‖ζ‖ stays below this multiple of
    /// its maximum over the final quarter of the run.
    pub settle_factor: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { max_rho_override: None, c1: 0.5, c2: 1.0, settle_factor: 1.5 }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(config_err("duration must be finite and non-negative"));
        }
        if !(self.dt > 0.0 && self.dt <= crate::dynamics::MAX_STEP) {
            return Err(config_err(format!("dt = {} outside (0, {}]", self.dt, crate::dynamics::MAX_STEP)));
        }
        self.gains.validate().map_err(|e| config_err(e.to_string()))?;
        let (att, pos) = self.loop_divisors()?;
        if pos % att != 0 {
            return Err(config_err("position period must be a multiple of the attitude period"));
        }
        self.inertia()?;
        self.layout()?;
        crate::dynamics::GroundTruthDisturbance::from_params(&self.disturbance)
            .map_err(|e| config_err(e.to_string()))?;
        if !(self.disturbance_jitter >= 0.0) {
            return Err(config_err("disturbance jitter must be non-negative"));
        }
        if self.fault.enabled {
            if !(1..=ROTORS).contains(&self.fault.rotor) {
                return Err(config_err(format!("fault rotor {} outside 1..=6", self.fault.rotor)));
            }
            if !(self.fault.time >= 0.0 && self.fault.latency >= 0.0) {
                return Err(config_err("fault time and latency must be non-negative"));
            }
        }
        let g = &self.gp;
        if g.capacity == 0 || !(g.update_period > 0.0) || !(g.collect_delay >= 0.0) {
            return Err(config_err("gp capacity and update period must be positive"));
        }
        if !(g.delta > 0.0 && g.delta < 1.0) {
            return Err(config_err(format!("gp delta {} outside (0, 1)", g.delta)));
        }
        if !(g.lengthscale > 0.0) || !(g.lengthscale_floor >= 0.0) || g.signal_var.iter().chain(&g.noise_var).any(|v| !(*v > 0.0)) {
            return Err(config_err("gp hyperparameters must be positive"));
        }
        let s = &g.scales;
        if [s.rotation, s.position, s.omega, s.velocity].iter().any(|v| !(*v > 0.0)) {
            return Err(config_err("gp encoding scales must be positive"));
        }
        let n = &self.noise;
        if [n.position, n.velocity, n.attitude, n.gyro].iter().any(|v| !(*v >= 0.0)) {
            return Err(config_err("noise levels must be non-negative"));
        }
        if !(self.bounds.c1 > 0.0 && self.bounds.c2 >= self.bounds.c1 && self.bounds.settle_factor >= 1.0) {
            return Err(config_err("bounds: need 0 < c1 ≤ c2 and settle_factor ≥ 1"));
        }
        self.trajectory.build().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// Physics ticks per attitude update and per position update.
    pub fn loop_divisors(&self) -> Result<(usize, usize), HarnessError> {
        let div = |hz: f64| -> Result<usize, HarnessError> {
            let ticks = 1.0 / (hz * self.dt);
            let r = ticks.round();
            if r < 1.0 || (ticks - r).abs() > 1e-6 {
                return Err(config_err(format!("{hz} Hz is not an integer divisor of the physics rate")));
            }
            Ok(r as usize)
        };
        Ok((div(self.gains.attitude_hz)?, div(self.gains.position_hz)?))
    }

    pub fn inertia(&self) -> Result<InertiaParams, HarnessError> {
        let v = &self.vehicle;
        InertiaParams::new(v.mass, Matrix3::from_diagonal(&Vector3::from_row_slice(&v.inertia)), v.gravity)
            .map(|p| p.with_convention(v.gravity_convention))
            .map_err(|e| config_err(e.to_string()))
    }

    pub fn pairing(&self) -> Result<Vec<TiltPairing>, HarnessError> {
        if self.tilt.pairing.is_empty() {
            return Ok(default_pairing(self.tilt.angle_deg));
        }
        self.tilt
            .pairing
            .iter()
            .map(|p| {
                if !(1..=ROTORS).contains(&p.failed) || !(1..=ROTORS).contains(&p.rotor) {
                    return Err(config_err("pairing rotors must lie in 1..=6"));
                }
                Ok(TiltPairing { failed: p.failed - 1, tilt_rotor: p.rotor - 1, angle: p.angle_deg.to_radians() })
            })
            .collect()
    }

    pub fn layout(&self) -> Result<RotorLayout, HarnessError> {
        RotorLayout::hexarotor(&self.geometry, self.pairing()?).map_err(|e| config_err(e.to_string()))
    }

    pub fn caps(&self) -> Option<Vector6<f64>> {
        self.gp.caps.map(|c| Vector6::from_row_slice(&c))
    }

    /// Time the controller learns of the failure and reconfigures.
    pub fn reconfigure_time(&self) -> Option<f64> {
        self.fault.enabled.then_some(self.fault.time + self.fault.latency)
    }

    /// Start of the post-failure analysis window.
    pub fn analysis_start(&self) -> f64 {
        self.reconfigure_time().unwrap_or(0.0) + 2.0
    }
}
