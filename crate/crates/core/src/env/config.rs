use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::dynamics::{OrbitParams, Propulsion, DEFAULT_ORBIT_RATE};

/// Soft-docking limits. All comparisons against them are strict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DockTolerances {
    /// Maximum lateral offset from the docking axis [m].
    pub lateral_align: f64,
    /// Maximum closing speed along the docking axis [m/s].
    pub approach_vel: f64,
    /// Maximum speed normal to the docking axis [m/s].
    pub normal_vel: f64,
    /// Distance before the docking plane at which contact counts [m]. Also
    /// used as the softening of the safety-cone apex.
    pub dock_plane_margin: f64,
}

impl Default for DockTolerances {
    fn default() -> Self {
        Self {
            lateral_align: 0.005,
            approach_vel: 0.02,
            normal_vel: 0.01,
            dock_plane_margin: 0.005,
        }
    }
}

impl DockTolerances {
    /// Every limit multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lateral_align: self.lateral_align * k,
            approach_vel: self.approach_vel * k,
            normal_vel: self.normal_vel * k,
            dock_plane_margin: self.dock_plane_margin * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Reward per metre of range closed.
    pub progress: f64,
    /// Penalty per unit of summed absolute throttle.
    pub fuel: f64,
    /// Penalty per control step.
    pub time: f64,
    /// Terminal bonus on docking, scaled by `1 + headroom`.
    pub dock_bonus: f64,
    /// Terminal penalty on leaving the safety cone.
    pub fail_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            progress: 1.0,
            fuel: 0.003,
            time: 0.001,
            dock_bonus: 100.0,
            fail_penalty: 50.0,
        }
    }
}

/// How the navigation-noise half-width scales with the measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObsNoiseBound {
    /// `(d/d_max)·α·|o|` per channel.
    #[default]
    Proportional,
    /// `(d/d_max)·α` per channel, in the channel's own units.
    Absolute,
}

/// Environment configuration. SI units; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Per-axis thrust limit [N].
    pub t_max_thrust: f64,
    pub isp: f64,
    pub control_dt: f64,
    pub max_steps: u32,
    pub cone_half_angle: f64,
    /// Along-track distance of the hold point the approach starts from [m].
    pub hold_point_range: f64,
    pub d_max: f64,
    /// Navigation noise level.
    pub alpha: f64,
    /// Thrust-magnitude noise bound, as a fraction of the magnitude cap.
    pub chi: f64,
    /// Thrust-direction deflection bound [deg].
    pub iota: f64,
    pub nominal_mass: f64,
    pub dry_mass: f64,
    /// Radius of the initial-position dispersion sphere [m].
    pub pos_dispersion: f64,
    /// Bound on the initial speed [m/s].
    pub vel_dispersion: f64,
    /// Half-width of the initial-mass dispersion [kg].
    pub mass_dispersion: f64,
    /// Velocity normalisation scale [m/s].
    pub vel_scale: f64,
    /// Target orbital rate [rad/s].
    pub orbit_rate: f64,
    /// When false the commanded force is applied without magnitude or
    /// direction noise.
    pub actuation_noise: bool,
    pub obs_noise_bound: ObsNoiseBound,
    pub tolerances: DockTolerances,
    pub reward: RewardWeights,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            t_max_thrust: 0.010,
            isp: 60.0,
            control_dt: 1.0,
            max_steps: 1000,
            cone_half_angle: 10.0,
            hold_point_range: 15.0,
            d_max: 20.0,
            alpha: 0.0,
            chi: 0.0525,
            iota: 0.1,
            nominal_mass: 12.0,
            dry_mass: 10.8,
            pos_dispersion: 2.0,
            vel_dispersion: 0.02,
            mass_dispersion: 1.2,
            vel_scale: 0.1,
            orbit_rate: DEFAULT_ORBIT_RATE,
            actuation_noise: true,
            obs_noise_bound: ObsNoiseBound::Proportional,
            tolerances: DockTolerances::default(),
            reward: RewardWeights::default(),
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn from_json_str(s: &str) -> Result<Self, EnvError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("t_max_thrust", self.t_max_thrust),
            ("isp", self.isp),
            ("control_dt", self.control_dt),
            ("hold_point_range", self.hold_point_range),
            ("d_max", self.d_max),
            ("nominal_mass", self.nominal_mass),
            ("dry_mass", self.dry_mass),
            ("vel_scale", self.vel_scale),
            ("orbit_rate", self.orbit_rate),
            ("tolerances.lateral_align", self.tolerances.lateral_align),
            ("tolerances.approach_vel", self.tolerances.approach_vel),
            ("tolerances.normal_vel", self.tolerances.normal_vel),
            ("tolerances.dock_plane_margin", self.tolerances.dock_plane_margin),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnvError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("alpha", self.alpha),
            ("chi", self.chi),
            ("iota", self.iota),
            ("pos_dispersion", self.pos_dispersion),
            ("vel_dispersion", self.vel_dispersion),
            ("mass_dispersion", self.mass_dispersion),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(EnvError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.cone_half_angle > 0.0 && self.cone_half_angle < 90.0) {
            return Err(EnvError::Config(format!(
                "cone_half_angle must lie in (0, 90), got {}",
                self.cone_half_angle
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        if self.dry_mass >= self.nominal_mass {
            return Err(EnvError::Config(format!(
                "dry_mass {} must be below nominal_mass {}",
                self.dry_mass, self.nominal_mass
            )));
        }
        Ok(())
    }

    /// Magnitude cap of the net force: all three axes saturated.
    pub fn thrust_magnitude_cap(&self) -> f64 {
        3f64.sqrt() * self.t_max_thrust
    }

    pub fn orbit(&self) -> OrbitParams {
        OrbitParams {
            omega: self.orbit_rate,
        }
    }

    pub fn propulsion(&self) -> Propulsion {
        Propulsion {
            isp: self.isp,
            dry_mass: self.dry_mass,
        }
    }

    /// Longest episode in seconds.
    pub fn max_duration(&self) -> f64 {
        self.max_steps as f64 * self.control_dt
    }
}
