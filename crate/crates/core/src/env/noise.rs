//! Initial-condition sampling, action mapping and the actuation and
//! navigation noise models.

use nalgebra::{Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvError, ObsNoiseBound};
use crate::dynamics::{ForceVector, RelativeState};

/// Throttle command per LVLH axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; 3]);

impl Action {
    pub fn clipped(&self) -> Self {
        Self(self.0.map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) }))
    }
}

/// Observed state before normalisation, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub mass: f64,
}

impl RawObservation {
    pub fn exact(state: &RelativeState) -> Self {
        Self {
            pos: state.pos,
            vel: state.vel,
            mass: state.mass,
        }
    }
}

/// Normalised, clipped policy input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pos_n: [f64; 3],
    pub vel_n: [f64; 3],
    pub mass_n: f64,
}

impl Observation {
    pub const DIM: usize = 7;

    /// Flat layout `(x, y, z, vx, vy, vz, mass)`.
    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.pos_n;
        let [vx, vy, vz] = self.vel_n;
        [x, y, z, vx, vy, vz, self.mass_n]
    }
}

/// The random quantities behind one initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDraws {
    pub pos_offset: f64,
    pub pos_dir: [f64; 3],
    pub speed: f64,
    pub vel_dir: [f64; 3],
    pub mass_offset: f64,
}

/// Builds the initial state from explicit draws around the hold point
/// `(0, -hold_point_range, 0)`.
pub fn initial_from_draws(cfg: &EnvConfig, d: &InitialDraws) -> RelativeState {
    let hold = Vector3::new(0.0, -cfg.hold_point_range, 0.0);
    RelativeState::new(
        hold + Vector3::from(d.pos_dir) * d.pos_offset,
        Vector3::from(d.vel_dir) * d.speed,
        cfg.nominal_mass + d.mass_offset,
    )
}

/// Samples a dispersed initial condition: a position offset of uniform length
/// in a uniform direction, a velocity of uniform speed in an independent
/// uniform direction, and a uniform mass offset.
pub fn sample_initial<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> RelativeState {
    let pos_offset = rng.gen::<f64>() * cfg.pos_dispersion;
    let pos_dir: [f64; 3] = UnitSphere.sample(rng);
    let speed = rng.gen::<f64>() * cfg.vel_dispersion;
    let vel_dir: [f64; 3] = UnitSphere.sample(rng);
    let mass_offset = (2.0 * rng.gen::<f64>() - 1.0) * cfg.mass_dispersion;
    initial_from_draws(
        cfg,
        &InitialDraws {
            pos_offset,
            pos_dir,
            speed,
            vel_dir,
            mass_offset,
        },
    )
}

/// Per-axis mapping of throttle in [-1, 1] to force in [-Tmax, Tmax].
pub fn action_to_force(a: &Action, cfg: &EnvConfig) -> ForceVector {
    let a = a.clipped().0;
    ForceVector(Vector3::from(a) * cfg.t_max_thrust)
}

/// Rotates `v` about `axis` by `angle` radians (Rodrigues' formula).
pub fn rodrigues_rotate(
    v: &Vector3<f64>,
    axis: &Vector3<f64>,
    angle: f64,
) -> Result<Vector3<f64>, EnvError> {
    let n = axis.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(EnvError::DegenerateAxis);
    }
    if angle == 0.0 {
        return Ok(*v);
    }
    let k = axis / n;
    let (s, c) = angle.sin_cos();
    Ok(v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c)))
}

/// Some unit vector orthogonal to `d`.
fn any_perpendicular(d: &Unit<Vector3<f64>>) -> Vector3<f64> {
    // Cross with the basis vector least aligned with d.
    let a = d.abs();
    let e = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    d.cross(&e).normalize()
}

/// Applies actuator non-idealities to the commanded force.
///
/// The magnitude grows by `δ·cap` with `δ ~ U(0, χ)` and is clipped to
/// `[0, cap]`; the direction is tilted by `δθ ~ U(0, ι)` and the tilted
/// vector is then spun about the nominal direction by `ζ ~ U(-π, π)`, so the
/// deflection points in a uniformly random azimuth. A zero command is
/// returned unchanged.
pub fn perturb_thrust<R: Rng + ?Sized>(f: &ForceVector, cfg: &EnvConfig, rng: &mut R) -> ForceVector {
    let t = f.magnitude();
    if !cfg.actuation_noise || t == 0.0 {
        return *f;
    }
    let cap = cfg.thrust_magnitude_cap();
    let delta_t = rng.gen::<f64>() * cfg.chi;
    let delta_theta = rng.gen::<f64>() * cfg.iota.to_radians();
    let zeta = (2.0 * rng.gen::<f64>() - 1.0) * std::f64::consts::PI;

    let t_hat = (t + delta_t * cap).clamp(0.0, cap);
    let dir = Unit::new_normalize(f.0);
    let perp = any_perpendicular(&dir);
    // Both axes are non-zero by construction.
    let tilted = rodrigues_rotate(&dir, &perp, delta_theta).expect("unit axis");
    let deflected = rodrigues_rotate(&tilted, &dir, zeta).expect("unit axis");
    let mut f = deflected.normalize() * t_hat;
    // Rounding in the renormalisation can leave the norm an ulp above t_hat.
    while f.norm() > t_hat {
        f *= 1.0 - f64::EPSILON;
    }
    ForceVector(f)
}

/// Adds navigation noise to the true state.
///
/// Each position/velocity channel is offset by `U(-b, b)` with
/// `b = min(d/d_max, 1)·α·|o|` (or without the `|o|` factor under
/// [`ObsNoiseBound::Absolute`]); the mass by `U(-m_i·α, m_i·α)`.
pub fn perturb_observation<R: Rng + ?Sized>(
    state: &RelativeState,
    initial_mass: f64,
    cfg: &EnvConfig,
    rng: &mut R,
) -> RawObservation {
    let ratio = (state.range() / cfg.d_max).min(1.0);
    let scale = ratio * cfg.alpha;
    let mut noisy = |o: f64| {
        let bound = match cfg.obs_noise_bound {
            ObsNoiseBound::Proportional => scale * o.abs(),
            ObsNoiseBound::Absolute => scale,
        };
        o + bound * (2.0 * rng.gen::<f64>() - 1.0)
    };
    let pos = state.pos.map(&mut noisy);
    let vel = state.vel.map(&mut noisy);
    let mass = state.mass + initial_mass * cfg.alpha * (2.0 * rng.gen::<f64>() - 1.0);
    RawObservation { pos, vel, mass }
}

pub fn normalize_observation(raw: &RawObservation, cfg: &EnvConfig) -> Observation {
    let pos_n = (raw.pos / cfg.d_max).map(|v| v.clamp(-1.0, 1.0));
    let vel_n = (raw.vel / cfg.vel_scale).map(|v| v.clamp(-1.0, 1.0));
    Observation {
        pos_n: pos_n.into(),
        vel_n: vel_n.into(),
        mass_n: (raw.mass / cfg.nominal_mass).clamp(0.0, 1.2),
    }
}
