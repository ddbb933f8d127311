//! Relative translational dynamics of the chaser in the target-centred LVLH
//! frame (x radial, y along-track, z cross-track).
//!
//! The model is the linearised Hill / Clohessy-Wiltshire system for a target
//! on a circular orbit with rate `omega`:
//!
//! ```text
//! ẍ =  2Ω ẏ + 3Ω² x + Fx / m
//! ÿ = -2Ω ẋ          + Fy / m
//! z̈ =  -Ω² z         + Fz / m
//! ```
//!
//! Thrust is held constant over an integration step and propellant is drawn
//! at `|F| / (Isp g0)`. A closed-form state-transition solution of the unforced
//! system is provided for checking the integrator.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity [m/s²].
pub const G0: f64 = 9.80665;

/// Mean motion of a 500 km circular LEO [rad/s].
pub const DEFAULT_ORBIT_RATE: f64 = 1.1068e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The step would take the chaser to or below its dry mass. `state` is the
    /// propagated state with the mass clamped at the floor.
    #[error("propellant exhausted (mass reached dry-mass floor)")]
    PropellantExhausted { state: RelativeState },
}

/// Chaser position/velocity relative to the target plus chaser mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    /// Position [m].
    pub pos: Vector3<f64>,
    /// Velocity [m/s].
    pub vel: Vector3<f64>,
    /// Mass [kg].
    pub mass: f64,
}

impl RelativeState {
    pub fn new(pos: Vector3<f64>, vel: Vector3<f64>, mass: f64) -> Self {
        Self { pos, vel, mass }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let finite = self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite());
        if !finite || !self.mass.is_finite() {
            return Err(DynamicsError::InvalidState(format!(
                "non-finite component in {self:?}"
            )));
        }
        if self.mass <= 0.0 {
            return Err(DynamicsError::InvalidState(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        Ok(())
    }

    /// Euclidean distance to the target CoM.
    pub fn range(&self) -> f64 {
        self.pos.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    /// Orbital rate of the target [rad/s].
    pub omega: f64,
}

impl OrbitParams {
    pub fn new(omega: f64) -> Result<Self, DynamicsError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(DynamicsError::InvalidArgument(format!(
                "orbit rate must be positive and finite, got {omega}"
            )));
        }
        Ok(Self { omega })
    }
}

impl Default for OrbitParams {
    fn default() -> Self {
        Self {
            omega: DEFAULT_ORBIT_RATE,
        }
    }
}

/// Net thrust force applied at the chaser CoM, LVLH components [N].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceVector(pub Vector3<f64>);

impl ForceVector {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn magnitude(&self) -> f64 {
        self.0.norm()
    }
}

/// Propulsion constants used for mass depletion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Propulsion {
    /// Specific impulse [s].
    pub isp: f64,
    /// Mass at or below which the chaser is out of propellant [kg].
    pub dry_mass: f64,
}

impl Default for Propulsion {
    fn default() -> Self {
        Self {
            isp: 60.0,
            dry_mass: 10.8,
        }
    }
}

/// Right-hand side of the forced Hill equations.
pub fn cw_acceleration(
    state: &RelativeState,
    force: &ForceVector,
    orbit: &OrbitParams,
) -> Result<Vector3<f64>, DynamicsError> {
    state.validate()?;
    if !force.0.iter().all(|f| f.is_finite()) {
        return Err(DynamicsError::InvalidState(format!(
            "non-finite force {:?}",
            force.0
        )));
    }
    Ok(accel(&state.pos, &state.vel, &force.0, state.mass, orbit.omega))
}

#[inline]
fn accel(pos: &Vector3<f64>, vel: &Vector3<f64>, f: &Vector3<f64>, mass: f64, w: f64) -> Vector3<f64> {
    Vector3::new(
        2.0 * w * vel.y + 3.0 * w * w * pos.x + f.x / mass,
        -2.0 * w * vel.x + f.y / mass,
        -w * w * pos.z + f.z / mass,
    )
}

/// Mass after burning `thrust_magnitude` newtons for `dt` seconds.
pub fn deplete_mass(
    mass: f64,
    thrust_magnitude: f64,
    dt: f64,
    propulsion: &Propulsion,
) -> Result<f64, DynamicsError> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!(
            "mass must be positive, got {mass}"
        )));
    }
    if !(thrust_magnitude.is_finite() && thrust_magnitude >= 0.0) {
        return Err(DynamicsError::InvalidArgument(format!(
            "thrust magnitude must be non-negative, got {thrust_magnitude}"
        )));
    }
    let next = mass - thrust_magnitude * dt / (propulsion.isp * G0);
    if next <= propulsion.dry_mass {
        return Err(DynamicsError::PropellantExhausted {
            state: RelativeState::new(Vector3::zeros(), Vector3::zeros(), propulsion.dry_mass),
        });
    }
    Ok(next)
}

/// One classical RK4 step with the force held constant over `dt`.
pub fn rk4_step(
    state: &RelativeState,
    force: &ForceVector,
    dt: f64,
    orbit: &OrbitParams,
    propulsion: &Propulsion,
) -> Result<RelativeState, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!(
            "step size must be positive, got {dt}"
        )));
    }
    state.validate()?;
    if !force.0.iter().all(|f| f.is_finite()) {
        return Err(DynamicsError::InvalidState(format!(
            "non-finite force {:?}",
            force.0
        )));
    }

    let (pos, vel) = rk4_propagate(state, &force.0, dt, orbit.omega);
    match deplete_mass(state.mass, force.magnitude(), dt, propulsion) {
        Ok(mass) => Ok(RelativeState::new(pos, vel, mass)),
        Err(DynamicsError::PropellantExhausted { .. }) => Err(DynamicsError::PropellantExhausted {
            state: RelativeState::new(pos, vel, propulsion.dry_mass),
        }),
        Err(e) => Err(e),
    }
}

fn rk4_propagate(
    s: &RelativeState,
    f: &Vector3<f64>,
    dt: f64,
    w: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let m = s.mass;
    let (p0, v0) = (s.pos, s.vel);

    let k1p = v0;
    let k1v = accel(&p0, &v0, f, m, w);

    let p = p0 + k1p * (0.5 * dt);
    let v = v0 + k1v * (0.5 * dt);
    let k2p = v;
    let k2v = accel(&p, &v, f, m, w);

    let p = p0 + k2p * (0.5 * dt);
    let v = v0 + k2v * (0.5 * dt);
    let k3p = v;
    let k3v = accel(&p, &v, f, m, w);

    let p = p0 + k3p * dt;
    let v = v0 + k3v * dt;
    let k4p = v;
    let k4v = accel(&p, &v, f, m, w);

    let h6 = dt / 6.0;
    (
        p0 + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * h6,
        v0 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * h6,
    )
}

/// Closed-form propagation of the unforced system over `t` seconds.
pub fn cw_transition(
    state0: &RelativeState,
    t: f64,
    orbit: &OrbitParams,
) -> Result<RelativeState, DynamicsError> {
    state0.validate()?;
    if !t.is_finite() {
        return Err(DynamicsError::InvalidArgument(format!("non-finite time {t}")));
    }
    let n = orbit.omega;
    let (s, c) = (n * t).sin_cos();
    let nt = n * t;
    let (x0, y0, z0) = (state0.pos.x, state0.pos.y, state0.pos.z);
    let (vx0, vy0, vz0) = (state0.vel.x, state0.vel.y, state0.vel.z);

    let x = (4.0 - 3.0 * c) * x0 + (s / n) * vx0 + (2.0 / n) * (1.0 - c) * vy0;
    let y = 6.0 * (s - nt) * x0 + y0 - (2.0 / n) * (1.0 - c) * vx0
        + (4.0 * s - 3.0 * nt) / n * vy0;
    let z = c * z0 + (s / n) * vz0;

    let vx = 3.0 * n * s * x0 + c * vx0 + 2.0 * s * vy0;
    let vy = -6.0 * n * (1.0 - c) * x0 - 2.0 * s * vx0 + (4.0 * c - 3.0) * vy0;
    let vz = -n * s * z0 + c * vz0;

    Ok(RelativeState::new(
        Vector3::new(x, y, z),
        Vector3::new(vx, vy, vz),
        state0.mass,
    ))
}
