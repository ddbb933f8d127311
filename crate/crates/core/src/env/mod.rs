//! The docking MDP: one episode of the final approach from the V-bar hold
//! point to the docking port, stepped once per control period.
//!
//! Step pipeline: clip action, map to force, perturb the force, integrate the
//! dynamics, check termination, compute the reward, perturb and normalise the
//! observation of the new state.

mod config;
mod noise;

pub use config::{DockTolerances, EnvConfig, ObsNoiseBound, RewardWeights};
pub use noise::{
    action_to_force, initial_from_draws, normalize_observation, perturb_observation, perturb_thrust,
    rodrigues_rotate, sample_initial, Action, InitialDraws, Observation, RawObservation,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, ForceVector, RelativeState, G0};
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("step called on a finished episode; call reset first")]
    EpisodeFinished,
    #[error("rotation axis is zero or non-finite")]
    DegenerateAxis,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    DockSuccess,
    ConeViolation,
    Timeout,
    PropellantExhausted,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::DockSuccess,
        OutcomeKind::ConeViolation,
        OutcomeKind::Timeout,
        OutcomeKind::PropellantExhausted,
    ];

    /// Whether the episode ended because of the time limit rather than a
    /// terminal state of the task.
    pub fn is_truncation(self) -> bool {
        self == OutcomeKind::Timeout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub kind: OutcomeKind,
    /// Episode duration [s].
    pub elapsed: f64,
    /// Propellant burned [kg].
    pub propellant_used: f64,
    pub terminal_state: RelativeState,
}

/// Number of episodes ending in each way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub dock_success: usize,
    pub cone_violation: usize,
    pub timeout: usize,
    pub propellant_exhausted: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, kind: OutcomeKind) {
        match kind {
            OutcomeKind::DockSuccess => self.dock_success += 1,
            OutcomeKind::ConeViolation => self.cone_violation += 1,
            OutcomeKind::Timeout => self.timeout += 1,
            OutcomeKind::PropellantExhausted => self.propellant_exhausted += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.dock_success + self.cone_violation + self.timeout + self.propellant_exhausted
    }
}

/// Termination predicate for a state reached after `step_index` steps.
///
/// Docking is checked first; the safety cone applies only before the docking
/// plane margin; passing the docking plane without docking counts as a cone
/// violation (overshoot or collision).
pub fn check_termination(state: &RelativeState, cfg: &EnvConfig, step_index: u32) -> Option<OutcomeKind> {
    let tol = &cfg.tolerances;
    let (p, v) = (&state.pos, &state.vel);
    let lateral = p.x.hypot(p.z);

    let docked = p.y >= -tol.dock_plane_margin
        && lateral < tol.lateral_align
        && v.y.abs() < tol.approach_vel
        && v.x.hypot(v.z) < tol.normal_vel;
    if docked {
        return Some(OutcomeKind::DockSuccess);
    }
    if p.y < -tol.dock_plane_margin {
        let cone = cfg.cone_half_angle.to_radians().tan() * p.y.abs() + tol.dock_plane_margin;
        if lateral > cone {
            return Some(OutcomeKind::ConeViolation);
        }
    } else if p.y > 0.0 {
        return Some(OutcomeKind::ConeViolation);
    }
    if step_index >= cfg.max_steps {
        return Some(OutcomeKind::Timeout);
    }
    None
}

/// Mean remaining fraction of the three docking limits, in [0, 1].
fn dock_headroom(state: &RelativeState, tol: &DockTolerances) -> f64 {
    let (p, v) = (&state.pos, &state.vel);
    let margins = [
        1.0 - p.x.hypot(p.z) / tol.lateral_align,
        1.0 - v.y.abs() / tol.approach_vel,
        1.0 - v.x.hypot(v.z) / tol.normal_vel,
    ];
    margins.iter().map(|m| m.clamp(0.0, 1.0)).sum::<f64>() / 3.0
}

/// Shaped per-step reward: range progress, throttle and time penalties, and
/// terminal bonus/penalty.
pub fn reward(
    prev: &RelativeState,
    action: &Action,
    next: &RelativeState,
    outcome: Option<OutcomeKind>,
    cfg: &EnvConfig,
) -> f64 {
    let w = &cfg.reward;
    let throttle: f64 = action.clipped().0.iter().map(|a| a.abs()).sum();
    let mut r = w.progress * (prev.range() - next.range()) - w.fuel * throttle - w.time;
    match outcome {
        Some(OutcomeKind::DockSuccess) => r += w.dock_bonus * (1.0 + dock_headroom(next, &cfg.tolerances)),
        Some(OutcomeKind::ConeViolation) => r -= w.fail_penalty,
        _ => {}
    }
    r
}

/// Diagnostics of one step, sufficient to rebuild a trajectory record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Time at the end of the step [s].
    pub t: f64,
    pub state: RelativeState,
    pub observed: RawObservation,
    pub commanded_force: ForceVector,
    pub applied_force: ForceVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Option<EpisodeOutcome>,
    pub info: StepInfo,
}

/// Serializable snapshot of an environment, for checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub cfg: EnvConfig,
    pub rng: Rng,
    pub state: RelativeState,
    pub initial_mass: f64,
    pub steps: u32,
    pub propellant_used: f64,
    pub done: bool,
    pub last_obs: Observation,
}

/// A single docking episode generator. Owns its RNG stream.
#[derive(Debug, Clone)]
pub struct DockingEnv {
    cfg: EnvConfig,
    rng: Rng,
    state: RelativeState,
    initial_mass: f64,
    steps: u32,
    propellant_used: f64,
    done: bool,
    last_obs: Observation,
}

impl DockingEnv {
    /// Validates `cfg`, seeds the RNG from `cfg.rng_seed` and starts an episode.
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let rng = rng_from_seed(cfg.rng_seed);
        let mut env = Self {
            state: RelativeState::new(Default::default(), Default::default(), cfg.nominal_mass),
            initial_mass: cfg.nominal_mass,
            cfg,
            rng,
            steps: 0,
            propellant_used: 0.0,
            done: false,
            last_obs: Observation {
                pos_n: [0.0; 3],
                vel_n: [0.0; 3],
                mass_n: 1.0,
            },
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Replaces the configuration. Takes effect from the next reset for
    /// sampling; tolerances and noise apply immediately.
    pub fn set_config(&mut self, cfg: EnvConfig) -> Result<(), EnvError> {
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn state(&self) -> &RelativeState {
        &self.state
    }

    pub fn initial_mass(&self) -> f64 {
        self.initial_mass
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn last_observation(&self) -> &Observation {
        &self.last_obs
    }

    /// Starts a new episode from the continuing RNG stream.
    pub fn reset(&mut self) -> Observation {
        let state = sample_initial(&self.cfg, &mut self.rng);
        self.start(state)
    }

    /// Reseeds the RNG, then starts a new episode.
    pub fn reset_with_seed(&mut self, seed: u64) -> Observation {
        self.rng = rng_from_seed(seed);
        self.reset()
    }

    /// Starts an episode from an explicit initial state.
    pub fn reset_to(&mut self, state: RelativeState) -> Result<Observation, EnvError> {
        state.validate()?;
        Ok(self.start(state))
    }

    fn start(&mut self, state: RelativeState) -> Observation {
        self.state = state;
        self.initial_mass = state.mass;
        self.steps = 0;
        self.propellant_used = 0.0;
        self.done = false;
        let raw = perturb_observation(&self.state, self.initial_mass, &self.cfg, &mut self.rng);
        self.last_obs = normalize_observation(&raw, &self.cfg);
        self.last_obs
    }

    pub fn step(&mut self, action: &Action) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let action = action.clipped();
        let commanded = action_to_force(&action, &self.cfg);
        let applied = perturb_thrust(&commanded, &self.cfg, &mut self.rng);
        let dt = self.cfg.control_dt;
        let prev = self.state;

        let (next, exhausted) = match dynamics::rk4_step(&prev, &applied, dt, &self.cfg.orbit(), &self.cfg.propulsion()) {
            Ok(s) => (s, false),
            Err(DynamicsError::PropellantExhausted { state }) => (state, true),
            Err(e) => return Err(e.into()),
        };
        self.steps += 1;
        self.state = next;
        self.propellant_used += applied.magnitude() * dt / (self.cfg.isp * G0);

        let kind = match check_termination(&next, &self.cfg, self.steps) {
            Some(OutcomeKind::Timeout) | None if exhausted => Some(OutcomeKind::PropellantExhausted),
            k => k,
        };
        let r = reward(&prev, &action, &next, kind, &self.cfg);

        let raw = perturb_observation(&next, self.initial_mass, &self.cfg, &mut self.rng);
        let obs = normalize_observation(&raw, &self.cfg);
        self.last_obs = obs;

        let outcome = kind.map(|kind| {
            self.done = true;
            EpisodeOutcome {
                kind,
                elapsed: self.steps as f64 * dt,
                propellant_used: self.propellant_used,
                terminal_state: next,
            }
        });
        Ok(Step {
            obs,
            reward: r,
            done: self.done,
            outcome,
            info: StepInfo {
                t: self.steps as f64 * dt,
                state: next,
                observed: raw,
                commanded_force: commanded,
                applied_force: applied,
            },
        })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            cfg: self.cfg.clone(),
            rng: self.rng.clone(),
            state: self.state,
            initial_mass: self.initial_mass,
            steps: self.steps,
            propellant_used: self.propellant_used,
            done: self.done,
            last_obs: self.last_obs,
        }
    }

    pub fn restore(snap: EnvSnapshot) -> Result<Self, EnvError> {
        snap.cfg.validate()?;
        Ok(Self {
            cfg: snap.cfg,
            rng: snap.rng,
            state: snap.state,
            initial_mass: snap.initial_mass,
            steps: snap.steps,
            propellant_used: snap.propellant_used,
            done: snap.done,
            last_obs: snap.last_obs,
        })
    }
}
