//! Neural rendezvous-and-docking controller laboratory.
//!
//! - [`dynamics`]: Hill / Clohessy-Wiltshire relative motion, RK4 stepping and
//!   a closed-form propagator.
//! - [`env`]: the docking MDP with actuation and navigation noise.
//! - [`policy`]: the actor-critic MLP with a hand-written backward pass.
//! - [`trainer`]: PPO with GAE, Adam and a curriculum over docking tolerances
//!   and noise.
//! - [`eval`]: Monte Carlo campaigns, docking re-verification, trajectory and
//!   statistics files, and an inference-latency benchmark.

pub mod dynamics;
pub mod env;
pub mod eval;
pub mod policy;
pub mod seed;
pub mod trainer;
