//! Real-time AC optimal power flow with a safety-constrained policy.
//!
//! The crate bundles the full stack a learned dispatcher needs:
//!
//! * [`grid`]: network model, case-file parsing, bus admittance matrix.
//! * [`powerflow`]: polar Newton–Raphson power flow and limit violations.
//! * [`opf`]: primal-dual interior-point AC OPF used as the expert, plus
//!   expert trajectories over a scheduling horizon.
//! * [`env`]: the constrained MDP (state, action clipping, reward and cost
//!   signals, synthetic load scenarios, contingency cost expansion).
//! * [`neural`]: small feedforward networks with reverse-mode gradients,
//!   a diagonal Gaussian policy and an Adam updater.
//! * [`pdppo`]: primal-dual PPO (returns, GAE, Lagrangian advantage,
//!   clipped surrogate, KL stop, dual ascent, critics, behavior cloning).
//! * [`eval`]: feasibility rate, violation averages, optimality gap,
//!   baseline ranking and the timing benchmark.

pub mod env;
pub mod eval;
pub mod grid;
pub mod neural;
pub mod opf;
pub mod pdppo;
pub mod powerflow;
pub mod rng;

pub use grid::{BusLoads, Network};
pub use powerflow::{DispatchSetpoints, PowerFlowSolution, ViolationVector};
