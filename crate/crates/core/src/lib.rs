//! Engagement policies for adaptive honeynets.
//!
//! The attacker's movement through a honeynet is a continuous-time
//! semi-Markov process controlled by the defender's engagement action at each
//! node. [`solver`] computes optimal stationary policies through the
//! equivalent discrete-time MDP, [`risk`] analyzes the continuous-time chain
//! a policy induces, [`sim`] samples the process and [`learn`] runs SMDP
//! Q-learning against it.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod learn;
pub mod model;
pub mod risk;
pub mod sim;
pub mod solver;

#[cfg(test)]
mod test_support;

pub use model::{load_scenario, ActionId, ModelError, NodeKind, Policy, ScenarioDoc, SmdpModel, StateId, ValueFunction};
pub use solver::{policy_evaluation, solve, value_iteration, Solution, SolverError};
