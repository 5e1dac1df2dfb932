//! Zero-shot imitation by occupancy matching: a planner that matches the
//! occupancy of model rollouts to a goal sequence with optimal transport,
//! together with hierarchical baselines, exact tabular value functions and
//! small environments on which every quantity can be computed exactly.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod ot;
pub mod planner;
pub mod rng;
pub mod value;

pub use error::{Error, Result};
pub use mdp::{EnvTaskConfig, GoalEnv, GoalSpace, TabularEnv, TabularWorld};
pub use ot::{Matrix, OtProblem, SinkhornConfig, TransportPlan};
pub use planner::{GoalSchedule, IcemConfig, PlannerState, ZilotConfig};
pub use value::{DistanceModel, DistanceTable, GoalPairTable, TabularModel};
