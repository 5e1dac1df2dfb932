//! The occupancy-matching planner: goal schedule, OT objective over model
//! rollouts, sequence optimizers and the receding-horizon loop.

mod episode;
mod objective;
mod optimize;
mod schedule;

pub use episode::{zilot_episode, zilot_episode_with_model, EpisodeResult};
pub use objective::{
    clamp_cost, zilot_objective, CostSource, ObjectiveValue, OtSolver, PlannerState, StepContext, ZilotConfig, ZilotPlanner,
};
pub use optimize::{
    exhaustive_optimize, icem_optimize, ColoredNoise, Exhaustive, Icem, IcemConfig, OptimizeOutcome,
    SequenceOptimizer,
};
pub use schedule::{effective_horizon, estimate_goal_times, select_reachable_goals, GoalSchedule};
