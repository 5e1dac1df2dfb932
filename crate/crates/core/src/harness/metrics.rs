use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::GoalEnv;
use crate::ot::{transport_simplex, Matrix, OtProblem};

/// One planning step of an episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord<A> {
    pub step: usize,
    /// Goal index the step was planned against (`K` for the OT planner, the
    /// classifier pointer for the baselines).
    pub target: usize,
    pub horizon: usize,
    pub objective: f64,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    pub plan: Vec<A>,
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskResult<S, G, A> {
    pub trajectory: Vec<S>,
    pub goals: Vec<G>,
    pub w_min: f64,
    pub goal_fraction: f64,
    pub diagnostics: Vec<StepRecord<A>>,
    pub seed: u64,
    /// Stopped before `t_max` because the final goal was reached.
    pub early_exit: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

impl<S, G, A> TaskResult<S, G, A> {
    pub fn n_steps(&self) -> usize {
        self.trajectory.len() - 1
    }
}

pub(crate) fn finish<E: GoalEnv>(
    env: &E,
    trajectory: Vec<E::State>,
    goals: &[E::Goal],
    diagnostics: Vec<StepRecord<E::Action>>,
    seed: u64,
    early_exit: bool,
    started: std::time::Instant,
) -> Result<TaskResult<E::State, E::Goal, E::Action>> {
    let w = w_min(env, &trajectory, goals)?;
    let gf = goal_fraction(env, &trajectory, goals)?;
    Ok(TaskResult {
        trajectory,
        goals: goals.to_vec(),
        w_min: w,
        goal_fraction: gf,
        diagnostics,
        seed,
        early_exit,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn check_inputs<S, G>(traj: &[S], goals: &[G]) -> Result<()> {
    if traj.is_empty() || goals.is_empty() {
        return Err(Error::Config("metrics need a nonempty trajectory and goal list".into()));
    }
    Ok(())
}

/// Minimum over prefixes `s_0..s_k` of the exact W1 distance between the
/// uniform measure on `phi(s_0..s_k)` and the uniform measure on `goals`.
pub fn w_min<E: GoalEnv>(env: &E, traj: &[E::State], goals: &[E::Goal]) -> Result<f64> {
    check_inputs(traj, goals)?;
    let m = goals.len();
    // identical goal images are merged into one weighted atom
    let mut atoms: Vec<E::Goal> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut best = f64::INFINITY;
    for (k, s) in traj.iter().enumerate() {
        let g = env.achieved_goal(s);
        match atoms.iter().position(|a| *a == g) {
            Some(i) => counts[i] += 1,
            None => {
                rows.push(goals.iter().map(|goal| env.goal_metric(&g, goal)).collect());
                atoms.push(g);
                counts.push(1);
            }
        }
        let n = (k + 1) as f64;
        let problem = OtProblem::new(
            Matrix::from_rows(rows.clone())?,
            counts.iter().map(|&c| c as f64 / n).collect(),
            vec![1.0 / m as f64; m],
        )?;
        best = best.min(transport_simplex(&problem)?.cost);
    }
    Ok(best.max(0.0))
}

/// Length of the goal prefix achieved in order, as a fraction of the goals.
pub fn goal_fraction<E: GoalEnv>(env: &E, traj: &[E::State], goals: &[E::Goal]) -> Result<f64> {
    check_inputs(traj, goals)?;
    let mut j = 0;
    for s in traj {
        while j < goals.len() && env.is_achieved(s, &goals[j]) {
            j += 1;
        }
    }
    Ok(j as f64 / goals.len() as f64)
}
