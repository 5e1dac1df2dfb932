//! Exact goal-conditioned values on tabular environments.
//!
//! `d(s, g)` is the optimal expected first-hit time of the achievement set of
//! `g` (reward -1 per step, absorption on achievement), computed by value
//! iteration and capped at `t_max`. `W(g, g')` averages `d(., g')` over the
//! pre-image of `g`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_index, Error, Result};
use crate::mdp::{ActionId, GoalEnv, GoalId, GoalSpace, StateId, TabularEnv, TabularWorld};

const VI_TOL: f64 = 1e-10;

/// `d(s, g)` for every state and goal, in steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    n_states: usize,
    n_goals: usize,
    values: Vec<f64>,
    t_max: f64,
}

impl DistanceTable {
    pub fn get(&self, s: StateId, g: GoalId) -> f64 {
        self.values[s * self.n_goals + g]
    }

    pub fn try_get(&self, s: StateId, g: GoalId) -> Result<f64> {
        check_index("state", s, self.n_states)?;
        check_index("goal", g, self.n_goals)?;
        Ok(self.get(s, g))
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_goals(&self) -> usize {
        self.n_goals
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s * self.n_goals..(s + 1) * self.n_goals]
    }
}

/// `W(g, g')`: expected steps from a state achieving `g` to `g'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPairTable {
    n_goals: usize,
    values: Vec<f64>,
}

impl GoalPairTable {
    pub fn get(&self, from: GoalId, to: GoalId) -> f64 {
        self.values[from * self.n_goals + to]
    }

    pub fn n_goals(&self) -> usize {
        self.n_goals
    }
}

/// Policy table `[state][goal] -> action`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyPolicy {
    n_goals: usize,
    actions: Vec<ActionId>,
}

impl GreedyPolicy {
    pub fn action(&self, s: StateId, g: GoalId) -> ActionId {
        self.actions[s * self.n_goals + g]
    }
}

/// One Jacobi sweep of the first-hit Bellman operator for a single goal.
/// Returns the sup-norm change.
pub(crate) fn bellman_sweep(
    env: &TabularEnv,
    achieved: &[bool],
    t_max: f64,
    current: &[f64],
    next: &mut [f64],
) -> f64 {
    let mut change: f64 = 0.0;
    for s in 0..env.n_states() {
        let v = if achieved[s] {
            0.0
        } else {
            let best = (0..env.n_actions())
                .map(|a| env.row(s, a).iter().map(|&(n, p)| p * current[n]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            (1.0 + best).min(t_max)
        };
        change = change.max((v - current[s]).abs());
        next[s] = v;
    }
    change
}

fn solve_goal(env: &TabularEnv, gs: &GoalSpace, g: GoalId, t_max: f64) -> Vec<f64> {
    let achieved: Vec<bool> = (0..env.n_states()).map(|s| gs.achieves(s, g)).collect();
    let mut cur = vec![0.0; env.n_states()];
    let mut next = vec![0.0; env.n_states()];
    let max_sweeps = (10.0 * t_max).ceil() as usize;
    for _ in 0..max_sweeps {
        let change = bellman_sweep(env, &achieved, t_max, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        if change < VI_TOL {
            break;
        }
    }
    cur
}

/// Value iteration for every goal, starting from zero. Unreachable pairs
/// saturate at `t_max`.
pub fn compute_first_hit_distance(env: &TabularEnv, gs: &GoalSpace, t_max: usize) -> Result<DistanceTable> {
    if t_max == 0 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    if gs.n_states() != env.n_states() {
        return Err(Error::Config("goal space and environment disagree on state count".into()));
    }
    let t = t_max as f64;
    let per_goal: Vec<Vec<f64>> = (0..gs.n_goals()).into_par_iter().map(|g| solve_goal(env, gs, g, t)).collect();
    let (n_states, n_goals) = (env.n_states(), gs.n_goals());
    let mut values = vec![0.0; n_states * n_goals];
    for (g, col) in per_goal.iter().enumerate() {
        for (s, v) in col.iter().enumerate() {
            values[s * n_goals + g] = *v;
        }
    }
    Ok(DistanceTable { n_states, n_goals, values, t_max: t })
}

/// `W(g, g')` as the mean of `d(s, g')` over `s` in `phi^{-1}(g)`; `t_max`
/// for goals with an empty pre-image.
pub fn compute_goal_pair_times(d: &DistanceTable, gs: &GoalSpace) -> GoalPairTable {
    let n = gs.n_goals();
    let mut values = vec![d.t_max; n * n];
    for g in 0..n {
        let pre: Vec<StateId> = gs.preimage(g).collect();
        if pre.is_empty() {
            continue;
        }
        for h in 0..n {
            values[g * n + h] = pre.iter().map(|&s| d.get(s, h)).sum::<f64>() / pre.len() as f64;
        }
    }
    GoalPairTable { n_goals: n, values }
}

/// `E_{s' ~ P(s, a)}[d(s', g)]`.
pub fn expected_next_distance(env: &TabularEnv, d: &DistanceTable, s: StateId, a: ActionId, g: GoalId) -> f64 {
    env.row(s, a).iter().map(|&(n, p)| p * d.get(n, g)).sum()
}

/// `argmin_a E[d(s', g)]`, lowest action index on ties.
pub fn greedy_goal_policy(env: &TabularEnv, d: &DistanceTable) -> GreedyPolicy {
    let n_goals = d.n_goals();
    let mut actions = Vec::with_capacity(env.n_states() * n_goals);
    for s in 0..env.n_states() {
        for g in 0..n_goals {
            let mut best = (f64::INFINITY, 0);
            for a in 0..env.n_actions() {
                let v = expected_next_distance(env, d, s, a, g);
                if v < best.0 {
                    best = (v, a);
                }
            }
            actions.push(best.1);
        }
    }
    GreedyPolicy { n_goals, actions }
}

/// Distance oracle the planners consume: `d(s, g)`, `W(g, g')` and the cap.
pub trait DistanceModel<E: GoalEnv + ?Sized>: Sync {
    fn distance(&self, s: &E::State, g: &E::Goal) -> f64;
    fn goal_to_goal(&self, from: &E::Goal, to: &E::Goal) -> f64;
    fn t_max(&self) -> f64;
}

/// Exact tables for a [`TabularWorld`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub distance: DistanceTable,
    pub goal_pairs: GoalPairTable,
}

impl TabularModel {
    pub fn compute(world: &TabularWorld, t_max: usize) -> Result<Self> {
        let distance = compute_first_hit_distance(&world.env, &world.goals, t_max)?;
        let goal_pairs = compute_goal_pair_times(&distance, &world.goals);
        Ok(Self { distance, goal_pairs })
    }
}

impl DistanceModel<TabularWorld> for TabularModel {
    fn distance(&self, s: &StateId, g: &GoalId) -> f64 {
        self.distance.get(*s, *g)
    }

    fn goal_to_goal(&self, from: &GoalId, to: &GoalId) -> f64 {
        self.goal_pairs.get(*from, *to)
    }

    fn t_max(&self) -> f64 {
        self.distance.t_max
    }
}

/// On-disk cache of [`TabularModel`]s keyed by environment digest, goal space
/// and `t_max`.
#[derive(Clone, Debug)]
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(world: &TabularWorld, t_max: usize) -> Result<String> {
        let mut h = Sha256::new();
        h.update(world.env.content_hash().as_bytes());
        h.update(serde_json::to_vec(&world.goals)?);
        h.update((t_max as u64).to_le_bytes());
        Ok(hex::encode(h.finalize()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("tables-{key}.json"))
    }

    pub fn load_or_compute(&self, world: &TabularWorld, t_max: usize) -> Result<TabularModel> {
        let path = self.path(&Self::key(world, t_max)?);
        if path.exists() {
            if let Ok(model) = read_model(&path) {
                return Ok(model);
            }
        }
        let model = TabularModel::compute(world, t_max)?;
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(&path, serde_json::to_vec(&model)?)?;
        Ok(model)
    }
}

fn read_model(path: &Path) -> Result<TabularModel> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
