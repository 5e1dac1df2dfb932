//! Controllable Markov chains with a goal abstraction.
//!
//! A [`TabularEnv`] holds the reward-free dynamics `(S, A, P, mu0)`; a
//! [`GoalSpace`] adds the abstraction `phi: S -> G`, the goal metric `h` and
//! the achievement radius. [`TabularWorld`] pairs the two and implements the
//! planner-facing [`GoalEnv`] trait, which the continuous point-mass testbed
//! implements as well.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_index, Error, Result};

pub type StateId = usize;
pub type ActionId = usize;
pub type GoalId = usize;

const PROB_TOL: f64 = 1e-12;

fn validate_distribution(what: &str, p: &[f64]) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidDistribution(format!("{what}: entry {x} is negative or non-finite")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!("{what}: sums to {total}")));
    }
    Ok(())
}

/// Finite controllable Markov chain. Transition rows are stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularEnv {
    n_states: usize,
    n_actions: usize,
    rows: Vec<Vec<(StateId, f64)>>,
    initial_dist: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl TabularEnv {
    /// Builds an environment from a dense `[state][action][next_state]` tensor.
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, initial_dist: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 {
            return Err(Error::Config("environment needs at least one state".into()));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::Config("environment needs at least one action".into()));
        }
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for (s, per_action) in transitions.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::Config(format!(
                    "state {s} has {} actions, expected {n_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::Config(format!(
                        "row ({s},{a}) has length {}, expected {n_states}",
                        row.len()
                    )));
                }
                validate_distribution(&format!("transition row ({s},{a})"), row)?;
                rows.push(row.iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect());
            }
        }
        Self::from_sparse(n_states, n_actions, rows, initial_dist, labels)
    }

    /// Builds an environment from sparse rows indexed `state * n_actions + action`.
    pub fn from_sparse(
        n_states: usize,
        n_actions: usize,
        rows: Vec<Vec<(StateId, f64)>>,
        initial_dist: Vec<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows.len() != n_states * n_actions {
            return Err(Error::Config(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            for &(next, p) in row {
                check_index("state", next, n_states)?;
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidDistribution(format!("row {i}: entry {p}")));
                }
            }
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "transition row ({},{}) sums to {total}",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        if initial_dist.len() != n_states {
            return Err(Error::Config(format!(
                "initial distribution has length {}, expected {n_states}",
                initial_dist.len()
            )));
        }
        validate_distribution("initial distribution", &initial_dist)?;
        if let Some(l) = &labels {
            if l.len() != n_states {
                return Err(Error::Config(format!("{} labels for {n_states} states", l.len())));
            }
        }
        Ok(Self { n_states, n_actions, rows, initial_dist, labels })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, s: StateId) -> String {
        match &self.labels {
            Some(l) => l[s].clone(),
            None => s.to_string(),
        }
    }

    /// Nonzero entries of `P(. | s, a)`.
    pub fn row(&self, s: StateId, a: ActionId) -> &[(StateId, f64)] {
        &self.rows[s * self.n_actions + a]
    }

    pub fn probability(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.row(s, a).iter().find(|(n, _)| *n == next).map_or(0.0, |(_, p)| *p)
    }

    pub fn dense_transitions(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        let mut dense = vec![0.0; self.n_states];
                        for &(n, p) in self.row(s, a) {
                            dense[n] += p;
                        }
                        dense
                    })
                    .collect()
            })
            .collect()
    }

    /// True when every row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.rows.iter().all(|r| r.len() == 1)
    }

    fn check(&self, s: StateId, a: ActionId) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("action", a, self.n_actions)
    }

    /// Draws `s' ~ P(. | s, a)`. Consumes exactly one uniform draw, even for
    /// deterministic rows, so rollouts sharing a seed stay aligned step by step.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> Result<StateId> {
        self.check(s, a)?;
        Ok(self.sample_unchecked(s, a, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> StateId {
        let u: f64 = rng.gen();
        sample_row(self.row(s, a), u)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (s, &p) in self.initial_dist.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = s;
            if u < acc {
                return s;
            }
        }
        last
    }

    /// Rolls the dynamics forward from `s0`, returning `s_1..s_L`.
    pub fn rollout<R: Rng + ?Sized>(&self, s0: StateId, actions: &[ActionId], rng: &mut R) -> Result<Vec<StateId>> {
        check_index("state", s0, self.n_states)?;
        let mut out = Vec::with_capacity(actions.len());
        let mut s = s0;
        for &a in actions {
            s = self.sample_transition(s, a, rng)?;
            out.push(s);
        }
        Ok(out)
    }

    /// Model-mismatch wrapper: every row becomes `(1 - lambda) P + lambda U`.
    pub fn perturbed(&self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("noise rate {lambda} outside [0, 1]")));
        }
        if lambda == 0.0 {
            return Ok(self.clone());
        }
        let uniform = lambda / self.n_states as f64;
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut dense = vec![uniform; self.n_states];
                for &(n, p) in row {
                    dense[n] += (1.0 - lambda) * p;
                }
                dense.into_iter().enumerate().collect()
            })
            .collect();
        Ok(Self { rows, ..self.clone() })
    }

    /// Stable content digest, used as a cache key for derived tables.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_states as u64).to_le_bytes());
        h.update((self.n_actions as u64).to_le_bytes());
        for row in &self.rows {
            h.update((row.len() as u64).to_le_bytes());
            for &(n, p) in row {
                h.update((n as u64).to_le_bytes());
                h.update(p.to_bits().to_le_bytes());
            }
        }
        for p in &self.initial_dist {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn sample_row(row: &[(StateId, f64)], u: f64) -> StateId {
    let mut acc = 0.0;
    for &(n, p) in row {
        acc += p;
        if u < acc {
            return n;
        }
    }
    // u landed in the rounding slack above the last cumulative sum
    row.last().map(|(n, _)| *n).expect("validated rows are nonempty")
}

/// Goal abstraction, Euclidean goal metric over a per-goal coordinate table,
/// and achievement radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpace {
    abstraction: Vec<GoalId>,
    coords: Vec<Vec<f64>>,
    epsilon: f64,
}

impl GoalSpace {
    pub fn new(abstraction: Vec<GoalId>, coords: Vec<Vec<f64>>, epsilon: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Config("goal space needs at least one goal".into()));
        }
        let dim = coords[0].len();
        if coords.iter().any(|c| c.len() != dim || c.iter().any(|x| !x.is_finite())) {
            return Err(Error::Config("goal coordinates must be finite with a common dimension".into()));
        }
        for &g in &abstraction {
            check_index("goal", g, coords.len())?;
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { abstraction, coords, epsilon })
    }

    pub fn n_goals(&self) -> usize {
        self.coords.len()
    }

    pub fn n_states(&self) -> usize {
        self.abstraction.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn coords(&self, g: GoalId) -> &[f64] {
        &self.coords[g]
    }

    pub fn all_coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn abstraction(&self) -> &[GoalId] {
        &self.abstraction
    }

    /// `phi(s)`.
    pub fn phi(&self, s: StateId) -> Result<GoalId> {
        check_index("state", s, self.abstraction.len())?;
        Ok(self.abstraction[s])
    }

    /// `h(g, g')`.
    pub fn metric(&self, g: GoalId, other: GoalId) -> f64 {
        euclidean(&self.coords[g], &self.coords[other])
    }

    /// `h(phi(s), g) < epsilon`.
    pub fn goal_achieved(&self, s: StateId, g: GoalId) -> Result<bool> {
        let own = self.phi(s)?;
        check_index("goal", g, self.coords.len())?;
        Ok(self.metric(own, g) < self.epsilon)
    }

    pub(crate) fn achieves(&self, s: StateId, g: GoalId) -> bool {
        self.metric(self.abstraction[s], g) < self.epsilon
    }

    /// Looks up the goal whose coordinates match `coords` to within 1e-9.
    pub fn goal_index(&self, coords: &[f64]) -> Option<GoalId> {
        self.coords
            .iter()
            .position(|c| c.len() == coords.len() && c.iter().zip(coords).all(|(a, b)| (a - b).abs() <= 1e-9))
    }

    /// States in `phi^{-1}(g)`.
    pub fn preimage(&self, g: GoalId) -> impl Iterator<Item = StateId> + '_ {
        self.abstraction.iter().enumerate().filter(move |(_, &x)| x == g).map(|(s, _)| s)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Horizon, episode cap and goal sequence for one imitation task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvTaskConfig<G> {
    pub horizon: usize,
    pub t_max: usize,
    pub goals: Vec<G>,
}

impl<G> EnvTaskConfig<G> {
    pub fn new(horizon: usize, t_max: usize, goals: Vec<G>) -> Result<Self> {
        let cfg = Self { horizon, t_max, goals };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.horizon > self.t_max {
            return Err(Error::Config(format!(
                "need 1 <= horizon <= t_max, got horizon {} and t_max {}",
                self.horizon, self.t_max
            )));
        }
        if self.goals.is_empty() {
            return Err(Error::Config("goal sequence is empty".into()));
        }
        Ok(())
    }
}

/// Planner-facing view of an environment: dynamics, abstraction, metric and
/// achievement radius.
pub trait GoalEnv: Sync {
    type State: Clone + PartialEq + Debug + Send + Sync + Serialize;
    type Action: Clone + PartialEq + Debug + Send + Sync + Serialize;
    type Goal: Clone + PartialEq + Debug + Send + Sync + Serialize;

    fn step<R: Rng + ?Sized>(&self, s: &Self::State, a: &Self::Action, rng: &mut R) -> Self::State;

    /// `phi(s)`.
    fn achieved_goal(&self, s: &Self::State) -> Self::Goal;

    /// `h(g, g')`.
    fn goal_metric(&self, g: &Self::Goal, other: &Self::Goal) -> f64;

    fn epsilon(&self) -> f64;

    /// Draws `s_0`.
    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    fn is_achieved(&self, s: &Self::State, g: &Self::Goal) -> bool {
        self.goal_metric(&self.achieved_goal(s), g) < self.epsilon()
    }

    fn rollout<R: Rng + ?Sized>(&self, s0: &Self::State, actions: &[Self::Action], rng: &mut R) -> Vec<Self::State> {
        let mut s = s0.clone();
        actions
            .iter()
            .map(|a| {
                s = self.step(&s, a, rng);
                s.clone()
            })
            .collect()
    }
}

/// A tabular environment together with its goal space.
#[derive(Clone, Debug)]
pub struct TabularWorld {
    pub env: TabularEnv,
    pub goals: GoalSpace,
}

impl TabularWorld {
    pub fn new(env: TabularEnv, goals: GoalSpace) -> Result<Self> {
        if goals.n_states() != env.n_states() {
            return Err(Error::Config(format!(
                "goal abstraction covers {} states, environment has {}",
                goals.n_states(),
                env.n_states()
            )));
        }
        Ok(Self { env, goals })
    }

    /// Swaps in perturbed dynamics, keeping the goal space.
    pub fn with_model_noise(&self, lambda: f64) -> Result<Self> {
        Ok(Self { env: self.env.perturbed(lambda)?, goals: self.goals.clone() })
    }
}

impl GoalEnv for TabularWorld {
    type State = StateId;
    type Action = ActionId;
    type Goal = GoalId;

    fn step<R: Rng + ?Sized>(&self, s: &StateId, a: &ActionId, rng: &mut R) -> StateId {
        self.env.sample_unchecked(*s, *a, rng)
    }

    fn achieved_goal(&self, s: &StateId) -> GoalId {
        self.goals.abstraction[*s]
    }

    fn goal_metric(&self, g: &GoalId, other: &GoalId) -> f64 {
        self.goals.metric(*g, *other)
    }

    fn epsilon(&self) -> f64 {
        self.goals.epsilon
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        self.env.sample_initial(rng)
    }
}
