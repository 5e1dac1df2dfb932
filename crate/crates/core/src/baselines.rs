//! Hierarchical baselines: a thresholded-distance goal classifier picks the
//! next goal, and a low-level controller (greedy policy or value-based MPC)
//! drives towards it.

use std::marker::PhantomData;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::PointMass;
use crate::error::{Error, Result};
use crate::harness::metrics::{finish, StepRecord};
use crate::mdp::{EnvTaskConfig, GoalEnv, TabularWorld};
use crate::planner::{EpisodeResult, SequenceOptimizer};
use crate::rng::{substream, ENV, INIT, OPTIMIZER, ROLLOUT};
use crate::value::{DistanceModel, GreedyPolicy, TabularModel};

/// `cls(s, g) = d(s, g) <= threshold`.
pub struct GoalClassifier<'a, E: ?Sized, M> {
    pub threshold: f64,
    model: &'a M,
    _env: PhantomData<fn(&E)>,
}

impl<'a, E, M> GoalClassifier<'a, E, M>
where
    E: GoalEnv + ?Sized,
    M: DistanceModel<E>,
{
    pub fn new(threshold: f64, model: &'a M) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("classifier threshold must be positive, got {threshold}")));
        }
        Ok(Self { threshold, model, _env: PhantomData })
    }

    pub fn cls(&self, s: &E::State, g: &E::Goal) -> bool {
        self.model.distance(s, g) <= self.threshold
    }
}

/// How classifier hits turn into the goal being pursued.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointerRule {
    /// Goals are confirmed strictly in sequence; pursue the first unconfirmed one.
    #[default]
    Ordered,
    /// Let `i` be the smallest goal index confirmed by any visited state and
    /// pursue goal `i + 1`; pursue goal 0 while nothing is confirmed.
    VisitedSetSmallest,
}

#[derive(Clone, Debug)]
struct GoalPointer {
    rule: PointerRule,
    reached: usize,
    hits: Vec<bool>,
}

impl GoalPointer {
    fn new(rule: PointerRule, n_goals: usize) -> Self {
        Self { rule, reached: 0, hits: vec![false; n_goals] }
    }

    fn observe(&mut self, cls: impl Fn(usize) -> bool) {
        match self.rule {
            PointerRule::Ordered => {
                while self.reached < self.hits.len() && cls(self.reached) {
                    self.hits[self.reached] = true;
                    self.reached += 1;
                }
            }
            PointerRule::VisitedSetSmallest => {
                for (j, hit) in self.hits.iter_mut().enumerate() {
                    *hit = *hit || cls(j);
                }
            }
        }
    }

    fn target(&self) -> usize {
        let last = self.hits.len() - 1;
        match self.rule {
            PointerRule::Ordered => self.reached.min(last),
            PointerRule::VisitedSetSmallest => self.hits.iter().position(|&h| h).map_or(0, |i| (i + 1).min(last)),
        }
    }
}

/// Goal-conditioned low-level policy.
pub trait GoalPolicy<E: GoalEnv>: Sync {
    fn act(&self, s: &E::State, g: &E::Goal) -> E::Action;
}

/// Tabular greedy policy on exact distances.
pub struct TabularGreedy {
    pub policy: GreedyPolicy,
}

impl TabularGreedy {
    pub fn new(world: &TabularWorld, model: &TabularModel) -> Self {
        Self { policy: crate::value::greedy_goal_policy(&world.env, &model.distance) }
    }
}

impl GoalPolicy<TabularWorld> for TabularGreedy {
    fn act(&self, s: &usize, g: &usize) -> usize {
        self.policy.action(*s, *g)
    }
}

/// Head straight for the goal at full speed.
pub struct StraightLine {
    pub dt: f64,
}

impl StraightLine {
    pub fn new(env: &PointMass) -> Self {
        Self { dt: env.spec.dt }
    }
}

impl GoalPolicy<PointMass> for StraightLine {
    fn act(&self, s: &[f64; 2], g: &[f64; 2]) -> Vec<f64> {
        // velocity clipping happens inside the environment
        vec![(g[0] - s[0]) / self.dt, (g[1] - s[1]) / self.dt]
    }
}

fn final_goal_reached<E: GoalEnv>(env: &E, s: &E::State, goals: &[E::Goal], pointer: &GoalPointer) -> bool {
    let last = goals.len() - 1;
    pointer.target() == last && env.is_achieved(s, &goals[last])
}

/// Classifier pointer plus a goal-conditioned policy.
pub fn pi_cls_episode<E, M, P>(
    env: &E,
    policy: &P,
    classifier: &GoalClassifier<'_, E, M>,
    task: &EnvTaskConfig<E::Goal>,
    rule: PointerRule,
    seed: u64,
    start: Option<E::State>,
) -> Result<EpisodeResult<E>>
where
    E: GoalEnv,
    M: DistanceModel<E>,
    P: GoalPolicy<E>,
{
    task.validate()?;
    let started = Instant::now();
    let goals = &task.goals;
    let s0 = start.unwrap_or_else(|| env.initial_state(&mut substream(seed, INIT, 0)));
    let mut pointer = GoalPointer::new(rule, goals.len());
    pointer.observe(|j| classifier.cls(&s0, &goals[j]));
    let mut env_rng = substream(seed, ENV, 0);
    let mut history = vec![s0];
    let mut records = Vec::new();
    let mut early_exit = false;

    for k in 0..task.t_max {
        let s = history[k].clone();
        if final_goal_reached(env, &s, goals, &pointer) {
            early_exit = true;
            break;
        }
        let target = pointer.target();
        let a = policy.act(&s, &goals[target]);
        let next = env.step(&s, &a, &mut env_rng);
        pointer.observe(|j| classifier.cls(&next, &goals[j]));
        history.push(next);
        records.push(StepRecord {
            step: k,
            target,
            horizon: 1,
            objective: f64::NAN,
            evaluations: 0,
            fallback: false,
            plan: vec![a],
        });
    }
    finish(env, history, goals, records, seed, early_exit, started)
}

/// `min_{t=1..H} (t + d(s_{k+t}, g))` over a rollout.
pub fn first_hit_surrogate<E, M>(model: &M, planned: &[E::State], g: &E::Goal) -> f64
where
    E: GoalEnv + ?Sized,
    M: DistanceModel<E>,
{
    planned
        .iter()
        .enumerate()
        .map(|(t, s)| (t + 1) as f64 + model.distance(s, g))
        .fold(f64::INFINITY, f64::min)
}

/// Classifier pointer plus MPC on the first-hit surrogate towards the
/// current goal.
#[allow(clippy::too_many_arguments)]
pub fn mpc_cls_episode<E, M, O>(
    env: &E,
    model: &M,
    classifier: &GoalClassifier<'_, E, M>,
    task: &EnvTaskConfig<E::Goal>,
    rule: PointerRule,
    optimizer: &O,
    seed: u64,
    start: Option<E::State>,
) -> Result<EpisodeResult<E>>
where
    E: GoalEnv,
    M: DistanceModel<E>,
    O: SequenceOptimizer<E::Action>,
{
    mpc_cls_episode_with_model(env, env, model, classifier, task, rule, optimizer, seed, start)
}

/// As [`mpc_cls_episode`] with candidate rollouts on `rollout_env`.
#[allow(clippy::too_many_arguments)]
pub fn mpc_cls_episode_with_model<E, M, O>(
    env: &E,
    rollout_env: &E,
    model: &M,
    classifier: &GoalClassifier<'_, E, M>,
    task: &EnvTaskConfig<E::Goal>,
    rule: PointerRule,
    optimizer: &O,
    seed: u64,
    start: Option<E::State>,
) -> Result<EpisodeResult<E>>
where
    E: GoalEnv,
    M: DistanceModel<E>,
    O: SequenceOptimizer<E::Action>,
{
    task.validate()?;
    let started = Instant::now();
    let goals = &task.goals;
    let s0 = start.unwrap_or_else(|| env.initial_state(&mut substream(seed, INIT, 0)));
    let mut pointer = GoalPointer::new(rule, goals.len());
    pointer.observe(|j| classifier.cls(&s0, &goals[j]));
    let mut env_rng = substream(seed, ENV, 0);
    let mut history = vec![s0];
    let mut records = Vec::new();
    let mut previous_plan: Option<Vec<E::Action>> = None;
    let mut early_exit = false;

    for k in 0..task.t_max {
        let s = history[k].clone();
        if final_goal_reached(env, &s, goals, &pointer) {
            early_exit = true;
            break;
        }
        let target = pointer.target();
        let goal = &goals[target];
        let objective = |actions: &[E::Action]| -> f64 {
            let planned = rollout_env.rollout(&s, actions, &mut substream(seed, ROLLOUT, k as u64));
            first_hit_surrogate::<E, M>(model, &planned, goal)
        };
        let out = optimizer.optimize(
            task.horizon,
            &objective,
            previous_plan.as_deref(),
            &mut substream(seed, OPTIMIZER, k as u64),
        );
        let next = env.step(&s, &out.best[0], &mut env_rng);
        pointer.observe(|j| classifier.cls(&next, &goals[j]));
        history.push(next);
        records.push(StepRecord {
            step: k,
            target,
            horizon: task.horizon,
            objective: out.cost,
            evaluations: out.evaluations,
            fallback: out.fallback,
            plan: out.best.clone(),
        });
        previous_plan = Some(out.best);
    }
    finish(env, history, goals, records, seed, early_exit, started)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_pointer_never_skips() {
        let mut p = GoalPointer::new(PointerRule::Ordered, 3);
        p.observe(|j| j == 1);
        assert_eq!(p.target(), 0);
        p.observe(|j| j == 0);
        assert_eq!(p.target(), 1);
        p.observe(|j| j <= 2);
        assert_eq!(p.target(), 2);
        assert_eq!(p.reached, 3);
    }

    #[test]
    fn visited_set_takes_smallest_hit() {
        let mut p = GoalPointer::new(PointerRule::VisitedSetSmallest, 3);
        assert_eq!(p.target(), 0);
        p.observe(|j| j == 1);
        assert_eq!(p.target(), 2);
        p.observe(|j| j == 0);
        assert_eq!(p.target(), 1);
    }

    #[test]
    fn surrogate_prefers_early_hits() {
        let world = crate::envs::build_chain(0.0).unwrap();
        let model = TabularModel::compute(&world, 20).unwrap();
        // states (1,1), (2,1): hit x=2 after two steps
        assert_eq!(first_hit_surrogate::<TabularWorld, _>(&model, &[2, 3], &2), 2.0);
        assert_eq!(first_hit_surrogate::<TabularWorld, _>(&model, &[1, 1], &2), 21.0);
    }

    #[test]
    fn classifier_threshold() {
        let world = crate::envs::build_chain(0.5).unwrap();
        let model = TabularModel::compute(&world, 20).unwrap();
        let c = GoalClassifier::<TabularWorld, _>::new(1.0, &model).unwrap();
        assert!(c.cls(&0, &0));
        assert!(c.cls(&0, &1));
        assert!(!c.cls(&1, &2));
        assert!(GoalClassifier::<TabularWorld, _>::new(0.0, &model).is_err());
    }
}
