use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{effective_horizon, estimate_goal_times, select_reachable_goals, GoalSchedule};
use crate::error::{Error, Result};
use crate::mdp::GoalEnv;
use crate::ot::{sinkhorn, sinkhorn_unbalanced, transport_simplex, Matrix, OtProblem, SinkhornConfig};
use crate::value::DistanceModel;

/// Where OT cost entries come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostSource {
    /// `d(s_i, g_j)`.
    #[default]
    Distance,
    /// `h(phi(s_i), g_j)`.
    Metric,
}

/// Solver for the planning OT problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OtSolver {
    #[default]
    Sinkhorn,
    /// Transportation simplex; balanced only.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZilotConfig {
    pub horizon: usize,
    #[serde(default)]
    pub solver: OtSolver,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    #[serde(default)]
    pub cost_source: CostSource,
    /// Soft goal marginal, weight taken from `sinkhorn.xi_b`.
    #[serde(default)]
    pub unbalanced: bool,
    /// Drop classifier-confirmed goals and the history before them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cls_threshold: Option<f64>,
}

impl ZilotConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            solver: OtSolver::Sinkhorn,
            sinkhorn: SinkhornConfig::default(),
            cost_source: CostSource::Distance,
            unbalanced: false,
            cls_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("planning horizon must be at least 1".into()));
        }
        self.sinkhorn.validate()?;
        if self.unbalanced && self.sinkhorn.xi_b.is_none() {
            return Err(Error::Config("unbalanced planning needs sinkhorn.xi_b".into()));
        }
        if self.unbalanced && self.solver == OtSolver::Exact {
            return Err(Error::Config("the exact solver only handles balanced problems".into()));
        }
        if let Some(t) = self.cls_threshold {
            if !(t > 0.0) {
                return Err(Error::Config(format!("classifier threshold must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// History, step counter and goal schedule of a running episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerState<S> {
    pub history: Vec<S>,
    pub schedule: GoalSchedule,
}

impl<S> PlannerState<S> {
    pub fn step(&self) -> usize {
        self.history.len() - 1
    }
}

/// Everything about one planning step that does not depend on the candidate
/// action sequence.
#[derive(Clone, Debug)]
pub struct StepContext<S> {
    pub step: usize,
    pub current: S,
    /// `K` before classifier filtering.
    pub goal_window: usize,
    pub plan_horizon: usize,
    /// First goal index still in the target marginal.
    pub first_goal: usize,
    /// Clamped cost rows of the retained history states.
    history_rows: Vec<Vec<f64>>,
    /// All goals confirmed by the classifier.
    pub done: bool,
}

/// Objective value plus the flag raised when no goals remain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub cost: f64,
    pub done: bool,
}

/// Scores candidate action sequences by the OT cost between the visited plus
/// planned states and the goals still in scope.
pub struct ZilotPlanner<'a, E: GoalEnv, M> {
    env: &'a E,
    model: &'a M,
    goals: &'a [E::Goal],
    cfg: &'a ZilotConfig,
    schedule: GoalSchedule,
}

/// `min(1, max(0, c / t_max))`.
pub fn clamp_cost(c: f64, t_max: f64) -> f64 {
    (c / t_max).clamp(0.0, 1.0)
}

impl<'a, E, M> ZilotPlanner<'a, E, M>
where
    E: GoalEnv,
    M: DistanceModel<E>,
{
    pub fn new(env: &'a E, model: &'a M, goals: &'a [E::Goal], cfg: &'a ZilotConfig, s0: &E::State) -> Result<Self> {
        cfg.validate()?;
        if goals.is_empty() {
            return Err(Error::Config("goal sequence is empty".into()));
        }
        let schedule = estimate_goal_times::<E, M>(model, s0, goals);
        Ok(Self { env, model, goals, cfg, schedule })
    }

    pub fn schedule(&self) -> &GoalSchedule {
        &self.schedule
    }

    fn cost_row(&self, s: &E::State, goals: &[E::Goal]) -> Vec<f64> {
        let t_max = self.model.t_max();
        match self.cfg.cost_source {
            CostSource::Distance => goals.iter().map(|g| clamp_cost(self.model.distance(s, g), t_max)).collect(),
            CostSource::Metric => {
                let own = self.env.achieved_goal(s);
                goals.iter().map(|g| clamp_cost(self.env.goal_metric(&own, g), t_max)).collect()
            }
        }
    }

    /// Order-respecting classifier scan of the history: returns the number of
    /// confirmed goals and the step of the latest confirmation.
    fn classifier_progress(&self, history: &[E::State], threshold: f64) -> (usize, usize) {
        let mut reached = 0;
        let mut last = 0;
        for (t, s) in history.iter().enumerate() {
            while reached < self.goals.len() && self.model.distance(s, &self.goals[reached]) <= threshold {
                reached += 1;
                last = t;
            }
        }
        (reached, last)
    }

    pub fn prepare(&self, history: &[E::State]) -> StepContext<E::State> {
        let k = history.len() - 1;
        let last = self.goals.len() - 1;
        let goal_window = select_reachable_goals(&self.schedule, k, self.cfg.horizon);
        let plan_horizon = effective_horizon(&self.schedule, k, self.cfg.horizon);
        let (first_goal, first_state) = match self.cfg.cls_threshold {
            Some(th) => self.classifier_progress(history, th),
            None => (0, 0),
        };
        let done = first_goal > last;
        let window_end = goal_window.max(first_goal).min(last);
        let history_rows = if done {
            Vec::new()
        } else {
            let window = &self.goals[first_goal..=window_end];
            history[first_state..].iter().map(|s| self.cost_row(s, window)).collect()
        };
        StepContext {
            step: k,
            current: history[k].clone(),
            goal_window,
            plan_horizon,
            first_goal,
            history_rows,
            done,
        }
    }

    fn window_end(&self, ctx: &StepContext<E::State>) -> usize {
        ctx.goal_window.max(ctx.first_goal).min(self.goals.len() - 1)
    }

    /// Rolls out `actions` from the current state with `rng` and returns the
    /// OT cost of the resulting occupancy against the goal window.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        ctx: &StepContext<E::State>,
        actions: &[E::Action],
        rng: &mut R,
    ) -> Result<ObjectiveValue> {
        if ctx.done {
            return Ok(ObjectiveValue { cost: 0.0, done: true });
        }
        let planned = self.env.rollout(&ctx.current, actions, rng);
        self.score(ctx, &planned)
    }

    /// OT cost of retained history followed by `planned`.
    pub fn score(&self, ctx: &StepContext<E::State>, planned: &[E::State]) -> Result<ObjectiveValue> {
        if ctx.done {
            return Ok(ObjectiveValue { cost: 0.0, done: true });
        }
        let window = &self.goals[ctx.first_goal..=self.window_end(ctx)];
        let n = ctx.history_rows.len() + planned.len();
        let m = window.len();
        let mut data = Vec::with_capacity(n * m);
        for row in &ctx.history_rows {
            data.extend_from_slice(row);
        }
        for s in planned {
            data.extend(self.cost_row(s, window));
        }
        let problem = OtProblem {
            cost: Matrix::from_fn(n, m, |i, j| data[i * m + j]),
            source_weights: vec![1.0 / n as f64; n],
            target_weights: vec![1.0 / m as f64; m],
        };
        let plan = match (self.cfg.solver, self.cfg.unbalanced) {
            (OtSolver::Exact, _) => transport_simplex(&problem)?,
            (OtSolver::Sinkhorn, true) => sinkhorn_unbalanced(&problem, &self.cfg.sinkhorn)?,
            (OtSolver::Sinkhorn, false) => sinkhorn(&problem, &self.cfg.sinkhorn)?,
        };
        Ok(ObjectiveValue { cost: plan.cost, done: false })
    }

    pub fn env(&self) -> &E {
        self.env
    }

    pub fn goals(&self) -> &[E::Goal] {
        self.goals
    }
}

/// One-shot form of the objective for a given planner state.
pub fn zilot_objective<E, M, R>(
    state: &PlannerState<E::State>,
    actions: &[E::Action],
    env: &E,
    model: &M,
    goals: &[E::Goal],
    cfg: &ZilotConfig,
    rng: &mut R,
) -> Result<ObjectiveValue>
where
    E: GoalEnv,
    M: DistanceModel<E>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let planner = ZilotPlanner { env, model, goals, cfg, schedule: state.schedule.clone() };
    let ctx = planner.prepare(&state.history);
    planner.evaluate(&ctx, actions, rng)
}
