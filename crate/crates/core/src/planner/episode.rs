use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use super::objective::{ZilotConfig, ZilotPlanner};
use super::optimize::SequenceOptimizer;
use crate::error::{Error, Result};
use crate::harness::metrics::{finish, StepRecord, TaskResult};
use crate::mdp::{EnvTaskConfig, GoalEnv};
use crate::rng::{substream, ENV, INIT, OPTIMIZER, ROLLOUT};
use crate::value::DistanceModel;

pub type EpisodeResult<E> = TaskResult<<E as GoalEnv>::State, <E as GoalEnv>::Goal, <E as GoalEnv>::Action>;

/// Receding-horizon OT planning for one episode. The start state is drawn
/// from the environment's initial distribution unless `start` is given.
pub fn zilot_episode<E, M, O>(
    env: &E,
    model: &M,
    task: &EnvTaskConfig<E::Goal>,
    cfg: &ZilotConfig,
    optimizer: &O,
    seed: u64,
    start: Option<E::State>,
) -> Result<EpisodeResult<E>>
where
    E: GoalEnv,
    M: DistanceModel<E>,
    O: SequenceOptimizer<E::Action>,
{
    zilot_episode_with_model(env, env, model, task, cfg, optimizer, seed, start)
}

/// As [`zilot_episode`], but candidate rollouts use `rollout_env` while the
/// executed steps use `env`.
#[allow(clippy::too_many_arguments)]
pub fn zilot_episode_with_model<E, M, O>(
    env: &E,
    rollout_env: &E,
    model: &M,
    task: &EnvTaskConfig<E::Goal>,
    cfg: &ZilotConfig,
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
    let s0 = start.unwrap_or_else(|| env.initial_state(&mut substream(seed, INIT, 0)));
    let planner = ZilotPlanner::new(env, model, &task.goals, cfg, &s0)?;
    let goals = &task.goals;
    let last = goals.len() - 1;

    let mut env_rng = substream(seed, ENV, 0);
    let mut history = vec![s0];
    let mut records = Vec::new();
    let mut previous_plan: Option<Vec<E::Action>> = None;
    let mut early_exit = false;

    for k in 0..task.t_max {
        let ctx = planner.prepare(&history);
        let current = history[k].clone();
        if ctx.goal_window == last && env.is_achieved(&current, &goals[last]) {
            early_exit = true;
            break;
        }

        // identical rollouts score identically, so scores are memoized per step
        let memo: Mutex<HashMap<String, f64>> = Mutex::new(HashMap::new());
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let objective = |actions: &[E::Action]| -> f64 {
            let planned = rollout_env.rollout(&current, actions, &mut substream(seed, ROLLOUT, k as u64));
            let key = serde_json::to_string(&planned).unwrap_or_default();
            if let Some(&v) = memo.lock().unwrap().get(&key) {
                return v;
            }
            let v = match planner.score(&ctx, &planned) {
                Ok(v) => v.cost,
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    f64::INFINITY
                }
            };
            memo.lock().unwrap().insert(key, v);
            v
        };
        let out = optimizer.optimize(
            ctx.plan_horizon,
            &objective,
            previous_plan.as_deref(),
            &mut substream(seed, OPTIMIZER, k as u64),
        );
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }

        let next = env.step(&current, &out.best[0], &mut env_rng);
        history.push(next);
        records.push(StepRecord {
            step: k,
            target: ctx.goal_window,
            horizon: ctx.plan_horizon,
            objective: out.cost,
            evaluations: out.evaluations,
            fallback: out.fallback,
            plan: out.best.clone(),
        });
        previous_plan = Some(out.best);
    }

    finish(env, history, goals, records, seed, early_exit, started)
}
