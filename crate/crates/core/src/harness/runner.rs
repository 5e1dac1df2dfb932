use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BuiltEnv, LoadedExperiment, OptimizerSpec, PlannerSpec, TaskFile};
use super::metrics::{goal_fraction, w_min};
use crate::baselines::{
    mpc_cls_episode_with_model, pi_cls_episode, GoalClassifier, StraightLine, TabularGreedy,
};
use crate::envs::{build_pointmass, PointMassSpec};
use crate::error::{Error, Result};
use crate::planner::{zilot_episode_with_model, Exhaustive, Icem, IcemConfig};
use crate::value::TableCache;

/// One row of `results.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub env: String,
    pub task: String,
    pub planner: String,
    pub seed: u64,
    pub episode: usize,
    pub w_min: f64,
    pub goal_fraction: f64,
    pub n_steps: usize,
    pub diagnostics_path: String,
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub planner: String,
    pub w_min_mean: f64,
    pub w_min_std: f64,
    pub gf_mean: f64,
    pub gf_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
    pub seed_base: u64,
}

/// Stored per-episode record; enough to rebuild the environment and
/// recompute the metrics.
#[derive(Serialize)]
struct Diagnostics<'a, R: Serialize> {
    task: &'a TaskFile,
    planner: &'a PlannerSpec,
    seed: u64,
    episode: usize,
    episode_seed: u64,
    result: R,
}

/// Seed actually handed to the episode.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

struct Cell {
    task: usize,
    planner: usize,
    seed: u64,
    episode: usize,
}

struct CellOutput {
    w_min: f64,
    goal_fraction: f64,
    n_steps: usize,
    diagnostics: String,
}

fn horizon_for(task: &TaskFile, planner: &PlannerSpec) -> usize {
    planner.horizon.unwrap_or(task.horizon)
}

fn run_cell(task: &TaskFile, spec: &PlannerSpec, built: &BuiltEnv, seed: u64, episode: usize) -> Result<CellOutput> {
    let es = episode_seed(seed, episode);
    macro_rules! finish {
        ($result:expr) => {{
            let result = $result;
            let diag = Diagnostics { task, planner: spec, seed, episode, episode_seed: es, result: &result };
            CellOutput {
                w_min: result.w_min,
                goal_fraction: result.goal_fraction,
                n_steps: result.n_steps(),
                diagnostics: serde_json::to_string_pretty(&diag)?,
            }
        }};
    }
    let out = match built {
        BuiltEnv::Tabular { world, planning, model, task: t } => {
            let opt = Exhaustive { n_actions: world.env.n_actions() };
            match spec.planner.as_str() {
                "pi+cls" => {
                    let c = GoalClassifier::new(spec.threshold.unwrap_or(1.0), model)?;
                    let policy = TabularGreedy::new(planning, model);
                    finish!(pi_cls_episode(world, &policy, &c, t, spec.pointer, es, None)?)
                }
                "mpc+cls" => {
                    let c = GoalClassifier::new(spec.threshold.unwrap_or(1.0), model)?;
                    finish!(mpc_cls_episode_with_model(world, planning, model, &c, t, spec.pointer, &opt, es, None)?)
                }
                _ => {
                    let cfg = spec.zilot_config(t.horizon);
                    finish!(zilot_episode_with_model(world, planning, model, t, &cfg, &opt, es, None)?)
                }
            }
        }
        BuiltEnv::PointMass { env, model, task: t } => {
            let icem_cfg = match &spec.optimizer {
                Some(OptimizerSpec::Icem(c)) => c.clone(),
                _ => IcemConfig { horizon: t.horizon, ..IcemConfig::default() },
            };
            let opt = Icem::new(icem_cfg, env.action_box())?;
            match spec.planner.as_str() {
                "pi+cls" => {
                    let c = GoalClassifier::new(spec.threshold.unwrap_or(1.0), model)?;
                    finish!(pi_cls_episode(env, &StraightLine::new(env), &c, t, spec.pointer, es, None)?)
                }
                "mpc+cls" => {
                    let c = GoalClassifier::new(spec.threshold.unwrap_or(1.0), model)?;
                    finish!(mpc_cls_episode_with_model(env, env, model, &c, t, spec.pointer, &opt, es, None)?)
                }
                _ => {
                    let cfg = spec.zilot_config(t.horizon);
                    finish!(zilot_episode_with_model(env, env, model, t, &cfg, &opt, es, None)?)
                }
            }
        }
    };
    Ok(out)
}

fn mean_std(per_seed: &[f64]) -> (f64, f64) {
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    if per_seed.len() < 2 {
        return (mean, 0.0);
    }
    let var = per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per (task, planner): mean over all episodes, standard deviation across
/// the per-seed means.
pub fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.task.clone(), c.planner.clone()))
            .or_default()
            .entry(c.seed)
            .or_default()
            .push((c.w_min, c.goal_fraction));
    }
    groups
        .into_iter()
        .map(|((task, planner), seeds)| {
            let per_seed = |f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
                seeds.values().map(|v| v.iter().map(f).sum::<f64>() / v.len() as f64).collect()
            };
            let (w_min_mean, w_min_std) = mean_std(&per_seed(|x| x.0));
            let (gf_mean, gf_std) = mean_std(&per_seed(|x| x.1));
            SummaryRow { task, planner, w_min_mean, w_min_std, gf_mean, gf_std }
        })
        .collect()
}

/// Runs every cell of the matrix and writes `results.json`, `summary.csv`
/// and one diagnostics file per cell under `opts.out`.
pub fn run_experiment(exp: &LoadedExperiment, opts: &RunOptions) -> Result<ExperimentOutput> {
    let cfg = &exp.config;
    let cache = cfg.cache_dir.as_ref().map(|d| TableCache::new(exp.base.join(d)));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut built: BTreeMap<(usize, usize), BuiltEnv> = BTreeMap::new();
    for (ti, task) in exp.tasks.iter().enumerate() {
        for p in &cfg.planners {
            let h = horizon_for(task, p);
            if let std::collections::btree_map::Entry::Vacant(e) = built.entry((ti, h)) {
                e.insert(pool.install(|| task.build(&exp.base, h, cache.as_ref()))?);
            }
        }
    }

    let mut cells = Vec::new();
    for ti in 0..exp.tasks.len() {
        for pi in 0..cfg.planners.len() {
            for &s in &cfg.seeds {
                for e in 0..cfg.episodes_per_seed {
                    cells.push(Cell { task: ti, planner: pi, seed: s.wrapping_add(opts.seed_base), episode: e });
                }
            }
        }
    }

    let outputs: Vec<Result<CellOutput>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let task = &exp.tasks[c.task];
                let spec = &cfg.planners[c.planner];
                let env = &built[&(c.task, horizon_for(task, spec))];
                run_cell(task, spec, env, c.seed, c.episode)
            })
            .collect()
    });

    let diag_dir = opts.out.join("diagnostics");
    std::fs::create_dir_all(&diag_dir)?;
    let mut results = Vec::with_capacity(cells.len());
    for (c, out) in cells.iter().zip(outputs) {
        let out = out?;
        let task = &exp.tasks[c.task];
        let spec = &cfg.planners[c.planner];
        let rel = format!(
            "diagnostics/{}__{}__s{}__e{}.json",
            sanitize(&task.name),
            sanitize(&spec.name()),
            c.seed,
            c.episode
        );
        std::fs::write(opts.out.join(&rel), out.diagnostics)?;
        results.push(CellResult {
            env: task.env.clone(),
            task: task.name.clone(),
            planner: spec.name(),
            seed: c.seed,
            episode: c.episode,
            w_min: out.w_min,
            goal_fraction: out.goal_fraction,
            n_steps: out.n_steps,
            diagnostics_path: rel,
        });
    }
    results.sort_by(|a, b| {
        (&a.task, &a.planner, a.seed, a.episode).cmp(&(&b.task, &b.planner, b.seed, b.episode))
    });
    let summary = summarize(&results);

    std::fs::write(opts.out.join("results.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    let mut csv = csv::Writer::from_path(opts.out.join("summary.csv")).map_err(csv_err)?;
    for row in &summary {
        csv.serialize(row).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(ExperimentOutput { cells: results, summary })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv: {e}"))
}

/// Metrics recomputed from a stored diagnostics file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecomputedMetrics {
    pub w_min: f64,
    pub goal_fraction: f64,
    pub n_steps: usize,
}

#[derive(Deserialize)]
struct StoredResult {
    trajectory: serde_json::Value,
    goals: serde_json::Value,
}

#[derive(Deserialize)]
struct StoredDiagnostics {
    task: TaskFile,
    result: StoredResult,
}

pub fn recompute_metrics(path: &Path) -> Result<RecomputedMetrics> {
    let stored: StoredDiagnostics = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    match stored.task.tabular_world(base)? {
        Some(world) => {
            let traj: Vec<usize> = serde_json::from_value(stored.result.trajectory)?;
            let goals: Vec<usize> = serde_json::from_value(stored.result.goals)?;
            if traj.iter().any(|&s| s >= world.env.n_states()) || goals.iter().any(|&g| g >= world.goals.n_goals()) {
                return Err(Error::Config("stored trajectory or goals out of range for the environment".into()));
            }
            Ok(RecomputedMetrics {
                w_min: w_min(&world, &traj, &goals)?,
                goal_fraction: goal_fraction(&world, &traj, &goals)?,
                n_steps: traj.len().saturating_sub(1),
            })
        }
        None => {
            let spec: PointMassSpec = if stored.task.params.is_null() {
                PointMassSpec::default()
            } else {
                serde_json::from_value(stored.task.params.clone())?
            };
            let env = build_pointmass(spec)?;
            let traj: Vec<[f64; 2]> = serde_json::from_value(stored.result.trajectory)?;
            let goals: Vec<[f64; 2]> = serde_json::from_value(stored.result.goals)?;
            Ok(RecomputedMetrics {
                w_min: w_min(&env, &traj, &goals)?,
                goal_fraction: goal_fraction(&env, &traj, &goals)?,
                n_steps: traj.len().saturating_sub(1),
            })
        }
    }
}
