use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::PointerRule;
use crate::envs::{
    build_chain, build_maze, build_pointmass, build_slippery, EnvFile, MazeSpec, PointMass, PointMassDistance,
    PointMassSpec, SlipperySpec,
};
use crate::error::{Error, Result};
use crate::mdp::{EnvTaskConfig, GoalId, TabularWorld};
use crate::ot::SinkhornConfig;
use crate::planner::{CostSource, IcemConfig, OtSolver, ZilotConfig};
use crate::value::{TableCache, TabularModel};

/// One imitation task: environment, goal coordinates, horizon and cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub name: String,
    /// `chain`, `maze`, `slippery`, `pointmass` or `file`.
    pub env: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub goals: Vec<Vec<f64>>,
    pub horizon: usize,
    pub t_max: usize,
    /// Planner-side model mixes each transition row with uniform noise.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub model_noise: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Deserialize)]
struct ChainParams {
    p: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FileParams {
    Path { path: PathBuf },
    Inline(EnvFile),
}

/// An environment ready for planning, with its distance model.
pub enum BuiltEnv {
    Tabular {
        world: TabularWorld,
        /// Dynamics the planner rolls out; equals `world` unless model noise is set.
        planning: TabularWorld,
        model: TabularModel,
        task: EnvTaskConfig<GoalId>,
    },
    PointMass {
        env: PointMass,
        model: PointMassDistance,
        task: EnvTaskConfig<[f64; 2]>,
    },
}

impl BuiltEnv {
    pub fn n_states(&self) -> Option<usize> {
        match self {
            BuiltEnv::Tabular { world, .. } => Some(world.env.n_states()),
            BuiltEnv::PointMass { .. } => None,
        }
    }
}

fn params<T: for<'de> Deserialize<'de>>(task: &TaskFile) -> Result<T> {
    serde_json::from_value(task.params.clone())
        .map_err(|e| Error::Config(format!("task {}: bad {} params: {e}", task.name, task.env)))
}

impl TaskFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Builds the tabular world named by `env`, or `None` for the point mass.
    pub fn tabular_world(&self, base: &Path) -> Result<Option<TabularWorld>> {
        let world = match self.env.as_str() {
            "chain" => build_chain(params::<ChainParams>(self)?.p)?,
            "maze" => build_maze(&params::<MazeSpec>(self)?)?.0,
            "slippery" => build_slippery(&params::<SlipperySpec>(self)?)?.0,
            "file" => match params::<FileParams>(self)? {
                FileParams::Path { path } => {
                    let text = std::fs::read_to_string(base.join(path))?;
                    serde_json::from_str::<EnvFile>(&text)?.into_world()?
                }
                FileParams::Inline(f) => f.into_world()?,
            },
            "pointmass" => return Ok(None),
            other => return Err(Error::Config(format!("task {}: unknown env {other:?}", self.name))),
        };
        Ok(Some(world))
    }

    /// Replaces a `file` environment given by path with its contents, so the
    /// task is self-contained.
    pub fn inline_env_file(&mut self, base: &Path) -> Result<()> {
        if self.env != "file" {
            return Ok(());
        }
        if let Ok(FileParams::Path { path }) = params::<FileParams>(self) {
            let file: EnvFile = serde_json::from_str(&std::fs::read_to_string(base.join(path))?)?;
            self.params = serde_json::to_value(file)?;
        }
        Ok(())
    }

    fn pointmass_spec(&self) -> Result<PointMassSpec> {
        if self.params.is_null() {
            Ok(PointMassSpec::default())
        } else {
            params(self)
        }
    }

    /// Checks names and goal coordinates without solving for values.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if let Some(world) = self.tabular_world(base)? {
            self.goal_ids(&world)?;
        } else {
            build_pointmass(self.pointmass_spec()?)?;
            self.point_goals()?;
        }
        EnvTaskConfig::new(self.horizon, self.t_max, self.goals.clone())?;
        if !(0.0..=1.0).contains(&self.model_noise) {
            return Err(Error::Config(format!("task {}: model_noise must lie in [0, 1]", self.name)));
        }
        Ok(())
    }

    fn goal_ids(&self, world: &TabularWorld) -> Result<Vec<GoalId>> {
        self.goals
            .iter()
            .map(|g| {
                world
                    .goals
                    .goal_index(g)
                    .ok_or_else(|| Error::Config(format!("task {}: goal {g:?} is not in the goal space", self.name)))
            })
            .collect()
    }

    fn point_goals(&self) -> Result<Vec<[f64; 2]>> {
        self.goals
            .iter()
            .map(|g| match g.as_slice() {
                [x, y] => Ok([*x, *y]),
                _ => Err(Error::Config(format!("task {}: point-mass goals are 2-D, got {g:?}", self.name))),
            })
            .collect()
    }

    /// Builds the environment and its distance model for `horizon`.
    pub fn build(&self, base: &Path, horizon: usize, cache: Option<&TableCache>) -> Result<BuiltEnv> {
        match self.tabular_world(base)? {
            Some(world) => {
                let goals = self.goal_ids(&world)?;
                let task = EnvTaskConfig::new(horizon, self.t_max, goals)?;
                let planning = if self.model_noise > 0.0 { world.with_model_noise(self.model_noise)? } else { world.clone() };
                let model = match cache {
                    Some(c) => c.load_or_compute(&planning, self.t_max)?,
                    None => TabularModel::compute(&planning, self.t_max)?,
                };
                Ok(BuiltEnv::Tabular { world, planning, model, task })
            }
            None => {
                let env = build_pointmass(self.pointmass_spec()?)?;
                let model = env.distance_model(self.t_max);
                let task = EnvTaskConfig::new(horizon, self.t_max, self.point_goals()?)?;
                Ok(BuiltEnv::PointMass { env, model, task })
            }
        }
    }
}

/// Sequence optimizer selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerSpec {
    Exhaustive,
    Icem(IcemConfig),
}

/// Planner entry of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerSpec {
    /// `zilot`, `zilot+h`, `zilot+cls`, `zilot+unbalanced`, `pi+cls` or `mpc+cls`.
    pub planner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Overrides the task horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// OT solver inside the planning objective.
    #[serde(default)]
    pub solver: OtSolver,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSpec>,
    /// Classifier threshold for `pi+cls`, `mpc+cls` and `zilot+cls`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub pointer: PointerRule,
}

pub const PLANNERS: [&str; 6] = ["zilot", "zilot+h", "zilot+cls", "zilot+unbalanced", "pi+cls", "mpc+cls"];

impl PlannerSpec {
    pub fn new(planner: &str) -> Self {
        Self {
            planner: planner.into(),
            label: None,
            horizon: None,
            solver: OtSolver::Sinkhorn,
            sinkhorn: SinkhornConfig::default(),
            optimizer: None,
            threshold: None,
            pointer: PointerRule::Ordered,
        }
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.planner.clone())
    }

    pub fn is_zilot(&self) -> bool {
        self.planner.starts_with("zilot")
    }

    pub fn validate(&self) -> Result<()> {
        if !PLANNERS.contains(&self.planner.as_str()) {
            return Err(Error::Config(format!("unknown planner {:?}", self.planner)));
        }
        let needs_threshold = matches!(self.planner.as_str(), "pi+cls" | "mpc+cls" | "zilot+cls");
        if needs_threshold && self.threshold.is_none() {
            return Err(Error::Config(format!("planner {} needs a threshold", self.planner)));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                return Err(Error::Config(format!("classifier threshold must be positive, got {t}")));
            }
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("planner horizon must be at least 1".into()));
        }
        if let Some(OptimizerSpec::Icem(c)) = &self.optimizer {
            c.validate()?;
        }
        if self.is_zilot() {
            self.zilot_config(1).validate()?;
        }
        self.sinkhorn.validate()
    }

    /// OT planner settings for `horizon`.
    pub fn zilot_config(&self, horizon: usize) -> ZilotConfig {
        let mut cfg = ZilotConfig::new(horizon);
        cfg.solver = self.solver;
        cfg.sinkhorn = self.sinkhorn.clone();
        match self.planner.as_str() {
            "zilot+h" => cfg.cost_source = CostSource::Metric,
            "zilot+cls" => cfg.cls_threshold = self.threshold,
            "zilot+unbalanced" => {
                cfg.unbalanced = true;
                cfg.sinkhorn.xi_b.get_or_insert(1.0);
            }
            _ => {}
        }
        cfg
    }
}

/// Experiment matrix: tasks x planners x seeds x episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Task files, relative to the config file.
    pub tasks: Vec<PathBuf>,
    pub planners: Vec<PlannerSpec>,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub episodes_per_seed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// An experiment with task files resolved.
#[derive(Clone, Debug)]
pub struct LoadedExperiment {
    pub config: ExperimentConfig,
    pub base: PathBuf,
    pub tasks: Vec<TaskFile>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<LoadedExperiment> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve(&base)
    }

    /// Loads and validates every task and planner.
    pub fn resolve(self, base: &Path) -> Result<LoadedExperiment> {
        if self.tasks.is_empty() || self.planners.is_empty() || self.seeds.is_empty() || self.episodes_per_seed == 0 {
            return Err(Error::Config("experiment needs tasks, planners, seeds and episodes".into()));
        }
        let mut tasks = self.tasks.iter().map(|p| TaskFile::load(&base.join(p))).collect::<Result<Vec<_>>>()?;
        for t in &mut tasks {
            t.inline_env_file(base)?;
            t.validate(base)?;
        }
        for p in &self.planners {
            p.validate()?;
            for t in &tasks {
                let continuous = t.env == "pointmass";
                match (&p.optimizer, continuous) {
                    (Some(OptimizerSpec::Icem(_)), false) => {
                        return Err(Error::Config(format!("task {}: iCEM needs a continuous action space", t.name)))
                    }
                    (Some(OptimizerSpec::Exhaustive), true) => {
                        return Err(Error::Config(format!("task {}: exhaustive search needs discrete actions", t.name)))
                    }
                    _ => {}
                }
                if let Some(h) = p.horizon {
                    EnvTaskConfig::new(h, t.t_max, t.goals.clone())?;
                }
            }
        }
        let mut names: Vec<String> = self.planners.iter().map(PlannerSpec::name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.planners.len() {
            return Err(Error::Config("planner names must be unique; set `label`".into()));
        }
        let mut task_names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
        task_names.sort();
        task_names.dedup();
        if task_names.len() != tasks.len() {
            return Err(Error::Config("task names must be unique".into()));
        }
        Ok(LoadedExperiment { config: self, base: base.to_path_buf(), tasks })
    }
}
