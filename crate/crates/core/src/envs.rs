//! Built-in environments.
//!
//! - [`build_chain`]: the four-state counterexample chain where the
//!   myopic hierarchical agent provably strands itself.
//! - [`build_maze`]: deterministic waypoint gridworld.
//! - [`build_slippery`]: an agent confined to a band of columns pushes a puck
//!   that slides; a puck pushed out of the band is lost.
//! - [`build_pointmass`]: continuous 2-D point mass with an analytic distance,
//!   used to exercise iCEM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{euclidean, GoalEnv, GoalSpace, StateId, TabularEnv, TabularWorld};
use crate::value::DistanceModel;

pub const CHAIN_A0: usize = 0;
pub const CHAIN_A1: usize = 1;

/// States `(0,0), (1,0), (1,1), (2,1)` in that index order, goals are the
/// `x` coordinate. `a1` only differs from `a0` in `(0,0)`.
pub fn build_chain(p: f64) -> Result<TabularWorld> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("chain needs 0 <= p < 1, got {p}")));
    }
    let point = |s: usize| {
        let mut row = vec![0.0; 4];
        row[s] = 1.0;
        row
    };
    let transitions = vec![
        vec![point(1), vec![p, 0.0, 1.0 - p, 0.0]],
        vec![point(1), point(1)],
        vec![point(3), point(3)],
        vec![point(3), point(3)],
    ];
    let labels = ["(0,0)", "(1,0)", "(1,1)", "(2,1)"].map(String::from).to_vec();
    let env = TabularEnv::new(transitions, vec![1.0, 0.0, 0.0, 0.0], Some(labels))?;
    let goals = GoalSpace::new(vec![0, 1, 1, 2], vec![vec![0.0], vec![1.0], vec![2.0]], 0.5)?;
    TabularWorld::new(env, goals)
}

/// Grid moves: up, down, left, right, stay.
pub const GRID_MOVES: [(isize, isize); 5] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    /// Rows of `#` (wall) and `.` (free).
    pub layout: Vec<String>,
    /// `[row, col]` of the start cell.
    pub start: [usize; 2],
}

/// A built grid with its cell indexing.
#[derive(Clone, Debug)]
pub struct GridIndex {
    pub height: usize,
    pub width: usize,
    /// State index of each cell, `None` for walls.
    pub cell_state: Vec<Option<StateId>>,
    pub state_cell: Vec<(usize, usize)>,
}

impl GridIndex {
    pub fn state_at(&self, r: usize, c: usize) -> Option<StateId> {
        if r < self.height && c < self.width {
            self.cell_state[r * self.width + c]
        } else {
            None
        }
    }
}

fn parse_layout(layout: &[String]) -> Result<(usize, usize, Vec<bool>)> {
    let height = layout.len();
    let width = layout.first().map_or(0, |r| r.chars().count());
    if height == 0 || width == 0 || layout.iter().any(|r| r.chars().count() != width) {
        return Err(Error::Config("maze layout must be a nonempty rectangle".into()));
    }
    let mut free = Vec::with_capacity(height * width);
    for row in layout {
        for ch in row.chars() {
            match ch {
                '.' => free.push(true),
                '#' => free.push(false),
                other => return Err(Error::Config(format!("unknown maze cell {other:?}"))),
            }
        }
    }
    Ok((height, width, free))
}

fn offset(r: usize, c: usize, (dr, dc): (isize, isize)) -> Option<(usize, usize)> {
    Some((r.checked_add_signed(dr)?, c.checked_add_signed(dc)?))
}

pub fn build_maze(spec: &MazeSpec) -> Result<(TabularWorld, GridIndex)> {
    let (height, width, free) = parse_layout(&spec.layout)?;
    let [sr, sc] = spec.start;
    if sr >= height || sc >= width || !free[sr * width + sc] {
        return Err(Error::Config(format!("start cell {:?} is not a free cell", spec.start)));
    }
    let mut cell_state = vec![None; height * width];
    let mut state_cell = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if free[r * width + c] {
                cell_state[r * width + c] = Some(state_cell.len());
                state_cell.push((r, c));
            }
        }
    }
    let grid = GridIndex { height, width, cell_state, state_cell };
    let n = grid.state_cell.len();

    let mut rows = Vec::with_capacity(n * GRID_MOVES.len());
    for &(r, c) in &grid.state_cell {
        let here = grid.state_at(r, c).expect("free cell");
        for mv in GRID_MOVES {
            let next = offset(r, c, mv).and_then(|(nr, nc)| grid.state_at(nr, nc)).unwrap_or(here);
            rows.push(vec![(next, 1.0)]);
        }
    }
    let reachable = bfs_reach(&rows, GRID_MOVES.len(), n, 0);
    if reachable.iter().any(|r| !r) {
        return Err(Error::Config("maze free space is not connected".into()));
    }
    let mut initial = vec![0.0; n];
    initial[grid.state_at(sr, sc).expect("checked")] = 1.0;
    let labels = grid.state_cell.iter().map(|(r, c)| format!("({r},{c})")).collect();
    let env = TabularEnv::from_sparse(n, GRID_MOVES.len(), rows, initial, Some(labels))?;
    let coords = grid.state_cell.iter().map(|&(r, c)| vec![r as f64, c as f64]).collect();
    let goals = GoalSpace::new((0..n).collect(), coords, 0.5)?;
    Ok((TabularWorld::new(env, goals)?, grid))
}

fn bfs_reach(rows: &[Vec<(StateId, f64)>], n_actions: usize, n: usize, from: StateId) -> Vec<bool> {
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut stack = vec![from];
    while let Some(s) = stack.pop() {
        for a in 0..n_actions {
            for &(next, _) in &rows[s * n_actions + a] {
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
    }
    seen
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipperySpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive `[first, last]` columns the agent may occupy.
    pub agent_band: [usize; 2],
    /// Cells a pushed puck slides, fewer if it hits the boundary.
    pub friction: usize,
    /// `[row, col]`.
    pub puck_start: [usize; 2],
    /// `[row, col]`; when absent the agent starts uniformly in the band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_start: Option<[usize; 2]>,
}

/// Indexing of the product state space `(agent cell, puck cell)`.
#[derive(Clone, Debug)]
pub struct SlipperyIndex {
    pub width: usize,
    pub height: usize,
    pub band: [usize; 2],
    pub states: Vec<((usize, usize), (usize, usize))>,
    lookup: std::collections::HashMap<((usize, usize), (usize, usize)), StateId>,
}

impl SlipperyIndex {
    pub fn state(&self, agent: (usize, usize), puck: (usize, usize)) -> Option<StateId> {
        self.lookup.get(&(agent, puck)).copied()
    }

    pub fn in_band(&self, c: usize) -> bool {
        (self.band[0]..=self.band[1]).contains(&c)
    }

    pub fn goal_of_cell(&self, (r, c): (usize, usize)) -> usize {
        r * self.width + c
    }
}

pub fn build_slippery(spec: &SlipperySpec) -> Result<(TabularWorld, SlipperyIndex)> {
    let SlipperySpec { width, height, agent_band: [lo, hi], friction, puck_start, agent_start } = *spec;
    if width == 0 || height == 0 {
        return Err(Error::Config("slippery grid must be nonempty".into()));
    }
    if lo > hi || hi >= width || hi - lo + 1 >= width {
        return Err(Error::Config(format!("agent band [{lo}, {hi}] must be a strict subset of 0..{width}")));
    }
    if friction == 0 {
        return Err(Error::Config("friction (slide length) must be at least 1".into()));
    }
    let (pr, pc) = (puck_start[0], puck_start[1]);
    if pr >= height || pc >= width {
        return Err(Error::Config(format!("puck start {puck_start:?} outside the grid")));
    }
    let mut states = Vec::new();
    for ar in 0..height {
        for ac in lo..=hi {
            for r in 0..height {
                for c in 0..width {
                    if (ar, ac) != (r, c) {
                        states.push(((ar, ac), (r, c)));
                    }
                }
            }
        }
    }
    let lookup = states.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let index = SlipperyIndex { width, height, band: [lo, hi], states, lookup };

    let inside = |r: usize, c: usize| r < height && c < width;
    let mut rows = Vec::with_capacity(index.states.len() * GRID_MOVES.len());
    for (s, &(agent, puck)) in index.states.iter().enumerate() {
        for mv in GRID_MOVES {
            let next = match offset(agent.0, agent.1, mv) {
                Some(t) if mv != (0, 0) && inside(t.0, t.1) && index.in_band(t.1) => {
                    if t == puck {
                        let mut landed = puck;
                        for _ in 0..friction {
                            match offset(landed.0, landed.1, mv) {
                                Some(n) if inside(n.0, n.1) => landed = n,
                                _ => break,
                            }
                        }
                        if landed == puck {
                            s
                        } else {
                            index.state(t, landed).expect("agent and puck differ")
                        }
                    } else {
                        index.state(t, puck).expect("agent and puck differ")
                    }
                }
                _ => s,
            };
            rows.push(vec![(next, 1.0)]);
        }
    }

    let n = index.states.len();
    let mut initial = vec![0.0; n];
    match agent_start {
        Some([ar, ac]) => {
            let s = index
                .state((ar, ac), (pr, pc))
                .ok_or_else(|| Error::Config(format!("agent start {:?} invalid", [ar, ac])))?;
            initial[s] = 1.0;
        }
        None => {
            let starts: Vec<StateId> = (0..height)
                .flat_map(|r| (lo..=hi).map(move |c| (r, c)))
                .filter_map(|a| index.state(a, (pr, pc)))
                .collect();
            for &s in &starts {
                initial[s] = 1.0 / starts.len() as f64;
            }
            // keep the distribution exactly normalized
            let total: f64 = initial.iter().sum();
            initial[starts[0]] += 1.0 - total;
        }
    }
    let labels = index
        .states
        .iter()
        .map(|((ar, ac), (r, c))| format!("agent({ar},{ac}) puck({r},{c})"))
        .collect();
    let env = TabularEnv::from_sparse(n, GRID_MOVES.len(), rows, initial, Some(labels))?;
    let abstraction = index.states.iter().map(|&(_, p)| index.goal_of_cell(p)).collect();
    let coords = (0..height).flat_map(|r| (0..width).map(move |c| vec![r as f64, c as f64])).collect();
    let goals = GoalSpace::new(abstraction, coords, 0.5)?;
    Ok((TabularWorld::new(env, goals)?, index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMassSpec {
    /// `[x_min, y_min]`.
    pub lo: [f64; 2],
    /// `[x_max, y_max]`.
    pub hi: [f64; 2],
    pub dt: f64,
    pub v_max: f64,
    pub epsilon: f64,
    pub start: [f64; 2],
}

impl Default for PointMassSpec {
    fn default() -> Self {
        Self { lo: [0.0, 0.0], hi: [1.0, 1.0], dt: 0.1, v_max: 1.0, epsilon: 0.05, start: [0.5, 0.5] }
    }
}

/// Continuous point mass: position state, velocity action clipped to
/// `v_max` in norm, positions clamped to the box.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub spec: PointMassSpec,
}

pub fn build_pointmass(spec: PointMassSpec) -> Result<PointMass> {
    if !(spec.v_max > 0.0) || !(spec.dt > 0.0) || !(spec.epsilon > 0.0) {
        return Err(Error::Config("point mass needs positive v_max, dt and epsilon".into()));
    }
    if spec.lo.iter().zip(&spec.hi).any(|(l, h)| !(l < h)) {
        return Err(Error::Config("point mass box must have lo < hi".into()));
    }
    Ok(PointMass { spec })
}

impl PointMass {
    pub fn step_length(&self) -> f64 {
        self.spec.v_max * self.spec.dt
    }

    pub fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.spec.lo[0], self.spec.hi[0]), p[1].clamp(self.spec.lo[1], self.spec.hi[1])]
    }

    /// Per-dimension action bounds.
    pub fn action_box(&self) -> Vec<(f64, f64)> {
        vec![(-self.spec.v_max, self.spec.v_max); 2]
    }

    pub fn distance_model(&self, t_max: usize) -> PointMassDistance {
        PointMassDistance { step: self.step_length(), t_max: t_max as f64 }
    }

    fn clip_velocity(&self, a: &[f64]) -> [f64; 2] {
        let v = [
            a.first().copied().filter(|x| x.is_finite()).unwrap_or(0.0),
            a.get(1).copied().filter(|x| x.is_finite()).unwrap_or(0.0),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if norm > self.spec.v_max {
            let k = self.spec.v_max / norm;
            [v[0] * k, v[1] * k]
        } else {
            v
        }
    }
}

impl GoalEnv for PointMass {
    type State = [f64; 2];
    type Action = Vec<f64>;
    type Goal = [f64; 2];

    fn step<R: Rng + ?Sized>(&self, s: &[f64; 2], a: &Vec<f64>, _rng: &mut R) -> [f64; 2] {
        let v = self.clip_velocity(a);
        self.clamp([s[0] + self.spec.dt * v[0], s[1] + self.spec.dt * v[1]])
    }

    fn achieved_goal(&self, s: &[f64; 2]) -> [f64; 2] {
        *s
    }

    fn goal_metric(&self, g: &[f64; 2], other: &[f64; 2]) -> f64 {
        euclidean(g, other)
    }

    fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    fn initial_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> [f64; 2] {
        self.clamp(self.spec.start)
    }
}

/// `d(s, g) = ceil(||s - g|| / (v_max dt))`, capped at `t_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassDistance {
    step: f64,
    t_max: f64,
}

impl PointMassDistance {
    pub fn steps(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        // absorb round-off so exact multiples of the step length stay integral
        ((euclidean(a, b) / self.step) - 1e-9).ceil().max(0.0).min(self.t_max)
    }
}

impl DistanceModel<PointMass> for PointMassDistance {
    fn distance(&self, s: &[f64; 2], g: &[f64; 2]) -> f64 {
        self.steps(s, g)
    }

    fn goal_to_goal(&self, from: &[f64; 2], to: &[f64; 2]) -> f64 {
        self.steps(from, to)
    }

    fn t_max(&self) -> f64 {
        self.t_max
    }
}

/// JSON form of a tabular environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvFile {
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub goal_coords: Vec<Vec<f64>>,
    pub epsilon: f64,
    /// State to goal index; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstraction: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl EnvFile {
    pub fn from_world(name: &str, world: &TabularWorld) -> Self {
        let env = &world.env;
        Self {
            name: name.to_string(),
            n_states: env.n_states(),
            n_actions: env.n_actions(),
            transitions: env.dense_transitions(),
            initial_dist: env.initial_dist().to_vec(),
            goal_coords: world.goals.all_coords().to_vec(),
            epsilon: world.goals.epsilon(),
            abstraction: Some(world.goals.abstraction().to_vec()),
            labels: env.labels().map(<[String]>::to_vec),
        }
    }

    pub fn into_world(self) -> Result<TabularWorld> {
        if self.transitions.len() != self.n_states
            || self.transitions.iter().any(|r| r.len() != self.n_actions)
        {
            return Err(Error::Config(format!(
                "{}: transitions do not match n_states = {} and n_actions = {}",
                self.name, self.n_states, self.n_actions
            )));
        }
        let env = TabularEnv::new(self.transitions, self.initial_dist, self.labels)?;
        let abstraction = match self.abstraction {
            Some(a) => a,
            None if self.goal_coords.len() == self.n_states => (0..self.n_states).collect(),
            None => {
                return Err(Error::Config(
                    "without an abstraction map there must be one goal per state".into(),
                ))
            }
        };
        let goals = GoalSpace::new(abstraction, self.goal_coords, self.epsilon)?;
        TabularWorld::new(env, goals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::compute_first_hit_distance;

    fn corridor(len: usize) -> MazeSpec {
        MazeSpec { layout: vec![".".repeat(len)], start: [0, 0] }
    }

    #[test]
    fn chain_rows_match_figure() {
        let p = 0.3;
        let world = build_chain(p).unwrap();
        let expected = vec![
            vec![vec![0.0, 1.0, 0.0, 0.0], vec![p, 0.0, 1.0 - p, 0.0]],
            vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 1.0]],
        ];
        assert_eq!(world.env.dense_transitions(), expected);
        assert_eq!(world.goals.phi(1).unwrap(), 1);
        assert_eq!(world.goals.phi(2).unwrap(), 1);
        assert!(build_chain(1.0).is_err());
        assert!(build_chain(-0.1).is_err());
    }

    #[test]
    fn chain_distances() {
        let det = build_chain(0.0).unwrap();
        let d = compute_first_hit_distance(&det.env, &det.goals, 20).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
        let half = build_chain(0.5).unwrap();
        let d = compute_first_hit_distance(&half.env, &half.goals, 20).unwrap();
        assert!((d.get(0, 2) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn maze_moves_and_walls() {
        let spec = MazeSpec { layout: vec!["...".into(), ".#.".into(), "...".into()], start: [0, 0] };
        let (world, grid) = build_maze(&spec).unwrap();
        assert_eq!(world.env.n_states(), 8);
        let s = grid.state_at(0, 1).unwrap();
        // down into the wall stays put
        assert_eq!(world.env.row(s, 1), &[(s, 1.0)]);
        // up off the grid stays put
        assert_eq!(world.env.row(s, 0), &[(s, 1.0)]);
        assert_eq!(world.env.row(s, 3), &[(grid.state_at(0, 2).unwrap(), 1.0)]);
        let bad = MazeSpec { start: [1, 1], ..spec.clone() };
        assert!(build_maze(&bad).is_err());
        let split = MazeSpec { layout: vec![".#.".into()], start: [0, 0] };
        assert!(build_maze(&split).is_err());
    }

    #[test]
    fn empty_grid_corner_to_corner() {
        let spec = MazeSpec { layout: vec!["...".into(); 3], start: [0, 0] };
        let (world, grid) = build_maze(&spec).unwrap();
        let d = compute_first_hit_distance(&world.env, &world.goals, 50).unwrap();
        let a = grid.state_at(0, 0).unwrap();
        let b = grid.state_at(2, 2).unwrap();
        assert_eq!(d.get(a, world.goals.phi(b).unwrap()), 4.0);
        assert_eq!(build_maze(&corridor(4)).unwrap().0.env.n_states(), 4);
    }

    fn slippery(friction: usize) -> SlipperySpec {
        SlipperySpec {
            width: 6,
            height: 3,
            agent_band: [0, 2],
            friction,
            puck_start: [1, 1],
            agent_start: Some([1, 0]),
        }
    }

    #[test]
    fn gentle_push_moves_one_cell() {
        let (world, idx) = build_slippery(&slippery(1)).unwrap();
        let s = idx.state((1, 0), (1, 1)).unwrap();
        let pushed = world.env.row(s, 3)[0].0;
        assert_eq!(idx.states[pushed], ((1, 1), (1, 2)));
    }

    #[test]
    fn hard_push_leaves_band_for_good() {
        let (world, idx) = build_slippery(&slippery(3)).unwrap();
        let d = compute_first_hit_distance(&world.env, &world.goals, 40).unwrap();
        let s = idx.state((1, 0), (1, 1)).unwrap();
        let pushed = world.env.row(s, 3)[0].0;
        assert_eq!(idx.states[pushed].1, (1, 4));
        for r in 0..3 {
            for c in 0..=2 {
                assert_eq!(d.get(pushed, idx.goal_of_cell((r, c))), 40.0);
            }
        }
    }

    #[test]
    fn push_against_boundary_is_blocked() {
        let spec = SlipperySpec { puck_start: [0, 1], agent_start: Some([1, 1]), ..slippery(2) };
        let (world, idx) = build_slippery(&spec).unwrap();
        let s = idx.state((1, 1), (0, 1)).unwrap();
        assert_eq!(world.env.row(s, 0)[0].0, s);
    }

    #[test]
    fn slippery_validation() {
        assert!(build_slippery(&SlipperySpec { agent_band: [0, 5], ..slippery(1) }).is_err());
        assert!(build_slippery(&SlipperySpec { agent_band: [3, 2], ..slippery(1) }).is_err());
        assert!(build_slippery(&SlipperySpec { agent_start: Some([1, 1]), ..slippery(1) }).is_err());
        let (world, _) = build_slippery(&SlipperySpec { agent_start: None, ..slippery(1) }).unwrap();
        assert_eq!(world.env.initial_dist().iter().filter(|p| **p > 0.0).count(), 8);
    }

    #[test]
    fn pointmass_distance_and_dynamics() {
        let pm = build_pointmass(PointMassSpec { dt: 0.25, ..Default::default() }).unwrap();
        let d = pm.distance_model(100);
        assert_eq!(d.distance(&[0.0, 0.0], &[1.0, 0.0]), 4.0);
        assert_eq!(d.distance(&[0.2, 0.2], &[0.2, 0.2]), 0.0);
        let mut rng = rand::thread_rng();
        assert_eq!(pm.step(&[0.3, 0.4], &vec![0.0, 0.0], &mut rng), [0.3, 0.4]);
        // speed is clipped in norm, positions to the box
        let s = pm.step(&[0.5, 0.5], &vec![3.0, 4.0], &mut rng);
        assert!((s[0] - 0.65).abs() < 1e-12 && (s[1] - 0.7).abs() < 1e-12);
        assert_eq!(pm.step(&[0.95, 0.5], &vec![1.0, 0.0], &mut rng), [1.0, 0.5]);
        assert!(build_pointmass(PointMassSpec { v_max: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn env_file_round_trip() {
        let world = build_chain(0.5).unwrap();
        let file = EnvFile::from_world("chain", &world);
        let json = serde_json::to_string(&file).unwrap();
        let back: EnvFile = serde_json::from_str(&json).unwrap();
        let rebuilt = back.into_world().unwrap();
        assert_eq!(rebuilt.env, world.env);
        assert_eq!(rebuilt.goals, world.goals);
    }
}
