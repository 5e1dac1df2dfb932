use std::collections::VecDeque;
use std::path::Path;

use zilot_core::envs::{build_slippery, SlipperySpec};
use zilot_core::harness::{BuiltEnv, TaskFile};
use zilot_core::planner::{zilot_episode, Icem, IcemConfig, ZilotConfig};
use zilot_core::{GoalEnv, TabularModel};

fn forward_bfs(env: &zilot_core::mdp::TabularEnv, s0: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; env.n_states()];
    dist[s0] = 0;
    let mut queue = VecDeque::from([s0]);
    while let Some(s) = queue.pop_front() {
        for a in 0..env.n_actions() {
            for &(next, p) in env.row(s, a) {
                if p > 0.0 && dist[next] == usize::MAX {
                    dist[next] = dist[s] + 1;
                    queue.push_back(next);
                }
            }
        }
    }
    dist
}

#[test]
fn slippery_recoverable_pucks_match_product_bfs() {
    let t_max = 40;
    for friction in [1, 2, 3] {
        let spec = SlipperySpec { width: 6, height: 5, agent_band: [1, 3], friction, puck_start: [2, 2], agent_start: None };
        let (world, idx) = build_slippery(&spec).unwrap();
        let model = TabularModel::compute(&world, t_max).unwrap();
        let band_goals: Vec<usize> = (0..idx.height)
            .flat_map(|r| (0..idx.width).map(move |c| (r, c)))
            .filter(|&(_, c)| idx.in_band(c))
            .map(|cell| idx.goal_of_cell(cell))
            .collect();
        for s in 0..world.env.n_states() {
            let finite = band_goals.iter().any(|&g| model.distance.get(s, g) < t_max as f64);
            let dist = forward_bfs(&world.env, s);
            let reachable = (0..world.env.n_states())
                .any(|x| dist[x] < t_max && idx.in_band(idx.states[x].1 .1));
            assert_eq!(finite, reachable, "friction {friction}, state {:?}", idx.states[s]);
        }
    }
}

#[test]
fn pointmass_l_task_is_tracked_closely() {
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../tasks");
    let task = TaskFile::load(&base.join("pointmass_l.json")).unwrap();
    let BuiltEnv::PointMass { env, model, task } = task.build(&base, task.horizon, None).unwrap() else {
        panic!("expected the point mass");
    };
    let icem = Icem::new(IcemConfig { horizon: task.horizon, ..IcemConfig::default() }, env.action_box()).unwrap();
    let r = zilot_episode(&env, &model, &task, &ZilotConfig::new(task.horizon), &icem, 0, None).unwrap();
    assert!(r.w_min <= 0.1, "{}", r.w_min);
    assert!(r.trajectory.iter().all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
    assert_eq!(env.achieved_goal(&r.trajectory[0]), [0.4, 0.6]);
}
