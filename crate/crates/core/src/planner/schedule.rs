use serde::{Deserialize, Serialize};

use crate::mdp::GoalEnv;
use crate::value::DistanceModel;

/// Estimated step at which each goal should be reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSchedule {
    pub times: Vec<f64>,
}

impl GoalSchedule {
    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }
}

/// `t_0 = d(s_0, g_0)`, `t_i = t_{i-1} + W(g_{i-1}, g_i)`.
pub fn estimate_goal_times<E, M>(model: &M, s0: &E::State, goals: &[E::Goal]) -> GoalSchedule
where
    E: GoalEnv + ?Sized,
    M: DistanceModel<E> + ?Sized,
{
    let mut times = Vec::with_capacity(goals.len());
    let Some(first) = goals.first() else {
        return GoalSchedule { times };
    };
    let mut t = model.distance(s0, first);
    times.push(t);
    for pair in goals.windows(2) {
        t += model.goal_to_goal(&pair[0], &pair[1]);
        times.push(t);
    }
    GoalSchedule { times }
}

/// `K = min { j : t_j >= k + H }`, or the last goal index when no such `j`.
pub fn select_reachable_goals(schedule: &GoalSchedule, k: usize, horizon: usize) -> usize {
    let limit = (k + horizon) as f64;
    schedule.times.iter().position(|&t| t >= limit).unwrap_or(schedule.last_index())
}

/// `max(1, min(ceil(t_K - k), H))`.
pub fn effective_horizon(schedule: &GoalSchedule, k: usize, horizon: usize) -> usize {
    let big_k = select_reachable_goals(schedule, k, horizon);
    let remaining = (schedule.times[big_k] - k as f64).ceil();
    if remaining < 1.0 {
        1
    } else {
        (remaining as usize).min(horizon).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(times: &[f64]) -> GoalSchedule {
        GoalSchedule { times: times.to_vec() }
    }

    #[test]
    fn reachable_fixtures() {
        let s = sched(&[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(select_reachable_goals(&s, 0, 3), 2);
        assert_eq!(select_reachable_goals(&s, 0, 6), 3);
        assert_eq!(select_reachable_goals(&s, 0, 60), 3);
        assert_eq!(select_reachable_goals(&s, 10, 1), 3);
    }

    #[test]
    fn horizon_fixtures() {
        assert_eq!(effective_horizon(&sched(&[2.0]), 0, 16), 2);
        assert_eq!(effective_horizon(&sched(&[0.0]), 5, 16), 1);
        assert_eq!(effective_horizon(&sched(&[40.0]), 0, 16), 16);
        // fractional remainders round up
        assert_eq!(effective_horizon(&sched(&[0.0, 2.5]), 1, 16), 2);
    }
}
