//! Tabular MDP with exact value iteration and greedy policy extraction.
//! Ground truth for the Q-learning correctness tests.

use crate::error::{Error, Result};

/// Finite MDP (S, A, T, R) with dense transition and reward tables.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// transition[s][a][s'] = T(s, a, s')
    pub transition: Vec<Vec<Vec<f64>>>,
    /// reward[s][a] = R(s, a)
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} must be in [0, 1)", self.gamma)));
        }
        if self.transition.len() != self.n_states || self.reward.len() != self.n_states {
            return Err(Error::Config("table sizes disagree with state count".into()));
        }
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != self.n_actions {
                return Err(Error::Config(format!("state {s} has wrong action count")));
            }
            for (a, row) in per_action.iter().enumerate() {
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "transition row (s={s}, a={a}) sums to {total}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Q(s, a) table stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn max_over_actions(&self, s: usize) -> f64 {
        let row = &self.values[s * self.n_actions..(s + 1) * self.n_actions];
        row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest |Q_a - Q_b| over all (s, a).
    pub fn linf_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves the Bellman fixed point Q*(s,a) = R(s,a) + gamma sum_s' T max_a' Q*
/// by repeated sweeps until the sup-norm residual drops to `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<QTable> {
    mdp.validate()?;
    if tol <= 0.0 {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..max_iters {
        let mut next = QTable::zeros(mdp.n_states, mdp.n_actions);
        let mut residual: f64 = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut v = mdp.reward[s][a];
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        v += mdp.gamma * p * q.max_over_actions(s2);
                    }
                }
                residual = residual.max((v - q.get(s, a)).abs());
                next.set(s, a, v);
            }
        }
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::Usage(format!(
        "value iteration did not reach tolerance {tol} in {max_iters} sweeps"
    )))
}

/// Per-state argmax action, lowest index winning ties.
pub fn greedy_policy(q: &QTable) -> Vec<usize> {
    (0..q.n_states)
        .map(|s| {
            let mut best = 0;
            for a in 1..q.n_actions {
                if q.get(s, a) > q.get(s, best) {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// The benchmark gridworld: 4 x 4 deterministic moves, walls absorb, moving
/// onto the goal (bottom-right) pays +1, and every action taken at the goal
/// restarts the episode at the start cell (top-left) for no reward.
pub fn gridworld_4x4(gamma: f64) -> TabularMdp {
    gridworld(4, gamma)
}

pub fn gridworld(side: usize, gamma: f64) -> TabularMdp {
    let n_states = side * side;
    let n_actions = 4;
    let start = 0;
    let goal = n_states - 1;
    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![0.0; n_actions]; n_states];
    for s in 0..n_states {
        let (r, c) = (s / side, s % side);
        for a in 0..n_actions {
            if s == goal {
                transition[s][a][start] = 1.0;
                continue;
            }
            let (nr, nc) = match a {
                0 => (r.wrapping_sub(1), c), // up
                1 => (r + 1, c),             // down
                2 => (r, c.wrapping_sub(1)), // left
                _ => (r, c + 1),             // right
            };
            let next = if nr < side && nc < side {
                nr * side + nc
            } else {
                s // wall absorbs
            };
            if next == goal {
                reward[s][a] = 1.0;
            }
            transition[s][a][next] = 1.0;
        }
    }
    TabularMdp {
        n_states,
        n_actions,
        transition,
        reward,
        gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_arm_mdp(gamma: f64) -> TabularMdp {
        // One state, two self-loop actions paying 1 and 0.
        TabularMdp {
            n_states: 1,
            n_actions: 2,
            transition: vec![vec![vec![1.0], vec![1.0]]],
            reward: vec![vec![1.0, 0.0]],
            gamma,
        }
    }

    #[test]
    fn analytic_fixed_point() {
        // V = 1 + 0.5 V => V = 2; Q(a1) = 1 + 0.5*2 = 2, Q(a2) = 0.5*2 = 1.
        let q = value_iteration(&two_arm_mdp(0.5), 1e-12, 10_000).unwrap();
        assert!((q.get(0, 0) - 2.0).abs() < 1e-9);
        assert!((q.get(0, 1) - 1.0).abs() < 1e-9);
        assert_eq!(greedy_policy(&q), vec![0]);
    }

    #[test]
    fn gamma_zero_is_myopic() {
        let mdp = gridworld_4x4(0.0);
        let q = value_iteration(&mdp, 1e-12, 100).unwrap();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                assert_eq!(q.get(s, a), mdp.reward[s][a]);
            }
        }
    }

    #[test]
    fn gridworld_matches_brute_force_second_implementation() {
        // Independent route: iterate over explicit next-state/reward closures
        // rather than the dense tables.
        let side = 4;
        let gamma = 0.95;
        let mdp = gridworld(side, gamma);
        let q = value_iteration(&mdp, 1e-12, 100_000).unwrap();

        let step = |s: usize, a: usize| -> (usize, f64) {
            let goal = side * side - 1;
            if s == goal {
                return (0, 0.0);
            }
            let (r, c) = (s / side, s % side);
            let (nr, nc) = match a {
                0 => (r as i64 - 1, c as i64),
                1 => (r as i64 + 1, c as i64),
                2 => (r as i64, c as i64 - 1),
                _ => (r as i64, c as i64 + 1),
            };
            let next = if (0..side as i64).contains(&nr) && (0..side as i64).contains(&nc) {
                (nr * side as i64 + nc) as usize
            } else {
                s
            };
            (next, if next == goal { 1.0 } else { 0.0 })
        };
        let mut brute = vec![vec![0.0f64; 4]; side * side];
        for _ in 0..2000 {
            let mut next = vec![vec![0.0f64; 4]; side * side];
            for s in 0..side * side {
                for a in 0..4 {
                    let (s2, r) = step(s, a);
                    let m = brute[s2].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    next[s][a] = r + gamma * m;
                }
            }
            brute = next;
        }
        for s in 0..side * side {
            for a in 0..4 {
                assert!(
                    (q.get(s, a) - brute[s][a]).abs() < 1e-9,
                    "mismatch at ({s},{a}): {} vs {}",
                    q.get(s, a),
                    brute[s][a]
                );
            }
        }
    }

    #[test]
    fn residual_is_monotone_nonincreasing() {
        let mdp = gridworld_4x4(0.95);
        // Re-run the sweeps by hand so we can watch the residual.
        let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let mut next = QTable::zeros(mdp.n_states, mdp.n_actions);
            let mut residual: f64 = 0.0;
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let mut v = mdp.reward[s][a];
                    for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                        if p > 0.0 {
                            v += mdp.gamma * p * q.max_over_actions(s2);
                        }
                    }
                    residual = residual.max((v - q.get(s, a)).abs());
                    next.set(s, a, v);
                }
            }
            q = next;
            assert!(residual <= last + 1e-15, "residual rose: {last} -> {residual}");
            last = residual;
        }
    }

    #[test]
    fn policy_is_shift_invariant_and_tie_breaks_low() {
        let mut q = QTable::zeros(2, 3);
        q.set(0, 0, 2.0);
        q.set(0, 1, 1.0);
        // State 1 left uniform: argmax must pick action 0.
        let p = greedy_policy(&q);
        assert_eq!(p, vec![0, 0]);
        let mut shifted = q.clone();
        for s in 0..2 {
            for a in 0..3 {
                shifted.set(s, a, q.get(s, a) + 123.45);
            }
        }
        assert_eq!(greedy_policy(&shifted), p);
    }

    #[test]
    fn invalid_transition_rows_are_rejected() {
        let mut mdp = two_arm_mdp(0.5);
        mdp.transition[0][0][0] = 0.5;
        assert!(value_iteration(&mdp, 1e-9, 100).is_err());
        let mut bad_gamma = two_arm_mdp(1.0);
        bad_gamma.gamma = 1.0;
        assert!(value_iteration(&bad_gamma, 1e-9, 100).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let mdp = gridworld_4x4(0.95);
        assert!(value_iteration(&mdp, 1e-12, 3).is_err());
    }
}
