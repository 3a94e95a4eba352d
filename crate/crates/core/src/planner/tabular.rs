use crate::error::{Error, Result};

/// Finite MDP whose symmetry group acts by permutations of states and actions.
#[derive(Debug, Clone)]
pub struct TabularGmdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[s * n_actions + a]` lists `(s', P(s'|s,a))`.
    pub transitions: Vec<Vec<(usize, f64)>>,
    /// `rewards[s * n_actions + a]`.
    pub rewards: Vec<f64>,
    /// One permutation of states per group element.
    pub state_perms: Vec<Vec<usize>>,
    pub action_perms: Vec<Vec<usize>>,
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n
        && p.iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

impl TabularGmdp {
    fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Checks that every group element acts bijectively and that
    /// P(g·s' | g·s, g·a) = P(s' | s, a).
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if self.transitions.len() != ns * na || self.rewards.len() != ns * na {
            return Err(Error::shape(
                ns * na,
                self.transitions.len().min(self.rewards.len()),
            ));
        }
        if self.state_perms.len() != self.action_perms.len() {
            return Err(Error::SymmetryViolation(
                "state and action actions list different group orders".into(),
            ));
        }
        for (g, (ps, pa)) in self.state_perms.iter().zip(&self.action_perms).enumerate() {
            if !is_permutation(ps, ns) || !is_permutation(pa, na) {
                return Err(Error::SymmetryViolation(format!(
                    "element {g} does not act as a permutation"
                )));
            }
            for s in 0..ns {
                for a in 0..na {
                    let mut moved: Vec<(usize, f64)> = self.transitions[self.idx(s, a)]
                        .iter()
                        .map(|&(t, p)| (ps[t], p))
                        .collect();
                    let mut there = self.transitions[self.idx(ps[s], pa[a])].clone();
                    moved.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
                    there.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
                    if moved != there {
                        return Err(Error::SymmetryViolation(format!(
                            "transition from state {s} under action {a} is not equivariant under element {g}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// max |R(g·s, g·a) − R(s, a)|; zero for a symmetric reward.
    pub fn reward_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for (ps, pa) in self.state_perms.iter().zip(&self.action_perms) {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let d = self.rewards[self.idx(ps[s], pa[a])] - self.rewards[self.idx(s, a)];
                    worst = worst.max(d.abs());
                }
            }
        }
        worst
    }

    /// max over g, s of |V(g·s) − V(s)|.
    pub fn orbit_violation(&self, values: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for ps in &self.state_perms {
            for s in 0..self.n_states {
                worst = worst.max((values[ps[s]] - values[s]).abs());
            }
        }
        worst
    }
}

/// Value table plus per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    /// ‖V_{k+1} − V_k‖_∞ for each sweep.
    pub deltas: Vec<f64>,
    /// max |V_k(g·s) − V_k(s)| after each sweep.
    pub orbit_violations: Vec<f64>,
}

/// Bellman backups written as message passing: every state gathers
/// γ·P·V messages from its successors, sums them per action and takes the
/// max. Messages are summed in sorted order so that relabelling the
/// neighbours cannot change the result.
pub fn tabular_value_iteration(
    mdp: &TabularGmdp,
    gamma: f64,
    iters: usize,
) -> Result<ValueIteration> {
    mdp.validate()?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!(
            "discount {gamma} must lie in [0, 1)"
        )));
    }
    let mut v = vec![0.0; mdp.n_states];
    let mut deltas = Vec::with_capacity(iters);
    let mut orbit_violations = Vec::with_capacity(iters);
    let mut messages = Vec::new();
    for _ in 0..iters {
        let next: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| {
                        let i = mdp.idx(s, a);
                        messages.clear();
                        messages.extend(mdp.transitions[i].iter().map(|&(t, p)| p * v[t]));
                        messages.sort_by(f64::total_cmp);
                        mdp.rewards[i] + gamma * messages.iter().sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        deltas.push(
            next.iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        v = next;
        orbit_violations.push(mdp.orbit_violation(&v));
    }
    Ok(ValueIteration {
        values: v,
        deltas,
        orbit_violations,
    })
}

/// n×n deterministic grid (n odd) with moves up/right/down/left, walls that
/// block, reward 1 in the centre cell, and C4 acting by quarter turns about
/// the centre.
pub fn grid_world_c4(n: usize) -> Result<TabularGmdp> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::Config(format!("grid size {n} must be odd")));
    }
    let na = 4;
    let cell = |r: usize, c: usize| r * n + c;
    let moves: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
    let mut transitions = Vec::with_capacity(n * n * na);
    let mut rewards = Vec::with_capacity(n * n * na);
    let centre = cell(n / 2, n / 2);
    for r in 0..n {
        for c in 0..n {
            for (dr, dc) in moves {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                let inside = nr >= 0 && nc >= 0 && (nr as usize) < n && (nc as usize) < n;
                let to = if inside {
                    cell(nr as usize, nc as usize)
                } else {
                    cell(r, c)
                };
                transitions.push(vec![(to, 1.0)]);
                rewards.push(if cell(r, c) == centre { 1.0 } else { 0.0 });
            }
        }
    }
    // Quarter turn (r, c) → (c, n−1−r); it maps up→right→down→left.
    let quarter: Vec<usize> = (0..n * n).map(|s| cell(s % n, n - 1 - s / n)).collect();
    let mut state_perms = vec![(0..n * n).collect::<Vec<_>>()];
    let mut action_perms = vec![(0..na).collect::<Vec<_>>()];
    for k in 1..4 {
        let prev: &Vec<usize> = &state_perms[k - 1];
        let next: Vec<usize> = prev.iter().map(|&s| quarter[s]).collect();
        state_perms.push(next);
        action_perms.push((0..na).map(|a| (a + k) % na).collect());
    }
    Ok(TabularGmdp {
        n_states: n * n,
        n_actions: na,
        transitions,
        rewards,
        state_perms,
        action_perms,
    })
}
