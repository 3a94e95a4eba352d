//! Geometric MDP benchmark environments.
//!
//! Every environment exposes a finite symmetry group together with its
//! representations on observations (ρ_S) and actions (ρ_A), and an exact
//! action of that group on raw states.

mod pointmass;
mod reacher;

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use pointmass::PointMass;
pub use reacher::Reacher;

use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, Representation};

/// Raw simulator state plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub values: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    pub fn new(values: Vec<f64>) -> Self {
        EnvState { values, t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Local,
    Global,
}

/// Environment configuration, serialisable as a TOML/JSON block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// pointmass2d | pointmass3d | nball | reacher-easy | reacher-hard
    pub env: String,
    pub group: String,
    pub dt: f64,
    /// Defaults: 0.03 (point masses), 0.05 (reacher-easy), 0.015 (reacher-hard).
    pub target_radius: Option<f64>,
    pub gravity: bool,
    /// Velocity drag along the world x axis only; breaks the symmetry.
    pub drift: bool,
    pub reward_mode: RewardMode,
    pub seed: u64,
    pub damping: f64,
    /// Isotropic quadratic drag −k‖v‖v (zero keeps the dynamics linear).
    pub quadratic_drag: f64,
    pub action_limit: f64,
    pub episode_len: usize,
    pub n_balls: usize,
    pub frame: Frame,
    pub action_penalty: f64,
    /// Length scale of the dense shaping 1 − tanh(d / scale).
    pub dense_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            env: "pointmass2d".into(),
            group: "D8".into(),
            dt: 0.05,
            target_radius: None,
            gravity: false,
            drift: false,
            reward_mode: RewardMode::Sparse,
            seed: 0,
            damping: 0.05,
            quadratic_drag: 0.0,
            action_limit: 1.0,
            episode_len: 250,
            n_balls: 3,
            frame: Frame::Local,
            action_penalty: 1e-3,
            dense_scale: 0.2,
        }
    }
}

impl EnvConfig {
    pub fn named(env: &str, group: &str) -> Self {
        EnvConfig {
            env: env.into(),
            group: group.into(),
            ..Default::default()
        }
    }

    pub fn with_reward(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn spatial_dim(&self) -> usize {
        match self.env.as_str() {
            "pointmass3d" | "nball" => 3,
            _ => 2,
        }
    }
}

/// A Geometric MDP: dynamics, reward, and the group acting on both.
pub trait GeometricEnv: Send + Sync {
    fn name(&self) -> &str;
    fn config(&self) -> &EnvConfig;
    fn group(&self) -> &Arc<FiniteGroup>;
    /// ρ_S acting on observations.
    fn obs_rep(&self) -> &Representation;
    /// ρ_A acting on actions.
    fn action_rep(&self) -> &Representation;

    fn obs_dim(&self) -> usize {
        self.obs_rep().dim()
    }

    fn action_dim(&self) -> usize {
        self.action_rep().dim()
    }

    fn episode_len(&self) -> usize {
        self.config().episode_len
    }

    /// Sizes of the action blocks that must share an isotropic noise scale.
    fn action_blocks(&self) -> Vec<usize> {
        self.action_rep()
            .summands()
            .iter()
            .map(Representation::dim)
            .collect()
    }

    /// Initial state of an episode.
    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState;

    /// A state with randomised velocities, for symmetry checks.
    fn random_state(&self, rng: &mut ChaCha8Rng) -> EnvState;

    /// Project an action onto the admissible set (a G-invariant set).
    fn clip_action(&self, a: &[f64]) -> Vec<f64>;

    /// Uniform sample from the admissible action set.
    fn sample_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn step(&self, s: &EnvState, a: &[f64]) -> Result<EnvState>;

    fn reward(&self, s: &EnvState, a: &[f64]) -> f64;

    fn observe(&self, s: &EnvState) -> DVector<f64>;

    /// Inverse of [`GeometricEnv::observe`] on valid observations.
    fn state_from_obs(&self, obs: &[f64]) -> EnvState;

    /// Exact action of group element `g` on a raw state.
    fn transform_state(&self, g: usize, s: &EnvState) -> EnvState;

    fn transform_action(&self, g: usize, a: &[f64]) -> Vec<f64> {
        let v = self.action_rep().matrix(g) * DVector::from_column_slice(a);
        v.as_slice().to_vec()
    }

    /// Dynamics in observation coordinates (used for linearisation).
    fn obs_dynamics(&self, obs: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.state_from_obs(obs.as_slice());
        Ok(self.observe(&self.step(&s, a.as_slice())?))
    }
}

/// Sum of squares accumulated in ascending order, which makes the result
/// bit-identical under permutations and sign flips of the entries.
pub fn invariant_norm_sq(v: &[f64]) -> f64 {
    let mut sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum()
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what))
    }
}

/// Scale `a` back into the ball of radius `limit` if needed.
pub fn clip_to_ball(a: &mut [f64], limit: f64) {
    let n = invariant_norm_sq(a).sqrt();
    if n > limit {
        let s = limit / n;
        a.iter_mut().for_each(|x| *x *= s);
    }
}

/// Uniform sample from the d-ball of radius `r`.
pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-r..r)).collect();
        if invariant_norm_sq(&v) <= r * r {
            return v;
        }
    }
}

/// Build an environment from its configuration.
pub fn make_env(cfg: &EnvConfig) -> Result<Arc<dyn GeometricEnv>> {
    match cfg.env.as_str() {
        "pointmass2d" | "pointmass3d" | "nball" => Ok(Arc::new(PointMass::new(cfg.clone())?)),
        "reacher-easy" | "reacher-hard" | "reacher" => Ok(Arc::new(Reacher::new(cfg.clone())?)),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

/// Max two-path residuals over sampled (g, s, a):
/// dynamics ‖obs(step(g·s, g·a)) − ρ_S(g)·obs(step(s, a))‖_∞ and reward
/// |R(g·s, g·a) − R(s, a)|.
pub fn check_env_equivariance(
    env: &dyn GeometricEnv,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = env.group().clone();
    let mut dyn_res = 0.0f64;
    let mut rew_res = 0.0f64;
    for _ in 0..samples.max(1) {
        let g = rng.random_range(0..group.order());
        let s = env.random_state(&mut rng);
        let a = env.sample_action(&mut rng);
        let gs = env.transform_state(g, &s);
        let ga = env.transform_action(g, &a);
        let lhs = env.observe(&env.step(&gs, &ga)?);
        let rhs = env.obs_rep().matrix(g) * env.observe(&env.step(&s, &a)?);
        dyn_res = dyn_res.max((lhs - rhs).amax());
        rew_res = rew_res.max((env.reward(&gs, &ga) - env.reward(&s, &a)).abs());
    }
    Ok((dyn_res, rew_res))
}

/// Max over sampled (g, s) of ‖obs(g·s) − ρ_S(g)·obs(s)‖_∞.
pub fn observation_equivariance(env: &dyn GeometricEnv, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples.max(1) {
        let g = rng.random_range(0..env.group().order());
        let s = env.random_state(&mut rng);
        let lhs = env.observe(&env.transform_state(g, &s));
        let rhs = env.obs_rep().matrix(g) * env.observe(&s);
        worst = worst.max((lhs - rhs).amax());
    }
    worst
}

/// One recorded episode in observation coordinates.
#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub observations: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Roll out `policy` for one episode from `state`.
pub fn run_episode(
    env: &dyn GeometricEnv,
    mut state: EnvState,
    mut policy: impl FnMut(&EnvState, &DVector<f64>) -> Result<Vec<f64>>,
) -> Result<Episode> {
    let mut ep = Episode::default();
    for _ in 0..env.episode_len() {
        let obs = env.observe(&state);
        let a = env.clip_action(&policy(&state, &obs)?);
        let r = env.reward(&state, &a);
        let next = env.step(&state, &a)?;
        ep.observations.push(obs);
        ep.actions.push(DVector::from_vec(a));
        ep.rewards.push(r);
        state = next;
    }
    ep.observations.push(env.observe(&state));
    Ok(ep)
}

/// Write episodes as CSV rows `episode, t, s0.., a0.., r`.
pub fn write_trajectory_csv(mut w: impl Write, episodes: &[Episode]) -> Result<()> {
    let (ds, da) = match episodes.iter().find(|e| !e.is_empty()) {
        Some(e) => (e.observations[0].len(), e.actions[0].len()),
        None => return Ok(()),
    };
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..ds).map(|i| format!("s{i}")));
    header.extend((0..da).map(|i| format!("a{i}")));
    header.push("r".into());
    writeln!(w, "{}", header.join(","))?;
    for (e, ep) in episodes.iter().enumerate() {
        for t in 0..ep.len() {
            let mut row = vec![e.to_string(), t.to_string()];
            row.extend(ep.observations[t].iter().map(|v| v.to_string()));
            row.extend(ep.actions[t].iter().map(|v| v.to_string()));
            row.push(ep.rewards[t].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}
