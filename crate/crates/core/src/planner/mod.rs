//! Equivariant MPPI over learned or ground-truth models, and tabular value
//! iteration on permutation-symmetric MDPs.

mod tabular;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use tabular::{grid_world_c4, tabular_value_iteration, TabularGmdp, ValueIteration};

use crate::envs::GeometricEnv;
use crate::error::{Error, Result};
use crate::groups::Representation;

/// Batched model interface; columns are samples.
pub trait WorldModel: Sync {
    /// Dimension of the planning state (latent or raw observation).
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Sizes of the action blocks that share a noise scale and a clip ball.
    fn action_blocks(&self) -> Vec<usize>;
    fn action_limit(&self) -> f64;
    fn encode(&self, obs: &DVector<f64>) -> Result<DVector<f64>>;
    fn next_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    fn reward_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>>;
    fn q_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>>;
    fn policy_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// The true environment used as a model, with Q ≡ 0 and π ≡ 0.
pub struct GroundTruthModel {
    env: Arc<dyn GeometricEnv>,
}

impl GroundTruthModel {
    pub fn new(env: Arc<dyn GeometricEnv>) -> Self {
        GroundTruthModel { env }
    }

    pub fn env(&self) -> &Arc<dyn GeometricEnv> {
        &self.env
    }
}

impl WorldModel for GroundTruthModel {
    fn state_dim(&self) -> usize {
        self.env.obs_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn action_blocks(&self) -> Vec<usize> {
        self.env.action_blocks()
    }

    fn action_limit(&self) -> f64 {
        self.env.config().action_limit
    }

    fn encode(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(obs.clone())
    }

    fn next_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(z.nrows(), z.ncols());
        for j in 0..z.ncols() {
            let next = self
                .env
                .obs_dynamics(&z.column(j).into_owned(), &a.column(j).into_owned())?;
            out.set_column(j, &next);
        }
        Ok(out)
    }

    fn reward_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok((0..z.ncols())
            .map(|j| {
                let s = self.env.state_from_obs(z.column(j).as_slice());
                self.env.reward(&s, a.column(j).as_slice())
            })
            .collect())
    }

    fn q_batch(&self, z: &DMatrix<f64>, _a: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(vec![0.0; z.ncols()])
    }

    fn policy_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.action_dim(), z.ncols()))
    }
}

/// States s_0..s_H and actions a_0..a_{H-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub rewards: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Deterministic model rollout from planning state `s0`.
pub fn rollout(
    model: &dyn WorldModel,
    s0: &DVector<f64>,
    actions: &[DVector<f64>],
) -> Result<Trajectory> {
    let mut states = vec![s0.clone()];
    let mut rewards = Vec::with_capacity(actions.len());
    for a in actions {
        if a.len() != model.action_dim() {
            return Err(Error::shape(model.action_dim(), a.len()));
        }
        let z = column(states.last().unwrap());
        let am = column(a);
        let r = model.reward_batch(&z, &am)?[0];
        let next = model.next_batch(&z, &am)?.column(0).into_owned();
        if !r.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite model output during rollout"));
        }
        rewards.push(r);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        actions: actions.to_vec(),
        rewards: Some(rewards),
    })
}

/// Σ_{t<H} γ^t R(s_t, a_t) + γ^H Q(s_H, π(s_H)).
pub fn trajectory_return(traj: &Trajectory, model: &dyn WorldModel, gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut disc = 1.0;
    for (s, a) in traj.states.iter().zip(&traj.actions) {
        total += disc * model.reward_batch(&column(s), &column(a))?[0];
        disc *= gamma;
    }
    let last = column(traj.states.last().ok_or(Error::InvalidHorizon(0))?);
    let a_h = model.policy_batch(&last)?;
    Ok(total + disc * model.q_batch(&last, &a_h)?[0])
}

/// Element-wise ρ_S(g) on states and ρ_A(g) on actions.
pub fn transform_trajectory(
    traj: &Trajectory,
    g: usize,
    rep_s: &Representation,
    rep_a: &Representation,
) -> Trajectory {
    Trajectory {
        states: traj.states.iter().map(|s| rep_s.matrix(g) * s).collect(),
        actions: traj.actions.iter().map(|a| rep_a.matrix(g) * a).collect(),
        rewards: traj.rewards.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MppiConfig {
    pub num_samples: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub init_std: f64,
    pub min_std: f64,
    pub max_std: f64,
    pub gamma: f64,
    /// Fraction of samples drawn around policy rollouts.
    pub policy_fraction: f64,
    pub seed: u64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        MppiConfig {
            num_samples: 256,
            horizon: 10,
            iterations: 6,
            temperature: 0.5,
            top_k: 32,
            init_std: 0.5,
            min_std: 0.05,
            max_std: 2.0,
            gamma: 0.99,
            policy_fraction: 0.05,
            seed: 0,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon(0));
        }
        let ok = self.num_samples >= self.top_k
            && self.top_k >= 1
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.temperature > 0.0
            && self.iterations >= 1
            && (0.0..=1.0).contains(&self.policy_fraction)
            && self.min_std >= 0.0
            && self.max_std >= self.min_std;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid MPPI configuration: {self:?}"
            )))
        }
    }

    pub fn policy_samples(&self) -> usize {
        (self.policy_fraction * self.num_samples as f64).floor() as usize
    }
}

/// Standard-normal noise for every (iteration, sample, step), laid out as
/// `data[iter][sample]` = `da × H` matrix.
#[derive(Debug, Clone)]
pub struct MppiNoise {
    pub data: Vec<Vec<DMatrix<f64>>>,
}

impl MppiNoise {
    /// Each trajectory draws from its own stream keyed by (seed, index).
    pub fn sample(cfg: &MppiConfig, action_dim: usize, seed: u64) -> Self {
        let data = (0..cfg.iterations)
            .map(|it| {
                (0..cfg.num_samples)
                    .map(|i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream((it * cfg.num_samples + i) as u64);
                        DMatrix::from_fn(action_dim, cfg.horizon, |_, _| {
                            StandardNormal.sample(&mut rng)
                        })
                    })
                    .collect()
            })
            .collect();
        MppiNoise { data }
    }

    /// ρ_A(g) applied to every action-shaped noise column.
    pub fn transform(&self, g: usize, rep_a: &Representation) -> Self {
        let m = rep_a.matrix(g);
        MppiNoise {
            data: self
                .data
                .iter()
                .map(|it| it.iter().map(|e| m * e).collect())
                .collect(),
        }
    }
}

/// Result of one planning call.
#[derive(Debug, Clone)]
pub struct MppiResult {
    pub action: DVector<f64>,
    /// Final action mean, `da × H`.
    pub mean: DMatrix<f64>,
    /// Mean return of the elite set after each iteration.
    pub elite_returns: Vec<f64>,
}

fn clip_blocks(a: &mut [f64], blocks: &[usize], limit: f64) {
    let mut i = 0;
    for &b in blocks {
        crate::envs::clip_to_ball(&mut a[i..i + b], limit);
        i += b;
    }
}

/// MPPI from observation `obs` with explicit noise.
pub fn mppi_plan(
    model: &dyn WorldModel,
    obs: &DVector<f64>,
    cfg: &MppiConfig,
    warm_start: Option<&DMatrix<f64>>,
    noise: &MppiNoise,
) -> Result<MppiResult> {
    cfg.validate()?;
    let (da, h, n) = (model.action_dim(), cfg.horizon, cfg.num_samples);
    let blocks = model.action_blocks();
    let limit = model.action_limit();
    let z0 = model.encode(obs)?;
    let mut mean = match warm_start {
        Some(w) if w.shape() == (da, h) => w.clone(),
        Some(w) => return Err(Error::shape(da * h, w.len())),
        None => DMatrix::zeros(da, h),
    };
    // Isotropic scale per (block, step).
    let mut std = DMatrix::from_element(blocks.len(), h, cfg.init_std);
    let n_pi = cfg.policy_samples().min(n);
    let mut elite_returns = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let eps = &noise.data[it];
        let mut z = DMatrix::from_fn(z0.len(), n, |i, _| z0[i]);
        let mut actions = vec![DMatrix::zeros(da, n); h];
        let mut returns = vec![0.0; n];
        let mut disc = 1.0;
        for t in 0..h {
            let pi = if n_pi > 0 {
                Some(model.policy_batch(&z.columns(0, n_pi).into_owned())?)
            } else {
                None
            };
            let at = &mut actions[t];
            for j in 0..n {
                let mut col: Vec<f64> = Vec::with_capacity(da);
                let mut row = 0;
                for (bi, &b) in blocks.iter().enumerate() {
                    for k in 0..b {
                        let centre = match &pi {
                            Some(p) if j < n_pi => p[(row + k, j)],
                            _ => mean[(row + k, t)],
                        };
                        let scale = if j < n_pi { cfg.min_std } else { std[(bi, t)] };
                        col.push(centre + scale * eps[j][(row + k, t)]);
                    }
                    row += b;
                }
                clip_blocks(&mut col, &blocks, limit);
                at.set_column(j, &DVector::from_vec(col));
            }
            let r = model.reward_batch(&z, at)?;
            for j in 0..n {
                returns[j] += disc * r[j];
            }
            z = model.next_batch(&z, at)?;
            disc *= cfg.gamma;
        }
        let a_h = model.policy_batch(&z)?;
        let q = model.q_batch(&z, &a_h)?;
        for j in 0..n {
            returns[j] += disc * q[j];
        }

        let mut order: Vec<usize> = (0..n).filter(|&j| returns[j].is_finite()).collect();
        if order.is_empty() {
            return Err(Error::PlanningFailure);
        }
        order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
        order.truncate(cfg.top_k);
        let best = returns[order[0]];
        let mut w: Vec<f64> = order
            .iter()
            .map(|&j| ((returns[j] - best) / cfg.temperature).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        elite_returns.push(order.iter().map(|&j| returns[j]).sum::<f64>() / order.len() as f64);

        for t in 0..h {
            let mut m = DVector::zeros(da);
            for (wi, &j) in w.iter().zip(&order) {
                m += actions[t].column(j) * *wi;
            }
            let mut row = 0;
            for (bi, &b) in blocks.iter().enumerate() {
                let mut var = 0.0;
                for (wi, &j) in w.iter().zip(&order) {
                    let diff = actions[t].view((row, j), (b, 1)) - m.rows(row, b);
                    let d = crate::envs::invariant_norm_sq(diff.as_slice());
                    var += wi * d;
                }
                std[(bi, t)] = (var / b as f64).sqrt().clamp(cfg.min_std, cfg.max_std);
                row += b;
            }
            mean.set_column(t, &m);
        }
    }
    Ok(MppiResult {
        action: mean.column(0).into_owned(),
        mean,
        elite_returns,
    })
}

/// Shift a plan by one step and pad with zeros.
pub fn shift_mean(mean: &DMatrix<f64>) -> DMatrix<f64> {
    let (da, h) = mean.shape();
    let mut out = DMatrix::zeros(da, h);
    if h > 1 {
        out.columns_mut(0, h - 1).copy_from(&mean.columns(1, h - 1));
    }
    out
}

/// Receding-horizon MPPI with warm starts and fresh noise each call.
pub struct MppiController {
    pub cfg: MppiConfig,
    mean: Option<DMatrix<f64>>,
    calls: u64,
}

impl MppiController {
    pub fn new(cfg: MppiConfig) -> Self {
        MppiController {
            cfg,
            mean: None,
            calls: 0,
        }
    }

    pub fn reset(&mut self) {
        self.mean = None;
    }

    pub fn act(&mut self, model: &dyn WorldModel, obs: &DVector<f64>) -> Result<MppiResult> {
        let seed = self
            .cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.calls);
        self.calls += 1;
        let noise = MppiNoise::sample(&self.cfg, model.action_dim(), seed);
        let warm = self.mean.as_ref().map(shift_mean);
        let res = mppi_plan(model, obs, &self.cfg, warm.as_ref(), &noise)?;
        self.mean = Some(res.mean.clone());
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvConfig, RewardMode};

    fn gt(name: &str, group: &str) -> GroundTruthModel {
        let cfg = EnvConfig::named(name, group).with_reward(RewardMode::Dense);
        GroundTruthModel::new(make_env(&cfg).unwrap())
    }

    #[test]
    fn empty_rollout() {
        let m = gt("pointmass2d", "C4");
        let s0 = DVector::from_vec(vec![0.1, 0.2, 0.0, 0.0]);
        let traj = rollout(&m, &s0, &[]).unwrap();
        assert_eq!(traj.states, vec![s0]);
    }

    #[test]
    fn discount_zero_keeps_first_reward() {
        let m = gt("pointmass2d", "C4");
        let s0 = DVector::from_vec(vec![0.1, 0.2, 0.0, 0.0]);
        let acts = vec![DVector::from_vec(vec![0.3, 0.0]); 4];
        let traj = rollout(&m, &s0, &acts).unwrap();
        let r0 = traj.rewards.as_ref().unwrap()[0];
        assert_eq!(trajectory_return(&traj, &m, 0.0).unwrap(), r0);
    }

    #[test]
    fn shift_pads_with_zeros() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert_eq!(
            shift_mean(&m),
            DMatrix::from_row_slice(1, 3, &[2.0, 3.0, 0.0])
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = MppiConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.top_k = cfg.num_samples + 1;
        assert!(cfg.validate().is_err());
        cfg = MppiConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg = MppiConfig {
            horizon: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidHorizon(0))));
    }

    #[test]
    fn no_selection_pressure_returns_warm_start() {
        let m = gt("pointmass2d", "C4");
        let cfg = MppiConfig {
            num_samples: 1,
            top_k: 1,
            init_std: 0.0,
            min_std: 0.0,
            horizon: 3,
            iterations: 2,
            ..Default::default()
        };
        let warm = DMatrix::from_row_slice(2, 3, &[0.3, 0.1, 0.0, -0.2, 0.4, 0.0]);
        let noise = MppiNoise::sample(&cfg, 2, 1);
        let res = mppi_plan(
            &m,
            &DVector::from_vec(vec![0.2, 0.1, 0.0, 0.0]),
            &cfg,
            Some(&warm),
            &noise,
        )
        .unwrap();
        assert_eq!(res.action.as_slice(), &[0.3, -0.2]);
    }
}
