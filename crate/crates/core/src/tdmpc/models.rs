use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::{make_env, EnvConfig, GeometricEnv};
use crate::eqnet::{load_checkpoint, save_checkpoint, EqMlp, ForwardCache, WidthStrategy};
use crate::error::{Error, Result};
use crate::groups::{make_trivial, FiniteGroup, Representation};
use crate::planner::WorldModel;

/// Which components are built equivariant. The encoder follows the
/// transition/reward switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Components {
    pub dynamics_reward: bool,
    pub q: bool,
    pub policy: bool,
}

impl Default for Components {
    fn default() -> Self {
        Components::all()
    }
}

impl Components {
    pub fn all() -> Self {
        Components {
            dynamics_reward: true,
            q: true,
            policy: true,
        }
    }

    pub fn none() -> Self {
        Components {
            dynamics_reward: false,
            q: false,
            policy: false,
        }
    }

    pub fn any(&self) -> bool {
        self.dynamics_reward || self.q || self.policy
    }

    pub fn is_all(&self) -> bool {
        self.dynamics_reward && self.q && self.policy
    }

    /// All eight on/off combinations.
    pub fn power_set() -> Vec<Components> {
        (0..8)
            .map(|m| Components {
                dynamics_reward: m & 1 != 0,
                q: m & 2 != 0,
                policy: m & 4 != 0,
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.dynamics_reward {
            parts.push("transition+reward");
        }
        if self.q {
            parts.push("q");
        }
        if self.policy {
            parts.push("pi");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("|")
        }
    }
}

/// Network sizes, stated as baseline (non-equivariant) widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub latent_width: usize,
    pub hidden_width: usize,
    /// Linear layers per network.
    pub depth: usize,
    pub width_strategy: WidthStrategy,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_width: 16,
            hidden_width: 32,
            depth: 3,
            width_strategy: WidthStrategy::Sqrt,
        }
    }
}

/// Radial squashing of each action block onto the open ball of radius
/// `limit`: u ↦ limit·tanh(‖u‖)·u/‖u‖. Commutes with orthogonal maps.
pub fn squash(u: &DMatrix<f64>, blocks: &[usize], limit: f64) -> DMatrix<f64> {
    let mut out = u.clone();
    for j in 0..u.ncols() {
        let mut row = 0;
        for &b in blocks {
            let r = u.view((row, j), (b, 1)).norm();
            let s = if r < 1e-8 {
                1.0 - r * r / 3.0
            } else {
                r.tanh() / r
            };
            for k in 0..b {
                out[(row + k, j)] = limit * s * u[(row + k, j)];
            }
            row += b;
        }
    }
    out
}

/// Vector-Jacobian product of [`squash`].
pub fn squash_backward(
    u: &DMatrix<f64>,
    blocks: &[usize],
    limit: f64,
    upstream: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.nrows(), u.ncols());
    for j in 0..u.ncols() {
        let mut row = 0;
        for &b in blocks {
            let ub = u.view((row, j), (b, 1));
            let gb = upstream.view((row, j), (b, 1));
            let r = ub.norm();
            // a = limit·(s·u), s = tanh(r)/r; da/du = limit·(s·I + c·u uᵀ).
            let (s, c) = if r < 1e-4 {
                (1.0 - r * r / 3.0, -2.0 / 3.0 + 8.0 / 15.0 * r * r)
            } else {
                let t = r.tanh();
                let dt = 1.0 - t * t;
                (t / r, (dt * r - t) / (r * r * r))
            };
            let dot = ub.dot(&gb);
            for k in 0..b {
                out[(row + k, j)] = limit * (s * gb[k] + c * dot * ub[k]);
            }
            row += b;
        }
    }
    out
}

/// Encoder, latent dynamics, reward, twin Q and policy, plus EMA targets
/// of the encoder and Q heads.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub encoder: EqMlp,
    pub dynamics: EqMlp,
    pub reward: EqMlp,
    pub q1: EqMlp,
    pub q2: EqMlp,
    pub policy: EqMlp,
    pub target_encoder: EqMlp,
    pub target_q1: EqMlp,
    pub target_q2: EqMlp,
    pub(crate) obs_rep: Representation,
    pub(crate) action_rep: Representation,
    pub(crate) latent_rep: Representation,
    pub(crate) action_blocks: Vec<usize>,
    pub(crate) action_limit: f64,
    pub arch: ArchConfig,
    pub components: Components,
    pub env_config: EnvConfig,
    pub seed: u64,
}

/// Per-network residuals of the five symmetry conditions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NetworkResiduals {
    pub encoder: f64,
    pub dynamics: f64,
    pub reward: f64,
    pub q: f64,
    pub policy: f64,
}

impl NetworkResiduals {
    pub fn max(&self) -> f64 {
        [
            self.encoder,
            self.dynamics,
            self.reward,
            self.q,
            self.policy,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn plain(group: &Arc<FiniteGroup>, dim: usize) -> Result<Representation> {
    Representation::multiple(&Representation::trivial(group), dim)
}

fn cat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

impl ModelSet {
    pub fn new(
        env: &dyn GeometricEnv,
        arch: &ArchConfig,
        components: Components,
        seed: u64,
    ) -> Result<Self> {
        let group = env.group().clone();
        let trivial_group = Arc::new(make_trivial(group.dim()));
        let (obs_eq, act_eq) = (env.obs_rep().clone(), env.action_rep().clone());
        let (ds, da) = (obs_eq.dim(), act_eq.dim());
        let latent_eq = if components.any() {
            let copies = arch.width_strategy.copies(arch.latent_width, group.order());
            Representation::multiple(&Representation::regular(&group), copies)?
        } else {
            plain(&trivial_group, arch.latent_width)?
        };
        let dz = latent_eq.dim();
        let triv_eq = Representation::trivial(&group);
        let p = |d: usize| plain(&trivial_group, d);

        // (input rep, output rep) for each network, equivariant or plain.
        let dr = components.dynamics_reward;
        let enc_reps = if dr {
            (obs_eq.clone(), latent_eq.clone())
        } else {
            (p(ds)?, p(dz)?)
        };
        let za_eq = || Representation::direct_sum(&[latent_eq.clone(), act_eq.clone()]);
        let dyn_reps = if dr {
            (za_eq()?, latent_eq.clone())
        } else {
            (p(dz + da)?, p(dz)?)
        };
        let rew_reps = if dr {
            (za_eq()?, triv_eq.clone())
        } else {
            (p(dz + da)?, p(1)?)
        };
        let q_reps = if components.q {
            (za_eq()?, triv_eq)
        } else {
            (p(dz + da)?, p(1)?)
        };
        let pi_reps = if components.policy {
            (latent_eq.clone(), act_eq.clone())
        } else {
            (p(dz)?, p(da)?)
        };

        let (w, depth, strat) = (arch.hidden_width, arch.depth, arch.width_strategy);
        let net = |reps: &(Representation, Representation), k: u64| {
            EqMlp::init(
                &reps.0,
                &reps.1,
                w,
                depth,
                strat,
                seed.wrapping_mul(1000).wrapping_add(k),
            )
        };
        let encoder = net(&enc_reps, 1)?;
        let dynamics = net(&dyn_reps, 2)?;
        let reward = net(&rew_reps, 3)?;
        let q1 = net(&q_reps, 4)?;
        let q2 = net(&q_reps, 5)?;
        let policy = net(&pi_reps, 6)?;
        Ok(ModelSet {
            target_encoder: encoder.clone(),
            target_q1: q1.clone(),
            target_q2: q2.clone(),
            encoder,
            dynamics,
            reward,
            q1,
            q2,
            policy,
            obs_rep: obs_eq,
            action_rep: act_eq,
            latent_rep: latent_eq,
            action_blocks: env.action_blocks(),
            action_limit: env.config().action_limit,
            arch: arch.clone(),
            components,
            env_config: env.config().clone(),
            seed,
        })
    }

    pub fn latent_rep(&self) -> &Representation {
        &self.latent_rep
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_rep.dim()
    }

    pub fn obs_rep(&self) -> &Representation {
        &self.obs_rep
    }

    pub fn action_rep(&self) -> &Representation {
        &self.action_rep
    }

    /// Learnable parameters (targets excluded).
    pub fn num_params(&self) -> usize {
        self.online_nets().iter().map(|n| n.num_params()).sum()
    }

    pub(crate) fn online_nets(&self) -> [&EqMlp; 6] {
        [
            &self.encoder,
            &self.dynamics,
            &self.reward,
            &self.q1,
            &self.q2,
            &self.policy,
        ]
    }

    pub(crate) fn named_nets(&self) -> Vec<(&'static str, &EqMlp)> {
        vec![
            ("encoder", &self.encoder),
            ("dynamics", &self.dynamics),
            ("reward", &self.reward),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("policy", &self.policy),
            ("target_encoder", &self.target_encoder),
            ("target_q1", &self.target_q1),
            ("target_q2", &self.target_q2),
        ]
    }

    fn named_nets_mut(&mut self) -> Vec<&mut EqMlp> {
        vec![
            &mut self.encoder,
            &mut self.dynamics,
            &mut self.reward,
            &mut self.q1,
            &mut self.q2,
            &mut self.policy,
            &mut self.target_encoder,
            &mut self.target_q1,
            &mut self.target_q2,
        ]
    }

    /// Flat parameters of encoder, dynamics, reward, q1, q2 (in that order).
    pub fn model_params(&self) -> Vec<f64> {
        self.online_nets()[..5]
            .iter()
            .flat_map(|n| n.params())
            .collect()
    }

    pub fn set_model_params(&mut self, src: &[f64]) -> Result<()> {
        let mut off = 0;
        for net in [
            &mut self.encoder,
            &mut self.dynamics,
            &mut self.reward,
            &mut self.q1,
            &mut self.q2,
        ] {
            let n = net.num_params();
            if off + n > src.len() {
                return Err(Error::shape(off + n, src.len()));
            }
            net.set_params(&src[off..off + n])?;
            off += n;
        }
        if off != src.len() {
            return Err(Error::shape(off, src.len()));
        }
        Ok(())
    }

    pub fn num_model_params(&self) -> usize {
        self.online_nets()[..5].iter().map(|n| n.num_params()).sum()
    }

    /// θ_target ← (1 − τ)·θ_target + τ·θ for the encoder and Q heads.
    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        for (target, online) in [
            (&mut self.target_encoder, &self.encoder),
            (&mut self.target_q1, &self.q1),
            (&mut self.target_q2, &self.q2),
        ] {
            let mixed: Vec<f64> = target
                .params()
                .iter()
                .zip(online.params())
                .map(|(t, o)| (1.0 - tau) * t + tau * o)
                .collect();
            target.set_params(&mixed)?;
        }
        Ok(())
    }

    pub fn encode_batch(&self, obs: &DMatrix<f64>) -> DMatrix<f64> {
        self.encoder.forward_batch(obs)
    }

    pub fn policy_actions(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        squash(
            &self.policy.forward_batch(z),
            &self.action_blocks,
            self.action_limit,
        )
    }

    /// min(Q1, Q2) per column.
    pub fn q_min(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Vec<f64> {
        let x = cat(z, a);
        let (q1, q2) = (self.q1.forward_batch(&x), self.q2.forward_batch(&x));
        q1.iter().zip(q2.iter()).map(|(a, b)| a.min(*b)).collect()
    }

    fn target_q_min(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Vec<f64> {
        let x = cat(z, a);
        let (q1, q2) = (
            self.target_q1.forward_batch(&x),
            self.target_q2.forward_batch(&x),
        );
        q1.iter().zip(q2.iter()).map(|(a, b)| a.min(*b)).collect()
    }

    /// r + γ·min(Q1, Q2)_target(z', π(z')) per column.
    pub fn td_target(&self, z_next: &DMatrix<f64>, r: &[f64], gamma: f64) -> Vec<f64> {
        let a = self.policy_actions(z_next);
        let q = self.target_q_min(z_next, &a);
        r.iter().zip(q).map(|(r, q)| r + gamma * q).collect()
    }

    /// Residuals of: encoder and dynamics equivariant, reward and Q
    /// invariant, policy (after squashing) equivariant, each over all group
    /// elements and `samples` random inputs. Components built without
    /// symmetry are checked against the environment's group all the same.
    pub fn symmetry_residuals(&self, samples: usize, seed: u64) -> NetworkResiduals {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut randn =
            |r: usize| DMatrix::from_fn(r, samples, |_, _| StandardNormal.sample(&mut rng));
        let (rs, ra, rz) = (&self.obs_rep, &self.action_rep, &self.latent_rep);
        let group = rs.group().clone();
        let lat_ok = rz.group().order() == group.order();
        let s = randn(rs.dim());
        let z = randn(rz.dim());
        let a = randn(ra.dim());
        let x = cat(&z, &a);
        let h = self.encoder.forward_batch(&s);
        let d = self.dynamics.forward_batch(&x);
        let r = self.reward.forward_batch(&x);
        let q = self.q_min(&z, &a);
        let p = self.policy_actions(&z);
        let mut out = NetworkResiduals {
            encoder: 0.0,
            dynamics: 0.0,
            reward: 0.0,
            q: 0.0,
            policy: 0.0,
        };
        for g in 0..group.order() {
            let gz = if lat_ok { rz.matrix(g) * &z } else { z.clone() };
            let ga = ra.matrix(g) * &a;
            let gx = cat(&gz, &ga);
            let rot_z = |m: &DMatrix<f64>| if lat_ok { rz.matrix(g) * m } else { m.clone() };
            out.encoder = out
                .encoder
                .max((self.encoder.forward_batch(&(rs.matrix(g) * &s)) - rot_z(&h)).amax());
            out.dynamics = out
                .dynamics
                .max((self.dynamics.forward_batch(&gx) - rot_z(&d)).amax());
            out.reward = out.reward.max((self.reward.forward_batch(&gx) - &r).amax());
            let gq = self.q_min(&gz, &ga);
            out.q = out.q.max(
                gq.iter()
                    .zip(&q)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
            out.policy = out
                .policy
                .max((self.policy_actions(&gz) - ra.matrix(g) * &p).amax());
        }
        out
    }

    /// Write a checkpoint (all nine networks plus the configuration).
    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::json!({
            "env": self.env_config,
            "arch": self.arch,
            "components": self.components,
        });
        save_checkpoint(
            path,
            self.obs_rep.group().name(),
            self.seed,
            &self.named_nets(),
            extra,
        )
    }

    /// Rebuild a model set (and its environment) from a checkpoint.
    pub fn load(path: &Path) -> Result<(Self, Arc<dyn GeometricEnv>)> {
        let (header, params) = load_checkpoint(path)?;
        let field = |k: &str| {
            header
                .extra
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{k}` in header")))
        };
        let env_cfg: EnvConfig = serde_json::from_value(field("env")?)?;
        let arch: ArchConfig = serde_json::from_value(field("arch")?)?;
        let components: Components = serde_json::from_value(field("components")?)?;
        let env = make_env(&env_cfg)?;
        let mut models = ModelSet::new(env.as_ref(), &arch, components, header.rng_seed)?;
        let mut off = 0;
        let names: Vec<&str> = models.named_nets().iter().map(|(n, _)| *n).collect();
        if header.nets.len() != names.len() {
            return Err(Error::Checkpoint("network list does not match".into()));
        }
        for ((net, h), name) in models
            .named_nets_mut()
            .into_iter()
            .zip(&header.nets)
            .zip(names)
        {
            if h.name != name || h.num_params() != net.num_params() {
                return Err(Error::Checkpoint(format!(
                    "network `{}` does not match `{name}`",
                    h.name
                )));
            }
            net.set_params(&params[off..off + h.num_params()])?;
            off += h.num_params();
        }
        Ok((models, env))
    }
}

impl WorldModel for ModelSet {
    fn state_dim(&self) -> usize {
        self.latent_dim()
    }

    fn action_dim(&self) -> usize {
        self.action_rep.dim()
    }

    fn action_blocks(&self) -> Vec<usize> {
        self.action_blocks.clone()
    }

    fn action_limit(&self) -> f64 {
        self.action_limit
    }

    fn encode(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        self.encoder.forward(obs)
    }

    fn next_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.dynamics.forward_batch(&cat(z, a)))
    }

    fn reward_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .reward
            .forward_batch(&cat(z, a))
            .iter()
            .copied()
            .collect())
    }

    fn q_batch(&self, z: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.q_min(z, a))
    }

    fn policy_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.policy_actions(z))
    }
}

/// Training segments: `obs[t]` is `d_S × B` for t = 0..=K, `actions[t]`
/// is `d_A × B` and `rewards[t]` has B entries for t < K.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Vec<DMatrix<f64>>,
    pub actions: Vec<DMatrix<f64>>,
    pub rewards: Vec<Vec<f64>>,
}

impl Batch {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn size(&self) -> usize {
        self.obs.first().map_or(0, |o| o.ncols())
    }

    /// States through ρ_S(g), actions through ρ_A(g), rewards unchanged.
    pub fn transform(&self, g: usize, rep_s: &Representation, rep_a: &Representation) -> Batch {
        Batch {
            obs: self.obs.iter().map(|o| rep_s.matrix(g) * o).collect(),
            actions: self.actions.iter().map(|a| rep_a.matrix(g) * a).collect(),
            rewards: self.rewards.clone(),
        }
    }
}

/// Loss weights and discounting for one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
    /// Per-step decay ρ^t of the latent-rollout losses.
    pub temporal_decay: f64,
    pub gamma: f64,
}

/// Unweighted loss terms (batch means) and the weighted model total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub consistency: f64,
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.consistency,
            self.reward,
            self.value,
            self.policy,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Regression targets held fixed during one update.
#[derive(Debug, Clone)]
pub struct LossTargets {
    pub consistency: Vec<DMatrix<f64>>,
    pub td: Vec<Vec<f64>>,
}

struct NetGrads {
    offsets: [usize; 5],
}

impl NetGrads {
    fn new(m: &ModelSet) -> Self {
        let mut offsets = [0; 5];
        let mut off = 0;
        for (i, n) in m.online_nets()[..5].iter().enumerate() {
            offsets[i] = off;
            off += n.num_params();
        }
        NetGrads { offsets }
    }

    fn slice<'a>(&self, grad: &'a mut [f64], m: &ModelSet, i: usize) -> &'a mut [f64] {
        let n = m.online_nets()[i].num_params();
        &mut grad[self.offsets[i]..self.offsets[i] + n]
    }
}

impl ModelSet {
    /// Gradient-free regression targets for a batch: target-encoder latents
    /// for consistency and TD targets built from online-encoder latents.
    pub fn loss_targets(&self, batch: &Batch, gamma: f64) -> LossTargets {
        let mut consistency = Vec::with_capacity(batch.horizon());
        let mut td = Vec::with_capacity(batch.horizon());
        for t in 0..batch.horizon() {
            let next = &batch.obs[t + 1];
            consistency.push(self.target_encoder.forward_batch(next));
            let zn = self.encoder.forward_batch(next);
            td.push(self.td_target(&zn, &batch.rewards[t], gamma));
        }
        LossTargets { consistency, td }
    }

    /// Latent rollout losses. With `grad`, accumulates d(total)/dθ for the
    /// encoder, dynamics, reward and Q heads (layout of [`Self::model_params`]).
    /// Also returns the rolled-out latents for the policy loss.
    pub fn model_loss(
        &self,
        batch: &Batch,
        w: &LossWeights,
        grad: Option<&mut [f64]>,
    ) -> Result<(LossBreakdown, Vec<DMatrix<f64>>)> {
        let targets = self.loss_targets(batch, w.gamma);
        self.model_loss_with(batch, &targets, w, grad)
    }

    /// [`Self::model_loss`] against fixed targets.
    pub fn model_loss_with(
        &self,
        batch: &Batch,
        targets: &LossTargets,
        w: &LossWeights,
        mut grad: Option<&mut [f64]>,
    ) -> Result<(LossBreakdown, Vec<DMatrix<f64>>)> {
        let k = batch.horizon();
        let b = batch.size();
        if k == 0 || b == 0 {
            return Err(Error::InvalidHorizon(k));
        }
        if targets.td.len() != k || targets.consistency.len() != k {
            return Err(Error::shape(k, targets.td.len()));
        }
        let dz = self.latent_dim();
        let norm = 1.0 / (k as f64 * b as f64);
        let (cons_target, td) = (&targets.consistency, &targets.td);

        let (z0, enc_cache) = self.encoder.forward_cached(&batch.obs[0]);
        let mut zs = vec![z0];
        let mut caches: Vec<[(DMatrix<f64>, ForwardCache); 4]> = Vec::with_capacity(k);
        let mut out = LossBreakdown::default();
        let mut grads_out: Vec<[DMatrix<f64>; 4]> = Vec::with_capacity(k);
        let mut decay = 1.0;
        for t in 0..k {
            let x = cat(&zs[t], &batch.actions[t]);
            let (zn, c_dyn) = self.dynamics.forward_cached(&x);
            let (r, c_r) = self.reward.forward_cached(&x);
            let (q1, c_q1) = self.q1.forward_cached(&x);
            let (q2, c_q2) = self.q2.forward_cached(&x);
            let diff = &zn - &cons_target[t];
            let cons = diff.norm_squared() / dz as f64;
            let mut dr = DMatrix::zeros(1, b);
            let mut dq1 = DMatrix::zeros(1, b);
            let mut dq2 = DMatrix::zeros(1, b);
            let (mut rew, mut val) = (0.0, 0.0);
            for j in 0..b {
                let er = r[(0, j)] - batch.rewards[t][j];
                let (e1, e2) = (q1[(0, j)] - td[t][j], q2[(0, j)] - td[t][j]);
                rew += er * er;
                val += e1 * e1 + e2 * e2;
                dr[(0, j)] = 2.0 * w.reward * decay * norm * er;
                dq1[(0, j)] = 2.0 * w.value * decay * norm * e1;
                dq2[(0, j)] = 2.0 * w.value * decay * norm * e2;
            }
            out.consistency += decay * cons * norm;
            out.reward += decay * rew * norm;
            out.value += decay * val * norm;
            let dcons = diff * (2.0 * w.consistency * decay * norm / dz as f64);
            grads_out.push([dcons, dr, dq1, dq2]);
            caches.push([(x, c_dyn), (r, c_r), (q1, c_q1), (q2, c_q2)]);
            zs.push(zn);
            decay *= w.temporal_decay;
        }
        out.total = w.consistency * out.consistency + w.reward * out.reward + w.value * out.value;
        if !out.total.is_finite() {
            return Err(Error::TrainingFailure {
                update: 0,
                detail: format!("non-finite model loss {out:?}"),
            });
        }

        if let Some(grad) = grad.as_deref_mut() {
            let layout = NetGrads::new(self);
            let mut gz_next = DMatrix::zeros(dz, b);
            for t in (0..k).rev() {
                let [dcons, dr, dq1, dq2] = &grads_out[t];
                let [(_, c_dyn), (_, c_r), (_, c_q1), (_, c_q2)] = &caches[t];
                let up = &gz_next + dcons;
                let mut gx = self
                    .dynamics
                    .backward(c_dyn, &up, layout.slice(grad, self, 1));
                gx += self.reward.backward(c_r, dr, layout.slice(grad, self, 2));
                gx += self.q1.backward(c_q1, dq1, layout.slice(grad, self, 3));
                gx += self.q2.backward(c_q2, dq2, layout.slice(grad, self, 4));
                gz_next = gx.rows(0, dz).into_owned();
            }
            self.encoder
                .backward(&enc_cache, &gz_next, layout.slice(grad, self, 0));
        }
        Ok((out, zs))
    }

    /// −Σ_t ρ^t·mean min(Q1, Q2)(z_t, π(z_t)) over detached latents; with
    /// `grad`, accumulates the gradient for the policy parameters only.
    pub fn policy_loss(
        &self,
        latents: &[DMatrix<f64>],
        w: &LossWeights,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let n = latents.len();
        let mut loss = 0.0;
        let mut decay = 1.0;
        let mut scratch = vec![0.0; self.q1.num_params().max(self.q2.num_params())];
        for z in latents {
            let b = z.ncols();
            let scale = decay / (n as f64 * b as f64);
            let (u, c_pi) = self.policy.forward_cached(z);
            let a = squash(&u, &self.action_blocks, self.action_limit);
            let x = cat(z, &a);
            let (q1, c1) = self.q1.forward_cached(&x);
            let (q2, c2) = self.q2.forward_cached(&x);
            let mut up1 = DMatrix::zeros(1, b);
            let mut up2 = DMatrix::zeros(1, b);
            for j in 0..b {
                if q1[(0, j)] <= q2[(0, j)] {
                    loss -= scale * q1[(0, j)];
                    up1[(0, j)] = -scale * w.policy;
                } else {
                    loss -= scale * q2[(0, j)];
                    up2[(0, j)] = -scale * w.policy;
                }
            }
            if let Some(grad) = grad.as_deref_mut() {
                let dz = z.nrows();
                let mut gx = self
                    .q1
                    .backward(&c1, &up1, &mut scratch[..self.q1.num_params()]);
                gx += self
                    .q2
                    .backward(&c2, &up2, &mut scratch[..self.q2.num_params()]);
                let ga = gx.rows(dz, gx.nrows() - dz).into_owned();
                let gu = squash_backward(&u, &self.action_blocks, self.action_limit, &ga);
                self.policy.backward(&c_pi, &gu, grad);
            }
            decay *= w.temporal_decay;
        }
        loss
    }
}
