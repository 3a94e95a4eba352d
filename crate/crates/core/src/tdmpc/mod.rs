//! Desk-scale TD-MPC with optionally equivariant components.
//!
//! Training alternates episode collection (MPPI over the learned latent
//! model, plus exploration noise) with gradient updates on latent-rollout
//! losses. All randomness flows from a single seed.

mod buffer;
mod models;

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;
pub use models::{
    squash, squash_backward, ArchConfig, Batch, Components, LossBreakdown, LossTargets,
    LossWeights, ModelSet, NetworkResiduals,
};

use crate::envs::{make_env, EnvConfig, EnvState, Episode, GeometricEnv};
use crate::eqnet::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::par;
use crate::planner::{MppiConfig, MppiController, WorldModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Warmup episodes collected with uniform random actions.
    pub seed_steps: usize,
    pub total_env_steps: usize,
    pub batch_size: usize,
    pub rollout_horizon: usize,
    pub gamma: f64,
    pub consistency_coef: f64,
    pub reward_coef: f64,
    pub value_coef: f64,
    pub policy_coef: f64,
    pub temporal_decay: f64,
    pub ema_rate: f64,
    pub lr: f64,
    pub grad_clip_norm: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Environment steps per planning decision.
    pub action_repeat: usize,
    /// Gradient updates per collected decision.
    pub update_ratio: f64,
    pub exploration_std_start: f64,
    pub exploration_std_end: f64,
    pub exploration_anneal_steps: usize,
    /// Capacity in episodes.
    pub buffer_capacity: usize,
    pub arch: ArchConfig,
    pub components: Components,
    pub mppi: MppiConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed_steps: 0,
            total_env_steps: 50_000,
            batch_size: 256,
            rollout_horizon: 5,
            gamma: 0.99,
            consistency_coef: 2.0,
            reward_coef: 0.5,
            value_coef: 0.1,
            policy_coef: 1.0,
            temporal_decay: 0.5,
            ema_rate: 0.01,
            lr: 1e-3,
            grad_clip_norm: 10.0,
            eval_every: 25_000,
            eval_episodes: 10,
            seeds: vec![0, 1, 2],
            action_repeat: 4,
            update_ratio: 0.5,
            exploration_std_start: 0.5,
            exploration_std_end: 0.05,
            exploration_anneal_steps: 25_000,
            buffer_capacity: 1_000,
            arch: ArchConfig::default(),
            components: Components::all(),
            mppi: MppiConfig {
                num_samples: 64,
                horizon: 5,
                iterations: 4,
                top_k: 8,
                ..MppiConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.total_env_steps,
            self.batch_size,
            self.rollout_horizon,
            self.eval_every,
            self.eval_episodes,
            self.action_repeat,
            self.buffer_capacity,
        ];
        if positive.contains(&0) {
            return Err(Error::Config(
                "step counts, sizes and horizons must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "discount {} outside (0, 1]",
                self.gamma
            )));
        }
        let nonneg = [
            self.consistency_coef,
            self.reward_coef,
            self.value_coef,
            self.policy_coef,
            self.temporal_decay,
            self.update_ratio,
            self.exploration_std_start,
            self.exploration_std_end,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0))
            || !(self.lr > 0.0)
            || !(0.0..=1.0).contains(&self.ema_rate)
        {
            return Err(Error::Config(
                "loss weights, rates and noise scales must be non-negative".into(),
            ));
        }
        self.mppi.validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            consistency: self.consistency_coef,
            reward: self.reward_coef,
            value: self.value_coef,
            policy: self.policy_coef,
            temporal_decay: self.temporal_decay,
            gamma: self.gamma,
        }
    }

    pub fn exploration_std(&self, env_steps: usize) -> f64 {
        let frac = (env_steps as f64 / self.exploration_anneal_steps.max(1) as f64).min(1.0);
        self.exploration_std_start + frac * (self.exploration_std_end - self.exploration_std_start)
    }
}

fn clip_global_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Models plus optimiser state.
pub struct Learner {
    pub models: ModelSet,
    model_opt: Optimizer,
    pi_opt: Optimizer,
    weights: LossWeights,
    ema_rate: f64,
    grad_clip_norm: f64,
    pub updates: usize,
}

impl Learner {
    pub fn new(models: ModelSet, cfg: &TrainConfig) -> Self {
        let adam = OptimizerKind::Adam {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        Learner {
            model_opt: Optimizer::new(adam, models.num_model_params()),
            pi_opt: Optimizer::new(adam, models.policy.num_params()),
            models,
            weights: cfg.loss_weights(),
            ema_rate: cfg.ema_rate,
            grad_clip_norm: cfg.grad_clip_norm,
            updates: 0,
        }
    }

    /// One gradient step on the model losses, one on the policy loss, then
    /// the EMA target update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let fail = |update: usize, detail: String| Error::TrainingFailure { update, detail };
        let m = &mut self.models;
        let mut grad = vec![0.0; m.num_model_params()];
        let (mut loss, latents) = m
            .model_loss(batch, &self.weights, Some(&mut grad))
            .map_err(|e| fail(self.updates, e.to_string()))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(fail(self.updates, "non-finite model gradient".into()));
        }
        clip_global_norm(&mut grad, self.grad_clip_norm);
        let mut params = m.model_params();
        self.model_opt.step(&mut params, &grad);
        m.set_model_params(&params)?;

        let mut pgrad = vec![0.0; m.policy.num_params()];
        loss.policy = m.policy_loss(&latents, &self.weights, Some(&mut pgrad));
        if !loss.is_finite() || pgrad.iter().any(|g| !g.is_finite()) {
            return Err(fail(self.updates, format!("non-finite loss {loss:?}")));
        }
        clip_global_norm(&mut pgrad, self.grad_clip_norm);
        let mut pp = m.policy.params();
        self.pi_opt.step(&mut pp, &pgrad);
        m.policy.set_params(&pp)?;
        m.update_targets(self.ema_rate)?;
        self.updates += 1;
        Ok(loss)
    }
}

/// One collected episode at decision granularity.
#[derive(Debug, Clone)]
pub struct Collected {
    /// Observations, actions and per-decision summed rewards.
    pub episode: Episode,
    /// Total environment reward over all environment steps.
    pub env_reward: f64,
    pub env_steps: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Run one episode from `state`. Without a planner, actions are uniform in
/// the admissible set; otherwise MPPI picks the action and Gaussian noise of
/// scale `exploration_std` is added before clipping.
pub fn collect_episode(
    env: &dyn GeometricEnv,
    mut planner: Option<(&dyn WorldModel, &mut MppiController)>,
    mut state: EnvState,
    exploration_std: f64,
    action_repeat: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Collected> {
    let repeat = action_repeat.max(1);
    let mut ep = Episode::default();
    let mut env_reward = 0.0;
    let mut steps = 0;
    if let Some((_, c)) = planner.as_mut() {
        c.reset();
    }
    while steps < env.episode_len() {
        let obs = env.observe(&state);
        let action = match planner.as_mut() {
            None => env.sample_action(rng),
            Some((model, ctl)) => {
                let mut a = ctl.act(*model, &obs)?.action.as_slice().to_vec();
                if exploration_std > 0.0 {
                    for (x, n) in a.iter_mut().zip(gaussian(rng, env.action_dim())) {
                        *x += exploration_std * n;
                    }
                }
                env.clip_action(&a)
            }
        };
        let mut r = 0.0;
        for _ in 0..repeat.min(env.episode_len() - steps) {
            r += env.reward(&state, &action);
            state = env.step(&state, &action)?;
            steps += 1;
        }
        env_reward += r;
        ep.observations.push(obs);
        ep.actions.push(DVector::from_vec(action));
        ep.rewards.push(r);
    }
    ep.observations.push(env.observe(&state));
    Ok(Collected {
        episode: ep,
        env_reward,
        env_steps: steps,
    })
}

/// Mean and spread of per-episode returns.
#[derive(Debug, Clone, Serialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        EvalStats {
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D)
        .wrapping_add(i as u64)
}

/// Planned episode without exploration noise from a given start state.
pub fn planned_return(
    env: &dyn GeometricEnv,
    model: &dyn WorldModel,
    mppi: &MppiConfig,
    state: EnvState,
    seed: u64,
    action_repeat: usize,
) -> Result<f64> {
    let mut ctl = MppiController::new(MppiConfig {
        seed,
        ..mppi.clone()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(collect_episode(
        env,
        Some((model, &mut ctl)),
        state,
        0.0,
        action_repeat,
        &mut rng,
    )?
    .env_reward)
}

/// Mean total reward over `episodes` planned episodes (no exploration).
pub fn evaluate(
    env: &dyn GeometricEnv,
    model: &dyn WorldModel,
    mppi: &MppiConfig,
    episodes: usize,
    seed: u64,
    action_repeat: usize,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let idx: Vec<usize> = (0..episodes).collect();
    let returns = par::map(&idx, |&i| {
        let s = episode_seed(seed, i);
        let state = env.reset(&mut ChaCha8Rng::seed_from_u64(s));
        planned_return(env, model, mppi, state, s, action_repeat)
    });
    Ok(EvalStats::from_returns(
        returns.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Uniform-random-action baseline over the same start states as [`evaluate`].
pub fn random_baseline(env: &dyn GeometricEnv, episodes: usize, seed: u64) -> Result<EvalStats> {
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = episode_seed(seed, i);
        let state = env.reset(&mut ChaCha8Rng::seed_from_u64(s));
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED);
        returns.push(collect_episode(env, None, state, 0.0, 1, &mut rng)?.env_reward);
    }
    Ok(EvalStats::from_returns(returns))
}

/// One point of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    pub mean_reward: f64,
    pub std: f64,
}

pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub learner: Learner,
    pub env: Arc<dyn GeometricEnv>,
    /// Loss of the last update after each episode (post-warmup).
    pub losses: Vec<LossBreakdown>,
    pub episodes: usize,
}

impl TrainOutcome {
    pub fn models(&self) -> &ModelSet {
        &self.learner.models
    }

    /// Mean reward at the first evaluation at or after `env_steps`.
    pub fn reward_at(&self, env_steps: usize) -> Option<f64> {
        self.curve
            .iter()
            .find(|p| p.env_steps >= env_steps)
            .map(|p| p.mean_reward)
    }
}

/// Full training loop: warmup collection, then alternating planned
/// collection and updates, with evaluation every `eval_every` env steps.
pub fn train(
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut progress: Option<&mut dyn FnMut(&CurvePoint)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = make_env(env_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = ModelSet::new(env.as_ref(), &cfg.arch, cfg.components, seed)?;
    let mut learner = Learner::new(models, cfg);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut controller = MppiController::new(MppiConfig {
        seed,
        ..cfg.mppi.clone()
    });
    let eval_seed = seed.wrapping_add(10_007);
    let mut curve = Vec::new();
    let mut losses = Vec::new();
    let (mut steps, mut episodes, mut next_eval) = (0usize, 0usize, 0usize);

    let mut record = |steps: usize, learner: &Learner, curve: &mut Vec<CurvePoint>| -> Result<()> {
        let stats = evaluate(
            env.as_ref(),
            &learner.models,
            &cfg.mppi,
            cfg.eval_episodes,
            eval_seed,
            cfg.action_repeat,
        )?;
        let point = CurvePoint {
            env_steps: steps,
            mean_reward: stats.mean,
            std: stats.std,
        };
        if let Some(cb) = progress.as_mut() {
            cb(&point);
        }
        curve.push(point);
        Ok(())
    };

    while steps < cfg.total_env_steps {
        if steps >= next_eval {
            record(steps, &learner, &mut curve)?;
            next_eval += cfg.eval_every;
        }
        let start = env.reset(&mut rng);
        let warmup = episodes < cfg.seed_steps;
        let collected = if warmup {
            collect_episode(env.as_ref(), None, start, 0.0, cfg.action_repeat, &mut rng)?
        } else {
            let std = cfg.exploration_std(steps);
            let planner: (&dyn WorldModel, &mut MppiController) =
                (&learner.models, &mut controller);
            collect_episode(
                env.as_ref(),
                Some(planner),
                start,
                std,
                cfg.action_repeat,
                &mut rng,
            )?
        };
        steps += collected.env_steps;
        episodes += 1;
        let decisions = collected.episode.len();
        buffer.push(collected.episode);
        if episodes >= cfg.seed_steps {
            let n = (decisions as f64 * cfg.update_ratio).ceil() as usize;
            let mut last = None;
            for _ in 0..n {
                let batch = buffer.sample(&mut rng, cfg.batch_size, cfg.rollout_horizon)?;
                last = Some(learner.train_step(&batch)?);
            }
            losses.extend(last);
        }
    }
    if steps >= next_eval {
        record(steps, &learner, &mut curve)?;
    }
    Ok(TrainOutcome {
        curve,
        learner,
        env,
        losses,
        episodes,
    })
}

/// Draw a standard-normal vector; exposed for tests that need matching noise.
pub fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_vec(
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}
