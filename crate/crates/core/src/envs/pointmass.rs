use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, clip_to_ball, invariant_norm_sq, sample_ball, EnvConfig, EnvState, GeometricEnv,
    RewardMode,
};
use crate::error::{Error, Result};
use crate::groups::{group_by_name, FiniteGroup, Representation};

/// Gravitational acceleration for the gravity-enabled 3D variant.
pub const GRAVITY: f64 = 9.81;
/// Drag coefficient of the symmetry-breaking x-axis drift.
pub const DRIFT_COEF: f64 = 1.0;
/// Initial positions are drawn from the ball of this radius.
pub const INIT_RADIUS: f64 = 0.3;

/// One or more unit point masses in 2D or 3D steered towards the origin.
///
/// Raw state is `[p_1, v_1, …, p_N, v_N]`; the observation is the raw state.
pub struct PointMass {
    cfg: EnvConfig,
    name: String,
    dim: usize,
    n: usize,
    group: Arc<FiniteGroup>,
    obs_rep: Representation,
    action_rep: Representation,
    target_radius: f64,
}

impl PointMass {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        let (dim, n) = match cfg.env.as_str() {
            "pointmass2d" => (2, 1),
            "pointmass3d" => (3, 1),
            "nball" => (3, cfg.n_balls),
            other => return Err(Error::UnknownEnv(other.to_string())),
        };
        if n == 0 {
            return Err(Error::Config("nball needs at least one particle".into()));
        }
        if cfg.gravity && dim != 3 {
            return Err(Error::Config(
                "gravity is only defined for 3D point masses".into(),
            ));
        }
        let group = Arc::new(group_by_name(&cfg.group, dim)?);
        let std = Representation::standard(&group);
        let obs_rep = Representation::multiple(&std, 2 * n)?;
        let action_rep = Representation::multiple(&std, n)?;
        let target_radius = cfg.target_radius.unwrap_or(0.03);
        let name = if cfg.env == "nball" {
            format!("nball{n}")
        } else {
            cfg.env.clone()
        };
        Ok(PointMass {
            cfg,
            name,
            dim,
            n,
            group,
            obs_rep,
            action_rep,
            target_radius,
        })
    }

    pub fn spatial_dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn target_radius(&self) -> f64 {
        self.target_radius
    }

    fn particle_distances(&self, s: &EnvState) -> impl Iterator<Item = f64> + '_ {
        let d = self.dim;
        let values = s.values.clone();
        (0..self.n).map(move |i| invariant_norm_sq(&values[2 * d * i..2 * d * i + d]).sqrt())
    }
}

impl GeometricEnv for PointMass {
    fn name(&self) -> &str {
        &self.name
    }

    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    fn obs_rep(&self) -> &Representation {
        &self.obs_rep
    }

    fn action_rep(&self) -> &Representation {
        &self.action_rep
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let mut values = Vec::with_capacity(2 * self.dim * self.n);
        for _ in 0..self.n {
            values.extend(sample_ball(rng, self.dim, INIT_RADIUS));
            values.extend(std::iter::repeat_n(0.0, self.dim));
        }
        EnvState::new(values)
    }

    fn random_state(&self, rng: &mut ChaCha8Rng) -> EnvState {
        let mut values = Vec::with_capacity(2 * self.dim * self.n);
        for _ in 0..self.n {
            values.extend(sample_ball(rng, self.dim, 2.0 * INIT_RADIUS));
            values.extend(sample_ball(rng, self.dim, 1.0));
        }
        EnvState::new(values)
    }

    fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        let mut out = a.to_vec();
        for block in out.chunks_mut(self.dim) {
            clip_to_ball(block, self.cfg.action_limit);
        }
        out
    }

    fn sample_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.n)
            .flat_map(|_| sample_ball(rng, self.dim, self.cfg.action_limit))
            .collect()
    }

    fn step(&self, s: &EnvState, a: &[f64]) -> Result<EnvState> {
        let d = self.dim;
        if s.values.len() != 2 * d * self.n {
            return Err(Error::shape(2 * d * self.n, s.values.len()));
        }
        if a.len() != d * self.n {
            return Err(Error::shape(d * self.n, a.len()));
        }
        check_finite(&s.values, "non-finite point-mass state")?;
        check_finite(a, "non-finite point-mass action")?;
        let a = self.clip_action(a);
        let dt = self.cfg.dt;
        let keep = 1.0 - self.cfg.damping * dt;
        let mut out = s.values.clone();
        for i in 0..self.n {
            let base = 2 * d * i;
            let v = &s.values[base + d..base + 2 * d];
            let speed = if self.cfg.quadratic_drag != 0.0 {
                invariant_norm_sq(v).sqrt()
            } else {
                0.0
            };
            for k in 0..d {
                let mut acc = a[d * i + k] - self.cfg.quadratic_drag * speed * v[k];
                if self.cfg.drift && k == 0 {
                    acc -= DRIFT_COEF * v[0];
                }
                if self.cfg.gravity && k == 2 {
                    acc -= GRAVITY;
                }
                let vk = keep * v[k] + dt * acc;
                out[base + d + k] = vk;
                out[base + k] = s.values[base + k] + dt * vk;
            }
        }
        Ok(EnvState {
            values: out,
            t: s.t + 1,
        })
    }

    fn reward(&self, s: &EnvState, a: &[f64]) -> f64 {
        let scale = self.cfg.dense_scale;
        let per: f64 = self
            .particle_distances(s)
            .map(|dist| match self.cfg.reward_mode {
                RewardMode::Sparse => {
                    if dist < self.target_radius {
                        1.0
                    } else {
                        0.0
                    }
                }
                RewardMode::Dense => 1.0 - (dist / scale).tanh(),
            })
            .sum();
        per / self.n as f64 - self.cfg.action_penalty * invariant_norm_sq(a)
    }

    fn observe(&self, s: &EnvState) -> DVector<f64> {
        DVector::from_column_slice(&s.values)
    }

    fn state_from_obs(&self, obs: &[f64]) -> EnvState {
        EnvState::new(obs.to_vec())
    }

    fn transform_state(&self, g: usize, s: &EnvState) -> EnvState {
        let e: &DMatrix<f64> = self.group.element(g);
        let mut out = Vec::with_capacity(s.values.len());
        for block in s.values.chunks(self.dim) {
            out.extend((e * DVector::from_column_slice(block)).iter().copied());
        }
        EnvState {
            values: out,
            t: s.t,
        }
    }
}
