use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, invariant_norm_sq, EnvConfig, EnvState, Frame, GeometricEnv, RewardMode,
};
use crate::error::{Error, Result};
use crate::groups::{group_by_name, FiniteGroup, Representation};

pub const LINK1: f64 = 0.12;
pub const LINK2: f64 = 0.12;
pub const JOINT_INERTIA: f64 = 0.1;
pub const JOINT_DAMPING: f64 = 1.0;
/// Targets are drawn uniformly (by area) from this annulus.
pub const TARGET_ANNULUS: (f64, f64) = (0.05, 0.20);

type C = (f64, f64);

fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn normalize(a: C) -> C {
    let n = invariant_norm_sq(&[a.0, a.1]).sqrt();
    (a.0 / n, a.1 / n)
}

/// Planar two-link arm with decoupled joint inertias.
///
/// Raw state is `[cosθ₁, sinθ₁, cosθ₂, sinθ₂, θ̇₁, θ̇₂, x_g, y_g]` with θ₂
/// measured relative to the first link. Under a reflection the relative
/// angle, both joint rates and both torques change sign.
pub struct Reacher {
    cfg: EnvConfig,
    name: String,
    group: Arc<FiniteGroup>,
    obs_rep: Representation,
    action_rep: Representation,
    target_radius: f64,
}

impl Reacher {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        let default_radius = match cfg.env.as_str() {
            "reacher-easy" | "reacher" => 0.05,
            "reacher-hard" => 0.015,
            other => return Err(Error::UnknownEnv(other.to_string())),
        };
        let group = Arc::new(group_by_name(&cfg.group, 2)?);
        let std = Representation::standard(&group);
        let triv = Representation::trivial(&group);
        let det = Representation::determinant(&group);
        let obs_rep = match cfg.frame {
            Frame::Local => Representation::direct_sum(&[
                std.clone(),
                triv,
                det.clone(),
                det.clone(),
                det.clone(),
                std,
            ])?,
            Frame::Global => Representation::direct_sum(&[
                std.clone(),
                std.clone(),
                det.clone(),
                det.clone(),
                std,
            ])?,
        };
        let action_rep = Representation::direct_sum(&[det.clone(), det])?;
        let frame = match cfg.frame {
            Frame::Local => "local",
            Frame::Global => "global",
        };
        let name = format!("{}-{frame}", cfg.env);
        let target_radius = cfg.target_radius.unwrap_or(default_radius);
        Ok(Reacher {
            cfg,
            name,
            group,
            obs_rep,
            action_rep,
            target_radius,
        })
    }

    pub fn target_radius(&self) -> f64 {
        self.target_radius
    }

    pub fn state_from_angles(theta: (f64, f64), omega: (f64, f64), target: (f64, f64)) -> EnvState {
        EnvState::new(vec![
            theta.0.cos(),
            theta.0.sin(),
            theta.1.cos(),
            theta.1.sin(),
            omega.0,
            omega.1,
            target.0,
            target.1,
        ])
    }

    /// (θ₁, θ₂) recovered from the (cos, sin) pairs.
    pub fn angles(s: &EnvState) -> (f64, f64) {
        let v = &s.values;
        (v[1].atan2(v[0]), v[3].atan2(v[2]))
    }

    /// End-effector position by forward kinematics.
    pub fn fingertip(s: &EnvState) -> (f64, f64) {
        let v = &s.values;
        let u1 = (v[0], v[1]);
        let w = cmul(u1, (v[2], v[3]));
        (LINK1 * u1.0 + LINK2 * w.0, LINK1 * u1.1 + LINK2 * w.1)
    }

    fn sample_state(&self, rng: &mut ChaCha8Rng, max_rate: f64) -> EnvState {
        let t1 = rng.random_range(-PI..PI);
        let t2 = rng.random_range(-PI..PI);
        let (w1, w2) = if max_rate > 0.0 {
            (
                rng.random_range(-max_rate..max_rate),
                rng.random_range(-max_rate..max_rate),
            )
        } else {
            (0.0, 0.0)
        };
        let (r0, r1) = TARGET_ANNULUS;
        let r = rng.random_range(r0 * r0..r1 * r1).sqrt();
        let phi = rng.random_range(-PI..PI);
        Self::state_from_angles((t1, t2), (w1, w2), (r * phi.cos(), r * phi.sin()))
    }
}

impl GeometricEnv for Reacher {
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
        self.sample_state(rng, 0.0)
    }

    fn random_state(&self, rng: &mut ChaCha8Rng) -> EnvState {
        self.sample_state(rng, 3.0)
    }

    fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        let lim = self.cfg.action_limit;
        a.iter().map(|x| x.clamp(-lim, lim)).collect()
    }

    fn sample_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let lim = self.cfg.action_limit;
        (0..2).map(|_| rng.random_range(-lim..lim)).collect()
    }

    fn step(&self, s: &EnvState, a: &[f64]) -> Result<EnvState> {
        if s.values.len() != 8 {
            return Err(Error::shape(8, s.values.len()));
        }
        if a.len() != 2 {
            return Err(Error::shape(2, a.len()));
        }
        check_finite(&s.values, "non-finite reacher state")?;
        check_finite(a, "non-finite reacher torque")?;
        let tau = self.clip_action(a);
        let dt = self.cfg.dt;
        let v = &s.values;
        let keep = 1.0 - JOINT_DAMPING * dt;
        let w1 = keep * v[4] + dt * tau[0] / JOINT_INERTIA;
        let w2 = keep * v[5] + dt * tau[1] / JOINT_INERTIA;
        let u1 = normalize(cmul((v[0], v[1]), ((dt * w1).cos(), (dt * w1).sin())));
        let u2 = normalize(cmul((v[2], v[3]), ((dt * w2).cos(), (dt * w2).sin())));
        let values = vec![u1.0, u1.1, u2.0, u2.1, w1, w2, v[6], v[7]];
        check_finite(&values, "reacher integration diverged")?;
        Ok(EnvState { values, t: s.t + 1 })
    }

    fn reward(&self, s: &EnvState, a: &[f64]) -> f64 {
        let f = Self::fingertip(s);
        let d = invariant_norm_sq(&[s.values[6] - f.0, s.values[7] - f.1]).sqrt();
        let hit = match self.cfg.reward_mode {
            RewardMode::Sparse => {
                if d < self.target_radius {
                    1.0
                } else {
                    0.0
                }
            }
            RewardMode::Dense => 1.0 - (d / self.cfg.dense_scale).tanh(),
        };
        hit - self.cfg.action_penalty * invariant_norm_sq(a)
    }

    fn observe(&self, s: &EnvState) -> DVector<f64> {
        let v = &s.values;
        let f = Self::fingertip(s);
        let delta = (v[6] - f.0, v[7] - f.1);
        match self.cfg.frame {
            Frame::Local => {
                DVector::from_vec(vec![v[0], v[1], v[2], v[3], v[4], v[5], delta.0, delta.1])
            }
            Frame::Global => {
                DVector::from_vec(vec![v[0], v[1], f.0, f.1, v[4], v[5], delta.0, delta.1])
            }
        }
    }

    fn state_from_obs(&self, obs: &[f64]) -> EnvState {
        let u1 = normalize((obs[0], obs[1]));
        let u2 = match self.cfg.frame {
            Frame::Local => normalize((obs[2], obs[3])),
            Frame::Global => {
                let w = normalize((obs[2] - LINK1 * u1.0, obs[3] - LINK1 * u1.1));
                cmul((u1.0, -u1.1), w)
            }
        };
        let mut s = EnvState::new(vec![u1.0, u1.1, u2.0, u2.1, obs[4], obs[5], 0.0, 0.0]);
        let f = Self::fingertip(&s);
        s.values[6] = obs[6] + f.0;
        s.values[7] = obs[7] + f.1;
        s
    }

    fn transform_state(&self, g: usize, s: &EnvState) -> EnvState {
        let e: &DMatrix<f64> = self.group.element(g);
        let det = self.group.det(g).signum();
        let v = &s.values;
        let rot = |x: f64, y: f64| (e[(0, 0)] * x + e[(0, 1)] * y, e[(1, 0)] * x + e[(1, 1)] * y);
        let u1 = rot(v[0], v[1]);
        let t = rot(v[6], v[7]);
        EnvState {
            values: vec![
                u1.0,
                u1.1,
                v[2],
                det * v[3],
                det * v[4],
                det * v[5],
                t.0,
                t.1,
            ],
            t: s.t,
        }
    }
}
