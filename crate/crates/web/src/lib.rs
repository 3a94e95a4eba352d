//! WebAssembly bindings for the geomdp browser demo.
//!
//! Every export takes plain numbers and returns either a flat `Vec<f64>` or a
//! JSON string, so the page needs no generated glue beyond wasm-bindgen's.

use std::f64::consts::PI;

use geomdp::envs::{make_env, EnvConfig, RewardMode};
use geomdp::lqr::{EquivariantLqr, QuadraticCost};
use geomdp::planner::{GroundTruthModel, MppiConfig, MppiController};
use geomdp::steerable::{so2_kernel_basis_11, FieldType};
use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn kernel_at(coeffs: &[f64], angle: f64) -> DMatrix<f64> {
    so2_kernel_basis_11()
        .evaluate(angle)
        .iter()
        .zip(coeffs)
        .fold(DMatrix::zeros(2, 2), |acc, (b, c)| acc + b * *c)
}

fn rot(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_column_slice(2, 2, Matrix2::new(c, -s, s, c).as_slice())
}

/// Steerable kernel K = Σ cᵢ Kᵢ sampled on a `grid × grid` lattice over
/// [−1, 1]², applied to the input vector (`vx`, `vy`). Returns
/// `[x, y, ux, uy]` per lattice point with a Gaussian radial profile.
#[wasm_bindgen]
pub fn kernel_field(coeffs: Vec<f64>, vx: f64, vy: f64, grid: usize) -> Result<Vec<f64>, String> {
    if coeffs.len() != 4 {
        return Err(format!("expected 4 coefficients, got {}", coeffs.len()));
    }
    if grid < 2 {
        return Err("grid must be at least 2".into());
    }
    let v = DVector::from_vec(vec![vx, vy]);
    let mut out = Vec::with_capacity(4 * grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let x = -1.0 + 2.0 * j as f64 / (grid - 1) as f64;
            let y = -1.0 + 2.0 * i as f64 / (grid - 1) as f64;
            let r2 = x * x + y * y;
            let u = kernel_at(&coeffs, y.atan2(x)) * &v * (-2.0 * r2).exp();
            out.extend([x, y, u[0], u[1]]);
        }
    }
    Ok(out)
}

/// Max of ‖K(θ + φ) − R(φ) K(θ) R(φ)ᵀ‖ over a deterministic sweep of
/// angles θ and rotations φ.
#[wasm_bindgen]
pub fn kernel_residual(coeffs: Vec<f64>) -> Result<f64, String> {
    if coeffs.len() != 4 {
        return Err(format!("expected 4 coefficients, got {}", coeffs.len()));
    }
    let mut worst = 0.0f64;
    for i in 0..24 {
        for k in 0..24 {
            let (theta, phi) = (2.0 * PI * i as f64 / 24.0, 2.0 * PI * k as f64 / 24.0 + 0.1);
            let r = rot(phi);
            let lhs = kernel_at(&coeffs, theta + phi);
            let rhs = &r * kernel_at(&coeffs, theta) * r.transpose();
            worst = worst.max((lhs - rhs).amax());
        }
    }
    Ok(worst)
}

#[derive(Serialize)]
struct LqrView {
    base_point: Vec<f64>,
    angle: f64,
    action: Vec<f64>,
    direct_action: Vec<f64>,
    discrepancy: f64,
}

/// Orbit-projected LQR on the planar point mass with quadratic drag.
/// `state` is `[x, y, vx, vy]`; returns JSON with the orbit representative,
/// the rotation angle and both controller outputs.
#[wasm_bindgen]
pub fn lqr_orbit(
    state: Vec<f64>,
    drag: f64,
    horizon: usize,
    control_cost: f64,
) -> Result<String, String> {
    if state.len() != 4 {
        return Err(format!(
            "expected a 4-dimensional state, got {}",
            state.len()
        ));
    }
    let mut cfg = EnvConfig::named("pointmass2d", "C4");
    cfg.quadratic_drag = drag;
    let env = make_env(&cfg).map_err(|e| e.to_string())?;
    let f = move |s: &DVector<f64>, a: &DVector<f64>| env.obs_dynamics(s, a);
    let cost = QuadraticCost::isotropic(4, 2, control_cost).map_err(|e| e.to_string())?;
    let ctl = EquivariantLqr::new(
        f,
        cost,
        horizon,
        vec![FieldType::Vector, FieldType::Vector],
        vec![FieldType::Vector],
        0,
    )
    .map_err(|e| e.to_string())?;
    let s = DVector::from_vec(state);
    let a0 = DVector::zeros(2);
    let eq = ctl.act(&s, &a0).map_err(|e| e.to_string())?;
    let direct = ctl.direct_act(&s, &a0).map_err(|e| e.to_string())?;
    let view = LqrView {
        discrepancy: (&eq.action - &direct).amax(),
        base_point: eq.orbit.base_point.clone(),
        angle: eq.orbit.angle,
        action: eq.action.as_slice().to_vec(),
        direct_action: direct.as_slice().to_vec(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MppiView {
    positions: Vec<[f64; 2]>,
    rewards: Vec<f64>,
    total: f64,
    target_radius: f64,
}

/// Closed-loop MPPI with the true dynamics as model on the planar point mass,
/// starting from (`x`, `y`) at rest.
#[wasm_bindgen]
pub fn mppi_pointmass(
    x: f64,
    y: f64,
    steps: usize,
    samples: usize,
    seed: u64,
) -> Result<String, String> {
    let mut cfg = EnvConfig::named("pointmass2d", "D8").with_reward(RewardMode::Dense);
    cfg.seed = seed;
    let env = make_env(&cfg).map_err(|e| e.to_string())?;
    let model = GroundTruthModel::new(env.clone());
    let mut ctl = MppiController::new(MppiConfig {
        num_samples: samples.max(2),
        horizon: 8,
        iterations: 3,
        top_k: (samples / 8).max(1),
        seed,
        ..MppiConfig::default()
    });
    ctl.cfg.validate().map_err(|e| e.to_string())?;
    let mut state = env.state_from_obs(&[x, y, 0.0, 0.0]);
    let mut view = MppiView {
        positions: vec![[x, y]],
        rewards: Vec::with_capacity(steps),
        total: 0.0,
        target_radius: 0.03,
    };
    for _ in 0..steps {
        let plan = ctl
            .act(&model, &env.observe(&state))
            .map_err(|e| e.to_string())?;
        let a = plan.action.as_slice();
        let r = env.reward(&state, a);
        state = env.step(&state, a).map_err(|e| e.to_string())?;
        view.total += r;
        view.rewards.push(r);
        view.positions.push([state.values[0], state.values[1]]);
    }
    serde_json::to_string(&view).map_err(|e| e.to_string())
}
