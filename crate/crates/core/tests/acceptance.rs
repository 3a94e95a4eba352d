//! Acceptance suite. Each criterion runs under a wall-clock budget and
//! prints one PASS/FAIL line; the process exits non-zero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use geomdp::envs::{check_env_equivariance, make_env, EnvConfig, GeometricEnv, RewardMode};
use geomdp::groups::{group_by_name, FiniteGroup, Representation};
use geomdp::lqr::{
    steerability_check_linearization, steerability_check_riccati, EquivariantLqr, QuadraticCost,
};
use geomdp::planner::{
    grid_world_c4, mppi_plan, rollout, tabular_value_iteration, trajectory_return,
    transform_trajectory, GroundTruthModel, MppiConfig, MppiNoise, WorldModel,
};
use geomdp::steerable::{
    intertwiner_basis, kernel_constraint_residual, so2_kernel_basis_11, FieldType,
};
use geomdp::tdmpc::{
    random_baseline, train, ArchConfig, Components, LossWeights, ModelSet, TrainConfig,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rot(t: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
}

fn numeric_rank(cols: &DMatrix<f64>) -> usize {
    let sv = cols.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-9 * top).count()
}

fn c1_so2_kernel_basis() -> Result<String, String> {
    let basis = so2_kernel_basis_11();
    ensure(basis.dimension() == 4, || {
        format!("basis has {} elements", basis.dimension())
    })?;
    let mut worst = 0.0f64;
    for k in 0..4 {
        let res = kernel_constraint_residual(
            |x: &f64| basis.evaluate(*x)[k].clone(),
            |g: &f64| rot(*g),
            |g: &f64| rot(*g),
            |g: &f64, x: &f64| x + g,
            |r| {
                (
                    r.random_range(0.0..std::f64::consts::TAU),
                    r.random_range(0.0..std::f64::consts::TAU),
                )
            },
            200,
            k as u64,
        );
        worst = worst.max(res);
    }
    ensure(worst < 1e-9, || format!("steerability residual {worst:e}"))?;
    // Each column is one basis element sampled on a grid of angles.
    let pts: Vec<f64> = (0..24).map(|i| i as f64 * 0.27).collect();
    let cols = DMatrix::from_fn(4 * pts.len(), 4, |r, k| {
        let m = basis.evaluate(pts[r / 4])[k].clone();
        m[(r % 4 / 2, r % 2)]
    });
    let rank = numeric_rank(&(cols.transpose() * &cols));
    ensure(rank == 4, || format!("Gram rank {rank}"))?;
    Ok(format!("residual {worst:.1e}, Gram rank {rank}"))
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = geomdp::cli::run(
        std::iter::once("geomdp").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap() + &String::from_utf8(err).unwrap(),
    )
}

fn c2_dimension_counts() -> Result<String, String> {
    let mut lines = Vec::new();
    for (task, space, eq, free) in [
        ("free2d", 2usize, "16+8 over R+ x R^4", "16+8"),
        ("free3d", 3, "12+6 over R+ x R^6", "36+18"),
    ] {
        let (code, text) = cli(&["steerable", "dims", "--task", task]);
        ensure(code == 0, || format!("exit {code}: {text}"))?;
        let line = text.lines().next().unwrap_or_default().to_string();
        let raw = 3 * space;
        // Unconstrained A is (2d × 2d), B is (2d × d).
        let (a_free, b_free) = (4 * space * space, 2 * space * space);
        ensure(free == format!("{a_free}+{b_free}"), || {
            format!("{task}: free counts {a_free}+{b_free}")
        })?;
        for want in [
            format!("equivariant {eq}"),
            format!("non-equivariant {free} over R^{raw}"),
        ] {
            ensure(line.contains(&want), || format!("`{line}` lacks `{want}`"))?;
        }
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

/// dim{K : ρ_out(g) K = K ρ_in(g) for every g}, from the null space of the
/// stacked Kronecker constraints over all group elements.
fn brute_force_intertwiner_dim(
    group: &FiniteGroup,
    rin: &Representation,
    rout: &Representation,
) -> usize {
    let (di, dout) = (rin.dim(), rout.dim());
    let n = di * dout;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for g in 0..group.order() {
        // vec(ρ_out K − K ρ_in) = (I ⊗ ρ_out − ρ_inᵀ ⊗ I) vec(K), column-major vec.
        let c = kron(&DMatrix::identity(di, di), rout.matrix(g))
            - kron(&rin.matrix(g).transpose(), &DMatrix::identity(dout, dout));
        gram += c.transpose() * c;
    }
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let top = eig.amax().max(1.0);
    eig.iter().filter(|&&l| l.abs() < 1e-9 * top).count()
}

fn c3_intertwiner_oracle() -> Result<String, String> {
    let mut cells = 0;
    for (name, dim) in [
        ("C2", 2),
        ("C4", 2),
        ("C8", 2),
        ("D4", 2),
        ("D8", 2),
        ("octa", 3),
    ] {
        let group = Arc::new(group_by_name(name, dim).map_err(|e| e.to_string())?);
        let reps = [
            Representation::trivial(&group),
            Representation::standard(&group),
            Representation::regular(&group),
        ];
        for rin in &reps {
            for rout in &reps {
                let got = intertwiner_basis(rin, rout)
                    .map_err(|e| e.to_string())?
                    .dimension();
                let want = brute_force_intertwiner_dim(&group, rin, rout);
                ensure(got == want, || {
                    format!(
                        "{name} {} -> {}: {got} vs oracle {want}",
                        rin.label(),
                        rout.label()
                    )
                })?;
                cells += 1;
            }
        }
    }
    Ok(format!("{cells} (group, rep pair) cells agree"))
}

type Dyn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> geomdp::Result<DVector<f64>> + Sync>;

fn env_with(name: &str, group: &str, edit: impl FnOnce(&mut EnvConfig)) -> Arc<dyn GeometricEnv> {
    let mut cfg = EnvConfig::named(name, group);
    edit(&mut cfg);
    make_env(&cfg).unwrap()
}

fn dynamics(env: &Arc<dyn GeometricEnv>) -> Dyn {
    let env = env.clone();
    Box::new(move |s, a| env.obs_dynamics(s, a))
}

fn sampler(ds: usize, da: usize) -> impl FnMut(&mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    move |r| {
        let s = DVector::from_fn(ds, |_, _| r.random_range(-1.0..1.0));
        let a = DVector::from_fn(da, |_, _| r.random_range(-0.5..0.5));
        (s, a)
    }
}

fn lin_residual(env: &Arc<dyn GeometricEnv>) -> Result<f64, String> {
    let (ds, da) = (env.obs_dim(), env.action_dim());
    steerability_check_linearization(
        &dynamics(env),
        env.obs_rep(),
        env.action_rep(),
        sampler(ds, da),
        100,
        0,
    )
    .map_err(|e| e.to_string())
}

fn c4_linearization_steerability() -> Result<String, String> {
    let r2 = lin_residual(&env_with("pointmass2d", "D8", |_| {}))?;
    let r3 = lin_residual(&env_with("pointmass3d", "octa", |_| {}))?;
    let r2q = lin_residual(&env_with("pointmass2d", "D8", |c| c.quadratic_drag = 0.5))?;
    let rd = lin_residual(&env_with("pointmass2d", "D8", |c| c.drift = true))?;
    ensure(r2 < 1e-6 && r3 < 1e-6 && r2q < 1e-6, || {
        format!("residuals {r2:e} {r3:e} {r2q:e}")
    })?;
    ensure(rd >= 0.01, || format!("drift residual {rd:e}"))?;
    Ok(format!(
        "2D {r2:.1e}, 3D {r3:.1e}, 2D drag {r2q:.1e}, drift {rd:.3}"
    ))
}

fn c5_riccati_steerability() -> Result<String, String> {
    let mut out = Vec::new();
    for drag in [0.0, 0.5] {
        let env = env_with("pointmass2d", "D8", |c| c.quadratic_drag = drag);
        let f = dynamics(&env);
        let cost = |_: &DVector<f64>, _: &DVector<f64>| QuadraticCost::isotropic(4, 2, 0.1);
        let res = steerability_check_riccati(
            &f,
            &cost,
            env.obs_rep(),
            env.action_rep(),
            20,
            sampler(4, 2),
            100,
            1,
        )
        .map_err(|e| e.to_string())?;
        ensure(res < 1e-6, || {
            format!("drag {drag}: Riccati residual {res:e}")
        })?;
        let ctl = EquivariantLqr::new(
            f,
            QuadraticCost::isotropic(4, 2, 0.1).unwrap(),
            20,
            vec![FieldType::Vector, FieldType::Vector],
            vec![FieldType::Vector],
            0,
        )
        .map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sample = sampler(4, 2);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (s, a0) = sample(&mut rng);
            let eq = ctl.act(&s, &a0).map_err(|e| e.to_string())?.action;
            let direct = ctl.direct_act(&s, &a0).map_err(|e| e.to_string())?;
            worst = worst.max((eq - direct).amax());
        }
        ensure(worst < 1e-6, || {
            format!("drag {drag}: controller discrepancy {worst:e}")
        })?;
        out.push(format!(
            "drag {drag}: P/K {res:.1e}, controller {worst:.1e}"
        ));
    }
    Ok(out.join("; "))
}

fn c6_env_symmetry() -> Result<String, String> {
    let mut cases: Vec<(String, EnvConfig)> = Vec::new();
    for g in ["C4", "D4"] {
        cases.push((
            format!("pointmass2d/{g}"),
            EnvConfig::named("pointmass2d", g),
        ));
    }
    cases.push((
        "pointmass3d/octa".into(),
        EnvConfig::named("pointmass3d", "octa"),
    ));
    for n in [1, 2, 3, 5] {
        let mut c = EnvConfig::named("nball", "octa");
        c.n_balls = n;
        cases.push((format!("nball{n}/octa"), c));
    }
    for g in ["C4", "D4"] {
        cases.push((
            format!("reacher-easy/{g}"),
            EnvConfig::named("reacher-easy", g),
        ));
    }
    let mut worst = 0.0f64;
    for (label, base) in cases {
        for mode in [RewardMode::Sparse, RewardMode::Dense] {
            let env = make_env(&base.clone().with_reward(mode)).map_err(|e| e.to_string())?;
            let (d, r) = check_env_equivariance(env.as_ref(), 500, 3).map_err(|e| e.to_string())?;
            ensure(d < 1e-8, || format!("{label}: dynamics residual {d:e}"))?;
            ensure(r == 0.0, || {
                format!("{label} {mode:?}: reward residual {r:e}")
            })?;
            worst = worst.max(d);
        }
    }
    let gravity = env_with("pointmass3d", "octa", |c| c.gravity = true);
    let (gd, _) = check_env_equivariance(gravity.as_ref(), 500, 3).map_err(|e| e.to_string())?;
    ensure(gd >= 1e-3, || format!("gravity residual {gd:e}"))?;
    Ok(format!(
        "max dynamics residual {worst:.1e}, rewards exact, gravity {gd:.3}"
    ))
}

fn random_actions(rng: &mut ChaCha8Rng, da: usize, h: usize) -> Vec<DVector<f64>> {
    (0..h)
        .map(|_| DVector::from_fn(da, |_, _| rng.random_range(-0.6..0.6)))
        .collect()
}

fn c7_mppi_invariances() -> Result<String, String> {
    let env =
        make_env(&EnvConfig::named("pointmass2d", "D8").with_reward(RewardMode::Dense)).unwrap();
    let gt = GroundTruthModel::new(env.clone());
    let arch = ArchConfig {
        latent_width: 8,
        hidden_width: 16,
        depth: 2,
        ..ArchConfig::default()
    };
    let learned =
        ModelSet::new(env.as_ref(), &arch, Components::all(), 7).map_err(|e| e.to_string())?;
    let models: [(&dyn WorldModel, &Representation, bool); 2] = [
        (&gt, env.obs_rep(), false),
        (&learned, learned.latent_rep(), true),
    ];
    let ra = env.action_rep();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ret_worst = 0.0f64;
    for (model, rep, latent) in models {
        for _ in 0..100 {
            let g = rng.random_range(0..16);
            let obs = env.observe(&env.random_state(&mut rng));
            let s0 = if latent {
                model.encode(&obs).unwrap()
            } else {
                obs
            };
            let traj =
                rollout(model, &s0, &random_actions(&mut rng, 2, 8)).map_err(|e| e.to_string())?;
            let moved = transform_trajectory(&traj, g, rep, ra);
            let r1 = trajectory_return(&traj, model, 0.99).map_err(|e| e.to_string())?;
            let r2 = trajectory_return(&moved, model, 0.99).map_err(|e| e.to_string())?;
            ret_worst = ret_worst.max((r1 - r2).abs());
        }
    }
    ensure(ret_worst < 1e-8, || {
        format!("return residual {ret_worst:e}")
    })?;

    let cfg = MppiConfig {
        num_samples: 128,
        horizon: 8,
        iterations: 4,
        top_k: 16,
        ..MppiConfig::default()
    };
    let mut plan_worst = 0.0f64;
    for (name, group) in [
        ("pointmass2d", "D8"),
        ("pointmass3d", "octa"),
        ("reacher-easy", "D8"),
    ] {
        let env = make_env(&EnvConfig::named(name, group).with_reward(RewardMode::Dense)).unwrap();
        let gt = GroundTruthModel::new(env.clone());
        let learned =
            ModelSet::new(env.as_ref(), &arch, Components::all(), 3).map_err(|e| e.to_string())?;
        for model in [&gt as &dyn WorldModel, &learned] {
            for i in 0..10 {
                let g = rng.random_range(0..env.group().order());
                let noise = MppiNoise::sample(&cfg, env.action_dim(), i);
                let obs = env.observe(&env.random_state(&mut rng));
                let base = mppi_plan(model, &obs, &cfg, None, &noise).map_err(|e| e.to_string())?;
                let gobs = env.obs_rep().matrix(g) * &obs;
                let moved = mppi_plan(
                    model,
                    &gobs,
                    &cfg,
                    None,
                    &noise.transform(g, env.action_rep()),
                )
                .map_err(|e| e.to_string())?;
                plan_worst = plan_worst
                    .max((moved.action - env.action_rep().matrix(g) * &base.action).amax());
            }
        }
    }
    ensure(plan_worst < 1e-6, || {
        format!("plan residual {plan_worst:e}")
    })?;
    Ok(format!("return {ret_worst:.1e}, plan {plan_worst:.1e}"))
}

fn c8_tabular() -> Result<String, String> {
    let n = 9;
    let mdp = grid_world_c4(n).map_err(|e| e.to_string())?;
    let gamma = 0.9;
    let vi = tabular_value_iteration(&mdp, gamma, 100).map_err(|e| e.to_string())?;
    // Quarter turns computed independently of the library's permutation tables.
    let mut spread = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let mut cell = (r, c);
            for _ in 0..4 {
                cell = (cell.1, n - 1 - cell.0);
                spread = spread.max((vi.values[cell.0 * n + cell.1] - vi.values[r * n + c]).abs());
            }
        }
    }
    ensure(spread == 0.0, || format!("orbit spread {spread:e}"))?;
    ensure(vi.orbit_violations.iter().all(|&v| v == 0.0), || {
        "non-zero spread during sweeps".into()
    })?;
    // Allow a few ulps of the value scale per sweep.
    let ulp = 4.0 * f64::EPSILON * vi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (t, w) in vi.deltas.windows(2).enumerate() {
        ensure(w[1] <= gamma * w[0] + ulp, || {
            format!("sweep {t}: {} > {gamma}·{}", w[1], w[0])
        })?;
    }
    let worst = vi
        .deltas
        .windows(2)
        .take(20)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    Ok(format!(
        "orbit spread 0, contraction factor over the first 20 sweeps ≤ {worst:.3}"
    ))
}

fn c9_network_properties() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let arch = ArchConfig {
        latent_width: 8,
        hidden_width: 16,
        depth: 3,
        ..ArchConfig::default()
    };
    let w = LossWeights {
        consistency: 2.0,
        reward: 0.5,
        value: 0.1,
        policy: 1.0,
        temporal_decay: 0.5,
        gamma: 0.99,
    };
    let mut worst_res = 0.0f64;
    let mut worst_loss = 0.0f64;
    for (name, group) in [
        ("pointmass2d", "D8"),
        ("pointmass3d", "octa"),
        ("nball", "octa"),
        ("reacher-easy", "D8"),
    ] {
        let env = make_env(&EnvConfig::named(name, group).with_reward(RewardMode::Dense)).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut learner = geomdp::tdmpc::Learner::new(
            ModelSet::new(env.as_ref(), &arch, Components::all(), 1).map_err(|e| e.to_string())?,
            &cfg,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buffer = geomdp::tdmpc::ReplayBuffer::new(4);
        for _ in 0..2 {
            let s = env.reset(&mut rng);
            let ep = geomdp::tdmpc::collect_episode(env.as_ref(), None, s, 0.0, 4, &mut rng)
                .map_err(|e| e.to_string())?;
            buffer.push(ep.episode);
        }
        for _ in 0..5 {
            let batch = buffer.sample(&mut rng, 16, 5).map_err(|e| e.to_string())?;
            learner.train_step(&batch).map_err(|e| e.to_string())?;
        }
        let path = dir.path().join(format!("{name}.ckpt"));
        learner.models.save(&path).map_err(|e| e.to_string())?;
        let (models, _) = ModelSet::load(&path).map_err(|e| e.to_string())?;
        let res = models.symmetry_residuals(20, 9);
        ensure(res.max() < 1e-6, || format!("{name}: {res:?}"))?;
        worst_res = worst_res.max(res.max());
        let batch = buffer.sample(&mut rng, 8, 5).map_err(|e| e.to_string())?;
        let (base, lat) = models
            .model_loss(&batch, &w, None)
            .map_err(|e| e.to_string())?;
        let pi = models.policy_loss(&lat, &w, None);
        for g in 0..env.group().order() {
            let moved = batch.transform(g, env.obs_rep(), env.action_rep());
            let (l, lat_g) = models
                .model_loss(&moved, &w, None)
                .map_err(|e| e.to_string())?;
            let d = (l.total - base.total)
                .abs()
                .max((models.policy_loss(&lat_g, &w, None) - pi).abs());
            worst_loss = worst_loss.max(d);
        }
    }
    ensure(worst_loss < 1e-6, || {
        format!("loss invariance {worst_loss:e}")
    })?;

    // Finite differences on a tiny model, with regression targets held fixed.
    let env =
        make_env(&EnvConfig::named("pointmass2d", "C4").with_reward(RewardMode::Dense)).unwrap();
    let tiny = ArchConfig {
        latent_width: 4,
        hidden_width: 4,
        depth: 2,
        ..ArchConfig::default()
    };
    let mut models =
        ModelSet::new(env.as_ref(), &tiny, Components::all(), 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut randn = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-0.5..0.5));
    let batch = geomdp::tdmpc::Batch {
        obs: (0..3).map(|_| randn(4, 3)).collect(),
        actions: (0..2).map(|_| randn(2, 3)).collect(),
        rewards: (0..2)
            .map(|_| randn(1, 3).iter().copied().collect())
            .collect(),
    };
    let targets = models.loss_targets(&batch, w.gamma);
    let mut grad = vec![0.0; models.num_model_params()];
    let (_, lat) = models
        .model_loss_with(&batch, &targets, &w, Some(&mut grad))
        .map_err(|e| e.to_string())?;
    let mut pgrad = vec![0.0; models.policy.num_params()];
    models.policy_loss(&lat, &w, Some(&mut pgrad));
    let theta = models.model_params();
    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] += h;
        models.set_model_params(&p).unwrap();
        let up = models
            .model_loss_with(&batch, &targets, &w, None)
            .unwrap()
            .0
            .total;
        p[i] -= 2.0 * h;
        models.set_model_params(&p).unwrap();
        let dn = models
            .model_loss_with(&batch, &targets, &w, None)
            .unwrap()
            .0
            .total;
        let fd = (up - dn) / (2.0 * h);
        if fd.abs().max(grad[i].abs()) > 1e-5 {
            worst_fd = worst_fd.max(rel(fd, grad[i]));
        }
    }
    models.set_model_params(&theta).unwrap();
    let pt = models.policy.params();
    for i in 0..pt.len() {
        let mut p = pt.clone();
        p[i] += h;
        models.policy.set_params(&p).unwrap();
        let up = models.policy_loss(&lat, &w, None);
        p[i] -= 2.0 * h;
        models.policy.set_params(&p).unwrap();
        let dn = models.policy_loss(&lat, &w, None);
        let fd = (up - dn) / (2.0 * h);
        if fd.abs().max(pgrad[i].abs()) > 1e-5 {
            worst_fd = worst_fd.max(rel(fd, pgrad[i]));
        }
    }
    ensure(worst_fd < 1e-3, || {
        format!("gradient relative error {worst_fd:e}")
    })?;
    Ok(format!("residual {worst_res:.1e}, loss invariance {worst_loss:.1e}, gradient rel. error {worst_fd:.1e}"))
}

fn c10_learning_trend() -> Result<String, String> {
    let env_cfg = EnvConfig::named("pointmass2d", "D8").with_reward(RewardMode::Dense);
    let cfg = TrainConfig {
        total_env_steps: 50_000,
        eval_every: 25_000,
        ..TrainConfig::default()
    };
    let seeds = [0u64, 1, 2];
    let jobs: Vec<(bool, u64)> = [true, false]
        .iter()
        .flat_map(|&eq| seeds.iter().map(move |&s| (eq, s)))
        .collect();
    let run = |&(eq, seed): &(bool, u64)| -> Result<f64, String> {
        let cfg = TrainConfig {
            components: if eq {
                Components::all()
            } else {
                Components::none()
            },
            ..cfg.clone()
        };
        let out = train(&env_cfg, &cfg, seed, None).map_err(|e| e.to_string())?;
        out.reward_at(25_000)
            .ok_or_else(|| "no evaluation at 25k".to_string())
    };
    let rewards = geomdp::par::map(&jobs, run)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let (eq, base) = rewards.split_at(seeds.len());
    let env = make_env(&env_cfg).unwrap();
    let random = random_baseline(env.as_ref(), 50, 77)
        .map_err(|e| e.to_string())?
        .mean;
    let wins = eq.iter().zip(base).filter(|(e, b)| e >= b).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = format!(
        "equivariant {eq:.1?}, baseline {base:.1?}, random {random:.1}; {wins}/3 paired wins, ratios {:.1}x / {:.1}x",
        mean(eq) / random,
        mean(base) / random
    );
    ensure(wins >= 2, || summary.clone())?;
    ensure(
        mean(eq) >= 5.0 * random && mean(base) >= 5.0 * random,
        || summary.clone(),
    )?;
    Ok(summary)
}

fn c11_parameter_parity() -> Result<String, String> {
    let mut out = Vec::new();
    for (name, group) in [
        ("pointmass2d", "D8"),
        ("pointmass3d", "octa"),
        ("reacher-easy", "D8"),
        ("nball", "octa"),
    ] {
        let env = make_env(&EnvConfig::named(name, group)).unwrap();
        let arch = ArchConfig::default();
        let eq = ModelSet::new(env.as_ref(), &arch, Components::all(), 0)
            .map_err(|e| e.to_string())?
            .num_params();
        let base = ModelSet::new(env.as_ref(), &arch, Components::none(), 0)
            .map_err(|e| e.to_string())?
            .num_params();
        let ratio = eq as f64 / base as f64;
        ensure((ratio - 1.0).abs() <= 0.25, || {
            format!("{name}/{group}: {eq} vs {base}")
        })?;
        out.push(format!("{name}/{group} {eq}/{base}"));
    }
    Ok(out.join(", "))
}

fn main() {
    let criteria: [(&str, Check, Duration); 11] = [
        (
            "1 SO(2) kernel basis",
            c1_so2_kernel_basis,
            Duration::from_secs(1),
        ),
        (
            "2 dimension counts",
            c2_dimension_counts,
            Duration::from_secs(1),
        ),
        (
            "3 intertwiner oracle",
            c3_intertwiner_oracle,
            Duration::from_secs(30),
        ),
        (
            "4 linearization steerability",
            c4_linearization_steerability,
            Duration::from_secs(60),
        ),
        (
            "5 Riccati steerability and equivariant LQR",
            c5_riccati_steerability,
            Duration::from_secs(60),
        ),
        (
            "6 environment symmetry",
            c6_env_symmetry,
            Duration::from_secs(60),
        ),
        (
            "7 MPPI invariances",
            c7_mppi_invariances,
            Duration::from_secs(120),
        ),
        (
            "8 tabular value iteration",
            c8_tabular,
            Duration::from_secs(5),
        ),
        (
            "9 network property suite",
            c9_network_properties,
            Duration::from_secs(120),
        ),
        (
            "10 desk-scale learning trend",
            c10_learning_trend,
            Duration::from_secs(7200),
        ),
        (
            "11 parameter parity",
            c11_parameter_parity,
            Duration::from_secs(1),
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed <= budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {elapsed:.1?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(msg) => println!("PASS criterion {name} ({elapsed:.2?}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
