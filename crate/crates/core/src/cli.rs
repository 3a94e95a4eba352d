//! Command-line entry point: subcommands, TOML experiment configs and
//! CSV/JSON outputs.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::envs::{
    check_env_equivariance, make_env, observation_equivariance, run_episode, write_trajectory_csv,
    EnvConfig, Frame, GeometricEnv,
};
use crate::eqnet::WidthStrategy;
use crate::error::{Error, Result};
use crate::groups::{group_by_name, parse_rep, Representation};
use crate::lqr::{
    steerability_check_linearization, steerability_check_riccati, EquivariantLqr, LqrCheckReport,
    QuadraticCost,
};
use crate::planner::{GroundTruthModel, MppiConfig, MppiController, WorldModel};
use crate::steerable::{free_particle_dimensions, intertwiner_basis, FieldType, FreeParticleTask};
use crate::tdmpc::{
    evaluate, random_baseline, train, Components, CurvePoint, ModelSet, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "geomdp",
    version,
    about = "Euclidean-symmetric control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite group checks.
    #[command(subcommand)]
    Groups(GroupsCmd),
    /// Steerable kernel bases and dimension counts.
    #[command(subcommand)]
    Steerable(SteerableCmd),
    /// Steerability of linearised dynamics and Riccati gains.
    #[command(subcommand)]
    Lqr(LqrCmd),
    /// Environment equivariance residuals and random trajectories.
    EnvCheck(EnvCheckArgs),
    /// Run MPPI for one episode and log actions and elite returns.
    Plan(PlanArgs),
    /// Train TD-MPC and write learning curves and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint with planning and no exploration.
    Eval(EvalArgs),
    /// Run an ablation sweep.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
enum GroupsCmd {
    Check {
        name: String,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum SteerableCmd {
    Basis {
        #[arg(long)]
        group: String,
        #[arg(long)]
        rep_in: String,
        #[arg(long)]
        rep_out: String,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    Dims {
        #[arg(long)]
        task: String,
    },
}

#[derive(Debug, Subcommand)]
enum LqrCmd {
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

/// Flags shared by most subcommands. Flags override the config file.
#[derive(Debug, Args, Clone, Default)]
struct Common {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EnvCheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Random-action episodes written to trajectory.csv under --out.
    #[arg(long, default_value_t = 0)]
    episodes: usize,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint path or `ground-truth`.
    #[arg(long, default_value = "ground-truth")]
    model: String,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// warmup | components | group-order | frame
    #[arg(long)]
    kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrSection {
    pub horizon: usize,
    pub samples: usize,
    pub control_cost: f64,
    pub controller_states: usize,
}

impl Default for LqrSection {
    fn default() -> Self {
        LqrSection {
            horizon: 20,
            samples: 100,
            control_cost: 0.1,
            controller_states: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteerableSection {
    pub samples: usize,
}

impl Default for SteerableSection {
    fn default() -> Self {
        SteerableSection { samples: 200 }
    }
}

/// Everything a run can be configured with. `planner`, when present,
/// replaces `train.mppi`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
    pub planner: Option<MppiConfig>,
    pub train: TrainConfig,
    pub lqr: LqrSection,
    pub steerable: SteerableSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> std::result::Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config: {e}"), Some(path)))?;
        Self::from_toml(&text).map_err(|e| CliError::usage(e.to_string(), Some(path)))
    }

    pub fn planner(&self) -> MppiConfig {
        self.planner
            .clone()
            .unwrap_or_else(|| self.train.mppi.clone())
    }
}

/// Exit code plus a machine-readable record.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub path: Option<PathBuf>,
}

impl CliError {
    fn usage(message: impl Into<String>, path: Option<&Path>) -> Self {
        CliError {
            code: 2,
            kind: "usage",
            message: message.into(),
            path: path.map(Path::to_path_buf),
        }
    }

    pub fn record(&self) -> serde_json::Value {
        json!({
            "error": self.kind,
            "exit_code": self.code,
            "message": self.message,
            "path": self.path.as_ref().map(|p| p.display().to_string()),
        })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) | Error::UnknownEnv(_) | Error::UnknownGroup(_) => (2, "usage"),
            _ => (1, "domain"),
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
            path: None,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError {
        code: 1,
        kind: "io",
        message: e.to_string(),
        path: Some(path.to_path_buf()),
    }
}

fn apply_threads() {
    if let Some(n) = std::env::var("GEOMDP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        crate::par::set_threads(n);
    }
}

/// Parse `args` (including the program name), run, print results to
/// `stdout` and error records to `stderr`. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::usage(e.to_string(), None);
            let _ = writeln!(stderr, "{}", err.record());
            return err.code;
        }
    };
    apply_threads();
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.record());
            e.code
        }
    }
}

fn resolve(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = &common.env {
        cfg.env.env = e.clone();
    }
    if let Some(g) = &common.group {
        cfg.env.group = g.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> CliResult<Option<PathBuf>> {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("config.resolved.json");
            let text = serde_json::to_string_pretty(cfg).map_err(Error::from)?;
            fs::write(&path, text + "\n").map_err(io_err(&path))?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

fn ensure_finite(value: &serde_json::Value) -> CliResult<()> {
    let ok = match value {
        serde_json::Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        serde_json::Value::Array(a) => return a.iter().try_for_each(ensure_finite),
        serde_json::Value::Object(o) => return o.values().try_for_each(ensure_finite),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite value in output").into())
    }
}

fn emit_json(
    value: &serde_json::Value,
    stdout: &mut dyn Write,
    out: Option<&Path>,
    file: &str,
) -> CliResult<()> {
    ensure_finite(value)?;
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    writeln!(stdout, "{text}").map_err(|e| CliError::from(Error::from(e)))?;
    if let Some(dir) = out {
        let path = dir.join(file);
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Groups(GroupsCmd::Check { name, dim, out }) => {
            let group = Arc::new(group_by_name(&name, dim)?);
            let standard = Representation::standard(&group);
            let regular = Representation::regular(&group);
            let report = json!({
                "group": group.name(),
                "order": group.order(),
                "dim": group.dim(),
                "closure_residual": group.closure_residual(),
                "orthogonality_residual": group.orthogonality_residual(),
                "inverse_residual": group.inverse_residual(),
                "standard_homomorphism_residual": standard.homomorphism_residual(),
                "regular_homomorphism_residual": regular.homomorphism_residual(),
            });
            if let Some(dir) = &out {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            emit_json(&report, stdout, out.as_deref(), "residuals.json")
        }
        Command::Steerable(SteerableCmd::Basis {
            group,
            rep_in,
            rep_out,
            dim,
        }) => {
            let g = Arc::new(group_by_name(&group, dim)?);
            let (ri, ro) = (parse_rep(&g, &rep_in)?, parse_rep(&g, &rep_out)?);
            let basis = intertwiner_basis(&ri, &ro)?;
            let mut residual = 0.0f64;
            for k in basis.matrices() {
                for e in 0..g.order() {
                    residual = residual.max((ro.matrix(e) * k - k * ri.matrix(e)).amax());
                }
            }
            let report = json!({
                "group": g.name(),
                "rep_in": ri.label(),
                "rep_out": ro.label(),
                "dimension": basis.dimension(),
                "max_residual": residual,
            });
            emit_json(&report, stdout, None, "")
        }
        Command::Steerable(SteerableCmd::Dims { task }) => {
            let task: FreeParticleTask = task.parse()?;
            let report = free_particle_dimensions(task)?;
            writeln!(stdout, "{}", report.summary()).map_err(|e| CliError::from(Error::from(e)))?;
            emit_json(
                &serde_json::to_value(&report).map_err(Error::from)?,
                stdout,
                None,
                "",
            )
        }
        Command::Lqr(LqrCmd::Check { common, horizon }) => {
            let mut cfg = resolve(&common)?;
            if let Some(h) = horizon {
                cfg.lqr.horizon = h;
            }
            let out = out_dir(&cfg)?;
            let report = lqr_check(&cfg)?;
            emit_json(
                &serde_json::to_value(&report).map_err(Error::from)?,
                stdout,
                out.as_deref(),
                "residuals.json",
            )
        }
        Command::EnvCheck(args) => env_check(args, stdout),
        Command::Plan(args) => plan(args, stdout),
        Command::Train(args) => train_cmd(args, stdout),
        Command::Eval(args) => eval_cmd(args, stdout),
        Command::Ablate(args) => ablate(args, stdout),
    }
}

/// Linearisation and Riccati residuals for an environment, plus (for
/// planar point masses) the orbit-projected controller against the
/// pointwise controller.
pub fn lqr_check(cfg: &ExperimentConfig) -> Result<LqrCheckReport> {
    let env = make_env(&cfg.env)?;
    let (ds, da) = (env.obs_dim(), env.action_dim());
    let limit = env.config().action_limit;
    let f = {
        let env = env.clone();
        move |s: &DVector<f64>, a: &DVector<f64>| env.obs_dynamics(s, a)
    };
    let sampler = move |r: &mut ChaCha8Rng| {
        let s = DVector::from_fn(ds, |_, _| r.random_range(-1.0..1.0));
        let a = DVector::from_fn(da, |_, _| {
            r.random_range(-0.5..0.5) * limit / (da as f64).sqrt()
        });
        (s, a)
    };
    let lq = &cfg.lqr;
    let lin = steerability_check_linearization(
        &f,
        env.obs_rep(),
        env.action_rep(),
        sampler,
        lq.samples,
        cfg.seed,
    )?;
    let cost = QuadraticCost::isotropic(ds, da, lq.control_cost)?;
    let cost_field = |_: &DVector<f64>, _: &DVector<f64>| Ok(cost.clone());
    let ric = steerability_check_riccati(
        &f,
        &cost_field,
        env.obs_rep(),
        env.action_rep(),
        lq.horizon,
        sampler,
        lq.samples,
        cfg.seed,
    )?;
    let controller = if env.name() == "pointmass2d" && lq.horizon > 0 {
        let ctl = EquivariantLqr::new(
            &f,
            cost.clone(),
            lq.horizon,
            vec![FieldType::Vector, FieldType::Vector],
            vec![FieldType::Vector],
            0,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut worst = 0.0f64;
        for _ in 0..lq.controller_states {
            let (s, a) = sampler(&mut rng);
            let eq = ctl.act(&s, &a)?.action;
            worst = worst.max((eq - ctl.direct_act(&s, &a)?).amax());
        }
        Some(worst)
    } else {
        None
    };
    Ok(LqrCheckReport {
        env: env.name().to_string(),
        group: env.group().name().to_string(),
        horizon: lq.horizon,
        linearization_residual: lin,
        riccati_residual: ric,
        controller_max_discrepancy: controller,
    })
}

fn env_check(args: EnvCheckArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve(&args.common)?;
    let out = out_dir(&cfg)?;
    let env = make_env(&cfg.env)?;
    let (dyn_res, rew_res) = check_env_equivariance(env.as_ref(), args.samples, cfg.seed)?;
    let obs_res = observation_equivariance(env.as_ref(), args.samples, cfg.seed);
    let report = json!({
        "env": env.name(),
        "group": env.group().name(),
        "samples": args.samples,
        "dynamics_residual": dyn_res,
        "reward_residual": rew_res,
        "observation_residual": obs_res,
    });
    emit_json(&report, stdout, out.as_deref(), "residuals.json")?;
    if args.episodes > 0 {
        let dir = out.ok_or_else(|| CliError::usage("--episodes needs --out", None))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut episodes = Vec::with_capacity(args.episodes);
        for _ in 0..args.episodes {
            let s = env.reset(&mut rng);
            let mut arng = ChaCha8Rng::seed_from_u64(rng.random());
            episodes.push(run_episode(env.as_ref(), s, |_, _| {
                Ok(env.sample_action(&mut arng))
            })?);
        }
        let path = dir.join("trajectory.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_trajectory_csv(std::io::BufWriter::new(file), &episodes)?;
    }
    Ok(())
}

fn load_model(
    spec: &str,
    cfg: &ExperimentConfig,
) -> CliResult<(Box<dyn WorldModel>, Arc<dyn GeometricEnv>)> {
    if spec == "ground-truth" {
        let env = make_env(&cfg.env)?;
        return Ok((Box::new(GroundTruthModel::new(env.clone())), env));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::usage("checkpoint not found", Some(path)));
    }
    let (models, env) = ModelSet::load(path).map_err(|e| CliError {
        path: Some(path.into()),
        ..e.into()
    })?;
    Ok((Box::new(models), env))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError {
        code: 1,
        kind: "io",
        message: e.to_string(),
        path: Some(path.into()),
    })?;
    let csv_err = |e: csv::Error| CliError {
        code: 1,
        kind: "io",
        message: e.to_string(),
        path: Some(path.into()),
    };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn plan(args: PlanArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve(&args.common)?;
    let out = out_dir(&cfg)?;
    let (model, env) = load_model(&args.model, &cfg)?;
    let mppi = MppiConfig {
        seed: cfg.seed,
        ..cfg.planner()
    };
    mppi.validate()?;
    let mut ctl = MppiController::new(mppi.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = env.reset(&mut rng);
    let mut header = vec!["t".to_string()];
    header.extend((0..env.action_dim()).map(|i| format!("a{i}")));
    header.extend((0..mppi.iterations).map(|i| format!("elite_return_{i}")));
    header.push("reward".into());
    let mut rows = Vec::new();
    for t in 0..env.episode_len() {
        let res = ctl.act(model.as_ref(), &env.observe(&state))?;
        let action: Vec<f64> = res.action.iter().copied().collect();
        let r = env.reward(&state, &action);
        let mut row = vec![t.to_string()];
        row.extend(action.iter().map(f64::to_string));
        row.extend(res.elite_returns.iter().map(f64::to_string));
        row.push(r.to_string());
        rows.push(row);
        state = env.step(&state, &action)?;
    }
    match out {
        Some(dir) => write_csv(&dir.join("plan.csv"), &header, &rows)?,
        None => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).ok();
            for r in &rows {
                w.write_record(r).ok();
            }
            let bytes = w
                .into_inner()
                .map_err(|e| CliError::from(Error::Config(e.to_string())))?;
            stdout
                .write_all(&bytes)
                .map_err(|e| CliError::from(Error::from(e)))?;
        }
    }
    Ok(())
}

fn curve_rows(label: &[String], seed: u64, curve: &[CurvePoint]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|p| {
            let mut row = label.to_vec();
            row.extend([
                seed.to_string(),
                p.env_steps.to_string(),
                p.mean_reward.to_string(),
                p.std.to_string(),
            ]);
            row
        })
        .collect()
}

fn check_curve(curve: &[CurvePoint]) -> CliResult<()> {
    if curve
        .iter()
        .all(|p| p.mean_reward.is_finite() && p.std.is_finite())
    {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite evaluation reward").into())
    }
}

fn train_cmd(args: TrainArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut cfg = resolve(&args.common)?;
    cfg.train.mppi = cfg.planner();
    let dir = out_dir(&cfg)?.ok_or_else(|| CliError::usage("train needs --out", None))?;
    let seeds = if cfg.train.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.train.seeds.clone()
    };
    let mut rows = Vec::new();
    for &seed in &seeds {
        let mut progress = |p: &CurvePoint| {
            let _ = writeln!(
                stdout,
                "seed {seed} steps {} reward {:.3} ± {:.3}",
                p.env_steps, p.mean_reward, p.std
            );
        };
        let outcome = train(&cfg.env, &cfg.train, seed, Some(&mut progress))?;
        check_curve(&outcome.curve)?;
        rows.extend(curve_rows(&[], seed, &outcome.curve));
        outcome
            .models()
            .save(&dir.join(format!("model_seed{seed}.ckpt")))?;
    }
    let header: Vec<String> = ["seed", "env_steps", "mean_reward", "std"]
        .map(String::from)
        .to_vec();
    write_csv(&dir.join("curve.csv"), &header, &rows)
}

fn eval_cmd(args: EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve(&args.common)?;
    let out = out_dir(&cfg)?;
    let (model, env) = load_model(&args.checkpoint.display().to_string(), &cfg)?;
    let episodes = args.episodes.unwrap_or(cfg.train.eval_episodes);
    let mppi = cfg.planner();
    let stats = evaluate(
        env.as_ref(),
        model.as_ref(),
        &mppi,
        episodes,
        cfg.seed,
        cfg.train.action_repeat,
    )?;
    let random = random_baseline(env.as_ref(), episodes, cfg.seed)?;
    let report = json!({
        "env": env.name(),
        "group": env.group().name(),
        "episodes": episodes,
        "mean_reward": stats.mean,
        "std": stats.std,
        "returns": stats.returns,
        "random_mean_reward": random.mean,
    });
    emit_json(&report, stdout, out.as_deref(), "eval.json")
}

/// One cell of an ablation sweep: a label and the configuration it runs.
pub struct AblationCell {
    pub label: String,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

/// Expand an ablation kind into its cells.
pub fn ablation_cells(kind: &str, cfg: &ExperimentConfig) -> Result<Vec<AblationCell>> {
    let base = TrainConfig {
        mppi: cfg.planner(),
        ..cfg.train.clone()
    };
    let cell =
        |label: String, env: EnvConfig, train: TrainConfig| AblationCell { label, env, train };
    Ok(match kind {
        "warmup" => [0usize, 1, 5]
            .into_iter()
            .map(|w| {
                cell(
                    format!("seed_steps={w}"),
                    cfg.env.clone(),
                    TrainConfig {
                        seed_steps: w,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        "components" => Components::power_set()
            .into_iter()
            .map(|c| {
                let mut t = TrainConfig {
                    components: c,
                    ..base.clone()
                };
                t.arch.width_strategy = WidthStrategy::Linear;
                cell(c.label(), cfg.env.clone(), t)
            })
            .collect(),
        "group-order" => ["C4", "C8", "C16", "D16"]
            .into_iter()
            .map(|g| {
                let mut env = cfg.env.clone();
                if !env.env.starts_with("reacher") {
                    env.env = "reacher-easy".into();
                }
                env.group = g.into();
                cell(g.to_string(), env, base.clone())
            })
            .collect(),
        "frame" => [Frame::Local, Frame::Global]
            .into_iter()
            .map(|f| {
                let mut env = cfg.env.clone();
                if !env.env.starts_with("reacher") {
                    env.env = "reacher-easy".into();
                }
                env.frame = f;
                cell(format!("{f:?}").to_lowercase(), env, base.clone())
            })
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown ablation `{other}` (warmup|components|group-order|frame)"
            )))
        }
    })
}

fn ablate(args: AblateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve(&args.common)?;
    let cells = ablation_cells(&args.kind, &cfg)?;
    let dir = out_dir(&cfg)?.ok_or_else(|| CliError::usage("ablate needs --out", None))?;
    let seeds = if cfg.train.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.train.seeds.clone()
    };
    let mut rows = Vec::new();
    for c in &cells {
        for &seed in &seeds {
            let outcome = train(&c.env, &c.train, seed, None)?;
            check_curve(&outcome.curve)?;
            let last = outcome.curve.last().map_or(f64::NAN, |p| p.mean_reward);
            let _ = writeln!(
                stdout,
                "{} {} seed {seed}: final reward {last:.3}",
                args.kind, c.label
            );
            rows.extend(curve_rows(
                &[args.kind.clone(), c.label.clone()],
                seed,
                &outcome.curve,
            ));
        }
    }
    let header: Vec<String> = ["kind", "cell", "seed", "env_steps", "mean_reward", "std"]
        .map(String::from)
        .to_vec();
    write_csv(&dir.join("ablation.csv"), &header, &rows)
}
