//! Argument definitions and the four subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use optgail_core::adversarial::Variant;
use optgail_core::algorithms::{
    self, EStep, MStep, Method, TrainConfig, TrainReport, ACTIVATION_THRESHOLD,
};
use optgail_core::envs::{self, EnvParams, EnvSpec, ENV_NAMES};
use optgail_core::hrl::EntropyWeights;
use optgail_core::{occupancy, HierPolicy, OptionTrajectory, Trajectory};

use crate::config::{resolve, ConfigError, KeyValues, Manifest};
use crate::format::{self, FormatError, TrajectorySet};
use crate::report::{self, ReportError};
use crate::verify::{self, SuiteOptions};

pub const DEMOS_FILE: &str = "demos.traj";
pub const LABELED_FILE: &str = "demos_labeled.traj";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const POLICY_FILE: &str = "policy.txt";
pub const EXPERT_FILE: &str = "expert_policy.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, missing or malformed inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running. Exit code 1.
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} verification check(s) failed")]
    VerifyFailed { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::VerifyFailed { .. } => 1,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { ref source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "optgail",
    version,
    about = "Tabular hierarchical imitation learning with option-occupancy matching"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll the built-in expert and write demos, labeled demos and a manifest.
    GenExpert(GenExpertArgs),
    /// Train one method, or sweep over option counts and seeds.
    Train(Box<TrainArgs>),
    /// Score a learned policy, or merge report curves across runs.
    Eval(EvalArgs),
    /// Run the invariant suite on random instances.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenExpertArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(ENV_NAMES))]
    pub env: Option<String>,
    /// Minimum number of demo steps; whole episodes are collected.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub slip: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Flat key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Environment selection for commands that read demos.
#[derive(Debug, Args)]
pub struct EnvSelect {
    /// Defaults to the environment recorded next to the demos.
    #[arg(long, value_parser = PossibleValuesParser::new(ENV_NAMES))]
    pub env: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub slip: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// A gen-expert output directory or a trajectory file.
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long, value_parser = PossibleValuesParser::new(["option-gail", "gail", "gail-hrl", "hbc", "bc"]))]
    pub method: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, value_parser = PossibleValuesParser::new(["viterbi", "posterior", "posterior-sample", "random", "fixed"]))]
    pub e_step: Option<String>,
    #[arg(long, value_parser = PossibleValuesParser::new(["exact", "sampled"]))]
    pub m_step: Option<String>,
    /// Number of options, or an inclusive range `LO..HI` to sweep.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Learning rate of the discriminator and of the sampled policy update.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Run sweep members on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub no_prev_discriminator: bool,
    #[arg(long)]
    pub freeze_high: bool,
    #[arg(long)]
    pub entropy_high: Option<f64>,
    #[arg(long)]
    pub entropy_low: Option<f64>,
    /// Mixing coefficient of the exact improvement step.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub env: EnvSelect,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "emit_curves")]
    pub policy: Option<PathBuf>,
    /// Demos to compare against; labeled twins next to them enable option agreement.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[command(flatten)]
    pub env: EnvSelect,
    /// Write the policy's option-occupancy table here.
    #[arg(long, requires = "policy")]
    pub export_occ: Option<PathBuf>,
    /// Merge report curves into this CSV (mean, min and max across runs).
    #[arg(long, requires = "reports")]
    pub emit_curves: Option<PathBuf>,
    /// Report files, or directories searched for report.csv.
    #[arg(long, num_args = 1..)]
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances per check; the default sizes are used when omitted.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Negative control: corrupt the option-model conversion so the bijection check must fail.
    #[arg(long)]
    pub inject_bug: bool,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenExpert(a) => gen_expert(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Verify(a) => verify_cmd(&a),
    }
}

fn load_config(path: Option<&Path>, known: &[&str]) -> Result<KeyValues, CliError> {
    let Some(path) = path else {
        return Ok(KeyValues::default());
    };
    let kv = KeyValues::load(path)?;
    kv.reject_unknown(known)?;
    Ok(kv)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn push_env(m: &mut Manifest, spec: &EnvSpec) {
    m.push("env", &spec.name);
    if let Some(size) = spec.params.size {
        m.push("size", size);
    }
    m.push("slip", spec.params.slip);
    m.push("gamma", spec.params.gamma);
    m.push("horizon", spec.horizon);
    m.push("n_states", spec.mdp.n_states());
    m.push("n_actions", spec.mdp.n_actions());
}

// gen-expert

const GEN_KEYS: [&str; 7] = ["env", "steps", "seed", "size", "slip", "gamma", "horizon"];

pub fn gen_expert(a: &GenExpertArgs) -> Result<(), CliError> {
    let started = (Instant::now(), unix_seconds());
    let cfg = load_config(a.config.as_deref(), &GEN_KEYS)?;
    let name = match a
        .env
        .clone()
        .or_else(|| cfg.get_str("env").map(str::to_string))
    {
        Some(n) if ENV_NAMES.contains(&n.as_str()) => n,
        Some(n) => {
            return Err(CliError::Usage(format!(
                "unknown environment `{n}` (expected one of {})",
                ENV_NAMES.join(", ")
            )))
        }
        None => return Err(CliError::Usage("no environment given: pass --env".into())),
    };
    let defaults = EnvParams::default();
    let params = EnvParams {
        size: a.size.or(cfg.get("size")?),
        slip: resolve(a.slip, &cfg, "slip", defaults.slip)?,
        gamma: resolve(a.gamma, &cfg, "gamma", defaults.gamma)?,
        horizon: a.horizon.or(cfg.get("horizon")?),
    };
    let steps = resolve(a.steps, &cfg, "steps", 1000)?;
    let seed = resolve(a.seed, &cfg, "seed", 0)?;
    let spec = envs::build_env(&name, params).map_err(|e| CliError::Usage(e.to_string()))?;
    let (plain, labeled) =
        envs::generate_demos(&spec, steps, seed).map_err(|e| CliError::Usage(e.to_string()))?;

    create_dir(&a.out)?;
    let (n_s, n_a) = (spec.mdp.n_states(), spec.mdp.n_actions());
    format::save_demos(&a.out.join(DEMOS_FILE), &plain, n_s, n_a)?;
    format::save_annotated(&a.out.join(LABELED_FILE), &labeled, n_s, n_a)?;
    format::save_policy(&a.out.join(EXPERT_FILE), &spec.expert_policy())?;

    let mut m = Manifest::default();
    m.push("command", "gen-expert");
    m.push("version", env!("CARGO_PKG_VERSION"));
    push_env(&mut m, &spec);
    m.push("expert_k", spec.expert.k());
    m.push("true_options", spec.true_options);
    m.push("steps", steps);
    m.push("seed", seed);
    m.push("episodes", plain.len());
    m.push(
        "demo_steps",
        plain.iter().map(Trajectory::len).sum::<usize>(),
    );
    m.push("demos", DEMOS_FILE);
    m.push("labeled_demos", LABELED_FILE);
    m.push("expert_policy", EXPERT_FILE);
    m.push("started_unix", started.1);
    m.push("wall_clock_ms", started.0.elapsed().as_millis());
    m.save(&a.out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} episodes ({} steps) to {}",
        plain.len(),
        plain.iter().map(Trajectory::len).sum::<usize>(),
        a.out.display()
    );
    Ok(())
}

// demo and environment loading

/// Demos plus whatever was recorded alongside them.
pub struct DemoSource {
    pub path: PathBuf,
    pub demos: Vec<Trajectory>,
    pub labeled: Option<Vec<OptionTrajectory>>,
    pub manifest: Option<KeyValues>,
}

pub fn load_demo_source(path: &Path) -> Result<DemoSource, CliError> {
    let (file, dir) = if path.is_dir() {
        (path.join(DEMOS_FILE), path.to_path_buf())
    } else {
        (
            path.to_path_buf(),
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        )
    };
    if !file.exists() {
        return Err(CliError::Usage(format!(
            "demos not found: {}",
            file.display()
        )));
    }
    let set = format::load_demos(&file)?;
    let demos = set.plain();
    let mut labeled = match set {
        TrajectorySet::Annotated { demos, .. } => Some(demos),
        TrajectorySet::Plain { .. } => None,
    };
    let twin = dir.join(LABELED_FILE);
    if labeled.is_none() && path.is_dir() && twin.exists() {
        if let TrajectorySet::Annotated { demos: twins, .. } = format::load_demos(&twin)? {
            labeled = Some(twins);
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(KeyValues::load(&manifest_path)?)
    } else {
        None
    };
    Ok(DemoSource {
        path: file,
        demos,
        labeled,
        manifest,
    })
}

pub fn resolve_env(sel: &EnvSelect, manifest: Option<&KeyValues>) -> Result<EnvSpec, CliError> {
    let empty = KeyValues::default();
    let m = manifest.unwrap_or(&empty);
    let name = sel
        .env
        .clone()
        .or_else(|| m.get_str("env").map(str::to_string))
        .ok_or_else(|| {
            CliError::Usage(
                "no environment: pass --env or point --demos at a gen-expert directory".into(),
            )
        })?;
    if !ENV_NAMES.contains(&name.as_str()) {
        return Err(CliError::Usage(format!("unknown environment `{name}`")));
    }
    let defaults = EnvParams::default();
    let from_manifest = sel.env.is_none() || sel.env.as_deref() == m.get_str("env");
    let recorded = |key: &str| -> Result<Option<f64>, CliError> {
        Ok(if from_manifest { m.get(key)? } else { None })
    };
    let params = EnvParams {
        size: sel
            .size
            .or(if from_manifest { m.get("size")? } else { None }),
        slip: sel.slip.or(recorded("slip")?).unwrap_or(defaults.slip),
        gamma: recorded("gamma")?.unwrap_or(defaults.gamma),
        horizon: if from_manifest {
            m.get("horizon")?
        } else {
            None
        },
    };
    envs::build_env(&name, params).map_err(|e| CliError::Usage(e.to_string()))
}

// train

const TRAIN_KEYS: [&str; 17] = [
    "method",
    "iters",
    "e-step",
    "m-step",
    "k",
    "gamma",
    "lr",
    "batch",
    "minibatch",
    "seed",
    "seeds",
    "parallel",
    "no-prev-discriminator",
    "freeze-high",
    "entropy-high",
    "entropy-low",
    "step",
];

/// `"4"` or `"2..6"` (inclusive).
pub fn parse_k(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "invalid --k `{text}`: expected N or LO..HI with 1 <= LO <= HI"
        ))
    };
    let (lo, hi) = match text.split_once("..") {
        Some((lo, hi)) => (
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let k = text.trim().parse().map_err(|_| bad())?;
            (k, k)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

/// Everything `train` resolved before running.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub base: TrainConfig,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub parallel: bool,
}

pub fn plan_train(a: &TrainArgs, spec: &EnvSpec) -> Result<TrainPlan, CliError> {
    let cfg = load_config(a.config.as_deref(), &TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let flag = |set: bool| if set { Some(true) } else { None };
    let method_name: String = resolve(
        a.method.clone(),
        &cfg,
        "method",
        d.method.name().to_string(),
    )?;
    let method = Method::parse(&method_name)
        .ok_or_else(|| CliError::Usage(format!("unknown method `{method_name}`")))?;
    let e_name: String = resolve(
        a.e_step.clone(),
        &cfg,
        "e-step",
        d.e_step.name().to_string(),
    )?;
    let e_step = EStep::parse(&e_name)
        .ok_or_else(|| CliError::Usage(format!("unknown e-step `{e_name}`")))?;
    let m_name: String = resolve(
        a.m_step.clone(),
        &cfg,
        "m-step",
        d.m_step.name().to_string(),
    )?;
    let m_step = MStep::parse(&m_name)
        .ok_or_else(|| CliError::Usage(format!("unknown m-step `{m_name}`")))?;
    let ks = parse_k(&resolve(a.k.clone(), &cfg, "k", d.k.to_string())?)?;
    let lr = resolve(a.lr, &cfg, "lr", d.disc_learning_rate)?;
    let no_prev = resolve(
        flag(a.no_prev_discriminator),
        &cfg,
        "no-prev-discriminator",
        false,
    )?;
    let seed = resolve(a.seed, &cfg, "seed", d.seed)?;
    let n_seeds = resolve(a.seeds, &cfg, "seeds", 1)?;
    if n_seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let base = TrainConfig {
        method,
        iterations: resolve(a.iters, &cfg, "iters", d.iterations)?,
        e_step,
        m_step,
        discriminator: if no_prev {
            Variant::NoPrev
        } else {
            Variant::Full
        },
        k: ks[0],
        entropy: EntropyWeights {
            lambda_high: resolve(a.entropy_high, &cfg, "entropy-high", d.entropy.lambda_high)?,
            lambda_low: resolve(a.entropy_low, &cfg, "entropy-low", d.entropy.lambda_low)?,
        },
        gamma: resolve(a.gamma, &cfg, "gamma", d.gamma)?,
        seed,
        freeze_high: resolve(flag(a.freeze_high), &cfg, "freeze-high", false)?,
        step: resolve(a.step, &cfg, "step", d.step)?,
        sampled: optgail_core::hrl::SampledConfig {
            batch: resolve(a.batch, &cfg, "batch", d.sampled.batch)?,
            mini_batch: resolve(a.minibatch, &cfg, "minibatch", d.sampled.mini_batch)?,
            learning_rate: lr,
            horizon: spec.horizon,
            ..d.sampled
        },
        disc_learning_rate: lr,
        ..d
    };
    for &k in &ks {
        TrainConfig { k, ..base.clone() }
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid combination: {e}")))?;
    }
    if base.sampled.batch == 0 || base.sampled.mini_batch == 0 {
        return Err(CliError::Usage(
            "batch and minibatch must be positive".into(),
        ));
    }
    let parallel = resolve(flag(a.parallel), &cfg, "parallel", false)?;
    Ok(TrainPlan {
        base,
        ks,
        seeds: (0..n_seeds as u64).map(|i| seed + i).collect(),
        parallel,
    })
}

struct RunOutcome {
    dir: PathBuf,
    k: usize,
    seed: u64,
    last: algorithms::Record,
}

fn run_one(
    cfg: &TrainConfig,
    source: &DemoSource,
    spec: &EnvSpec,
    dir: &Path,
) -> Result<RunOutcome, CliError> {
    let started = (Instant::now(), unix_seconds());
    let (policy, report) =
        algorithms::train(cfg, &source.demos, &spec.mdp, source.labeled.as_deref())
            .map_err(runtime)?;
    create_dir(dir)?;
    report::write_report(&dir.join(REPORT_FILE), &report).map_err(runtime)?;
    format::save_policy(&dir.join(POLICY_FILE), &policy).map_err(runtime)?;
    train_manifest(cfg, source, spec, &report, started)
        .save(&dir.join(MANIFEST_FILE))
        .map_err(runtime)?;
    let last = report
        .records
        .last()
        .cloned()
        .expect("at least the initial snapshot");
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        k: cfg.k,
        seed: cfg.seed,
        last,
    })
}

fn train_manifest(
    cfg: &TrainConfig,
    source: &DemoSource,
    spec: &EnvSpec,
    report: &TrainReport,
    started: (Instant, u64),
) -> Manifest {
    let mut m = Manifest::default();
    m.push("command", "train");
    m.push("version", env!("CARGO_PKG_VERSION"));
    m.push("method", cfg.method.name());
    m.push("iters", cfg.iterations);
    m.push("e-step", cfg.e_step.name());
    m.push("m-step", cfg.m_step.name());
    m.push(
        "discriminator",
        format!("{:?}", cfg.discriminator).to_lowercase(),
    );
    m.push("k", cfg.k);
    m.push("gamma", cfg.gamma);
    m.push("seed", cfg.seed);
    m.push("freeze-high", cfg.freeze_high);
    m.push("pretrain-epochs", cfg.pretrain_epochs);
    m.push("entropy-high", cfg.entropy.lambda_high);
    m.push("entropy-low", cfg.entropy.lambda_low);
    m.push("step", cfg.step);
    m.push("m-sweeps", cfg.m_sweeps);
    m.push("lr", cfg.disc_learning_rate);
    m.push("disc-epochs", cfg.disc_epochs);
    m.push("batch", cfg.sampled.batch);
    m.push("minibatch", cfg.sampled.mini_batch);
    m.push("ppo-clip", cfg.sampled.clip);
    m.push("ppo-epochs", cfg.sampled.epochs);
    m.push("rollout-horizon", cfg.sampled.horizon);
    m.push("init-noise", cfg.init_noise);
    m.push("q-estimator", report.q_estimator);
    push_env(&mut m, spec);
    m.push("demos", source.path.display());
    m.push("labeled-demos", source.labeled.is_some());
    m.push("report", REPORT_FILE);
    m.push("policy", POLICY_FILE);
    m.push("started_unix", started.1);
    m.push("wall_clock_ms", started.0.elapsed().as_millis());
    m
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let source = load_demo_source(&a.demos)?;
    let spec = resolve_env(&a.env, source.manifest.as_ref())?;
    for (i, d) in source.demos.iter().enumerate() {
        d.validate(spec.mdp.n_states(), spec.mdp.n_actions())
            .map_err(|e| {
                CliError::Usage(format!(
                    "demo {i} does not fit environment `{}`: {e}",
                    spec.name
                ))
            })?;
    }
    let plan = plan_train(a, &spec)?;
    let sweep = plan.ks.len() > 1 || plan.seeds.len() > 1;
    let jobs: Vec<(TrainConfig, PathBuf)> = plan
        .ks
        .iter()
        .flat_map(|&k| plan.seeds.iter().map(move |&seed| (k, seed)))
        .map(|(k, seed)| {
            let dir = if sweep {
                a.out.join(format!("k{k}")).join(format!("seed{seed}"))
            } else {
                a.out.clone()
            };
            (
                TrainConfig {
                    k,
                    seed,
                    ..plan.base.clone()
                },
                dir,
            )
        })
        .collect();

    let outcomes: Vec<Result<RunOutcome, CliError>> = if plan.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(cfg, dir)| scope.spawn(|| run_one(cfg, &source, &spec, dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(CliError::Runtime("worker thread panicked".into())))
                })
                .collect()
        })
    } else {
        jobs.iter()
            .map(|(cfg, dir)| run_one(cfg, &source, &spec, dir))
            .collect()
    };

    let mut runs = Vec::new();
    for o in outcomes {
        let o = o?;
        let agreement = o
            .last
            .option_agreement
            .map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        println!(
            "k={} seed={} return={:.6} q_joint={:.6} q_marginal={:.6} agreement={} activated={} -> {}",
            o.k,
            o.seed,
            o.last.ret,
            o.last.q_joint,
            o.last.q_marginal,
            agreement,
            o.last.activated_options,
            o.dir.display()
        );
        runs.push(o.dir);
    }
    if sweep {
        let mut m = Manifest::default();
        m.push("command", "train-sweep");
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("method", plan.base.method.name());
        m.push(
            "k",
            plan.ks
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        m.push(
            "seeds",
            plan.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        m.push("parallel", plan.parallel);
        m.push(
            "runs",
            runs.iter()
                .map(|d| d.strip_prefix(&a.out).unwrap_or(d).display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.save(&a.out.join(MANIFEST_FILE)).map_err(runtime)?;
    }
    Ok(())
}

// eval

/// Metrics printed by `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ret: f64,
    pub q: Option<(f64, f64)>,
    pub option_agreement: Option<f64>,
    pub activated_options: usize,
}

pub fn evaluate(
    policy: &HierPolicy,
    spec: &EnvSpec,
    demos: Option<&DemoSource>,
) -> Result<Evaluation, CliError> {
    let mdp = &spec.mdp;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(CliError::Usage(format!(
            "policy has {} states and {} actions but `{}` has {} and {}",
            policy.n_states(),
            policy.n_actions(),
            spec.name,
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let ret = optgail_core::hrl::hier_return(policy, mdp).map_err(runtime)?;
    let activated_options =
        algorithms::activated_options(policy, mdp, ACTIVATION_THRESHOLD).map_err(runtime)?;
    let (mut q, mut option_agreement) = (None, None);
    if let Some(src) = demos {
        for (i, d) in src.demos.iter().enumerate() {
            d.validate(mdp.n_states(), mdp.n_actions()).map_err(|e| {
                CliError::Usage(format!("demo {i} does not fit `{}`: {e}", spec.name))
            })?;
        }
        q = Some(
            algorithms::compute_q_on_demos(policy, policy, &src.demos, mdp, EStep::Viterbi)
                .map_err(runtime)?,
        );
        if let Some(truth) = &src.labeled {
            option_agreement = Some(algorithms::option_agreement(policy, truth).map_err(runtime)?);
        }
    }
    Ok(Evaluation {
        ret,
        q,
        option_agreement,
        activated_options,
    })
}

fn collect_reports(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(CliError::Usage(format!(
                "report not found: {}",
                p.display()
            )));
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no report files found".into()));
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    if let Some(path) = &a.policy {
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "policy not found: {}",
                path.display()
            )));
        }
        let policy = format::load_policy(path)?;
        let source = a.demos.as_deref().map(load_demo_source).transpose()?;
        let spec = resolve_env(&a.env, source.as_ref().and_then(|s| s.manifest.as_ref()))?;
        let e = evaluate(&policy, &spec, source.as_ref())?;
        println!("env                {}", spec.name);
        println!("return             {:.10}", e.ret);
        if let Some((joint, marginal)) = e.q {
            println!("q_joint            {joint:.10}");
            println!("q_marginal         {marginal:.10}");
        }
        if let Some(x) = e.option_agreement {
            println!("option_agreement   {x:.6}");
        }
        println!("activated_options  {}", e.activated_options);
        if let Some(out) = &a.export_occ {
            let occ = occupancy::compute_occupancy(&policy, &spec.mdp).map_err(runtime)?;
            format::save_occupancy(out, &occ).map_err(runtime)?;
            println!("occupancy          {}", out.display());
        }
    }
    if let Some(out) = &a.emit_curves {
        let reports = collect_reports(&a.reports)?;
        let refs: Vec<&Path> = reports.iter().map(PathBuf::as_path).collect();
        report::merge_curves(&refs, out)?;
        println!("merged {} reports into {}", reports.len(), out.display());
    }
    Ok(())
}

// verify

pub fn verify_cmd(a: &VerifyArgs) -> Result<(), CliError> {
    let checks = verify::run_suite(SuiteOptions {
        seed: a.seed,
        instances: a.instances,
        inject_bug: a.inject_bug,
    });
    print!("{}", verify::render_table(&checks));
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        failed => Err(CliError::VerifyFailed { failed }),
    }
}
