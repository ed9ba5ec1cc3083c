//! `robust-pref`: run the radius-coverage studies, the alignment sweep, or a
//! single inner maximization from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use robust_pref::experiments::*;
use robust_pref::simulator::{DEFAULT_ACTIONS_PER_PROMPT, DEFAULT_DIM, DEFAULT_GROUPS, DEFAULT_PREF_DIM, DEFAULT_RANK, DEFAULT_REWARD_SCALE};
use robust_pref::trainer::{DEFAULT_LR, DEFAULT_STEPS};
use robust_pref::{
    chi2_dual_solve, chi2_quantile_wh, kl_tilt_weights, make_env, make_preference_env, mixture_chi2_argmax_with,
    wasserstein_penalty, AmbiguitySpec, DualVariables, Error, InnerSolution, Mixing, MixtureEnv, MixtureMode,
    PreferenceConfig, PreferenceLoss, ProbVector, RadiusSchedule, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "robust-pref", version, about = "Distributionally robust inner solvers and radius-coverage experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coverage of the true mixture by the χ² ball, per schedule and n.
    Coverage(CoverageArgs),
    /// Parameter error against n and fitted log-log slopes.
    Rate(RateArgs),
    /// Coverage against excess worst-case risk over ε = c/n.
    Frontier(FrontierArgs),
    /// Preference training at α₀ and evaluation across mixing coefficients.
    Align(AlignArgs),
    /// Solve one inner maximization and print the solution.
    Solve(SolveArgs),
}

#[derive(Args, Debug, Clone)]
struct EnvArgs {
    /// Environment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of mixture groups K.
    #[arg(long, default_value_t = DEFAULT_GROUPS, value_parser = at_least_two)]
    groups: usize,
    /// Feature dimension d.
    #[arg(long, default_value_t = DEFAULT_DIM, value_parser = positive_usize)]
    dim: usize,
    /// Rank of the group-mean subspace.
    #[arg(long, default_value_t = DEFAULT_RANK, value_parser = positive_usize)]
    rank: usize,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Maximum number of concurrent tasks; results do not depend on it.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Full-batch gradient steps.
    #[arg(long, default_value_t = DEFAULT_STEPS, value_parser = positive_usize)]
    steps: usize,
    /// Step size.
    #[arg(long, default_value_t = DEFAULT_LR, value_parser = positive_f64)]
    lr: f64,
    /// Project θ onto the ball of this radius after every step.
    #[arg(long, value_parser = positive_f64)]
    bound: Option<f64>,
    /// Mixture maximizer used inside training.
    #[arg(long, value_enum, default_value_t = ModeArg::Kkt)]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Nominal levels of the calibrated schedules.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS, value_parser = open_unit)]
    alphas: Vec<f64>,
    /// Constant of the fast c·n⁻² schedule.
    #[arg(long, default_value_t = DEFAULT_FAST_C, value_parser = positive_f64)]
    fast_c: f64,
    /// Sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NS, value_parser = positive_u64)]
    ns: Vec<u64>,
    /// Replications per sample size.
    #[arg(long, default_value_t = DEFAULT_COVERAGE_REPS, value_parser = positive_usize)]
    reps: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct RateArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Nominal levels of the calibrated schedules.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS, value_parser = open_unit)]
    alphas: Vec<f64>,
    /// Constant of the fast c·n⁻² schedule.
    #[arg(long, default_value_t = DEFAULT_FAST_C, value_parser = positive_f64)]
    fast_c: f64,
    /// Sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NS, value_parser = positive_u64)]
    ns: Vec<u64>,
    /// Independent training seeds per sample size.
    #[arg(long, default_value_t = DEFAULT_SEEDS, value_parser = positive_usize)]
    seeds: usize,
    /// Leave out the ρ = 0 control.
    #[arg(long)]
    no_erm: bool,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct FrontierArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Sample size.
    #[arg(long, default_value_t = 16000, value_parser = positive_u64)]
    n: u64,
    /// Number of evenly spaced c values.
    #[arg(long, default_value_t = 25, value_parser = at_least_two)]
    grid: usize,
    /// Largest c [default: χ²_{K−1, 0.99}].
    #[arg(long, value_parser = positive_f64)]
    c_max: Option<f64>,
    /// Coverage replications per c.
    #[arg(long, default_value_t = DEFAULT_FRONTIER_REPS, value_parser = positive_usize)]
    reps: usize,
    /// Trained models per c.
    #[arg(long, default_value_t = DEFAULT_SEEDS, value_parser = positive_usize)]
    seeds: usize,
    /// Held-out samples used to evaluate the group losses.
    #[arg(long, default_value_t = 25000, value_parser = positive_usize)]
    eval_n: usize,
    /// Calibrated levels reported next to the grid.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.95], value_parser = open_unit)]
    calibrated_alphas: Vec<f64>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// Environment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature dimension of the preference environment.
    #[arg(long, default_value_t = DEFAULT_PREF_DIM, value_parser = positive_usize)]
    dim: usize,
    /// Candidate actions per prompt.
    #[arg(long, default_value_t = DEFAULT_ACTIONS_PER_PROMPT, value_parser = at_least_two)]
    actions: usize,
    /// Reward scale F.
    #[arg(long, default_value_t = DEFAULT_REWARD_SCALE, value_parser = positive_f64)]
    reward_scale: f64,
    /// Methods to train, as `<loss>` or `<loss>_<divergence>` [default: all eight].
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// DPO temperature β.
    #[arg(long, default_value_t = DEFAULT_DPO_BETA, value_parser = positive_f64)]
    beta: f64,
    /// REBEL step parameter η.
    #[arg(long, default_value_t = DEFAULT_REBEL_ETA, value_parser = positive_f64)]
    eta: f64,
    /// Sample-level χ² radius.
    #[arg(long, default_value_t = DEFAULT_CHI2_RHO, value_parser = positive_f64)]
    chi2_rho: f64,
    /// KL temperature.
    #[arg(long, default_value_t = DEFAULT_KL_TAU, value_parser = positive_f64)]
    kl_tau: f64,
    /// Wasserstein penalty weight.
    #[arg(long, default_value_t = DEFAULT_WASSERSTEIN_RHO0, value_parser = nonnegative_f64)]
    wasserstein_rho0: f64,
    /// Mixing coefficient of the training data.
    #[arg(long, default_value_t = 0.1, value_parser = closed_unit)]
    alpha0: f64,
    /// Number of evenly spaced evaluation α in [0, 1].
    #[arg(long, default_value_t = 11, value_parser = at_least_two)]
    alpha_points: usize,
    /// Reward mixing rule.
    #[arg(long, value_enum, default_value_t = MixingArg::Convex)]
    mixing: MixingArg,
    /// Passes over fresh batches.
    #[arg(long, default_value_t = 40, value_parser = positive_usize)]
    epochs: usize,
    /// Pairs per batch.
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    batch: usize,
    /// Step size.
    #[arg(long, default_value_t = 1e-2, value_parser = positive_f64)]
    lr: f64,
    /// Gradient steps per batch.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    steps_per_batch: usize,
    /// Parameter bound B.
    #[arg(long, default_value_t = 10.0, value_parser = positive_f64)]
    bound: f64,
    /// Seed of the shared training batch stream.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Evaluation prompts.
    #[arg(long, default_value_t = 2000, value_parser = positive_usize)]
    eval_prompts: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Ambiguity set.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Comma-separated losses (group losses for `mixture`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "losses_file", conflicts_with = "losses_file")]
    losses: Vec<f64>,
    /// File of losses separated by commas or whitespace.
    #[arg(long)]
    losses_file: Option<PathBuf>,
    /// Radius for `chi2` and `mixture`.
    #[arg(long, value_parser = nonnegative_f64)]
    rho: Option<f64>,
    /// Temperature for `kl`.
    #[arg(long, value_parser = positive_f64)]
    tau: Option<f64>,
    /// Penalty weight for `wasserstein`.
    #[arg(long, value_parser = nonnegative_f64)]
    rho0: Option<f64>,
    /// Per-sample squared input-gradient norms for `wasserstein`.
    #[arg(long, value_delimiter = ',')]
    grad_sqnorms: Vec<f64>,
    /// Reference distribution for `mixture` [default: uniform].
    #[arg(long, value_delimiter = ',')]
    reference: Vec<f64>,
    /// Mixture maximizer.
    #[arg(long, value_enum, default_value_t = ModeArg::Kkt)]
    mode: ModeArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum KindArg {
    Chi2,
    Kl,
    Wasserstein,
    Mixture,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Kkt,
    Projection,
    Clip,
}

impl ModeArg {
    fn mode(self) -> MixtureMode {
        match self {
            Self::Kkt => MixtureMode::Kkt,
            Self::Projection => MixtureMode::Projection,
            Self::Clip => MixtureMode::ClipRenormalize,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Kkt => "kkt",
            Self::Projection => "projection",
            Self::Clip => "clip",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MixingArg {
    Convex,
    Geometric,
}

impl MixingArg {
    fn mixing(self) -> Mixing {
        match self {
            Self::Convex => Mixing::Convex,
            Self::Geometric => Mixing::Geometric,
        }
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match parse_f64(s)? {
        x if x > 0.0 => Ok(x),
        x => Err(format!("must be positive, got {x}")),
    }
}

fn nonnegative_f64(s: &str) -> Result<f64, String> {
    match parse_f64(s)? {
        x if x >= 0.0 => Ok(x),
        x => Err(format!("must be nonnegative, got {x}")),
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    match parse_f64(s)? {
        x if x > 0.0 && x < 1.0 => Ok(x),
        x => Err(format!("must lie in (0, 1), got {x}")),
    }
}

fn closed_unit(s: &str) -> Result<f64, String> {
    match parse_f64(s)? {
        x if (0.0..=1.0).contains(&x) => Ok(x),
        x => Err(format!("must lie in [0, 1], got {x}")),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(x) => Ok(x),
        Err(_) => Err(format!("'{s}' is not a positive integer")),
    }
}

fn at_least_two(s: &str) -> Result<usize, String> {
    match positive_usize(s)? {
        1 => Err("must be at least 2".into()),
        x => Ok(x),
    }
}

fn positive_u64(s: &str) -> Result<u64, String> {
    positive_usize(s).map(|x| x as u64)
}

/// Failure after argument parsing: bad input exits 2, IO exits 1.
enum Failure {
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn usage(flag: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("invalid value for '--{flag}': {msg}"))
}

fn list(xs: &[impl ToString]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Ordered `(flag, value)` pairs with every default materialized.
type Resolved = Vec<(&'static str, String)>;

fn env_pairs(env: &EnvArgs) -> Resolved {
    vec![
        ("seed", env.seed.to_string()),
        ("groups", env.groups.to_string()),
        ("dim", env.dim.to_string()),
        ("rank", env.rank.to_string()),
    ]
}

fn train_pairs(t: &TrainArgs) -> Resolved {
    let mut out = vec![
        ("steps", t.steps.to_string()),
        ("lr", t.lr.to_string()),
        ("mode", t.mode.name().to_string()),
    ];
    if let Some(b) = t.bound {
        out.push(("bound", b.to_string()));
    }
    out
}

fn train_config(t: &TrainArgs) -> TrainConfig {
    TrainConfig {
        steps: t.steps,
        lr: t.lr,
        bound: t.bound,
        mode: t.mode.mode(),
    }
}

fn build_env(env: &EnvArgs) -> Result<MixtureEnv, Failure> {
    if env.rank > env.dim {
        return Err(usage("rank", format!("must not exceed --dim ({})", env.dim)));
    }
    Ok(make_env(env.seed, env.groups, env.dim, env.rank)?)
}

fn write_outputs(command: &str, table: &ExperimentTable, resolved: &Resolved, out: &Path) -> Result<PathBuf, Failure> {
    let io = |what: &str, p: &Path, e: std::io::Error| Failure::Io(format!("cannot {what} {}: {e}", p.display()));
    fs::create_dir_all(out).map_err(|e| io("create", out, e))?;
    let csv = out.join(table.file_name());
    fs::write(&csv, table.to_csv()).map_err(|e| io("write", &csv, e))?;

    let args: Vec<String> = resolved.iter().map(|(k, v)| format!("--{k} {v}")).collect();
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut manifest = format!(
        "command={command}\nargs={}\nenv_seed={}\noutput={}\nversion={}\ntimestamp={timestamp}\n",
        args.join(" "),
        table.env_seed,
        csv.display(),
        env!("CARGO_PKG_VERSION"),
    );
    for (k, v) in resolved {
        manifest.push_str(&format!("config.{k}={v}\n"));
    }
    for (k, v) in &table.metadata {
        manifest.push_str(&format!("meta.{k}={v}\n"));
    }
    let path = out.join(format!("{}_{}.manifest", table.experiment, table.env_seed));
    fs::write(&path, manifest).map_err(|e| io("write", &path, e))?;
    Ok(csv)
}

fn cmd_coverage(a: &CoverageArgs) -> Result<(), Failure> {
    let env = build_env(&a.env)?;
    let cfg = CoverageConfig {
        schedules: default_schedules(&a.alphas, a.fast_c, env.groups())?,
        ns: a.ns.clone(),
        reps: a.reps,
        jobs: a.run.jobs,
    };
    let table = coverage_curve(&env, &cfg)?;
    let mut resolved = env_pairs(&a.env);
    resolved.extend([
        ("alphas", list(&a.alphas)),
        ("fast-c", a.fast_c.to_string()),
        ("ns", list(&a.ns)),
        ("reps", a.reps.to_string()),
        ("jobs", a.run.jobs.to_string()),
        ("out", a.run.out.display().to_string()),
    ]);
    let path = write_outputs("coverage", &table, &resolved, &a.run.out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_rate(a: &RateArgs) -> Result<(), Failure> {
    let env = build_env(&a.env)?;
    let mut schedules = default_schedules(&a.alphas, a.fast_c, env.groups())?;
    if !a.no_erm {
        schedules.push(RadiusSchedule::Zero);
    }
    let ns: Vec<u64> = {
        let mut v = a.ns.clone();
        v.sort_unstable();
        v.dedup();
        v
    };
    if ns.len() < 2 {
        return Err(usage("ns", "slope fits need at least two distinct sample sizes"));
    }
    let cfg = RateConfig {
        schedules,
        ns,
        seeds: a.seeds,
        train: train_config(&a.train),
        jobs: a.run.jobs,
    };
    let outcome = rate_curve(&env, &cfg)?;
    let mut resolved = env_pairs(&a.env);
    resolved.extend([
        ("alphas", list(&a.alphas)),
        ("fast-c", a.fast_c.to_string()),
        ("ns", list(&cfg.ns)),
        ("seeds", a.seeds.to_string()),
    ]);
    resolved.extend(train_pairs(&a.train));
    if a.no_erm {
        resolved.push(("no-erm", String::new()));
    }
    resolved.extend([("jobs", a.run.jobs.to_string()), ("out", a.run.out.display().to_string())]);
    let path = write_outputs("rate", &outcome.table, &resolved, &a.run.out)?;
    for (label, fit) in &outcome.fits {
        println!("{label}: slope {:.4} ± {:.4}", fit.slope, fit.slope_stderr);
    }
    println!("{}", path.display());
    Ok(())
}

fn cmd_frontier(a: &FrontierArgs) -> Result<(), Failure> {
    let env = build_env(&a.env)?;
    let cfg = FrontierConfig {
        n: a.n,
        grid: a.grid,
        c_max: a.c_max,
        reps_cover: a.reps,
        seeds: a.seeds,
        eval_n: a.eval_n,
        calibrated_alphas: a.calibrated_alphas.clone(),
        train: train_config(&a.train),
        jobs: a.run.jobs,
    };
    let table = frontier(&env, &cfg)?;
    let c_max = match a.c_max {
        Some(c) => c,
        None => chi2_quantile_wh(env.groups() as u32 - 1, 0.99)?,
    };
    let mut resolved = env_pairs(&a.env);
    resolved.extend([
        ("n", a.n.to_string()),
        ("grid", a.grid.to_string()),
        ("c-max", c_max.to_string()),
        ("reps", a.reps.to_string()),
        ("seeds", a.seeds.to_string()),
        ("eval-n", a.eval_n.to_string()),
        ("calibrated-alphas", list(&a.calibrated_alphas)),
    ]);
    resolved.extend(train_pairs(&a.train));
    resolved.extend([("jobs", a.run.jobs.to_string()), ("out", a.run.out.display().to_string())]);
    let path = write_outputs("frontier", &table, &resolved, &a.run.out)?;
    println!("{}", path.display());
    Ok(())
}

fn align_methods(a: &AlignArgs) -> Result<Vec<AlignMethod>, Failure> {
    let losses = [PreferenceLoss::Dpo { beta: a.beta }, PreferenceLoss::Rebel { eta: a.eta }];
    let specs = [
        None,
        Some(AmbiguitySpec::Wasserstein { rho0: a.wasserstein_rho0 }),
        Some(AmbiguitySpec::Kl { tau: a.kl_tau }),
        Some(AmbiguitySpec::Chi2 { rho: a.chi2_rho }),
    ];
    let all: Vec<AlignMethod> = losses
        .iter()
        .flat_map(|&loss| specs.iter().map(move |&spec| AlignMethod { loss, spec }))
        .collect();
    if a.methods.is_empty() {
        return Ok(all);
    }
    let mut out = Vec::new();
    for name in &a.methods {
        let m = all
            .iter()
            .find(|m| m.label() == name.trim())
            .ok_or_else(|| usage("methods", format!("unknown method '{name}'")))?;
        if !out.contains(m) {
            out.push(*m);
        }
    }
    Ok(out)
}

fn cmd_align(a: &AlignArgs) -> Result<(), Failure> {
    let env = make_preference_env(a.seed, a.dim, a.actions, a.reward_scale)?;
    let methods = align_methods(a)?;
    let step = 1.0 / (a.alpha_points - 1) as f64;
    let alphas: Vec<f64> = (0..a.alpha_points).map(|i| (i as f64 * step).min(1.0)).collect();
    let cfg = AlignConfig {
        methods: methods.clone(),
        alphas,
        train: PreferenceConfig {
            epochs: a.epochs,
            batch: a.batch,
            lr: a.lr,
            steps_per_batch: a.steps_per_batch,
            bound: a.bound,
            alpha0: a.alpha0,
            mixing: a.mixing.mixing(),
            seed: a.train_seed,
        },
        eval_prompts: a.eval_prompts,
        jobs: a.run.jobs,
    };
    let table = alignment_sweep(&env, &cfg)?;
    let labels: Vec<String> = methods.iter().map(|m| m.label()).collect();
    let resolved: Resolved = vec![
        ("seed", a.seed.to_string()),
        ("dim", a.dim.to_string()),
        ("actions", a.actions.to_string()),
        ("reward-scale", a.reward_scale.to_string()),
        ("methods", labels.join(",")),
        ("beta", a.beta.to_string()),
        ("eta", a.eta.to_string()),
        ("chi2-rho", a.chi2_rho.to_string()),
        ("kl-tau", a.kl_tau.to_string()),
        ("wasserstein-rho0", a.wasserstein_rho0.to_string()),
        ("alpha0", a.alpha0.to_string()),
        ("alpha-points", a.alpha_points.to_string()),
        ("mixing", cfg.train.mixing.name().to_string()),
        ("epochs", a.epochs.to_string()),
        ("batch", a.batch.to_string()),
        ("lr", a.lr.to_string()),
        ("steps-per-batch", a.steps_per_batch.to_string()),
        ("bound", a.bound.to_string()),
        ("train-seed", a.train_seed.to_string()),
        ("eval-prompts", a.eval_prompts.to_string()),
        ("jobs", a.run.jobs.to_string()),
        ("out", a.run.out.display().to_string()),
    ];
    let path = write_outputs("align", &table, &resolved, &a.run.out)?;
    println!("{}", path.display());
    Ok(())
}

fn read_losses(a: &SolveArgs) -> Result<Vec<f64>, Failure> {
    let Some(path) = &a.losses_file else {
        return Ok(a.losses.clone());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse_f64(t).map_err(|e| usage("losses-file", e)))
        .collect()
}

fn print_solution(kind: &str, sol: &InnerSolution) {
    println!("kind={kind}");
    println!("value={}", sol.value);
    match sol.dual {
        DualVariables::Chi2 { eta, lambda } => {
            println!("dual.eta={eta}");
            println!("dual.lambda={lambda}");
        }
        DualVariables::KlTilt { log_normalizer, soft_max } => {
            println!("dual.log_normalizer={log_normalizer}");
            println!("dual.soft_max={soft_max}");
        }
        DualVariables::Mixture {
            step,
            threshold,
            lambda,
            interior,
        } => {
            println!("dual.step={step}");
            println!("dual.threshold={threshold}");
            println!("dual.lambda={lambda}");
            println!("dual.interior={interior}");
        }
        DualVariables::Reference => println!("dual=reference"),
    }
    println!("weights={}", list(sol.weights.as_slice()));
}

fn cmd_solve(a: &SolveArgs) -> Result<(), Failure> {
    let losses = read_losses(a)?;
    if losses.is_empty() {
        return Err(usage("losses", "need at least one loss"));
    }
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| usage(flag, format!("required for --kind {:?}", a.kind).to_lowercase()));
    match a.kind {
        KindArg::Chi2 => {
            let rho = need(a.rho, "rho")?;
            print_solution("chi2", &chi2_dual_solve(&losses, rho)?);
        }
        KindArg::Kl => {
            let tau = need(a.tau, "tau")?;
            print_solution("kl", &kl_tilt_weights(&losses, tau)?);
        }
        KindArg::Wasserstein => {
            let rho0 = need(a.rho0, "rho0")?;
            if a.grad_sqnorms.len() != losses.len() {
                return Err(usage("grad-sqnorms", format!("need one value per loss ({})", losses.len())));
            }
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let penalty = wasserstein_penalty(&a.grad_sqnorms, rho0)?;
            println!("kind=wasserstein");
            println!("value={}", mean + penalty);
            println!("mean={mean}");
            println!("penalty={penalty}");
        }
        KindArg::Mixture => {
            let rho = need(a.rho, "rho")?;
            let reference = if a.reference.is_empty() {
                ProbVector::uniform(losses.len())
            } else if a.reference.len() != losses.len() {
                return Err(usage("reference", format!("need one value per loss ({})", losses.len())));
            } else {
                ProbVector::new(a.reference.clone()).map_err(|e| usage("reference", e))?
            };
            print_solution("mixture", &mixture_chi2_argmax_with(&losses, &reference, rho, a.mode.mode())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Coverage(a) => cmd_coverage(a),
        Command::Rate(a) => cmd_rate(a),
        Command::Frontier(a) => cmd_frontier(a),
        Command::Align(a) => cmd_align(a),
        Command::Solve(a) => cmd_solve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => Cli::command().error(ErrorKind::ValueValidation, msg).exit(),
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
