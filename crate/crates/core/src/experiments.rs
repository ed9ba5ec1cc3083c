//! Experiment drivers. Each one fans independent replications out over a
//! bounded rayon pool, collects results in task order and aggregates them
//! sequentially, so tables do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;

use crate::calibration::{chi2_quantile_wh, pearson_statistic, RadiusSchedule};
use crate::error::{invalid, Error, Result};
use crate::inner::{mixture_chi2_argmax, AmbiguitySpec};
use crate::numerics::{affine_seed, fit_loglog, mean_stderr, norm, sub, LogLogFit, RngStream};
use crate::simulator::{mixture_reward, sample_dataset_with, MixtureEnv, Mixing, PreferenceEnv};
use crate::trainer::{
    train_preference, train_with_stats, GroupStats, PreferenceConfig, PreferenceLoss, TrainConfig,
};

/// Base of the affine seed `base + 17·rep + n` for coverage draws and training data.
pub const DATA_SEED_BASE: u64 = 1000;
/// Base of the affine seed for held-out evaluation samples.
pub const EVAL_SEED_BASE: u64 = 9999;

const COVERAGE_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

pub const DEFAULT_NS: [u64; 5] = [1000, 2000, 4000, 8000, 16000];
pub const DEFAULT_COVERAGE_REPS: usize = 120;
pub const DEFAULT_FRONTIER_REPS: usize = 400;
pub const DEFAULT_SEEDS: usize = 8;
pub const DEFAULT_FAST_C: f64 = 0.7;
pub const DEFAULT_ALPHAS: [f64; 3] = [0.5, 0.9, 0.95];

fn data_stream(rep: u64, n: u64) -> RngStream {
    RngStream::with_stream(affine_seed(DATA_SEED_BASE, rep, n), TRAIN_STREAM)
}

fn coverage_stream(rep: u64, n: u64) -> RngStream {
    RngStream::with_stream(affine_seed(DATA_SEED_BASE, rep, n), COVERAGE_STREAM)
}

fn eval_stream(rep: u64, n: u64) -> RngStream {
    RngStream::with_stream(affine_seed(EVAL_SEED_BASE, rep, n), EVAL_STREAM)
}

/// Runs `f` over `tasks` on at most `jobs` threads and returns results in task
/// order.
pub fn run_tasks<T, R, F>(jobs: usize, tasks: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync + Send,
{
    if jobs == 0 {
        return Err(invalid("jobs must be at least 1"));
    }
    if jobs == 1 {
        return tasks.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("could not start worker pool: {e}")))?;
    pool.install(|| tasks.into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub series: String,
    /// Sweep coordinate (n, c or α); empty for per-series summaries.
    pub x: Option<f64>,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub experiment: String,
    pub env_seed: u64,
    /// Schedule descriptors and resolved settings; written to the manifest.
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<TableRow>,
}

pub const CSV_HEADER: &str = "series,x,metric,mean,stderr,reps";

/// Round-trip decimal formatting (17 significant digits).
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl ExperimentTable {
    fn new(experiment: &str, env_seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            env_seed,
            metadata: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    fn push(&mut self, series: &str, x: Option<f64>, metric: &str, values: &[f64]) {
        let (mean, stderr) = mean_stderr(values);
        self.rows.push(TableRow {
            series: series.to_string(),
            x,
            metric: metric.to_string(),
            mean,
            stderr,
            reps: values.len(),
        });
    }

    /// `<experiment>_<envseed>.csv`
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.experiment, self.env_seed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let x = r.x.map(format_real).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.series,
                x,
                r.metric,
                format_real(r.mean),
                format_real(r.stderr),
                r.reps
            );
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }

    pub fn rows_for<'a>(&'a self, series: &'a str, metric: &'a str) -> impl Iterator<Item = &'a TableRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.series == series && r.metric == metric)
    }

    pub fn find(&self, series: &str, metric: &str, x: Option<f64>) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.series == series && r.metric == metric && r.x == x)
    }
}

/// Pearson statistic of a fresh multinomial draw of size `n` from p°.
fn coverage_statistic(env: &MixtureEnv, rep: u64, n: u64) -> Result<f64> {
    let counts = coverage_stream(rep, n).multinomial(n, env.mixture.as_slice());
    pearson_statistic(&counts, &env.mixture)
}

fn check_ns(ns: &[u64]) -> Result<()> {
    if ns.is_empty() {
        return Err(Error::Empty("sample sizes"));
    }
    if ns.contains(&0) {
        return Err(invalid("sample sizes must be positive"));
    }
    Ok(())
}

/// Default schedule set: calibrated at each α plus the fast `c n⁻²` schedule.
pub fn default_schedules(alphas: &[f64], fast_c: f64, groups: usize) -> Result<Vec<RadiusSchedule>> {
    let mut out = alphas
        .iter()
        .map(|&a| RadiusSchedule::calibrated(a, groups))
        .collect::<Result<Vec<_>>>()?;
    out.push(RadiusSchedule::fast(fast_c)?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub schedules: Vec<RadiusSchedule>,
    pub ns: Vec<u64>,
    pub reps: usize,
    pub jobs: usize,
}

/// Fraction of replications whose empirical mixture lies in the χ² ball of
/// radius ε_n around p°, i.e. `D_n ≤ n ε_n`.
pub fn coverage_curve(env: &MixtureEnv, config: &CoverageConfig) -> Result<ExperimentTable> {
    check_ns(&config.ns)?;
    if config.reps == 0 || config.schedules.is_empty() {
        return Err(invalid("coverage needs at least one replication and one schedule"));
    }
    let tasks: Vec<(u64, u64)> = config
        .ns
        .iter()
        .flat_map(|&n| (0..config.reps as u64).map(move |r| (n, r)))
        .collect();
    let stats = run_tasks(config.jobs, tasks, |(n, r)| coverage_statistic(env, r, n))?;

    let mut table = ExperimentTable::new("coverage", env.seed);
    table.meta("reps", config.reps);
    for s in &config.schedules {
        table.meta("schedule", s.label());
    }
    for s in &config.schedules {
        for (i, &n) in config.ns.iter().enumerate() {
            let limit = n as f64 * s.radius(n)?;
            let hits: Vec<f64> = stats[i * config.reps..(i + 1) * config.reps]
                .iter()
                .map(|&d| if d <= limit { 1.0 } else { 0.0 })
                .collect();
            table.push(&s.label(), Some(n as f64), "coverage", &hits);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub schedules: Vec<RadiusSchedule>,
    pub ns: Vec<u64>,
    pub seeds: usize,
    pub train: TrainConfig,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateOutcome {
    pub table: ExperimentTable,
    /// Log-log fit of mean ‖θ̂ − θ*‖₂ against n, per schedule label.
    pub fits: Vec<(String, LogLogFit)>,
}

/// ‖θ̂ − θ*‖₂ of robust training under each schedule, with log-log slopes.
pub fn rate_curve(env: &MixtureEnv, config: &RateConfig) -> Result<RateOutcome> {
    check_ns(&config.ns)?;
    if config.seeds == 0 || config.schedules.is_empty() {
        return Err(invalid("rate curve needs at least one seed and one schedule"));
    }
    let tasks: Vec<(u64, u64)> = config
        .ns
        .iter()
        .flat_map(|&n| (0..config.seeds as u64).map(move |s| (n, s)))
        .collect();
    let errors = run_tasks(config.jobs, tasks, |(n, s)| {
        let data = sample_dataset_with(env, n as usize, &mut data_stream(s, n))?;
        let stats = GroupStats::new(&data);
        config
            .schedules
            .iter()
            .map(|sch| {
                let (theta, _) = train_with_stats(&stats, sch.radius(n)?, &config.train, None)?;
                Ok(norm(&sub(&theta, &env.theta_star)))
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let mut table = ExperimentTable::new("rate", env.seed);
    table.meta("seeds", config.seeds);
    table.meta("steps", config.train.steps);
    table.meta("lr", config.train.lr);
    for s in &config.schedules {
        table.meta("schedule", s.label());
    }
    let mut fits = Vec::new();
    let xs: Vec<f64> = config.ns.iter().map(|&n| n as f64).collect();
    for (j, s) in config.schedules.iter().enumerate() {
        let label = s.label();
        let mut means = Vec::with_capacity(config.ns.len());
        for (i, &n) in config.ns.iter().enumerate() {
            let vals: Vec<f64> = errors[i * config.seeds..(i + 1) * config.seeds]
                .iter()
                .map(|e| e[j])
                .collect();
            table.push(&label, Some(n as f64), "param_error", &vals);
            means.push(table.rows.last().map(|r| r.mean).unwrap_or(f64::NAN));
        }
        if xs.len() >= 2 {
            let fit = fit_loglog(&xs, &means)?;
            table.rows.push(TableRow {
                series: label.clone(),
                x: None,
                metric: "slope".into(),
                mean: fit.slope,
                stderr: fit.slope_stderr,
                reps: xs.len(),
            });
            fits.push((label, fit));
        }
    }
    Ok(RateOutcome { table, fits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierConfig {
    pub n: u64,
    pub grid: usize,
    /// Largest c on the grid; `None` means `χ²_{K−1, 0.99}`.
    pub c_max: Option<f64>,
    pub reps_cover: usize,
    pub seeds: usize,
    pub eval_n: usize,
    /// Calibrated levels reported as extra points off the grid.
    pub calibrated_alphas: Vec<f64>,
    pub train: TrainConfig,
    pub jobs: usize,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            n: 16000,
            grid: 25,
            c_max: None,
            reps_cover: DEFAULT_FRONTIER_REPS,
            seeds: DEFAULT_SEEDS,
            eval_n: 25000,
            calibrated_alphas: vec![0.9, 0.95],
            train: TrainConfig::default(),
            jobs: 1,
        }
    }
}

/// Worst-case risk over the χ² ball of radius `c/n` around p° minus the
/// nominal risk, for held-out group losses `l`.
fn excess_risk(env: &MixtureEnv, l: &[f64], rho: f64) -> Result<f64> {
    let worst = mixture_chi2_argmax(l, &env.mixture, rho)?.value;
    Ok(worst - env.mixture.expect(l))
}

/// Risk–coverage frontier over `ε = c/n`. Each c gets its own trained models
/// (`excess_risk`); `excess_risk_common` evaluates every c at the ERM model of
/// the same seed, isolating the effect of the ball size.
pub fn frontier(env: &MixtureEnv, config: &FrontierConfig) -> Result<ExperimentTable> {
    if config.grid < 2 {
        return Err(invalid("frontier grid needs at least two points"));
    }
    if config.n == 0 || config.seeds == 0 || config.reps_cover == 0 || config.eval_n == 0 {
        return Err(invalid("frontier needs positive n, seeds, reps and eval size"));
    }
    let k = env.groups();
    let c_max = match config.c_max {
        Some(c) if c >= 0.0 && c.is_finite() => c,
        Some(c) => return Err(invalid(format!("c_max must be nonnegative, got {c}"))),
        None => chi2_quantile_wh(k as u32 - 1, 0.99)?,
    };
    let mut points: Vec<(String, f64)> = (0..config.grid)
        .map(|i| ("grid".to_string(), c_max * i as f64 / (config.grid - 1) as f64))
        .collect();
    for &a in &config.calibrated_alphas {
        let s = RadiusSchedule::calibrated(a, k)?;
        points.push((s.label(), chi2_quantile_wh(k as u32 - 1, a)?));
    }

    let n = config.n;
    let stats = run_tasks(config.jobs, (0..config.reps_cover as u64).collect(), |r| {
        coverage_statistic(env, r, n)
    })?;
    let prepared = run_tasks(config.jobs, (0..config.seeds as u64).collect(), |s| {
        let train = GroupStats::new(&sample_dataset_with(env, n as usize, &mut data_stream(s, n))?);
        let eval = GroupStats::new(&sample_dataset_with(env, config.eval_n, &mut eval_stream(s, n))?);
        let (erm, _) = train_with_stats(&train, 0.0, &config.train, None)?;
        let common = eval.losses(&erm);
        Ok((train, eval, common))
    })?;
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..config.seeds).map(move |s| (p, s)))
        .collect();
    let excess = run_tasks(config.jobs, tasks, |(p, s)| {
        let c = points[p].1;
        let rho = c / n as f64;
        let (train, eval, common) = &prepared[s];
        let (theta, _) = train_with_stats(train, rho, &config.train, None)?;
        Ok((excess_risk(env, &eval.losses(&theta), rho)?, excess_risk(env, common, rho)?))
    })?;

    let mut table = ExperimentTable::new("frontier", env.seed);
    table.meta("n", n);
    table.meta("grid", config.grid);
    table.meta("c_max", format_real(c_max));
    table.meta("reps_cover", config.reps_cover);
    table.meta("seeds", config.seeds);
    table.meta("eval_n", config.eval_n);
    for (p, (series, c)) in points.iter().enumerate() {
        let hits: Vec<f64> = stats.iter().map(|&d| if d <= *c { 1.0 } else { 0.0 }).collect();
        let block = &excess[p * config.seeds..(p + 1) * config.seeds];
        let own: Vec<f64> = block.iter().map(|e| e.0).collect();
        let common: Vec<f64> = block.iter().map(|e| e.1).collect();
        table.push(series, Some(*c), "coverage", &hits);
        table.push(series, Some(*c), "excess_risk", &own);
        table.push(series, Some(*c), "excess_risk_common", &common);
    }
    Ok(table)
}

/// One training recipe in the alignment sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignMethod {
    pub loss: PreferenceLoss,
    pub spec: Option<AmbiguitySpec>,
}

impl AlignMethod {
    pub fn label(&self) -> String {
        match self.spec {
            None => self.loss.name().to_string(),
            Some(s) => format!("{}_{}", self.loss.name(), s.name()),
        }
    }
}

pub const DEFAULT_REBEL_ETA: f64 = 1.0;
pub const DEFAULT_DPO_BETA: f64 = 1.0;
pub const DEFAULT_CHI2_RHO: f64 = 0.5;
pub const DEFAULT_KL_TAU: f64 = 1.0;
pub const DEFAULT_WASSERSTEIN_RHO0: f64 = 0.1;

/// `{dpo, rebel} × {none, wasserstein, kl, chi2}` at the default radii.
pub fn default_methods() -> Vec<AlignMethod> {
    let specs = [
        None,
        Some(AmbiguitySpec::Wasserstein {
            rho0: DEFAULT_WASSERSTEIN_RHO0,
        }),
        Some(AmbiguitySpec::Kl { tau: DEFAULT_KL_TAU }),
        Some(AmbiguitySpec::Chi2 { rho: DEFAULT_CHI2_RHO }),
    ];
    let losses = [
        PreferenceLoss::Dpo { beta: DEFAULT_DPO_BETA },
        PreferenceLoss::Rebel { eta: DEFAULT_REBEL_ETA },
    ];
    losses
        .iter()
        .flat_map(|&loss| specs.iter().map(move |&spec| AlignMethod { loss, spec }))
        .collect()
}

pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub methods: Vec<AlignMethod>,
    pub alphas: Vec<f64>,
    pub train: PreferenceConfig,
    pub eval_prompts: usize,
    pub jobs: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            alphas: default_alpha_grid(),
            train: PreferenceConfig::default(),
            eval_prompts: 2000,
            jobs: 1,
        }
    }
}

/// Trains every method on the same batch stream at α₀ and evaluates the
/// resulting policies across the α grid on one shared set of prompts.
///
/// Rows per method: `reward` at each α, `train_reward` at α₀ on a second
/// prompt set drawn from the training distribution, and `worst_reward`, the
/// minimum over α (its stderr is the one at the minimizing α).
pub fn alignment_sweep(env: &PreferenceEnv, config: &AlignConfig) -> Result<ExperimentTable> {
    if config.methods.is_empty() || config.alphas.is_empty() || config.eval_prompts == 0 {
        return Err(invalid("alignment sweep needs methods, an alpha grid and evaluation prompts"));
    }
    if config.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(invalid("alpha grid must lie in [0, 1]"));
    }
    let mixing: Mixing = config.train.mixing;
    let eval_seed = affine_seed(EVAL_SEED_BASE, env.seed, config.eval_prompts as u64);
    let prompts = env.draw_prompts(config.eval_prompts, eval_seed);
    let train_prompts = env.draw_prompts(config.eval_prompts, eval_seed.wrapping_add(1));
    let results = run_tasks(config.jobs, config.methods.clone(), |m| {
        let run = train_preference(env, m.loss, m.spec, &config.train)?;
        let curve = mixture_reward(env, &run.theta, &prompts, &config.alphas, mixing)?;
        let at_train = mixture_reward(env, &run.theta, &train_prompts, &[config.train.alpha0], mixing)?;
        Ok((curve, at_train[0]))
    })?;

    let mut table = ExperimentTable::new("align", env.seed);
    table.meta("alpha0", config.train.alpha0);
    table.meta("mixing", mixing.name());
    table.meta("epochs", config.train.epochs);
    table.meta("batch", config.train.batch);
    table.meta("lr", config.train.lr);
    table.meta("eval_prompts", config.eval_prompts);
    for m in &config.methods {
        table.meta("method", m.label());
    }
    let reps = config.eval_prompts;
    for (m, (curve, at_train)) in config.methods.iter().zip(&results) {
        let label = m.label();
        for est in curve {
            table.rows.push(TableRow {
                series: label.clone(),
                x: Some(est.alpha),
                metric: "reward".into(),
                mean: est.mean,
                stderr: est.stderr,
                reps,
            });
        }
        table.rows.push(TableRow {
            series: label.clone(),
            x: Some(at_train.alpha),
            metric: "train_reward".into(),
            mean: at_train.mean,
            stderr: at_train.stderr,
            reps,
        });
        let worst = curve
            .iter()
            .min_by(|a, b| a.mean.total_cmp(&b.mean))
            .expect("alpha grid is nonempty");
        table.rows.push(TableRow {
            series: label,
            x: None,
            metric: "worst_reward".into(),
            mean: worst.mean,
            stderr: worst.stderr,
            reps,
        });
    }
    Ok(table)
}
