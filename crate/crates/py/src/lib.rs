//! Python bindings for the robust solvers, calibration, simulators and
//! experiment drivers. Experiment tables come back as CSV text.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rp::experiments::{
    self, AlignConfig, AlignMethod, CoverageConfig, FrontierConfig, RateConfig, DEFAULT_ALPHAS, DEFAULT_COVERAGE_REPS,
    DEFAULT_FAST_C, DEFAULT_FRONTIER_REPS, DEFAULT_NS, DEFAULT_SEEDS,
};
use rp::{DualVariables, MixtureMode, PreferenceConfig, PreferenceLoss, ProbVector, TrainConfig};

type Samples = (Vec<usize>, Vec<Vec<f64>>, Vec<f64>);
type SlopeFits = Vec<(String, (f64, f64))>;

fn py_err(e: rp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<MixtureMode> {
    match mode {
        "kkt" => Ok(MixtureMode::Kkt),
        "projection" => Ok(MixtureMode::Projection),
        "clip" => Ok(MixtureMode::ClipRenormalize),
        other => Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    }
}

/// Worst-case distribution, its value and the dual certificate.
#[pyclass(frozen, get_all)]
struct InnerSolution {
    value: f64,
    weights: Vec<f64>,
    /// One of `chi2`, `kl`, `mixture`, `reference`.
    dual_kind: String,
    /// Named dual variables, e.g. `eta` and `lambda` for χ².
    dual: Vec<(String, f64)>,
}

#[pymethods]
impl InnerSolution {
    fn __repr__(&self) -> String {
        format!("InnerSolution(value={}, dual_kind='{}', weights={:?})", self.value, self.dual_kind, self.weights)
    }
}

impl From<rp::InnerSolution> for InnerSolution {
    fn from(s: rp::InnerSolution) -> Self {
        let (kind, dual) = match s.dual {
            DualVariables::Chi2 { eta, lambda } => ("chi2", vec![("eta", eta), ("lambda", lambda)]),
            DualVariables::KlTilt {
                log_normalizer,
                soft_max,
            } => ("kl", vec![("log_normalizer", log_normalizer), ("soft_max", soft_max)]),
            DualVariables::Mixture {
                step,
                threshold,
                lambda,
                interior,
            } => (
                "mixture",
                vec![
                    ("step", step),
                    ("threshold", threshold),
                    ("lambda", lambda),
                    ("interior", if interior { 1.0 } else { 0.0 }),
                ],
            ),
            DualVariables::Reference => ("reference", vec![]),
        };
        Self {
            value: s.value,
            weights: s.weights.into_vec(),
            dual_kind: kind.to_string(),
            dual: dual.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// Sample-level χ² worst case `sup Σ wᵢℓᵢ` over `(1/n) Σ ½(n wᵢ − 1)² ≤ ρ`.
#[pyfunction]
fn chi2_dual_solve(losses: Vec<f64>, rho: f64) -> PyResult<InnerSolution> {
    rp::chi2_dual_solve(&losses, rho).map(Into::into).map_err(py_err)
}

/// Exponential tilting weights at temperature τ.
#[pyfunction]
fn kl_tilt_weights(losses: Vec<f64>, tau: f64) -> PyResult<InnerSolution> {
    rp::kl_tilt_weights(&losses, tau).map(Into::into).map_err(py_err)
}

/// Group-level χ² worst case around `reference` (uniform when omitted).
#[pyfunction]
#[pyo3(signature = (losses, rho, reference=None, mode="kkt"))]
fn mixture_chi2_argmax(losses: Vec<f64>, rho: f64, reference: Option<Vec<f64>>, mode: &str) -> PyResult<InnerSolution> {
    let p = match reference {
        Some(p) => ProbVector::new(p).map_err(py_err)?,
        None => ProbVector::uniform(losses.len()),
    };
    rp::mixture_chi2_argmax_with(&losses, &p, rho, parse_mode(mode)?)
        .map(Into::into)
        .map_err(py_err)
}

/// `ρ₀ √(mean of squared input-gradient norms)`.
#[pyfunction]
fn wasserstein_penalty(grad_sqnorms: Vec<f64>, rho0: f64) -> PyResult<f64> {
    rp::wasserstein_penalty(&grad_sqnorms, rho0).map_err(py_err)
}

#[pyfunction]
fn chi2_quantile(dof: u32, alpha: f64) -> PyResult<f64> {
    rp::chi2_quantile_wh(dof, alpha).map_err(py_err)
}

#[pyfunction]
fn inverse_normal(p: f64) -> PyResult<f64> {
    rp::inverse_normal(p).map_err(py_err)
}

#[pyfunction]
fn pearson_statistic(counts: Vec<u64>, reference: Vec<f64>) -> PyResult<f64> {
    let p = ProbVector::new(reference).map_err(py_err)?;
    rp::pearson_statistic(&counts, &p).map_err(py_err)
}

/// Least-squares fit of `log y` on `log x`: `(slope, intercept, slope_stderr)`.
#[pyfunction]
fn fit_loglog(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = rp::fit_loglog(&xs, &ys).map_err(py_err)?;
    Ok((f.slope, f.intercept, f.slope_stderr))
}

/// `(K_g, K_ℓ, Lipschitz)` for the REBEL loss with bound B, reward scale F and η.
#[pyfunction]
fn bound_constants(b: f64, f: f64, eta: f64) -> PyResult<(f64, f64, f64)> {
    let c = rp::bound_constants(b, f, eta).map_err(py_err)?;
    Ok((c.k_g, c.k_l, c.lipschitz))
}

/// Radius rule `n ↦ ε_n`.
#[pyclass(frozen)]
struct RadiusSchedule(rp::RadiusSchedule);

#[pymethods]
impl RadiusSchedule {
    #[staticmethod]
    #[pyo3(signature = (alpha, groups=15))]
    fn calibrated(alpha: f64, groups: usize) -> PyResult<Self> {
        rp::RadiusSchedule::calibrated(alpha, groups).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn fast(c: f64) -> PyResult<Self> {
        rp::RadiusSchedule::fast(c).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn per_sample(c: f64) -> PyResult<Self> {
        rp::RadiusSchedule::per_sample(c).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn zero() -> Self {
        Self(rp::RadiusSchedule::Zero)
    }

    fn radius(&self, n: u64) -> PyResult<f64> {
        self.0.radius(n).map_err(py_err)
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    fn __repr__(&self) -> String {
        format!("RadiusSchedule('{}')", self.0.label())
    }
}

/// Gaussian-mixture regression environment.
#[pyclass(frozen)]
struct MixtureEnv(rp::MixtureEnv);

#[pymethods]
impl MixtureEnv {
    #[new]
    #[pyo3(signature = (seed=0, groups=15, dim=12, rank=3))]
    fn new(seed: u64, groups: usize, dim: usize, rank: usize) -> PyResult<Self> {
        rp::make_env(seed, groups, dim, rank).map(Self).map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn groups(&self) -> usize {
        self.0.groups()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn theta_star(&self) -> Vec<f64> {
        self.0.theta_star.clone()
    }

    #[getter]
    fn mixture(&self) -> Vec<f64> {
        self.0.mixture.as_slice().to_vec()
    }

    /// `(groups, features, targets)` for `n` fresh samples.
    fn sample(&self, n: usize, seed: u64) -> PyResult<Samples> {
        let data = rp::sample_dataset(&self.0, n, seed).map_err(py_err)?;
        let groups = (0..data.len()).map(|i| data.group(i)).collect();
        let features = (0..data.len()).map(|i| data.feature(i).to_vec()).collect();
        let targets = (0..data.len()).map(|i| data.target(i)).collect();
        Ok((groups, features, targets))
    }

    /// Trains the group-robust regressor at radius ρ on `n` samples.
    #[pyo3(signature = (n, rho, seed, steps=500, lr=0.12))]
    fn train(&self, py: Python<'_>, n: usize, rho: f64, seed: u64, steps: usize, lr: f64) -> PyResult<Vec<f64>> {
        let data = rp::sample_dataset(&self.0, n, seed).map_err(py_err)?;
        let cfg = TrainConfig {
            steps,
            lr,
            ..TrainConfig::default()
        };
        py.detach(|| rp::train_radius_coverage(&data, rho, &cfg)).map_err(py_err)
    }
}

/// Two-objective preference environment with Bradley–Terry labels.
#[pyclass(frozen)]
struct PreferenceEnv(rp::PreferenceEnv);

#[pymethods]
impl PreferenceEnv {
    #[new]
    #[pyo3(signature = (seed=0, dim=8, actions=8, reward_scale=1.0))]
    fn new(seed: u64, dim: usize, actions: usize, reward_scale: f64) -> PyResult<Self> {
        rp::make_preference_env(seed, dim, actions, reward_scale)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn omega(&self) -> (Vec<f64>, Vec<f64>) {
        (self.0.omega[0].clone(), self.0.omega[1].clone())
    }
}

fn schedules(env: &rp::MixtureEnv, alphas: &[f64], fast_c: f64) -> PyResult<Vec<rp::RadiusSchedule>> {
    experiments::default_schedules(alphas, fast_c, env.groups()).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (env, alphas=DEFAULT_ALPHAS.to_vec(), fast_c=DEFAULT_FAST_C, ns=DEFAULT_NS.to_vec(), reps=DEFAULT_COVERAGE_REPS, jobs=1))]
fn coverage_curve(
    py: Python<'_>,
    env: &MixtureEnv,
    alphas: Vec<f64>,
    fast_c: f64,
    ns: Vec<u64>,
    reps: usize,
    jobs: usize,
) -> PyResult<String> {
    let cfg = CoverageConfig {
        schedules: schedules(&env.0, &alphas, fast_c)?,
        ns,
        reps,
        jobs,
    };
    py.detach(|| experiments::coverage_curve(&env.0, &cfg))
        .map(|t| t.to_csv())
        .map_err(py_err)
}

/// Returns the CSV and `{label: (slope, slope_stderr)}`.
#[pyfunction]
#[pyo3(signature = (env, alphas=DEFAULT_ALPHAS.to_vec(), fast_c=DEFAULT_FAST_C, ns=DEFAULT_NS.to_vec(), seeds=DEFAULT_SEEDS, steps=500, lr=0.12, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn rate_curve(
    py: Python<'_>,
    env: &MixtureEnv,
    alphas: Vec<f64>,
    fast_c: f64,
    ns: Vec<u64>,
    seeds: usize,
    steps: usize,
    lr: f64,
    jobs: usize,
) -> PyResult<(String, SlopeFits)> {
    let mut s = schedules(&env.0, &alphas, fast_c)?;
    s.push(rp::RadiusSchedule::Zero);
    let cfg = RateConfig {
        schedules: s,
        ns,
        seeds,
        train: TrainConfig {
            steps,
            lr,
            ..TrainConfig::default()
        },
        jobs,
    };
    let out = py.detach(|| experiments::rate_curve(&env.0, &cfg)).map_err(py_err)?;
    let fits = out
        .fits
        .into_iter()
        .map(|(l, f)| (l, (f.slope, f.slope_stderr)))
        .collect();
    Ok((out.table.to_csv(), fits))
}

#[pyfunction]
#[pyo3(signature = (env, n=16000, grid=25, reps=DEFAULT_FRONTIER_REPS, seeds=DEFAULT_SEEDS, eval_n=25000, steps=500, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn frontier(
    py: Python<'_>,
    env: &MixtureEnv,
    n: u64,
    grid: usize,
    reps: usize,
    seeds: usize,
    eval_n: usize,
    steps: usize,
    jobs: usize,
) -> PyResult<String> {
    let cfg = FrontierConfig {
        n,
        grid,
        reps_cover: reps,
        seeds,
        eval_n,
        train: TrainConfig {
            steps,
            ..TrainConfig::default()
        },
        jobs,
        ..FrontierConfig::default()
    };
    py.detach(|| experiments::frontier(&env.0, &cfg))
        .map(|t| t.to_csv())
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (env, epochs=40, lr=1e-2, alpha0=0.1, eval_prompts=2000, methods=None, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn alignment_sweep(
    py: Python<'_>,
    env: &PreferenceEnv,
    epochs: usize,
    lr: f64,
    alpha0: f64,
    eval_prompts: usize,
    methods: Option<Vec<String>>,
    jobs: usize,
) -> PyResult<String> {
    let all = experiments::default_methods();
    let chosen: Vec<AlignMethod> = match methods {
        None => all,
        Some(names) => names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|m| &m.label() == n)
                    .copied()
                    .ok_or_else(|| PyValueError::new_err(format!("unknown method '{n}'")))
            })
            .collect::<PyResult<_>>()?,
    };
    let cfg = AlignConfig {
        methods: chosen,
        train: PreferenceConfig {
            epochs,
            lr,
            alpha0,
            ..PreferenceConfig::default()
        },
        eval_prompts,
        jobs,
        ..AlignConfig::default()
    };
    py.detach(|| experiments::alignment_sweep(&env.0, &cfg))
        .map(|t| t.to_csv())
        .map_err(py_err)
}

/// Trains one preference policy; returns the final θ.
#[pyfunction]
#[pyo3(signature = (env, loss="dpo", scale=1.0, divergence=None, radius=0.0, epochs=40, lr=1e-2, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_preference(
    py: Python<'_>,
    env: &PreferenceEnv,
    loss: &str,
    scale: f64,
    divergence: Option<&str>,
    radius: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let loss = match loss {
        "dpo" => PreferenceLoss::Dpo { beta: scale },
        "rebel" => PreferenceLoss::Rebel { eta: scale },
        other => return Err(PyValueError::new_err(format!("unknown loss '{other}'"))),
    };
    let spec = match divergence {
        None => None,
        Some("chi2") => Some(rp::AmbiguitySpec::Chi2 { rho: radius }),
        Some("kl") => Some(rp::AmbiguitySpec::Kl { tau: radius }),
        Some("wasserstein") => Some(rp::AmbiguitySpec::Wasserstein { rho0: radius }),
        Some(other) => return Err(PyValueError::new_err(format!("unknown divergence '{other}'"))),
    };
    let cfg = PreferenceConfig {
        epochs,
        lr,
        seed,
        ..PreferenceConfig::default()
    };
    py.detach(|| rp::train_preference(&env.0, loss, spec, &cfg))
        .map(|r| r.theta)
        .map_err(py_err)
}

#[pymodule]
fn robust_pref(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<InnerSolution>()?;
    m.add_class::<RadiusSchedule>()?;
    m.add_class::<MixtureEnv>()?;
    m.add_class::<PreferenceEnv>()?;
    m.add_function(wrap_pyfunction!(chi2_dual_solve, m)?)?;
    m.add_function(wrap_pyfunction!(kl_tilt_weights, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_chi2_argmax, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_normal, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_loglog, m)?)?;
    m.add_function(wrap_pyfunction!(bound_constants, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_curve, m)?)?;
    m.add_function(wrap_pyfunction!(rate_curve, m)?)?;
    m.add_function(wrap_pyfunction!(frontier, m)?)?;
    m.add_function(wrap_pyfunction!(alignment_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(train_preference, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
