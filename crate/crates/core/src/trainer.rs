//! Robust gradient assembly and the two training loops: full-batch gradient
//! descent on the grouped regression problem, and fresh-batch preference
//! training with REBEL or DPO losses.
//!
//! Inner solutions (mixture weights, tilt weights, χ² weights) are held fixed
//! while differentiating, so every robust gradient is a weighted sum of
//! per-sample (or per-group) gradients.

use crate::error::{invalid, Error, Result};
use crate::inner::{
    chi2_dual_solve, kl_tilt_weights, mixture_chi2_argmax_with, wasserstein_penalty, AmbiguitySpec,
    DualVariables, InnerSolution, MixtureMode,
};
use crate::losses::{
    dpo_grad, dpo_loss, dpo_margin, group_gradients, group_losses, rebel_grad, rebel_loss,
    rebel_residual, sigmoid, PreferenceSample,
};
use crate::numerics::{axpy, dot, norm, project_ball, sub, ProbVector, RngStream};
use crate::simulator::{sample_preferences, GroupedDataset, Mixing, PreferenceEnv};

pub const DEFAULT_STEPS: usize = 500;
pub const DEFAULT_LR: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Optional bound B; θ is projected onto `‖θ‖₂ ≤ B` after every step.
    pub bound: Option<f64>,
    pub mode: MixtureMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            lr: DEFAULT_LR,
            bound: None,
            mode: MixtureMode::Kkt,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(b) = self.bound {
            if !(b > 0.0) {
                return Err(invalid(format!("parameter bound must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

/// Per-group sufficient statistics `Σ vvᵀ`, `Σ v t`, `Σ t²`, so that group
/// losses and gradients cost O(K d²) per step instead of O(n d).
#[derive(Debug, Clone)]
pub struct GroupStats {
    dim: usize,
    counts: Vec<u64>,
    gram: Vec<Vec<f64>>,
    cross: Vec<Vec<f64>>,
    target_sq: Vec<f64>,
}

impl GroupStats {
    pub fn new(dataset: &GroupedDataset) -> Self {
        let d = dataset.dim();
        let k = dataset.groups();
        let mut gram = vec![vec![0.0; d * d]; k];
        let mut cross = vec![vec![0.0; d]; k];
        let mut target_sq = vec![0.0; k];
        for i in 0..dataset.len() {
            let g = dataset.group(i);
            let v = dataset.feature(i);
            let t = dataset.target(i);
            let gm = &mut gram[g];
            for a in 0..d {
                for b in a..d {
                    gm[a * d + b] += v[a] * v[b];
                }
            }
            axpy(t, v, &mut cross[g]);
            target_sq[g] += t * t;
        }
        for gm in gram.iter_mut() {
            for a in 0..d {
                for b in 0..a {
                    gm[a * d + b] = gm[b * d + a];
                }
            }
        }
        Self {
            dim: d,
            counts: dataset.counts().to_vec(),
            gram,
            cross,
            target_sq,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Group losses only.
    pub fn losses(&self, theta: &[f64]) -> Vec<f64> {
        self.losses_and_gradients(theta).0
    }

    /// Group losses and gradients at θ; empty groups report zeros.
    pub fn losses_and_gradients(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let mut losses = Vec::with_capacity(self.counts.len());
        let mut grads = Vec::with_capacity(self.counts.len());
        for (k, &count) in self.counts.iter().enumerate() {
            if count == 0 {
                losses.push(0.0);
                grads.push(vec![0.0; d]);
                continue;
            }
            let c = count as f64;
            let gm = &self.gram[k];
            // G θ − b
            let resid: Vec<f64> = (0..d)
                .map(|a| dot(&gm[a * d..(a + 1) * d], theta) - self.cross[k][a])
                .collect();
            let quad = dot(theta, &resid) - dot(theta, &self.cross[k]) + self.target_sq[k];
            losses.push((quad / c).max(0.0));
            grads.push(resid.iter().map(|r| 2.0 * r / c).collect());
        }
        (losses, grads)
    }
}

/// Robust group gradient and the inner solution it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustGradient {
    pub gradient: Vec<f64>,
    /// `Σ q*_k L_k(θ)`.
    pub objective: f64,
    /// Worst-case mixture over all K groups (zero on empty groups).
    pub weights: Vec<f64>,
    pub dual: DualVariables,
}

fn assemble_group_gradient(
    losses: &[f64],
    grads: &[Vec<f64>],
    counts: &[u64],
    rho: f64,
    mode: MixtureMode,
) -> Result<RobustGradient> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    // Empty groups are inactive: their reference mass is zero and they keep it.
    let active: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    let mut weights = vec![0.0; counts.len()];
    let dual = if active.len() >= 2 {
        let p_ref = ProbVector::from_weights(active.iter().map(|&k| counts[k] as f64).collect())?;
        let a: Vec<f64> = active.iter().map(|&k| losses[k]).collect();
        let InnerSolution { weights: q, dual, .. } = mixture_chi2_argmax_with(&a, &p_ref, rho, mode)?;
        for (&k, &qk) in active.iter().zip(q.as_slice()) {
            weights[k] = qk;
        }
        dual
    } else {
        weights[active[0]] = 1.0;
        DualVariables::Reference
    };
    let d = grads[0].len();
    let mut gradient = vec![0.0; d];
    let mut objective = 0.0;
    for &k in &active {
        axpy(weights[k], &grads[k], &mut gradient);
        objective += weights[k] * losses[k];
    }
    Ok(RobustGradient {
        gradient,
        objective,
        weights,
        dual,
    })
}

/// Gradient of `max_{q ∈ B_χ²(p̂, ρ)} Σ q_k L_k(θ)` with the maximizer held
/// fixed, computed directly from the samples.
pub fn robust_group_gradient(theta: &[f64], dataset: &GroupedDataset, rho: f64) -> Result<RobustGradient> {
    robust_group_gradient_with(theta, dataset, rho, MixtureMode::Kkt)
}

pub fn robust_group_gradient_with(
    theta: &[f64],
    dataset: &GroupedDataset,
    rho: f64,
    mode: MixtureMode,
) -> Result<RobustGradient> {
    if theta.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: theta.len(),
        });
    }
    let losses = group_losses(dataset, theta);
    let grads = group_gradients(dataset, theta);
    assemble_group_gradient(&losses, &grads, dataset.counts(), rho, mode)
}

/// One logged optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub objective: f64,
    /// `‖θ − θ*‖₂` when θ* was supplied.
    pub error: Option<f64>,
    /// Active dual scalar: the mixture step `t` (0 when the reference was returned).
    pub dual: f64,
}

/// Full-batch robust gradient descent from θ₀ = 0.
pub fn train_radius_coverage(dataset: &GroupedDataset, rho: f64, config: &TrainConfig) -> Result<Vec<f64>> {
    train_radius_coverage_logged(dataset, rho, config, None).map(|(theta, _)| theta)
}

pub fn train_radius_coverage_logged(
    dataset: &GroupedDataset,
    rho: f64,
    config: &TrainConfig,
    theta_star: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<StepLog>)> {
    train_with_stats(&GroupStats::new(dataset), rho, config, theta_star)
}

/// Training loop on precomputed statistics, so several radii can share one
/// pass over the data.
pub fn train_with_stats(
    stats: &GroupStats,
    rho: f64,
    config: &TrainConfig,
    theta_star: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<StepLog>)> {
    config.validate()?;
    AmbiguitySpec::MixtureChi2 { rho }.validate()?;
    if let Some(star) = theta_star {
        if star.len() != stats.dim {
            return Err(Error::DimensionMismatch {
                expected: stats.dim,
                got: star.len(),
            });
        }
    }
    let mut theta = vec![0.0; stats.dim];
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (losses, grads) = stats.losses_and_gradients(&theta);
        let rg = assemble_group_gradient(&losses, &grads, stats.counts(), rho, config.mode)?;
        axpy(-config.lr, &rg.gradient, &mut theta);
        if let Some(b) = config.bound {
            project_ball(&mut theta, b);
        }
        let dual = match rg.dual {
            DualVariables::Mixture { step, .. } => step,
            _ => 0.0,
        };
        log.push(StepLog {
            step: step + 1,
            objective: rg.objective,
            error: theta_star.map(|star| norm(&sub(&theta, star))),
            dual,
        });
    }
    Ok((theta, log))
}

/// Pointwise preference loss used by the preference loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreferenceLoss {
    /// Squared relative-reward regression with step size η, anchored at the
    /// iterate that starts each batch.
    Rebel { eta: f64 },
    /// Logistic loss with scale β against the fixed reference θ_ref = 0.
    Dpo { beta: f64 },
}

impl PreferenceLoss {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Rebel { .. } => "rebel",
            Self::Dpo { .. } => "dpo",
        }
    }

    pub fn value(&self, sample: &PreferenceSample, theta: &[f64], anchor: &[f64]) -> Result<f64> {
        match *self {
            Self::Rebel { eta } => rebel_loss(sample, theta, anchor, eta),
            Self::Dpo { beta } => dpo_loss(sample, theta, anchor, beta),
        }
    }

    pub fn gradient(&self, sample: &PreferenceSample, theta: &[f64], anchor: &[f64]) -> Vec<f64> {
        match *self {
            Self::Rebel { eta } => rebel_grad(sample, theta, anchor, eta),
            Self::Dpo { beta } => dpo_grad(sample, theta, anchor, beta),
        }
    }

    /// `‖∇_z ℓ(z; θ)‖²` with respect to the sample's inputs, and its gradient
    /// in θ. REBEL inputs are `(Δψ, Δr)`; DPO inputs are `Δψ`.
    pub fn input_grad_sqnorm(&self, sample: &PreferenceSample, theta: &[f64], anchor: &[f64]) -> (f64, Vec<f64>) {
        let delta: Vec<f64> = theta.iter().zip(anchor).map(|(a, b)| a - b).collect();
        let dsq = dot(&delta, &delta);
        match *self {
            Self::Rebel { eta } => {
                let g = rebel_residual(sample, theta, anchor, eta);
                let scale = dsq / (eta * eta) + 1.0;
                let value = 4.0 * g * g * scale;
                let grad = sample
                    .delta_psi
                    .iter()
                    .zip(&delta)
                    .map(|(dp, dl)| 8.0 * g * dp / eta * scale + 8.0 * g * g * dl / (eta * eta))
                    .collect();
                (value, grad)
            }
            Self::Dpo { beta } => {
                let s = sigmoid(beta * dpo_margin(sample, theta, anchor));
                let e = sample.label() - s;
                let de = -beta * s * (1.0 - s);
                let value = beta * beta * e * e * dsq;
                let grad = sample
                    .delta_psi
                    .iter()
                    .zip(&delta)
                    .map(|(dp, dl)| beta * beta * (2.0 * e * de * dp * dsq + 2.0 * e * e * dl))
                    .collect();
                (value, grad)
            }
        }
    }
}

/// Robust batch objective and its (Danskin) gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective {
    /// Robust objective whose gradient is `gradient`: the χ² dual value,
    /// `τ ln mean exp(ℓ/τ)`, or the penalized mean.
    pub value: f64,
    /// Unweighted mean of the per-sample losses.
    pub mean_loss: f64,
    pub gradient: Vec<f64>,
    pub inner: Option<InnerSolution>,
}

pub fn batch_objective(
    samples: &[PreferenceSample],
    theta: &[f64],
    anchor: &[f64],
    loss: PreferenceLoss,
    spec: Option<AmbiguitySpec>,
) -> Result<BatchObjective> {
    if samples.is_empty() {
        return Err(Error::Empty("preference batch"));
    }
    let n = samples.len() as f64;
    let losses: Vec<f64> = samples
        .iter()
        .map(|s| loss.value(s, theta, anchor))
        .collect::<Result<_>>()?;
    let grads: Vec<Vec<f64>> = samples.iter().map(|s| loss.gradient(s, theta, anchor)).collect();
    let mean_loss = losses.iter().sum::<f64>() / n;
    let weighted = |w: &[f64]| {
        let mut g = vec![0.0; theta.len()];
        for (wi, gi) in w.iter().zip(&grads) {
            axpy(*wi, gi, &mut g);
        }
        g
    };
    let uniform = vec![1.0 / n; samples.len()];
    Ok(match spec {
        None => BatchObjective {
            value: mean_loss,
            mean_loss,
            gradient: weighted(&uniform),
            inner: None,
        },
        Some(AmbiguitySpec::Chi2 { rho }) => {
            let sol = chi2_dual_solve(&losses, rho)?;
            BatchObjective {
                value: sol.value,
                mean_loss,
                gradient: weighted(sol.weights.as_slice()),
                inner: Some(sol),
            }
        }
        Some(AmbiguitySpec::Kl { tau }) => {
            let sol = kl_tilt_weights(&losses, tau)?;
            let value = match sol.dual {
                DualVariables::KlTilt { soft_max, .. } => soft_max,
                _ => sol.value,
            };
            BatchObjective {
                value,
                mean_loss,
                gradient: weighted(sol.weights.as_slice()),
                inner: Some(sol),
            }
        }
        Some(AmbiguitySpec::Wasserstein { rho0 }) => {
            let pairs: Vec<(f64, Vec<f64>)> = samples
                .iter()
                .map(|s| loss.input_grad_sqnorm(s, theta, anchor))
                .collect();
            let sq: Vec<f64> = pairs.iter().map(|(v, _)| *v).collect();
            let penalty = wasserstein_penalty(&sq, rho0)?;
            let mut gradient = weighted(&uniform);
            let mean_sq = sq.iter().sum::<f64>() / n;
            if mean_sq > 0.0 && rho0 > 0.0 {
                let coef = rho0 / (2.0 * mean_sq.sqrt() * n);
                for (_, g) in &pairs {
                    axpy(coef, g, &mut gradient);
                }
            }
            BatchObjective {
                value: mean_loss + penalty,
                mean_loss,
                gradient,
                inner: None,
            }
        }
        Some(AmbiguitySpec::MixtureChi2 { .. }) => {
            return Err(invalid(
                "mixture chi2 acts on group losses; use robust_group_gradient",
            ))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Gradient steps taken on each fresh batch.
    pub steps_per_batch: usize,
    pub bound: f64,
    pub alpha0: f64,
    pub mixing: Mixing,
    pub seed: u64,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 64,
            lr: 1e-2,
            steps_per_batch: 1,
            bound: 10.0,
            alpha0: 0.1,
            mixing: Mixing::Convex,
            seed: 0,
        }
    }
}

impl PreferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.steps_per_batch == 0 {
            return Err(invalid("epochs, batch and steps per batch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.bound > 0.0) {
            return Err(invalid(format!("parameter bound must be positive, got {}", self.bound)));
        }
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(invalid(format!("alpha0 must lie in [0, 1], got {}", self.alpha0)));
        }
        Ok(())
    }
}

/// Per-batch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub robust_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRun {
    pub theta: Vec<f64>,
    /// θ after every gradient step.
    pub trajectory: Vec<Vec<f64>>,
    pub log: Vec<EpochLog>,
}

/// Preference training on a stream of fresh batches: for each epoch draw a
/// batch, solve the inner problem on its per-sample losses, take weighted (or
/// penalized) gradient steps and project onto the B-ball.
pub fn train_preference(
    env: &PreferenceEnv,
    loss: PreferenceLoss,
    spec: Option<AmbiguitySpec>,
    config: &PreferenceConfig,
) -> Result<PreferenceRun> {
    config.validate()?;
    if let Some(s) = spec {
        s.validate()?;
    }
    let mut rng = RngStream::new(config.seed);
    let d = env.dim();
    let reference = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut trajectory = Vec::with_capacity(config.epochs * config.steps_per_batch);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batch = sample_preferences(env, config.batch, config.alpha0, config.mixing, &mut rng)?;
        let anchor = match loss {
            PreferenceLoss::Rebel { .. } => theta.clone(),
            PreferenceLoss::Dpo { .. } => reference.clone(),
        };
        for step in 0..config.steps_per_batch {
            let obj = batch_objective(&batch.samples, &theta, &anchor, loss, spec)?;
            if step == 0 {
                log.push(EpochLog {
                    epoch,
                    mean_loss: obj.mean_loss,
                    robust_value: obj.value,
                });
            }
            axpy(-config.lr, &obj.gradient, &mut theta);
            project_ball(&mut theta, config.bound);
            trajectory.push(theta.clone());
        }
    }
    Ok(PreferenceRun {
        theta,
        trajectory,
        log,
    })
}
