//! Gaussian-mixture environment with grouped regression samples, and a
//! synthetic preference environment with Bradley–Terry labels.

use std::io::{self, Write};

use crate::error::{check_finite, invalid, Error, Result};
use crate::losses::{sigmoid, softmax, PreferenceSample};
use crate::numerics::{dot, mean_stderr, norm, ProbVector, RngStream};

pub const DIRICHLET_CONCENTRATION: f64 = 0.3;
pub const FEATURE_NOISE: f64 = 0.35;
pub const MEAN_PERTURBATION: f64 = 0.05;
pub const NOISE_SCALE_RANGE: (f64, f64) = (0.05, 0.35);

pub const DEFAULT_GROUPS: usize = 15;
pub const DEFAULT_DIM: usize = 12;
pub const DEFAULT_RANK: usize = 3;

/// Ground truth of the grouped regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEnv {
    pub seed: u64,
    pub rank: usize,
    /// True mixture p° over groups.
    pub mixture: ProbVector,
    /// Unit-norm group means, one row per group.
    pub means: Vec<Vec<f64>>,
    /// Target noise standard deviation per group.
    pub noise_scales: Vec<f64>,
    pub theta_star: Vec<f64>,
    /// Isotropic feature noise standard deviation.
    pub feature_noise: f64,
    pub mean_perturbation: f64,
}

impl MixtureEnv {
    pub fn groups(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// Same environment with both noise sources switched off.
    pub fn without_noise(&self) -> Self {
        Self {
            noise_scales: vec![0.0; self.groups()],
            feature_noise: 0.0,
            ..self.clone()
        }
    }

    /// Same environment with target noise switched off; features stay noisy.
    pub fn without_target_noise(&self) -> Self {
        Self {
            noise_scales: vec![0.0; self.groups()],
            ..self.clone()
        }
    }
}

/// Builds the environment: Dirichlet(0.3) mixture, low-rank unit-norm group
/// means, log-uniform noise scales and a unit θ*. Deterministic in `seed`.
pub fn make_env(seed: u64, groups: usize, dim: usize, rank: usize) -> Result<MixtureEnv> {
    if groups < 2 {
        return Err(invalid("environment needs at least two groups"));
    }
    if rank == 0 || rank > dim {
        return Err(invalid(format!("rank must lie in [1, {dim}], got {rank}")));
    }
    let mut rng = RngStream::new(seed);

    let gammas: Vec<f64> = (0..groups).map(|_| rng.gamma(DIRICHLET_CONCENTRATION)).collect();
    let mixture = ProbVector::from_weights(gammas)?;

    let mut basis: Vec<Vec<f64>> = (0..rank).map(|_| rng.normal_vec(dim)).collect();
    orthonormalize_rows(&mut basis)?;

    let mut means = Vec::with_capacity(groups);
    for _ in 0..groups {
        let coeffs = rng.normal_vec(rank);
        let mut mu = vec![0.0; dim];
        for (c, row) in coeffs.iter().zip(&basis) {
            for (m, u) in mu.iter_mut().zip(row) {
                *m += c * u;
            }
        }
        for m in mu.iter_mut() {
            *m += MEAN_PERTURBATION * rng.normal();
        }
        let n = norm(&mu);
        mu.iter_mut().for_each(|m| *m /= n);
        means.push(mu);
    }

    let (lo, hi) = (NOISE_SCALE_RANGE.0.ln(), NOISE_SCALE_RANGE.1.ln());
    let noise_scales = (0..groups)
        .map(|_| (lo + rng.uniform() * (hi - lo)).exp())
        .collect();

    let theta_star = rng.unit_vector(dim);

    Ok(MixtureEnv {
        seed,
        rank,
        mixture,
        means,
        noise_scales,
        theta_star,
        feature_noise: FEATURE_NOISE,
        mean_perturbation: MEAN_PERTURBATION,
    })
}

/// Default-sized environment (15 groups, dimension 12, rank 3).
pub fn default_env(seed: u64) -> MixtureEnv {
    make_env(seed, DEFAULT_GROUPS, DEFAULT_DIM, DEFAULT_RANK).expect("default sizes are valid")
}

/// Modified Gram–Schmidt on the rows.
fn orthonormalize_rows(rows: &mut [Vec<f64>]) -> Result<()> {
    for i in 0..rows.len() {
        for j in 0..i {
            let proj = dot(&rows[i], &rows[j]);
            let (head, tail) = rows.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= proj * y;
            }
        }
        let n = norm(&rows[i]);
        if n < 1e-12 {
            return Err(invalid("degenerate basis draw"));
        }
        rows[i].iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

/// Grouped regression samples `(Cᵢ, vᵢ, tᵢ)` with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    dim: usize,
    labels: Vec<usize>,
    features: Vec<f64>,
    targets: Vec<f64>,
    counts: Vec<u64>,
}

impl GroupedDataset {
    /// Assembles a dataset from explicit parts; `features` holds one row per
    /// sample.
    pub fn new(
        groups: usize,
        labels: Vec<usize>,
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if features.len() != labels.len() || targets.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: features.len().min(targets.len()),
            });
        }
        let dim = features[0].len();
        let mut counts = vec![0u64; groups];
        for &g in &labels {
            if g >= groups {
                return Err(invalid(format!("group label {g} outside [0, {groups})")));
            }
            counts[g] += 1;
        }
        let mut flat = Vec::with_capacity(dim * labels.len());
        for row in &features {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        check_finite(&flat)?;
        check_finite(&targets)?;
        Ok(Self {
            dim,
            labels,
            features: flat,
            targets,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> usize {
        self.counts.len()
    }

    pub fn group(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Empirical group frequencies `count_k / n` (zero for empty groups).
    pub fn p_hat(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Writes `group,v_1..v_d,t` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("group".to_string())
            .chain((1..=self.dim).map(|j| format!("v_{j}")))
            .chain(std::iter::once("t".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(out, "{}", self.labels[i])?;
            for x in self.feature(i) {
                write!(out, ",{x:.16e}")?;
            }
            writeln!(out, ",{:.16e}", self.targets[i])?;
        }
        Ok(())
    }
}

/// Draws `n` samples: `Cᵢ ~ p°`, `vᵢ ~ N(μ_{Cᵢ}, s_v² I)`, `tᵢ = vᵢᵀθ* + N(0, σ_{Cᵢ}²)`.
pub fn sample_dataset(env: &MixtureEnv, n: usize, seed: u64) -> Result<GroupedDataset> {
    sample_dataset_with(env, n, &mut RngStream::new(seed))
}

pub fn sample_dataset_with(env: &MixtureEnv, n: usize, rng: &mut RngStream) -> Result<GroupedDataset> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let d = env.dim();
    let k = env.groups();
    let mut cdf = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &p in env.mixture.as_slice() {
        acc += p;
        cdf.push(acc);
    }
    *cdf.last_mut().expect("at least two groups") = 1.0;

    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    let mut counts = vec![0u64; k];
    for _ in 0..n {
        let g = rng.categorical_cdf(&cdf);
        let start = features.len();
        for &m in &env.means[g] {
            features.push(m + env.feature_noise * rng.normal());
        }
        let t = dot(&features[start..], &env.theta_star) + env.noise_scales[g] * rng.normal();
        labels.push(g);
        targets.push(t);
        counts[g] += 1;
    }
    Ok(GroupedDataset {
        dim: d,
        labels,
        features,
        targets,
        counts,
    })
}

/// How two per-objective rewards are combined at mixing coefficient α.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    /// `α r₁ + (1 − α) r₂`.
    Convex,
    /// `r₁^α r₂^{1−α}` on sigmoid-squashed rewards.
    Geometric,
}

impl Mixing {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Convex => "convex",
            Self::Geometric => "geometric",
        }
    }
}

impl std::str::FromStr for Mixing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex" => Ok(Self::Convex),
            "geometric" => Ok(Self::Geometric),
            other => Err(invalid(format!("unknown mixing '{other}' (expected convex or geometric)"))),
        }
    }
}

/// Mixes two rewards; geometric mixing requires both to be positive.
pub fn mix_rewards(r1: f64, r2: f64, alpha: f64, mixing: Mixing) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("mixing coefficient must lie in [0, 1], got {alpha}")));
    }
    match mixing {
        Mixing::Convex => Ok(alpha * r1 + (1.0 - alpha) * r2),
        Mixing::Geometric => {
            if r1 <= 0.0 || r2 <= 0.0 {
                return Err(invalid("geometric mixing needs positive rewards"));
            }
            Ok(r1.powf(alpha) * r2.powf(1.0 - alpha))
        }
    }
}

/// Bradley–Terry probability that the first response wins given `r¹ − r²`.
pub fn bt_probability(reward_gap: f64) -> f64 {
    sigmoid(reward_gap)
}

/// A prompt is represented by its candidate action features (unit vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub actions: Vec<Vec<f64>>,
}

/// Synthetic two-objective preference environment: actions are unit vectors
/// `ψ(x, a) = a` and objective rewards are `r_j(a) = ω_jᵀa` with `‖ω_j‖ = F`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceEnv {
    pub seed: u64,
    pub actions_per_prompt: usize,
    pub reward_scale: f64,
    pub omega: [Vec<f64>; 2],
}

pub const DEFAULT_PREF_DIM: usize = 8;
pub const DEFAULT_ACTIONS_PER_PROMPT: usize = 8;
pub const DEFAULT_REWARD_SCALE: f64 = 1.0;

pub fn make_preference_env(
    seed: u64,
    dim: usize,
    actions_per_prompt: usize,
    reward_scale: f64,
) -> Result<PreferenceEnv> {
    if dim == 0 {
        return Err(invalid("preference feature dimension must be positive"));
    }
    if actions_per_prompt < 2 {
        return Err(invalid("each prompt needs at least two candidate actions"));
    }
    if !(reward_scale > 0.0 && reward_scale.is_finite()) {
        return Err(invalid("reward scale F must be positive"));
    }
    let mut rng = RngStream::new(seed);
    let mut draw = || -> Vec<f64> {
        rng.unit_vector(dim).into_iter().map(|x| x * reward_scale).collect()
    };
    let omega = [draw(), draw()];
    Ok(PreferenceEnv {
        seed,
        actions_per_prompt,
        reward_scale,
        omega,
    })
}

impl PreferenceEnv {
    pub fn dim(&self) -> usize {
        self.omega[0].len()
    }

    pub fn draw_prompt(&self, rng: &mut RngStream) -> Prompt {
        Prompt {
            actions: (0..self.actions_per_prompt)
                .map(|_| rng.unit_vector(self.dim()))
                .collect(),
        }
    }

    pub fn draw_prompts(&self, count: usize, seed: u64) -> Vec<Prompt> {
        let mut rng = RngStream::new(seed);
        (0..count).map(|_| self.draw_prompt(&mut rng)).collect()
    }

    /// Per-objective rewards of an action, squashed through σ for geometric
    /// mixing.
    pub fn objective_rewards(&self, action: &[f64], mixing: Mixing) -> (f64, f64) {
        let r1 = dot(&self.omega[0], action);
        let r2 = dot(&self.omega[1], action);
        match mixing {
            Mixing::Convex => (r1, r2),
            Mixing::Geometric => (sigmoid(r1), sigmoid(r2)),
        }
    }

    pub fn mixed_reward(&self, action: &[f64], alpha: f64, mixing: Mixing) -> Result<f64> {
        let (r1, r2) = self.objective_rewards(action, mixing);
        mix_rewards(r1, r2, alpha, mixing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPreferenceSet {
    pub samples: Vec<PreferenceSample>,
    /// Bradley–Terry probability that the first action wins, per sample.
    pub probabilities: Vec<f64>,
    pub mixing: Mixing,
    pub alpha0: f64,
    pub omega: [Vec<f64>; 2],
}

/// Draws `n` comparisons: a fresh prompt, two distinct candidate actions from
/// the uniform sampling policy, their mixed-reward gap at `alpha0`, and a
/// Bradley–Terry label.
pub fn sample_preferences(
    env: &PreferenceEnv,
    n: usize,
    alpha0: f64,
    mixing: Mixing,
    rng: &mut RngStream,
) -> Result<SyntheticPreferenceSet> {
    if !(0.0..=1.0).contains(&alpha0) {
        return Err(invalid(format!("alpha0 must lie in [0, 1], got {alpha0}")));
    }
    let m = env.actions_per_prompt;
    let mut samples = Vec::with_capacity(n);
    let mut probabilities = Vec::with_capacity(n);
    for _ in 0..n {
        let prompt = env.draw_prompt(rng);
        let i = (rng.uniform() * m as f64) as usize % m;
        let mut j = (rng.uniform() * (m - 1) as f64) as usize % (m - 1);
        if j >= i {
            j += 1;
        }
        let (a1, a2) = (&prompt.actions[i], &prompt.actions[j]);
        let gap = env.mixed_reward(a1, alpha0, mixing)? - env.mixed_reward(a2, alpha0, mixing)?;
        let prob = bt_probability(gap);
        let preferred_first = rng.bernoulli(prob);
        samples.push(PreferenceSample {
            delta_psi: a1.iter().zip(a2).map(|(x, y)| x - y).collect(),
            delta_r: gap,
            preferred_first,
        });
        probabilities.push(prob);
    }
    Ok(SyntheticPreferenceSet {
        samples,
        probabilities,
        mixing,
        alpha0,
        omega: env.omega.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEstimate {
    pub alpha: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Expected mixed reward of the log-linear policy `π_θ` at each α, averaged
/// over `prompts` (exact expectation within a prompt, Monte Carlo across
/// prompts).
pub fn mixture_reward(
    env: &PreferenceEnv,
    theta: &[f64],
    prompts: &[Prompt],
    alphas: &[f64],
    mixing: Mixing,
) -> Result<Vec<RewardEstimate>> {
    if prompts.is_empty() {
        return Err(Error::Empty("evaluation prompts"));
    }
    if theta.len() != env.dim() {
        return Err(Error::DimensionMismatch {
            expected: env.dim(),
            got: theta.len(),
        });
    }
    let mut per_alpha = vec![Vec::with_capacity(prompts.len()); alphas.len()];
    for prompt in prompts {
        let logits: Vec<f64> = prompt.actions.iter().map(|a| dot(theta, a)).collect();
        let pi = softmax(&logits);
        let rewards: Vec<(f64, f64)> = prompt
            .actions
            .iter()
            .map(|a| env.objective_rewards(a, mixing))
            .collect();
        for (slot, &alpha) in per_alpha.iter_mut().zip(alphas) {
            let mut value = 0.0;
            for (w, &(r1, r2)) in pi.as_slice().iter().zip(&rewards) {
                value += w * mix_rewards(r1, r2, alpha, mixing)?;
            }
            slot.push(value);
        }
    }
    Ok(alphas
        .iter()
        .zip(per_alpha)
        .map(|(&alpha, values)| {
            let (mean, stderr) = mean_stderr(&values);
            RewardEstimate { alpha, mean, stderr }
        })
        .collect())
}
