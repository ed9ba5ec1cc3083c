//! Pointwise preference losses under log-linear policies, per-group squared
//! losses, and the boundedness / Lipschitz constants they satisfy.

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, norm, project_ball, sub, ProbVector};
use crate::simulator::GroupedDataset;

/// Linear margin `h_θ(z) = θᵀ v(z)` with parameters kept in the ball `‖θ‖₂ ≤ B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMarginModel {
    pub theta: Vec<f64>,
    pub bound: f64,
}

impl LinearMarginModel {
    pub fn new(theta: Vec<f64>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(invalid(format!("parameter bound must be positive, got {bound}")));
        }
        let mut model = Self { theta, bound };
        model.project();
        Ok(model)
    }

    pub fn zeros(dim: usize, bound: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], bound)
    }

    pub fn project(&mut self) {
        project_ball(&mut self.theta, self.bound);
    }

    pub fn margin(&self, features: &[f64]) -> f64 {
        dot(&self.theta, features)
    }
}

/// One preference comparison: feature gap `ψ(x,a¹) − ψ(x,a²)`, reward gap and
/// the Bradley–Terry label (`true` when a¹ is preferred).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSample {
    pub delta_psi: Vec<f64>,
    pub delta_r: f64,
    pub preferred_first: bool,
}

impl PreferenceSample {
    pub fn label(&self) -> f64 {
        if self.preferred_first {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub b: f64,
    pub f: f64,
    pub eta: f64,
    /// `8B/η + 2F`, a bound on the REBEL residual.
    pub k_g: f64,
    /// `K_g²`, a bound on the REBEL loss.
    pub k_l: f64,
    /// `4K_g/η`, the Lipschitz constant of the REBEL loss in θ.
    pub lipschitz: f64,
}

pub fn bound_constants(b: f64, f: f64, eta: f64) -> Result<BoundConstants> {
    for (name, v) in [("B", b), ("F", f), ("eta", eta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let k_g = 8.0 * b / eta + 2.0 * f;
    Ok(BoundConstants {
        b,
        f,
        eta,
        k_g,
        k_l: k_g * k_g,
        lipschitz: 4.0 * k_g / eta,
    })
}

/// Upper bound `log(1 + e^{4βB})` on the DPO loss for admissible inputs.
pub fn dpo_loss_bound(beta: f64, b: f64) -> f64 {
    softplus(4.0 * beta * b)
}

/// Numerically stable `log(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("REBEL step size eta must be positive, got {eta}")));
    }
    Ok(())
}

fn check_dims(sample: &PreferenceSample, theta: &[f64], anchor: &[f64]) -> Result<()> {
    for got in [theta.len(), anchor.len()] {
        if got != sample.delta_psi.len() {
            return Err(Error::DimensionMismatch {
                expected: sample.delta_psi.len(),
                got,
            });
        }
    }
    Ok(())
}

/// REBEL residual `(1/η)(θ − θ_t)ᵀΔψ − Δr`.
pub fn rebel_residual(sample: &PreferenceSample, theta: &[f64], theta_t: &[f64], eta: f64) -> f64 {
    let log_ratio_gap: f64 = sample
        .delta_psi
        .iter()
        .zip(theta.iter().zip(theta_t))
        .map(|(dp, (a, b))| (a - b) * dp)
        .sum();
    log_ratio_gap / eta - sample.delta_r
}

/// Squared relative-reward regression loss.
pub fn rebel_loss(sample: &PreferenceSample, theta: &[f64], theta_t: &[f64], eta: f64) -> Result<f64> {
    check_eta(eta)?;
    check_dims(sample, theta, theta_t)?;
    Ok(rebel_residual(sample, theta, theta_t, eta).powi(2))
}

/// `∇_θ` of [`rebel_loss`]: `2g·Δψ/η`.
pub fn rebel_grad(sample: &PreferenceSample, theta: &[f64], theta_t: &[f64], eta: f64) -> Vec<f64> {
    let g = rebel_residual(sample, theta, theta_t, eta);
    sample.delta_psi.iter().map(|dp| 2.0 * g * dp / eta).collect()
}

/// Implicit-reward margin `h = (θ − θ_ref)ᵀΔψ`.
pub fn dpo_margin(sample: &PreferenceSample, theta: &[f64], theta_ref: &[f64]) -> f64 {
    sample
        .delta_psi
        .iter()
        .zip(theta.iter().zip(theta_ref))
        .map(|(dp, (a, b))| (a - b) * dp)
        .sum()
}

/// Logistic loss `−y log σ(βh) − (1−y) log σ(−βh)`.
pub fn dpo_loss(sample: &PreferenceSample, theta: &[f64], theta_ref: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("DPO scale beta must be positive, got {beta}")));
    }
    check_dims(sample, theta, theta_ref)?;
    let x = beta * dpo_margin(sample, theta, theta_ref);
    Ok(if sample.preferred_first {
        softplus(-x)
    } else {
        softplus(x)
    })
}

/// `∇_θ` of [`dpo_loss`]: `β(σ(βh) − y)Δψ`.
pub fn dpo_grad(sample: &PreferenceSample, theta: &[f64], theta_ref: &[f64], beta: f64) -> Vec<f64> {
    let x = beta * dpo_margin(sample, theta, theta_ref);
    let coef = beta * (sigmoid(x) - sample.label());
    sample.delta_psi.iter().map(|dp| coef * dp).collect()
}

/// Softmax policy `π_θ(a) ∝ exp(θᵀψ(a))` over a finite action set.
pub fn log_linear_policy(theta: &[f64], action_features: &[Vec<f64>]) -> Result<ProbVector> {
    if action_features.is_empty() {
        return Err(Error::Empty("action set"));
    }
    let logits: Vec<f64> = action_features
        .iter()
        .map(|psi| {
            if psi.len() != theta.len() {
                Err(Error::DimensionMismatch {
                    expected: theta.len(),
                    got: psi.len(),
                })
            } else {
                Ok(dot(theta, psi))
            }
        })
        .collect::<Result<_>>()?;
    Ok(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> ProbVector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    ProbVector::from_weights(raw).expect("softmax weights are positive")
}

/// Per-group mean squared residuals `L_k(θ) = mean_{i∈I_k} (vᵢᵀθ − tᵢ)²`.
/// Groups without samples report 0.
pub fn group_losses(dataset: &GroupedDataset, theta: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; dataset.groups()];
    for i in 0..dataset.len() {
        let r = dot(dataset.feature(i), theta) - dataset.target(i);
        sums[dataset.group(i)] += r * r;
    }
    sums.iter()
        .zip(dataset.counts())
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Per-group gradients `∇L_k(θ) = (2/|I_k|) Σ_{i∈I_k} (vᵢᵀθ − tᵢ) vᵢ`.
pub fn group_gradients(dataset: &GroupedDataset, theta: &[f64]) -> Vec<Vec<f64>> {
    let d = dataset.dim();
    let mut grads = vec![vec![0.0; d]; dataset.groups()];
    for i in 0..dataset.len() {
        let v = dataset.feature(i);
        let r = dot(v, theta) - dataset.target(i);
        let g = &mut grads[dataset.group(i)];
        for (gj, vj) in g.iter_mut().zip(v) {
            *gj += 2.0 * r * vj;
        }
    }
    for (g, &c) in grads.iter_mut().zip(dataset.counts()) {
        if c > 0 {
            g.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    grads
}

/// Pooled mean squared residual over all samples.
pub fn pooled_loss(dataset: &GroupedDataset, theta: &[f64]) -> f64 {
    (0..dataset.len())
        .map(|i| (dot(dataset.feature(i), theta) - dataset.target(i)).powi(2))
        .sum::<f64>()
        / dataset.len() as f64
}

/// `‖θ − θ*‖₂`.
pub fn parameter_error(theta: &[f64], theta_star: &[f64]) -> f64 {
    norm(&sub(theta, theta_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(delta_psi: Vec<f64>, delta_r: f64, first: bool) -> PreferenceSample {
        PreferenceSample {
            delta_psi,
            delta_r,
            preferred_first: first,
        }
    }

    #[test]
    fn rebel_examples() {
        let s = sample(vec![1.0, 0.0], 0.0, true);
        assert_eq!(rebel_loss(&s, &[0.3, 0.2], &[0.3, 0.2], 0.5).unwrap(), 0.0);
        let eta = 0.25;
        assert_abs_diff_eq!(rebel_loss(&s, &[eta, 0.0], &[0.0, 0.0], eta).unwrap(), 1.0, epsilon = 1e-15);
        assert!(rebel_loss(&s, &[0.0, 0.0], &[0.0, 0.0], 0.0).is_err());
        assert!(rebel_loss(&s, &[0.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn dpo_examples() {
        let s1 = sample(vec![1.0, -1.0], 0.0, true);
        let s0 = PreferenceSample { preferred_first: false, ..s1.clone() };
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(dpo_loss(&s1, &[0.0, 0.0], &[0.0, 0.0], 3.0).unwrap(), ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(dpo_loss(&s0, &[0.0, 0.0], &[0.0, 0.0], 3.0).unwrap(), ln2, epsilon = 1e-15);
        let one_d = sample(vec![1.0], 0.0, true);
        let l = dpo_loss(&one_d, &[20.0], &[0.0], 1.0).unwrap();
        assert_abs_diff_eq!(l, 2.061153620314381e-9, epsilon = 1e-21);
        // Label symmetry: y=1 at h equals y=0 at −h.
        let a = dpo_loss(&s1, &[0.7, 0.1], &[0.0, 0.0], 2.0).unwrap();
        let b = dpo_loss(&s0, &[-0.7, -0.1], &[0.0, 0.0], 2.0).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        assert!(dpo_loss(&s1, &[0.0, 0.0], &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn policy_examples() {
        let actions = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        assert_eq!(log_linear_policy(&[0.0, 0.0], &actions).unwrap(), ProbVector::uniform(3));
        let pi = log_linear_policy(&[0.0, 3f64.ln()], &[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(pi[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pi[1], 0.75, epsilon = 1e-15);
        assert!(log_linear_policy(&[0.0], &[]).is_err());
        assert!(log_linear_policy(&[0.0], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn bound_constant_examples() {
        let c = bound_constants(1.0, 1.0, 1.0).unwrap();
        assert_eq!((c.k_g, c.k_l, c.lipschitz), (10.0, 100.0, 40.0));
        let no_f = bound_constants(1.0, 1e-300, 2.0).unwrap();
        assert_abs_diff_eq!(no_f.k_g, 4.0, epsilon = 1e-12);
        assert!(bound_constants(0.0, 1.0, 1.0).is_err());
        assert!(bound_constants(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn model_projects_into_ball() {
        let m = LinearMarginModel::new(vec![3.0, 4.0], 2.0).unwrap();
        assert_abs_diff_eq!(norm(&m.theta), 2.0, epsilon = 1e-14);
        assert!(LinearMarginModel::zeros(2, 0.0).is_err());
        assert_eq!(m.margin(&[1.0, 0.0]), m.theta[0]);
    }
}
