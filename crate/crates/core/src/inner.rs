//! Robust inner problems: the sample-level χ² dual, KL tilting, the
//! Wasserstein gradient penalty, and the group-level χ² mixture maximizer.

use crate::error::{check_finite, invalid, Error, Result};
use crate::numerics::{clip_renormalize, project_simplex, ProbVector};

/// Variance below which the mixture maximizer returns the reference.
pub const MIXTURE_VARIANCE_FLOOR: f64 = 1e-12;
/// Lower clamp on the KL temperature.
pub const KL_MIN_TEMPERATURE: f64 = 1e-6;
const KL_EXPONENT_GUARD: f64 = 700.0;

/// Ambiguity set around the empirical (or reference) distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmbiguitySpec {
    /// Sample-level χ² ball `(1/n) Σ ½(n wᵢ − 1)² ≤ ρ`.
    Chi2 { rho: f64 },
    /// KL tilt with temperature τ.
    Kl { tau: f64 },
    /// Wasserstein DRO approximated by a gradient-norm penalty with weight ρ₀.
    Wasserstein { rho0: f64 },
    /// Group-level ball `Σ_k (q_k − p_k)² / p_k ≤ ρ`.
    MixtureChi2 { rho: f64 },
}

impl AmbiguitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Chi2 { rho } if !(rho > 0.0 && rho.is_finite()) => {
                Err(invalid(format!("chi2 radius must be positive and finite, got {rho}")))
            }
            Self::Kl { tau } if !(tau > 0.0) => {
                Err(invalid(format!("KL temperature must be positive, got {tau}")))
            }
            Self::Wasserstein { rho0 } if !(rho0 >= 0.0 && rho0.is_finite()) => Err(invalid(
                format!("Wasserstein penalty weight must be nonnegative, got {rho0}"),
            )),
            Self::MixtureChi2 { rho } if !(rho >= 0.0) => {
                Err(invalid(format!("mixture radius must be nonnegative, got {rho}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Chi2 { .. } => "chi2",
            Self::Kl { .. } => "kl",
            Self::Wasserstein { .. } => "wasserstein",
            Self::MixtureChi2 { .. } => "mixture_chi2",
        }
    }
}

/// Dual certificate attached to an [`InnerSolution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualVariables {
    /// `eta` minimizes the χ² dual; `lambda = Σ(ℓᵢ − η)₊ / n` normalizes the weights.
    Chi2 { eta: f64, lambda: f64 },
    /// `log_normalizer = ln Σ exp((ℓᵢ − ℓ̄)/τ)`; `soft_max = τ ln mean exp(ℓᵢ/τ)`
    /// is the KL-penalized worst-case value whose gradient is the tilted one.
    KlTilt { log_normalizer: f64, soft_max: f64 },
    /// KKT multipliers of the mixture problem: `q_k = p_k (1 + step (a_k − threshold))₊`
    /// with `step = 1/(2λ)`.
    Mixture {
        step: f64,
        threshold: f64,
        lambda: f64,
        interior: bool,
    },
    /// The reference distribution was returned unchanged.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub weights: ProbVector,
    pub dual: DualVariables,
    pub value: f64,
}

fn check_losses(losses: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::Empty("loss vector"));
    }
    check_finite(losses)
}

/// Worst-case expectation over the sample-level χ² ball via its one-dimensional
/// dual `inf_η { η + √((1 + 2ρ)·(1/n) Σ (ℓᵢ − η)₊²) }`.
///
/// The dual objective is convex and differentiable below `max ℓ`. Losses are
/// sorted once; walking the breakpoints from the top locates the segment where
/// the derivative changes sign, and the stationarity condition is solved there
/// in closed form. When the derivative is still negative just below `max ℓ`,
/// the minimizer is the kink at `max ℓ` and the worst case spreads uniformly
/// over the maximal losses.
pub fn chi2_dual_solve(losses: &[f64], rho: f64) -> Result<InnerSolution> {
    check_losses(losses)?;
    AmbiguitySpec::Chi2 { rho }.validate()?;
    let n = losses.len();
    let nf = n as f64;
    let c2 = 1.0 + 2.0 * rho;

    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let max = sorted[0];
    let top_len = sorted.iter().take_while(|&&x| x == max).count();

    // Running mean / sum of squared deviations of the top-k losses.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut eta = None;
    for k in 1..=n {
        let x = sorted[k - 1];
        let delta = x - mean;
        mean += delta / k as f64;
        m2 += delta * (x - mean);
        let lower = if k < n { sorted[k] } else { f64::NEG_INFINITY };
        if k < n && lower == x {
            continue;
        }
        let kf = k as f64;
        let variance = (m2 / kf).max(0.0);
        if k == top_len && c2 * kf >= nf {
            // Derivative just below max is 1 − √(c2·k/n) ≤ 0: kink minimizer.
            eta = Some(max);
            break;
        }
        // Derivative at the lower end of the segment, active set = top k.
        let slope_at_lower = if lower.is_finite() {
            let u = mean - lower;
            1.0 - (c2 * kf / nf).sqrt() * u / (variance + u * u).sqrt()
        } else {
            1.0 - (c2 * kf / nf).sqrt()
        };
        if slope_at_lower <= 0.0 {
            let denom = c2 * kf - nf;
            let candidate = if denom > 0.0 {
                mean - (nf * variance / denom).sqrt()
            } else {
                lower
            };
            eta = Some(candidate.clamp(lower, x));
            break;
        }
    }
    let eta = eta.expect("dual derivative tends to 1 - sqrt(1 + 2 rho) < 0 at -inf");

    let hinge: Vec<f64> = losses.iter().map(|&l| (l - eta).max(0.0)).collect();
    let s1: f64 = hinge.iter().sum();
    let s2: f64 = hinge.iter().map(|h| h * h).sum();
    let value = eta + (c2 * s2 / nf).sqrt();
    let weights = if s1 > 0.0 {
        ProbVector::from_weights(hinge)?
    } else {
        let tops: Vec<f64> = losses
            .iter()
            .map(|&l| if l == max { 1.0 } else { 0.0 })
            .collect();
        ProbVector::from_weights(tops)?
    };
    Ok(InnerSolution {
        weights,
        dual: DualVariables::Chi2 {
            eta,
            lambda: s1 / nf,
        },
        value,
    })
}

/// The χ² dual objective `η + √((1 + 2ρ)·(1/n) Σ (ℓᵢ − η)₊²)` at a given η.
pub fn chi2_dual_objective(losses: &[f64], rho: f64, eta: f64) -> f64 {
    let s2: f64 = losses.iter().map(|&l| (l - eta).max(0.0).powi(2)).sum();
    eta + ((1.0 + 2.0 * rho) * s2 / losses.len() as f64).sqrt()
}

/// Sample-level χ² divergence `(1/n) Σ ½ (n wᵢ − 1)²` of weights from uniform.
pub fn chi2_sample_divergence(weights: &[f64]) -> f64 {
    let n = weights.len() as f64;
    weights.iter().map(|&w| 0.5 * (n * w - 1.0).powi(2)).sum::<f64>() / n
}

/// KL tilting weights `wᵢ ∝ exp((ℓᵢ − ℓ̄)/τ)` with the temperature clamped at
/// [`KL_MIN_TEMPERATURE`].
pub fn kl_tilt_weights(losses: &[f64], tau: f64) -> Result<InnerSolution> {
    check_losses(losses)?;
    AmbiguitySpec::Kl { tau }.validate()?;
    let n = losses.len() as f64;
    let tau = tau.max(KL_MIN_TEMPERATURE);
    let mean = losses.iter().sum::<f64>() / n;
    if tau.is_infinite() {
        return Ok(InnerSolution {
            weights: ProbVector::uniform(losses.len()),
            dual: DualVariables::KlTilt {
                log_normalizer: n.ln(),
                soft_max: mean,
            },
            value: mean,
        });
    }
    let exponents: Vec<f64> = losses.iter().map(|&l| (l - mean) / tau).collect();
    let max_exp = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_exp = exponents.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = if max_exp > KL_EXPONENT_GUARD || min_exp < -KL_EXPONENT_GUARD {
        max_exp
    } else {
        0.0
    };
    let raw: Vec<f64> = exponents.iter().map(|e| (e - shift).exp()).collect();
    let sum: f64 = raw.iter().sum();
    let log_normalizer = shift + sum.ln();
    let weights = ProbVector::from_weights(raw)?;
    let value = weights.expect(losses);
    Ok(InnerSolution {
        weights,
        dual: DualVariables::KlTilt {
            log_normalizer,
            soft_max: mean + tau * (log_normalizer - n.ln()),
        },
        value,
    })
}

/// `ρ₀ · √((1/n) Σ gᵢ)` for per-sample squared input-gradient norms `gᵢ`.
pub fn wasserstein_penalty(grad_sqnorms: &[f64], rho0: f64) -> Result<f64> {
    if grad_sqnorms.is_empty() {
        return Err(Error::Empty("gradient norms"));
    }
    check_finite(grad_sqnorms)?;
    AmbiguitySpec::Wasserstein { rho0 }.validate()?;
    if grad_sqnorms.iter().any(|&g| g < 0.0) {
        return Err(invalid("squared gradient norms must be nonnegative"));
    }
    let mean = grad_sqnorms.iter().sum::<f64>() / grad_sqnorms.len() as f64;
    Ok(rho0 * mean.sqrt())
}

/// How the mixture maximizer resolves an infeasible interior candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixtureMode {
    /// Exact KKT water-filling (default).
    #[default]
    Kkt,
    /// Euclidean projection of the interior step onto the simplex.
    Projection,
    /// Clip the interior step at zero and renormalize.
    ClipRenormalize,
}

/// `Σ_k (q_k − p_k)² / p_k`.
pub fn chi2_divergence(q: &[f64], p: &[f64]) -> Result<f64> {
    check_reference(q.len(), p)?;
    Ok(q.iter().zip(p).map(|(&qk, &pk)| (qk - pk).powi(2) / pk).sum())
}

/// Whether `q` lies in the group-level χ² ball of radius `eps` around `p`.
pub fn chi2_ball_contains(q: &ProbVector, p: &ProbVector, eps: f64) -> Result<bool> {
    Ok(chi2_divergence(q.as_slice(), p.as_slice())? <= eps + 1e-12)
}

fn check_reference(len: usize, p: &[f64]) -> Result<()> {
    if len != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: len,
        });
    }
    if let Some(index) = p.iter().position(|&x| x <= 0.0) {
        return Err(Error::ZeroReference { index });
    }
    Ok(())
}

/// `max_q Σ q_k a_k` over the simplex intersected with the χ² ball of radius
/// `rho` around `p_ref`, using the exact KKT solution.
pub fn mixture_chi2_argmax(a: &[f64], p_ref: &ProbVector, rho: f64) -> Result<InnerSolution> {
    mixture_chi2_argmax_with(a, p_ref, rho, MixtureMode::Kkt)
}

pub fn mixture_chi2_argmax_with(
    a: &[f64],
    p_ref: &ProbVector,
    rho: f64,
    mode: MixtureMode,
) -> Result<InnerSolution> {
    let p = p_ref.as_slice();
    if a.len() < 2 {
        return Err(invalid("mixture maximizer needs at least two groups"));
    }
    check_finite(a)?;
    check_reference(a.len(), p)?;
    AmbiguitySpec::MixtureChi2 { rho }.validate()?;

    let mu = p_ref.expect(a);
    let variance: f64 = p.iter().zip(a).map(|(&pk, &ak)| pk * (ak - mu).powi(2)).sum();
    if rho == 0.0 || variance < MIXTURE_VARIANCE_FLOOR {
        return Ok(InnerSolution {
            weights: p_ref.clone(),
            dual: DualVariables::Reference,
            value: mu,
        });
    }

    let t = (rho / variance).sqrt();
    let candidate: Vec<f64> = p
        .iter()
        .zip(a)
        .map(|(&pk, &ak)| pk * (1.0 + t * (ak - mu)))
        .collect();
    if t.is_finite() && candidate.iter().all(|&q| q >= 0.0) {
        let weights = ProbVector::from_weights(candidate)?;
        return Ok(InnerSolution {
            weights,
            dual: DualVariables::Mixture {
                step: t,
                threshold: mu,
                lambda: 0.5 / t,
                interior: true,
            },
            value: mu + (rho * variance).sqrt(),
        });
    }

    match mode {
        MixtureMode::Kkt => mixture_boundary(a, p, rho),
        MixtureMode::Projection | MixtureMode::ClipRenormalize => {
            let finite_t = if t.is_finite() { t } else { 1e300 / variance.sqrt() };
            let step: Vec<f64> = p
                .iter()
                .zip(a)
                .map(|(&pk, &ak)| pk * (1.0 + finite_t * (ak - mu)))
                .collect();
            let weights = if mode == MixtureMode::Projection {
                project_simplex(&step)?
            } else {
                clip_renormalize(&step)?
            };
            let value = weights.expect(a);
            Ok(InnerSolution {
                weights,
                dual: DualVariables::Mixture {
                    step: finite_t,
                    threshold: mu,
                    lambda: 0.5 / finite_t,
                    interior: false,
                },
                value,
            })
        }
    }
}

/// Active set and threshold of the water-filling `Σ p_k (1 + s(a_k − τ))₊ = 1`.
struct WaterLevel {
    threshold: f64,
    active: usize,
}

fn water_fill(order: &[usize], a: &[f64], p: &[f64], step: f64) -> WaterLevel {
    let mut mass = 0.0;
    let mut weighted = 0.0;
    let mut best = WaterLevel {
        threshold: a[order[0]],
        active: 1,
    };
    for (j, &k) in order.iter().enumerate() {
        mass += p[k];
        weighted += p[k] * a[k];
        let threshold = weighted / mass + (mass - 1.0) / (step * mass);
        if 1.0 + step * (a[k] - threshold) > 0.0 || j == 0 {
            best = WaterLevel {
                threshold,
                active: j + 1,
            };
        } else {
            break;
        }
    }
    best
}

fn weights_at(a: &[f64], p: &[f64], step: f64, threshold: f64) -> Vec<f64> {
    p.iter()
        .zip(a)
        .map(|(&pk, &ak)| pk * (1.0 + step * (ak - threshold)).max(0.0))
        .collect()
}

fn divergence_at(order: &[usize], a: &[f64], p: &[f64], step: f64) -> (f64, WaterLevel) {
    let level = water_fill(order, a, p, step);
    let q = weights_at(a, p, step, level.threshold);
    let r = q.iter().zip(p).map(|(&qk, &pk)| (qk - pk).powi(2) / pk).sum();
    (r, level)
}

/// KKT boundary solution: bisection on `s = 1/(2λ)`, along which the divergence
/// of the water-filled weights is continuous and strictly increasing, followed
/// by a closed-form solve on the final active set.
fn mixture_boundary(a: &[f64], p: &[f64], rho: f64) -> Result<InnerSolution> {
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));

    // Saturation: all mass on the maximal groups, in reference proportion.
    let a_max = a[order[0]];
    let top = order.iter().take_while(|&&k| a[k] == a_max).count();
    let top_mass: f64 = order[..top].iter().map(|&k| p[k]).sum();
    let saturated_div = 1.0 / top_mass - 1.0;
    if rho >= saturated_div {
        let mut q = vec![0.0; a.len()];
        for &k in &order[..top] {
            q[k] = p[k] / top_mass;
        }
        let weights = ProbVector::from_weights(q)?;
        let value = weights.expect(a);
        return Ok(InnerSolution {
            weights,
            dual: DualVariables::Mixture {
                step: f64::INFINITY,
                threshold: a_max,
                lambda: 0.0,
                interior: false,
            },
            value,
        });
    }

    let mut lo = 0.0;
    let mut hi = 1.0 / (a_max - a[order[a.len() - 1]]);
    while divergence_at(&order, a, p, hi).0 < rho {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if divergence_at(&order, a, p, mid).0 < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // On a fixed active set J the divergence is s²·V_J + γ²/α + γ.
    let mut step = hi;
    let level = water_fill(&order, a, p, hi);
    let active = &order[..level.active];
    let alpha: f64 = active.iter().map(|&k| p[k]).sum();
    let gamma = 1.0 - alpha;
    let mean_j = active.iter().map(|&k| p[k] * a[k]).sum::<f64>() / alpha;
    let var_j: f64 = active.iter().map(|&k| p[k] * (a[k] - mean_j).powi(2)).sum();
    let slack = rho - gamma - gamma * gamma / alpha;
    if var_j > 0.0 && slack > 0.0 {
        let exact = (slack / var_j).sqrt();
        let check = water_fill(&order, a, p, exact);
        if check.active == level.active {
            step = exact;
        }
    }
    let level = water_fill(&order, a, p, step);
    let weights = ProbVector::from_weights(weights_at(a, p, step, level.threshold))?;
    let value = weights.expect(a);
    Ok(InnerSolution {
        weights,
        dual: DualVariables::Mixture {
            step,
            threshold: level.threshold,
            lambda: 0.5 / step,
            interior: false,
        },
        value,
    })
}
