//! Reference computations written independently of the library: special
//! functions from their series definitions and brute-force optimizers.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// erf via its Maclaurin series for |x| ≤ 3 and a Lentz continued fraction for
/// erfc beyond.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x.abs() <= 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x * x / k;
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        let sign = x.signum();
        sign * (1.0 - erfc_cf(x.abs()))
    }
}

fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = exp(−x²)/√π · 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(s, x) by its power series.
fn gamma_p(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / s;
    let mut sum = term;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= x / (s + k);
        sum += term;
        k += 1.0;
    }
    (s * x.ln() - x - ln_gamma(s)).exp() * sum
}

pub fn chi2_cdf(dof: u32, x: f64) -> f64 {
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Exact χ² quantile by bisection on the CDF.
pub fn chi2_quantile(dof: u32, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 10.0 * dof as f64 + 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(dof, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The sample-level χ² dual objective written out from its definition.
pub fn chi2_dual_f(losses: &[f64], rho: f64, eta: f64) -> f64 {
    let n = losses.len() as f64;
    let s: f64 = losses.iter().map(|&l| (l - eta).max(0.0).powi(2)).sum();
    eta + ((1.0 + 2.0 * rho) * s / n).sqrt()
}

/// Minimum of the dual objective over a uniform η grid. The minimizer lies in
/// `[mean − √(var/(2ρ)), max ℓ]`.
pub fn chi2_dual_grid(losses: &[f64], rho: f64, step: f64) -> f64 {
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = mean - (var / (2.0 * rho)).sqrt() - 10.0 * step;
    let count = ((max - lo) / step).ceil() as usize;
    let mut best = chi2_dual_f(losses, rho, max);
    for i in 0..=count {
        let eta = lo + i as f64 * step;
        best = best.min(chi2_dual_f(losses, rho, eta));
    }
    best
}

/// Exact primal maximum of `Σ wᵢ ℓᵢ` over the simplex intersected with
/// `(n/2) Σ (wᵢ − 1/n)² ≤ ρ`, by enumerating which coordinates are zero.
///
/// On a face with support S the constraint set is a ball in the affine plane
/// `Σ_S w = 1`; the maximizer moves from the ball's centre along the centred
/// loss direction. The best nonnegative candidate over all faces is optimal.
pub fn chi2_primal_enumerate(losses: &[f64], rho: f64) -> f64 {
    let n = losses.len();
    let nf = n as f64;
    let r2 = 2.0 * rho / nf;
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let m = support.len() as f64;
        let zeros = nf - m;
        let shift = (1.0 - m / nf) / m;
        let base = zeros / (nf * nf) + m * shift * shift;
        if base > r2 + 1e-15 {
            continue;
        }
        let radius = (r2 - base).max(0.0).sqrt();
        let lm = support.iter().map(|&i| losses[i]).sum::<f64>() / m;
        let dir: Vec<f64> = support.iter().map(|&i| losses[i] - lm).collect();
        let dn = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let w: Vec<f64> = dir
            .iter()
            .map(|&d| 1.0 / nf + shift + if dn > 0.0 { radius * d / dn } else { 0.0 })
            .collect();
        if w.iter().any(|&x| x < -1e-12) {
            continue;
        }
        let value: f64 = support.iter().zip(&w).map(|(&i, &x)| x * losses[i]).sum();
        best = best.max(value);
    }
    best
}

pub fn mixture_divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| (a - b) * (a - b) / b).sum()
}

/// Brute-force mixture maximizer for K = 2 or 3: a grid over q₀ with step
/// `step`; for K = 3 the best feasible q₁ is found exactly, since the
/// objective is linear in q₁ and the feasible q₁ form an interval.
pub fn mixture_grid(a: &[f64], p: &[f64], rho: f64, step: f64) -> f64 {
    let count = (1.0 / step).round() as usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=count {
        let q0 = (i as f64 * step).min(1.0);
        match a.len() {
            2 => {
                let q = [q0, 1.0 - q0];
                if mixture_divergence(&q, p) <= rho {
                    best = best.max(q[0] * a[0] + q[1] * a[1]);
                }
            }
            3 => {
                let rest = 1.0 - q0;
                // divergence as a quadratic in q₁ with q₂ = rest − q₁
                // (q₁ − p₁)²/p₁ = q₁²/p₁ − 2q₁ + p₁ and, with u = rest − p₂,
                // (u − q₁)²/p₂ = q₁²/p₂ − 2uq₁/p₂ + u²/p₂.
                let c0 = (q0 - p[0]).powi(2) / p[0];
                let u = rest - p[2];
                let qa = 1.0 / p[1] + 1.0 / p[2];
                let qb = -2.0 * (1.0 + u / p[2]);
                let qc = p[1] + u * u / p[2] + c0 - rho;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc < 0.0 {
                    continue;
                }
                let lo = ((-qb - disc.sqrt()) / (2.0 * qa)).max(0.0);
                let hi = ((-qb + disc.sqrt()) / (2.0 * qa)).min(rest);
                if lo > hi {
                    continue;
                }
                for q1 in [lo, hi] {
                    let q = [q0, q1, rest - q1];
                    best = best.max(q[0] * a[0] + q[1] * a[1] + q[2] * a[2]);
                }
            }
            _ => panic!("grid oracle supports K = 2 or 3"),
        }
    }
    best
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}
