//! Radius calibration: Pearson's multinomial statistic, Wilson–Hilferty χ²
//! quantiles on top of Acklam's inverse normal, and radius schedules.

use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::numerics::ProbVector;

const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACKLAM_P_LOW: f64 = 0.02425;

/// Acklam's rational approximation of the standard normal quantile
/// (relative error below 1.15e-9).
pub fn inverse_normal(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Probability { value: p });
    }
    let (a, b, c, d) = (ACKLAM_A, ACKLAM_B, ACKLAM_C, ACKLAM_D);
    let tail = |q: f64| {
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    };
    let z = if p < ACKLAM_P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - ACKLAM_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    Ok(z)
}

/// Wilson–Hilferty approximation of the α-quantile of χ² with `dof` degrees
/// of freedom: `m (1 − 2/(9m) + z_α √(2/(9m)))³`.
pub fn chi2_quantile_wh(dof: u32, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(invalid("chi-square degrees of freedom must be at least 1"));
    }
    let z = inverse_normal(alpha)?;
    let m = dof as f64;
    let h = 2.0 / (9.0 * m);
    let base = 1.0 - h + z * h.sqrt();
    Ok(m * base.max(0.0).powi(3))
}

/// Pearson's statistic `n Σ_k (p̂_k − p°_k)² / p°_k` for multinomial counts.
pub fn pearson_statistic(counts: &[u64], p0: &ProbVector) -> Result<f64> {
    if counts.len() != p0.len() {
        return Err(Error::DimensionMismatch {
            expected: p0.len(),
            got: counts.len(),
        });
    }
    if let Some(index) = p0.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroReference { index });
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(invalid("Pearson statistic needs at least one observation"));
    }
    let nf = n as f64;
    let stat = counts
        .iter()
        .zip(p0.as_slice())
        .map(|(&c, &p)| {
            let diff = c as f64 / nf - p;
            diff * diff / p
        })
        .sum::<f64>();
    Ok(nf * stat)
}

/// Rule mapping a sample size to an ambiguity radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusSchedule {
    /// `χ²_{K−1, α} / n`, targeting α-coverage of the true mixture.
    Calibrated { alpha: f64, groups: usize },
    /// `c · n⁻²`.
    Fast { c: f64 },
    /// `c / n` with a free constant (frontier sweeps).
    PerSample { c: f64 },
    /// Radius zero: plain empirical risk minimization.
    Zero,
    /// Infinite radius (always covers).
    Unbounded,
}

impl RadiusSchedule {
    pub fn calibrated(alpha: f64, groups: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Probability { value: alpha });
        }
        if groups < 2 {
            return Err(invalid("calibrated schedule needs at least two groups"));
        }
        Ok(Self::Calibrated { alpha, groups })
    }

    pub fn fast(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("fast schedule constant must be positive, got {c}")));
        }
        Ok(Self::Fast { c })
    }

    pub fn per_sample(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid(format!("per-sample constant must be nonnegative, got {c}")));
        }
        Ok(Self::PerSample { c })
    }

    /// ε_n for this schedule.
    pub fn radius(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(invalid("radius needs n >= 1"));
        }
        let nf = n as f64;
        Ok(match *self {
            Self::Calibrated { alpha, groups } => {
                chi2_quantile_wh(groups as u32 - 1, alpha)? / nf
            }
            Self::Fast { c } => c / (nf * nf),
            Self::PerSample { c } => c / nf,
            Self::Zero => 0.0,
            Self::Unbounded => f64::INFINITY,
        })
    }

    /// Stable identifier used as the CSV series key.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RadiusSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Calibrated { alpha, .. } => write!(f, "calibrated_{alpha:.2}"),
            Self::Fast { c } => write!(f, "fast_{c}"),
            Self::PerSample { c } => write!(f, "per_sample_{c}"),
            Self::Zero => f.write_str("erm"),
            Self::Unbounded => f.write_str("unbounded"),
        }
    }
}
