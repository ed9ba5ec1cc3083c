//! Deterministic randomness, small dense-vector helpers, simplex projection
//! and log-log slope fitting.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};

use crate::error::{check_finite, invalid, Error, Result};

/// Multiplier applied to the replication index when deriving a seed.
pub const SEED_REPLICATION_STRIDE: u64 = 17;
/// Multiplier applied to the sample size when deriving a seed.
pub const SEED_SAMPLE_STRIDE: u64 = 1;

/// A seeded ChaCha8 stream. The same seed yields the same draws on every
/// platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Same seed, separate ChaCha stream: draws never overlap with
    /// `new(seed)` or with another stream id.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape must be positive")
            .sample(&mut self.inner)
    }

    pub fn binomial(&mut self, trials: u64, p: f64) -> u64 {
        if p <= 0.0 || trials == 0 {
            return 0;
        }
        if p >= 1.0 {
            return trials;
        }
        Binomial::new(trials, p)
            .expect("binomial parameters validated above")
            .sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn from a categorical distribution given by `cdf` (cumulative,
    /// last entry 1).
    pub fn categorical_cdf(&mut self, cdf: &[f64]) -> usize {
        let u = self.uniform();
        let idx = cdf.partition_point(|&c| c <= u);
        idx.min(cdf.len() - 1)
    }

    /// Multinomial counts via sequential conditional binomials.
    pub fn multinomial(&mut self, trials: u64, probs: &[f64]) -> Vec<u64> {
        let mut counts = vec![0u64; probs.len()];
        let mut remaining = trials;
        let mut mass_left = 1.0;
        for (k, &p) in probs.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if k + 1 == probs.len() {
                counts[k] = remaining;
                break;
            }
            let cond = if mass_left > 0.0 {
                (p / mass_left).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let c = self.binomial(remaining, cond);
            counts[k] = c;
            remaining -= c;
            mass_left -= p;
        }
        counts
    }

    /// Uniform draw on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let mut v = self.normal_vec(dim);
            let n = norm(&v);
            if n > 1e-12 {
                v.iter_mut().for_each(|x| *x /= n);
                return v;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `base + 17·replication + n`, wrapping on overflow.
pub fn affine_seed(base: u64, replication: u64, n: u64) -> u64 {
    base.wrapping_add(SEED_REPLICATION_STRIDE.wrapping_mul(replication))
        .wrapping_add(SEED_SAMPLE_STRIDE.wrapping_mul(n))
}

pub fn make_rng(base_seed: u64, replication: u64, n: u64) -> RngStream {
    RngStream::new(affine_seed(base_seed, replication, n))
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates nonnegativity and a unit sum (within 1e-9), then
    /// renormalizes so the sum is 1 to rounding.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        check_finite(&entries)?;
        if let Some(i) = entries.iter().position(|&x| x < 0.0) {
            return Err(invalid(format!(
                "probability entry {i} is negative ({})",
                entries[i]
            )));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self::normalized_unchecked(entries, sum))
    }

    /// Normalizes nonnegative weights with a positive sum.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        check_finite(&weights)?;
        if weights.iter().any(|&x| x < 0.0) {
            return Err(invalid("weights must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(invalid("weights must have a positive sum"));
        }
        Ok(Self::normalized_unchecked(weights, sum))
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform distribution needs at least one atom");
        Self(vec![1.0 / len as f64; len])
    }

    fn normalized_unchecked(mut entries: Vec<f64>, sum: f64) -> Self {
        entries.iter_mut().for_each(|x| *x /= sum);
        Self(entries)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Expectation of `values` under this distribution.
    pub fn expect(&self, values: &[f64]) -> f64 {
        dot(&self.0, values)
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Result<ProbVector> {
    if v.is_empty() {
        return Err(Error::Empty("vector to project"));
    }
    check_finite(v)?;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        } else {
            break;
        }
    }
    let projected: Vec<f64> = v.iter().map(|&x| (x - threshold).max(0.0)).collect();
    let sum: f64 = projected.iter().sum();
    Ok(ProbVector::normalized_unchecked(projected, sum))
}

/// Clip negative entries at zero and renormalize. Not a Euclidean projection;
/// kept for ablations against [`project_simplex`].
pub fn clip_renormalize(v: &[f64]) -> Result<ProbVector> {
    if v.is_empty() {
        return Err(Error::Empty("vector to clip"));
    }
    check_finite(v)?;
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum <= 0.0 {
        return Ok(ProbVector::uniform(v.len()));
    }
    Ok(ProbVector::normalized_unchecked(clipped, sum))
}

/// Least-squares fit of `log y = intercept + slope · log x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the fit residuals; zero for two points.
    pub slope_stderr: f64,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(invalid("log-log fit needs at least two points"));
    }
    check_finite(xs)?;
    check_finite(ys)?;
    if xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return Err(invalid("log-log fit needs strictly positive values"));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("x values must be strictly increasing"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if lx.len() > 2 {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LogLogFit {
        slope,
        intercept,
        slope_stderr,
    })
}

pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    fit_loglog(xs, ys).map(|fit| fit.slope)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rescales `v` onto the ball of the given radius if it lies outside.
pub fn project_ball(v: &mut [f64], radius: f64) {
    let n = norm(v);
    if n > radius {
        let s = radius / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error (sample standard deviation over √len).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, (var / xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projection_examples() {
        let p = project_simplex(&[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(p[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.7, epsilon = 1e-15);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        let p = project_simplex(&[0.6, 0.6]).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn projection_rejects_bad_input() {
        assert!(matches!(
            project_simplex(&[1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(project_simplex(&[]).is_err());
    }

    #[test]
    fn clip_renormalize_differs_from_projection() {
        let v = [0.9, 0.5, -0.2];
        let clip = clip_renormalize(&v).unwrap();
        let proj = project_simplex(&v).unwrap();
        assert_abs_diff_eq!(clip[0], 0.9 / 1.4, epsilon = 1e-15);
        assert_abs_diff_eq!(proj[0], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn slope_examples() {
        let xs = [1000.0, 2000.0, 4000.0, 8000.0, 16000.0];
        let inv_sqrt: Vec<f64> = xs.iter().map(|x: &f64| x.powf(-0.5)).collect();
        assert_abs_diff_eq!(fit_loglog_slope(&xs, &inv_sqrt).unwrap(), -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit_loglog_slope(&xs, &[2.0; 5]).unwrap(), 0.0, epsilon = 1e-12);
        let quarter: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.25)).collect();
        assert_abs_diff_eq!(fit_loglog_slope(&xs, &quarter).unwrap(), -0.25, epsilon = 1e-12);
    }

    #[test]
    fn slope_errors() {
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(fit_loglog_slope(&[2.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn seeds_follow_affine_scheme() {
        assert_eq!(make_rng(1000, 0, 0).seed(), 1000);
        assert_eq!(make_rng(1000, 2, 500).seed(), 1534);
        let mut a = make_rng(1000, 2, 500);
        let mut b = make_rng(1000, 2, 500);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_have_sane_first_moments() {
        for seed in [1u64, 2, 3] {
            let mut rng = RngStream::new(seed);
            let u: Vec<f64> = (0..20_000).map(|_| rng.uniform()).collect();
            let z: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
            assert!((mean(&u) - 0.5).abs() < 0.01);
            assert!(mean(&z).abs() < 0.03);
        }
        let mut a = RngStream::new(1);
        let mut b = RngStream::new(2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn multinomial_counts_sum_to_trials() {
        let mut rng = RngStream::new(9);
        let counts = rng.multinomial(1000, &[0.2, 0.0, 0.5, 0.3]);
        assert_eq!(counts.iter().sum::<u64>(), 1000);
        assert_eq!(counts[1], 0);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        let p = ProbVector::from_weights(vec![1.0, 3.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn ball_projection_caps_norm() {
        let mut v = vec![3.0, 4.0];
        project_ball(&mut v, 1.0);
        assert_abs_diff_eq!(norm(&v), 1.0, epsilon = 1e-15);
        let mut w = vec![0.1, 0.1];
        project_ball(&mut w, 1.0);
        assert_eq!(w, vec![0.1, 0.1]);
    }
}
