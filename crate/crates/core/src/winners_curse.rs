//! Winner's-curse adjustment for the best pooled policy: inference
//! conditional on the winner being the argmax, and the hybrid estimator
//! that also conditions on the winner lying inside a level-(1−β)
//! simultaneous confidence set.
//!
//! Estimates are treated as exactly jointly normal with the supplied
//! covariance.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Result, TvaError};
use crate::serde_ext;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BETA: f64 = 0.005;
/// Off-diagonal correlation below which coordinates count as independent.
pub const INDEPENDENCE_TOL: f64 = 1e-12;
const BISECT_REL_TOL: f64 = 1e-8;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// ln Φ(x), accurate far into the lower tail.
pub fn log_ndtr(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic series for the Mills ratio.
        let x2 = 1.0 / (x * x);
        let series = 1.0 - x2 * (1.0 - 3.0 * x2 * (1.0 - 5.0 * x2 * (1.0 - 7.0 * x2)));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF at `y` of N(μ, σ²) truncated to `[lower, upper]` (infinite ends allowed).
pub fn truncated_normal_cdf(y: f64, mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    if y <= lower {
        return 0.0;
    }
    if y >= upper {
        return 1.0;
    }
    let a = (lower - mu) / sigma;
    let b = (upper - mu) / sigma;
    let z = (y - mu) / sigma;
    if a > 0.0 {
        // Right tail: work with survival functions, lnQ(x) = lnΦ(−x).
        let la = log_ndtr(-a);
        let num = -(log_ndtr(-z) - la).exp_m1();
        let den = if b.is_finite() { -(log_ndtr(-b) - la).exp_m1() } else { 1.0 };
        (num / den).clamp(0.0, 1.0)
    } else if b < 0.0 {
        let lb = log_ndtr(b);
        let ea = if a.is_finite() { (log_ndtr(a) - lb).exp() } else { 0.0 };
        let num = (log_ndtr(z) - lb).exp() - ea;
        let den = 1.0 - ea;
        (num / den).clamp(0.0, 1.0)
    } else {
        let pa = if a.is_finite() { norm_cdf(a) } else { 0.0 };
        let pb = if b.is_finite() { norm_cdf(b) } else { 1.0 };
        ((norm_cdf(z) - pa) / (pb - pa)).clamp(0.0, 1.0)
    }
}

fn check_vcov(eta: &[f64], vcov: &DMatrix<f64>) -> Result<()> {
    let j = eta.len();
    if j == 0 {
        return Err(TvaError::InvalidArgument("no estimates supplied".into()));
    }
    if vcov.shape() != (j, j) {
        return Err(TvaError::InvalidArgument(format!(
            "covariance is {}×{}, expected {j}×{j}",
            vcov.nrows(),
            vcov.ncols()
        )));
    }
    Ok(())
}

/// Index of the largest estimate; ties go to the lowest index.
pub fn argmax(eta: &[f64]) -> usize {
    let mut best = 0;
    for (j, &e) in eta.iter().enumerate() {
        if e > eta[best] {
            best = j;
        }
    }
    best
}

/// Truncation interval of the winning coordinate given the selection event
/// and the statistic `Z = η̂ − (Σe_w / Σ_ww)·η̂_w`.
pub fn truncation_bounds(eta: &[f64], vcov: &DMatrix<f64>, winner: usize) -> Result<(f64, f64)> {
    check_vcov(eta, vcov)?;
    if winner >= eta.len() {
        return Err(TvaError::InvalidArgument(format!("winner {winner} out of range")));
    }
    let sww = vcov[(winner, winner)];
    if !(sww > 0.0) {
        return Err(TvaError::Numerical(format!("winner variance is {sww}, must be positive")));
    }
    if eta.iter().any(|&e| e > eta[winner]) {
        return Err(TvaError::InvalidArgument(format!("policy {winner} is not the argmax")));
    }
    let yw = eta[winner];
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for j in 0..eta.len() {
        if j == winner {
            continue;
        }
        let c = vcov[(j, winner)] / sww;
        let z = eta[j] - c * yw;
        let slope = 1.0 - c;
        if slope > INDEPENDENCE_TOL {
            lower = lower.max(z / slope);
        } else if slope < -INDEPENDENCE_TOL {
            upper = upper.min(z / slope);
        }
    }
    Ok((lower, upper))
}

/// Solve `f(μ) = target` for decreasing `f` by bisection on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// μ solving `F_TN(naive; μ, σ², [L, U]) = 1 − q`, i.e. the conditional
/// q-quantile-unbiased estimate. `q = 1/2` gives the median-unbiased estimate.
pub fn conditional_quantile_estimate(naive: f64, variance: f64, lower: f64, upper: f64, q: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(TvaError::Numerical(format!("variance is {variance}, must be positive")));
    }
    let sigma = variance.sqrt();
    let slack = 1e-9 * sigma;
    if naive < lower - slack || naive > upper + slack || !(lower < upper) {
        return Err(TvaError::InvalidArgument(format!(
            "estimate {naive} is outside its truncation interval [{lower}, {upper}]"
        )));
    }
    let y = naive.clamp(lower, upper);
    let target = 1.0 - q;
    let f = |mu: f64| truncated_normal_cdf(y, mu, sigma, lower, upper);
    let mut half = 10.0 * sigma;
    for attempt in 0..2 {
        let (lo, hi) = (y - half, y + half);
        if f(lo) >= target && f(hi) <= target {
            return Ok(bisect(f, target, lo, hi, BISECT_REL_TOL * sigma));
        }
        if attempt == 0 {
            half = 1e6 * sigma;
        }
    }
    Err(TvaError::Numerical(format!(
        "conditional estimate not bracketed within ±1e6σ of {naive}"
    )))
}

pub fn conditional_median_estimate(naive: f64, variance: f64, lower: f64, upper: f64) -> Result<f64> {
    conditional_quantile_estimate(naive, variance, lower, upper, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    /// Monte Carlo draws for the max-|normal| quantile under correlation.
    pub draws: usize,
    pub seed: u64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { draws: 50_000, seed: 0x5eed_7a11 }
    }
}

/// `1 − β` quantile of `max_j |ξ_j| / σ_j` for ξ ~ N(0, Σ).
pub fn projection_critical_value(vcov: &DMatrix<f64>, beta: f64, opts: &ProjectionOptions) -> Result<f64> {
    let j = vcov.nrows();
    let sd: Vec<f64> = (0..j).map(|i| vcov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|s| !(*s > 0.0)) {
        return Err(TvaError::Numerical(format!("estimate {i} has non-positive variance")));
    }
    let corr = DMatrix::from_fn(j, j, |a, b| vcov[(a, b)] / (sd[a] * sd[b]));
    let independent = (0..j).all(|a| (0..j).all(|b| a == b || corr[(a, b)].abs() < INDEPENDENCE_TOL));
    if independent {
        let p = 0.5 * (1.0 + (1.0 - beta).powf(1.0 / j as f64));
        return Ok(inverse_norm_cdf(p));
    }
    let chol = corr
        .clone()
        .cholesky()
        .map(|c| c.l())
        .or_else(|| {
            let eps = 1e-10;
            (corr + DMatrix::identity(j, j) * eps).cholesky().map(|c| c.l())
        })
        .ok_or_else(|| TvaError::Numerical("covariance is not positive semidefinite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z = vec![0.0; j];
    let mut maxima: Vec<f64> = Vec::with_capacity(opts.draws);
    for _ in 0..opts.draws {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut m: f64 = 0.0;
        for a in 0..j {
            let mut s = 0.0;
            for b in 0..=a {
                s += chol[(a, b)] * z[b];
            }
            m = m.max(s.abs());
        }
        maxima.push(m);
    }
    let idx = (((1.0 - beta) * opts.draws as f64).ceil() as usize).clamp(1, opts.draws) - 1;
    let (_, q, _) = maxima.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    Ok(*q)
}

/// Standard normal quantile.
pub fn inverse_norm_cdf(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridEstimate {
    /// Index of the winning coordinate.
    pub best_pool: usize,
    pub naive: f64,
    pub std_error: f64,
    #[serde(with = "serde_ext::interval")]
    pub truncation: (f64, f64),
    pub projection_critical_value: f64,
    pub projection_interval: (f64, f64),
    pub adjusted_point: f64,
    pub hybrid_ci: (f64, f64),
    pub alpha: f64,
    pub beta: f64,
}

/// Hybrid estimator and confidence interval for the winner of `eta`.
pub fn hybrid(eta: &[f64], vcov: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<HybridEstimate> {
    hybrid_with(eta, vcov, alpha, beta, &ProjectionOptions::default())
}

pub fn hybrid_with(
    eta: &[f64],
    vcov: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    opts: &ProjectionOptions,
) -> Result<HybridEstimate> {
    if !(0.0 < beta && beta < alpha && alpha < 1.0) {
        return Err(TvaError::InvalidArgument(format!("need 0 < β < α < 1, got α = {alpha}, β = {beta}")));
    }
    check_vcov(eta, vcov)?;
    let c = projection_critical_value(vcov, beta, opts)?;
    hybrid_with_critical_value(eta, vcov, alpha, beta, c)
}

/// [`hybrid_with`] for a precomputed projection critical value, e.g. when
/// many draws share one covariance.
pub fn hybrid_with_critical_value(
    eta: &[f64],
    vcov: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    c: f64,
) -> Result<HybridEstimate> {
    if !(0.0 < beta && beta < alpha && alpha < 1.0) {
        return Err(TvaError::InvalidArgument(format!("need 0 < β < α < 1, got α = {alpha}, β = {beta}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(TvaError::InvalidArgument(format!("projection critical value must be positive, got {c}")));
    }
    check_vcov(eta, vcov)?;
    let w = argmax(eta);
    let (lower, upper) = truncation_bounds(eta, vcov, w)?;
    let sigma = vcov[(w, w)].sqrt();
    let y = eta[w];
    let (plo, phi) = (y - c * sigma, y + c * sigma);

    let f = |mu: f64| {
        let lo = lower.max(mu - c * sigma);
        let hi = upper.min(mu + c * sigma);
        truncated_normal_cdf(y, mu, sigma, lo, hi)
    };
    let tol = BISECT_REL_TOL * sigma;
    let tail = (alpha - beta) / (2.0 * (1.0 - beta));
    let adjusted = bisect(f, 0.5, plo, phi, tol);
    let ci_lo = bisect(f, 1.0 - tail, plo, phi, tol);
    let ci_hi = bisect(f, tail, plo, phi, tol);
    Ok(HybridEstimate {
        best_pool: w,
        naive: y,
        std_error: sigma,
        truncation: (lower, upper),
        projection_critical_value: c,
        projection_interval: (plo, phi),
        adjusted_point: adjusted,
        hybrid_ci: (ci_lo, ci_hi),
        alpha,
        beta,
    })
}
