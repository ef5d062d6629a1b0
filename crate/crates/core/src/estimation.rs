//! Post-selection regression of outcomes on pooled-policy dummies, with
//! observation weights, absorbed fixed effects and robust variances.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvaError};
use crate::pooling::PooledPartition;

/// Most fixed-effect factors that [`fit`] will absorb.
pub const MAX_FE_FACTORS: usize = 3;
const DEMEAN_TOL: f64 = 1e-10;
const DEMEAN_MAX_ITER: usize = 10_000;

/// `[intercept | pool dummies]`, n × (1 + #pools); the control pool is the
/// omitted reference category.
pub fn pooled_dummies(partition: &PooledPartition, assignments: &[usize]) -> Result<DMatrix<f64>> {
    let p = partition.pool_count();
    let k = partition.pool_of.len();
    let mut z = DMatrix::zeros(assignments.len(), p + 1);
    let mut counts = vec![0usize; p];
    for (i, &a) in assignments.iter().enumerate() {
        if a >= k {
            return Err(TvaError::UnknownPolicy(format!("unit {i} has policy index {a} outside 0..{k}")));
        }
        z[(i, 0)] = 1.0;
        if let Some(j) = partition.pool_of[a] {
            z[(i, j + 1)] = 1.0;
            counts[j] += 1;
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(TvaError::EmptyPool(partition.pools[j].label.clone()));
    }
    Ok(z)
}

/// Units per pool (non-control pools, in partition order).
pub fn pool_counts(partition: &PooledPartition, assignments: &[usize]) -> Vec<usize> {
    let mut counts = vec![0usize; partition.pool_count()];
    for &a in assignments {
        if let Some(Some(j)) = partition.pool_of.get(a) {
            counts[*j] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VcovKind {
    Hc1,
    Cr1,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions<'a> {
    pub weights: Option<&'a [f64]>,
    /// Integer-coded categorical factors to absorb (at most three).
    pub fixed_effects: &'a [Vec<usize>],
    pub clusters: Option<&'a [usize]>,
    /// Regressor names used in error messages, one per column of Z.
    pub names: Option<&'a [String]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub r_squared: f64,
    pub n_obs: usize,
    pub clusters: Option<usize>,
    pub absorbed_levels: usize,
    pub fe_iterations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    /// Pool effects relative to the control pool (columns 1.. of Z).
    pub eta_hat: Vec<f64>,
    /// Covariance of `eta_hat`.
    pub vcov: Vec<Vec<f64>>,
    /// Intercept (control-pool mean); absent when fixed effects absorb it.
    pub intercept: Option<f64>,
    pub vcov_kind: VcovKind,
    /// Kish effective sample size, (Σw)²/Σw².
    pub n_effective: f64,
    pub dof: usize,
    pub diagnostics: Diagnostics,
}

impl EstimationResult {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.eta_hat.len()).map(|i| self.vcov[i][i].max(0.0).sqrt()).collect()
    }

    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        let p = self.eta_hat.len();
        DMatrix::from_fn(p, p, |i, j| self.vcov[i][j])
    }
}

fn factor_levels(codes: &[usize]) -> usize {
    codes.iter().copied().max().map_or(0, |m| m + 1)
}

/// Weighted alternating projections: remove every factor's group means from
/// each column until no entry moves by more than the tolerance.
fn absorb(columns: &mut [DVector<f64>], factors: &[Vec<usize>], w: &[f64]) -> Result<usize> {
    if factors.is_empty() {
        return Ok(0);
    }
    let levels: Vec<usize> = factors.iter().map(|f| factor_levels(f)).collect();
    let wsum: Vec<Vec<f64>> = factors
        .iter()
        .zip(&levels)
        .map(|(f, &l)| {
            let mut s = vec![0.0; l];
            for (i, &c) in f.iter().enumerate() {
                s[c] += w[i];
            }
            s
        })
        .collect();
    let mut max_iter = 0;
    for col in columns.iter_mut() {
        let scale = col.amax().max(1.0);
        let mut iter = 0;
        loop {
            iter += 1;
            let mut moved: f64 = 0.0;
            for (fi, f) in factors.iter().enumerate() {
                let mut sums = vec![0.0; levels[fi]];
                for (i, &c) in f.iter().enumerate() {
                    sums[c] += w[i] * col[i];
                }
                for (s, &ws) in sums.iter_mut().zip(&wsum[fi]) {
                    if ws > 0.0 {
                        *s /= ws;
                    }
                }
                for (i, &c) in f.iter().enumerate() {
                    col[i] -= sums[c];
                }
                moved = moved.max(sums.iter().fold(0.0f64, |a, s| a.max(s.abs())));
            }
            if factors.len() == 1 || moved <= DEMEAN_TOL * scale {
                break;
            }
            if iter >= DEMEAN_MAX_ITER {
                return Err(TvaError::NonConvergence(format!(
                    "fixed-effect demeaning did not reach {DEMEAN_TOL} after {DEMEAN_MAX_ITER} sweeps"
                )));
            }
        }
        max_iter = max_iter.max(iter);
    }
    Ok(max_iter)
}

/// Weighted least squares of y on Z (column 0 must be the intercept) with
/// absorbed fixed effects and HC1 or CR1 covariance.
pub fn fit(z: &DMatrix<f64>, y: &[f64], opts: &FitOptions<'_>) -> Result<EstimationResult> {
    let (n, cols) = z.shape();
    if cols == 0 || z.column(0).iter().any(|&v| v != 1.0) {
        return Err(TvaError::InvalidArgument("column 0 of Z must be the intercept".into()));
    }
    if y.len() != n {
        return Err(TvaError::InvalidArgument(format!("y has {} rows, Z has {n}", y.len())));
    }
    if opts.fixed_effects.len() > MAX_FE_FACTORS {
        return Err(TvaError::InvalidArgument(format!(
            "{} fixed-effect factors given, at most {MAX_FE_FACTORS} are supported",
            opts.fixed_effects.len()
        )));
    }
    for f in opts.fixed_effects {
        if f.len() != n {
            return Err(TvaError::InvalidArgument(format!("fixed-effect factor has {} rows, expected {n}", f.len())));
        }
    }
    let ones;
    let w: &[f64] = match opts.weights {
        Some(w) => {
            if w.len() != n {
                return Err(TvaError::InvalidArgument(format!("{} weights for {n} units", w.len())));
            }
            if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(TvaError::InvalidArgument(format!("weight of unit {i} is {}", w[i])));
            }
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let name = |j: usize| -> String {
        opts.names
            .and_then(|nm| nm.get(j).cloned())
            .unwrap_or_else(|| format!("column {j}"))
    };

    let has_fe = !opts.fixed_effects.is_empty();
    let first = usize::from(has_fe);
    let mut columns: Vec<DVector<f64>> = (first..cols).map(|j| z.column(j).clone_owned()).collect();
    columns.push(DVector::from_column_slice(y));
    let fe_iterations = absorb(&mut columns, opts.fixed_effects, w)?;
    let yv = columns.pop().expect("outcome column");
    let p = columns.len();

    let absorbed_levels: usize = if has_fe {
        opts.fixed_effects.iter().map(|f| factor_levels(f)).sum::<usize>() - (opts.fixed_effects.len() - 1)
    } else {
        0
    };
    let k_params = p + absorbed_levels;
    if n <= k_params {
        return Err(TvaError::InvalidArgument(format!(
            "{n} observations cannot identify {k_params} parameters"
        )));
    }

    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut a = DMatrix::zeros(n, p);
    for (j, c) in columns.iter().enumerate() {
        for i in 0..n {
            a[(i, j)] = sw[i] * c[i];
        }
    }
    for (j, c) in columns.iter().enumerate() {
        let orig = z.column(j + first).norm();
        if c.norm() <= 1e-9 * orig.max(1.0) {
            return Err(TvaError::Collinear(format!("{} is absorbed by the fixed effects", name(j + first))));
        }
    }
    let b = DVector::from_iterator(n, (0..n).map(|i| sw[i] * yv[i]));
    let gram = a.tr_mul(&a);
    let svd = SVD::new(gram.clone(), true, true);
    let smax = svd.singular_values.max();
    let tiny: Vec<usize> = (0..p).filter(|&i| svd.singular_values[i] < 1e-12 * smax).collect();
    if !tiny.is_empty() {
        let vt = svd.v_t.as_ref().expect("v requested");
        let mut offenders: Vec<usize> = Vec::new();
        for &t in &tiny {
            for j in 0..p {
                if vt[(t, j)].abs() > 1e-8 && !offenders.contains(&j) {
                    offenders.push(j);
                }
            }
        }
        offenders.sort_unstable();
        let names: Vec<String> = offenders.iter().map(|&j| name(j + first)).collect();
        return Err(TvaError::Collinear(names.join(", ")));
    }
    let bread = gram
        .clone()
        .cholesky()
        .ok_or_else(|| TvaError::Numerical("Z'WZ is not positive definite".into()))?
        .inverse();
    let coef = &bread * a.tr_mul(&b);
    let resid = &b - &a * &coef; // √w-scaled residuals

    let mut warnings = Vec::new();
    let (meat, kind, n_clusters) = match opts.clusters {
        None => {
            let mut meat = DMatrix::zeros(p, p);
            for i in 0..n {
                let row = a.row(i);
                let e2 = resid[i] * resid[i];
                meat += row.transpose() * row * e2;
            }
            meat *= n as f64 / (n - k_params) as f64;
            (meat, VcovKind::Hc1, None)
        }
        Some(cl) => {
            if cl.len() != n {
                return Err(TvaError::InvalidArgument(format!("{} cluster labels for {n} units", cl.len())));
            }
            let g = factor_levels(cl);
            let mut scores = DMatrix::zeros(g, p);
            let mut sizes = vec![0usize; g];
            for i in 0..n {
                sizes[cl[i]] += 1;
                for j in 0..p {
                    scores[(cl[i], j)] += a[(i, j)] * resid[i];
                }
            }
            let used: Vec<usize> = (0..g).filter(|&c| sizes[c] > 0).collect();
            let g_eff = used.len();
            if g_eff < 2 {
                return Err(TvaError::InvalidArgument("cluster-robust variance needs at least two clusters".into()));
            }
            let singletons = used.iter().filter(|&&c| sizes[c] == 1).count();
            if singletons > 0 {
                warnings.push(format!("{singletons} singleton cluster(s)"));
            }
            let s = scores.tr_mul(&scores);
            let gf = g_eff as f64;
            let factor = gf / (gf - 1.0) * (n as f64 - 1.0) / (n - k_params) as f64;
            (s * factor, VcovKind::Cr1, Some(g_eff))
        }
    };
    let vcov_full = &bread * meat * &bread;
    let vcov_full = (&vcov_full + vcov_full.transpose()) * 0.5;

    let fitted_ss = {
        let ybar = if has_fe {
            0.0
        } else {
            (0..n).map(|i| w[i] * y[i]).sum::<f64>() / w.iter().sum::<f64>()
        };
        let tss: f64 = (0..n).map(|i| w[i] * (yv[i] - ybar).powi(2)).sum();
        let rss = resid.norm_squared();
        if tss > 0.0 {
            1.0 - rss / tss
        } else {
            1.0
        }
    };

    let (eta_hat, vcov, intercept) = if has_fe {
        let v = (0..p).map(|i| (0..p).map(|j| vcov_full[(i, j)]).collect()).collect();
        (coef.iter().copied().collect(), v, None)
    } else {
        let v = (1..p).map(|i| (1..p).map(|j| vcov_full[(i, j)]).collect()).collect();
        (coef.iter().skip(1).copied().collect(), v, Some(coef[0]))
    };
    let wsum: f64 = w.iter().sum();
    let w2sum: f64 = w.iter().map(|v| v * v).sum();
    Ok(EstimationResult {
        eta_hat,
        vcov,
        intercept,
        vcov_kind: kind,
        n_effective: wsum * wsum / w2sum,
        dof: n - k_params,
        diagnostics: Diagnostics {
            r_squared: fitted_ss,
            n_obs: n,
            clusters: n_clusters,
            absorbed_levels,
            fe_iterations,
            warnings,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestPolicy {
    /// Index into the partition's pools; `None` when everything was pruned.
    pub pool: Option<usize>,
    pub no_effective_policy: bool,
}

/// Pool with the largest estimated effect. Exact ties go to the pool whose
/// minimal policy has the smaller canonical index.
pub fn best_policy(result: &EstimationResult, partition: &PooledPartition) -> BestPolicy {
    let mut best: Option<usize> = None;
    for (j, &e) in result.eta_hat.iter().enumerate() {
        best = match best {
            None => Some(j),
            Some(b) => {
                let eb = result.eta_hat[b];
                if e > eb || (e == eb && partition.pools[j].first() < partition.pools[b].first()) {
                    Some(j)
                } else {
                    Some(b)
                }
            }
        };
    }
    BestPolicy { pool: best, no_effective_policy: best.is_none() }
}
