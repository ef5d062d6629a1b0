//! Monte Carlo harness: data generation for the default design and the
//! sparsity-relaxation regimes, the TVA pipeline against the direct-OLS
//! comparator, and the performance metrics.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvaError};
use crate::estimation::{best_policy, fit, pooled_dummies, FitOptions};
use crate::lattice::{alpha_to_beta, FactorialDesign};
use crate::pooling::{pool, PooledPartition};
use crate::precondition::{puffer_factorial, PufferDecomposition};
use crate::selection::{backward_eliminate, closed_form};
use crate::winners_curse::{self, norm_cdf, ProjectionOptions};

/// Rate at which a coefficient shrinks with the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Constant,
    /// 1/n
    Fast,
    /// 1/√n
    Moderate,
    /// 1/n^0.2
    Slow,
}

impl Decay {
    pub fn factor(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Decay::Constant => 1.0,
            Decay::Fast => 1.0 / n,
            Decay::Moderate => 1.0 / n.sqrt(),
            Decay::Slow => n.powf(-0.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::R1, Regime::R2, Regime::R3, Regime::R4, Regime::R5];

    /// Coefficient groups: (low, high, decay). Each group has `size` members
    /// with base values linearly spaced in [low, high].
    pub fn groups(self) -> &'static [(f64, f64, Decay)] {
        match self {
            Regime::R1 => &[(1.0, 5.0, Decay::Constant), (1.0, 5.0, Decay::Fast)],
            Regime::R2 => &[(1.0, 5.0, Decay::Constant), (1.0, 5.0, Decay::Moderate)],
            Regime::R3 => &[(5.0, 10.0, Decay::Constant), (1.0, 2.0, Decay::Constant), (1.0, 5.0, Decay::Fast)],
            Regime::R4 => &[(1.0, 5.0, Decay::Slow)],
            Regime::R5 => &[(1.0, 5.0, Decay::Slow), (1.0, 5.0, Decay::Moderate)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientRule {
    /// `support_size` coefficients linearly spaced in [1, 5].
    Linspace,
    Regime { regime: Regime },
}

/// Model selection used inside the simulated TVA pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimSelector {
    /// Backward elimination with a Bonferroni per-test level `q / (K − 1)`.
    Bonferroni { q: f64 },
    Lasso { lambda: f64 },
    Backward { p_threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Tva,
    DirectOls,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Tva => "tva",
            Estimator::DirectOls => "direct_ols",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub design: FactorialDesign,
    pub sigma: f64,
    /// Coefficients per group; defaults to the number of arms.
    pub support_size: Option<usize>,
    pub coefficient_rule: CoefficientRule,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub configurations: usize,
    pub seed: u64,
    pub selector: SimSelector,
    pub alpha: f64,
    pub beta: f64,
    pub estimators: Vec<Estimator>,
    pub projection: ProjectionOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            design: FactorialDesign::new(vec![5, 5, 3]).expect("valid design"),
            sigma: 2.3,
            support_size: None,
            coefficient_rule: CoefficientRule::Linspace,
            n_grid: (1..=10).map(|i| i * 1000).collect(),
            replications: 20,
            configurations: 5,
            seed: 0,
            selector: SimSelector::Bonferroni { q: 0.05 },
            alpha: winners_curse::DEFAULT_ALPHA,
            beta: winners_curse::DEFAULT_BETA,
            estimators: vec![Estimator::Tva, Estimator::DirectOls],
            projection: ProjectionOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn support_size(&self) -> usize {
        self.support_size.unwrap_or(self.design.arm_count())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(TvaError::InvalidArgument(format!("σ must be finite and ≥ 0, got {}", self.sigma)));
        }
        let k = self.design.policy_count();
        let groups = match self.coefficient_rule {
            CoefficientRule::Linspace => 1,
            CoefficientRule::Regime { regime } => regime.groups().len(),
        };
        let total = groups * self.support_size();
        if self.support_size() == 0 || total > k - 1 {
            return Err(TvaError::InvalidArgument(format!(
                "{total} support columns requested, design has {} non-intercept columns",
                k - 1
            )));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n <= k) {
            return Err(TvaError::InvalidArgument(format!("n = {n} must exceed K = {k}")));
        }
        if !(0.0 < self.beta && self.beta < self.alpha && self.alpha < 1.0) {
            return Err(TvaError::InvalidArgument("need 0 < β < α < 1".into()));
        }
        Ok(())
    }
}

/// Deterministic seed for a tuple of counters.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A support configuration: marginal columns with base coefficient and decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub terms: Vec<(usize, f64, Decay)>,
}

impl TrueModel {
    pub fn alpha(&self, k: usize, n: usize) -> Vec<f64> {
        let mut a = vec![0.0; k];
        for &(col, base, decay) in &self.terms {
            a[col] = base * decay.factor(n);
        }
        a
    }

    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.terms.iter().map(|t| t.0).collect();
        s.sort_unstable();
        s
    }
}

fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m).map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64).collect()
}

/// Draw configuration `config_id`: a random set of non-intercept columns in
/// random order, with coefficients assigned per the rule.
pub fn sample_configuration(config: &SimulationConfig, config_id: usize) -> TrueModel {
    let k = config.design.policy_count();
    let m = config.support_size();
    let groups: Vec<(f64, f64, Decay)> = match config.coefficient_rule {
        CoefficientRule::Linspace => vec![(1.0, 5.0, Decay::Constant)],
        CoefficientRule::Regime { regime } => regime.groups().to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1, config_id as u64]));
    let cols: Vec<usize> = sample(&mut rng, k - 1, groups.len() * m).into_iter().map(|c| c + 1).collect();
    let mut terms = Vec::with_capacity(cols.len());
    for (g, &(lo, hi, decay)) in groups.iter().enumerate() {
        for (j, v) in linspace(lo, hi, m).into_iter().enumerate() {
            terms.push((cols[g * m + j], v, decay));
        }
    }
    TrueModel { terms }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub assignments: Vec<usize>,
    pub y: Vec<f64>,
    pub true_alpha: Vec<f64>,
    pub true_beta: Vec<f64>,
    pub true_support: Vec<usize>,
    pub true_partition: PooledPartition,
}

/// Uniform cell assignment and `y = Xα⁰ + ε`.
pub fn generate(config: &SimulationConfig, model: &TrueModel, n: usize, seed: u64) -> Result<SimulatedData> {
    let design = &config.design;
    let k = design.policy_count();
    let true_alpha = model.alpha(k, n);
    let true_beta = alpha_to_beta(design, &true_alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let y: Vec<f64> = assignments
        .iter()
        .map(|&a| {
            let e: f64 = StandardNormal.sample(&mut rng);
            true_beta[a] + config.sigma * e
        })
        .collect();
    let true_support = model.support();
    let true_partition = pool(design, &true_support)?;
    Ok(SimulatedData { assignments, y, true_alpha, true_beta, true_support, true_partition })
}

/// |Ŝ ∩ S| / |Ŝ ∪ S|, with 1 when both are empty.
pub fn support_accuracy(estimated: &[usize], truth: &[usize]) -> f64 {
    let a: std::collections::BTreeSet<_> = estimated.iter().copied().filter(|&j| j != 0).collect();
    let b: std::collections::BTreeSet<_> = truth.iter().copied().filter(|&j| j != 0).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// (some-best, min-best) inclusion. `true_best` must be non-empty; its
/// smallest canonical index is the minimum-dosage best policy.
pub fn best_inclusion(estimated_best: &[usize], true_best: &[usize]) -> (bool, bool) {
    let some = estimated_best.iter().any(|p| true_best.contains(p));
    let min = true_best.iter().min().is_some_and(|m| estimated_best.contains(m));
    (some, min)
}

/// Mean of squared errors.
pub fn best_policy_mse(adjusted: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(adjusted.len(), truth.len());
    if adjusted.is_empty() {
        return 0.0;
    }
    adjusted.iter().zip(truth).map(|(a, t)| (a - t).powi(2)).sum::<f64>() / adjusted.len() as f64
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `values` and N(0, 1).
pub fn ks_distance_normal(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// True best pool: largest effect, ties to the smaller minimal policy.
/// `None` when every policy is pruned.
pub fn true_best_pool(partition: &PooledPartition, beta: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, p) in partition.pools.iter().enumerate() {
        let e = beta[p.first()];
        best = match best {
            Some(b) if beta[partition.pools[b].first()] >= e => Some(b),
            _ => Some(j),
        };
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: Estimator,
    /// `None` for direct OLS, which does no selection.
    pub support_accuracy: Option<f64>,
    pub support_correct: Option<bool>,
    pub some_best: bool,
    pub min_best: bool,
    /// Hybrid (adjusted) best-policy estimate minus the true best effect.
    pub adjusted_error: f64,
    pub naive_error: f64,
    /// `(η̂ − η⁰)/se` per pool; filled only when the support is correct.
    pub standardized: Vec<f64>,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub n: usize,
    pub config: usize,
    pub replication: usize,
    pub results: Vec<std::result::Result<EstimatorOutcome, String>>,
}

fn select_support(config: &SimulationConfig, pd: &PufferDecomposition) -> Result<Vec<usize>> {
    match config.selector {
        SimSelector::Bonferroni { q } => {
            let p = q / (pd.k() - 1) as f64;
            Ok(backward_eliminate(pd, p)?.support)
        }
        SimSelector::Lasso { lambda } => {
            let c = pd.fx.tr_mul(&pd.fy);
            let coef = closed_form(&c, lambda);
            Ok((1..coef.len()).filter(|&j| coef[j] != 0.0).collect())
        }
        SimSelector::Backward { p_threshold } => Ok(backward_eliminate(pd, p_threshold)?.support),
    }
}

fn run_tva(config: &SimulationConfig, data: &SimulatedData, true_best: &[usize], true_eta: f64) -> Result<EstimatorOutcome> {
    let design = &config.design;
    let pd = puffer_factorial(design, &data.assignments, &data.y, None)?;
    let support = select_support(config, &pd)?;
    let partition = pool(design, &support)?;
    let accuracy = support_accuracy(&support, &data.true_support);
    let correct = support == data.true_support;
    let pooled = estimate_pools(config, &partition, data)?;
    // An all-pruned model reports the control pool as best.
    let (some_best, min_best) = match &pooled.best {
        Some(b) => best_inclusion(&partition.pools[*b].members, true_best),
        None => best_inclusion(&partition.control_pool, true_best),
    };
    let standardized = if correct {
        let se = pooled.fit.std_errors();
        partition
            .pools
            .iter()
            .enumerate()
            .map(|(j, p)| (pooled.fit.eta_hat[j] - data.true_beta[p.first()]) / se[j])
            .collect()
    } else {
        Vec::new()
    };
    Ok(EstimatorOutcome {
        estimator: Estimator::Tva,
        support_accuracy: Some(accuracy),
        support_correct: Some(correct),
        some_best,
        min_best,
        adjusted_error: pooled.adjusted - true_eta,
        naive_error: pooled.naive - true_eta,
        standardized,
        r_squared: pooled.fit.diagnostics.r_squared,
    })
}

struct PooledFit {
    fit: crate::estimation::EstimationResult,
    best: Option<usize>,
    naive: f64,
    adjusted: f64,
}

fn estimate_pools(config: &SimulationConfig, partition: &PooledPartition, data: &SimulatedData) -> Result<PooledFit> {
    let z = pooled_dummies(partition, &data.assignments)?;
    let fit = fit(&z, &data.y, &FitOptions::default())?;
    let best = best_policy(&fit, partition).pool;
    // With everything pruned the estimated best effect is the control's, zero.
    let (naive, adjusted) = match best {
        None => (0.0, 0.0),
        Some(_) => {
            let h = winners_curse::hybrid_with(&fit.eta_hat, &fit.vcov_matrix(), config.alpha, config.beta, &config.projection)?;
            (h.naive, h.adjusted_point)
        }
    };
    Ok(PooledFit { fit, best, naive, adjusted })
}

fn run_direct_ols(config: &SimulationConfig, data: &SimulatedData, true_best: &[usize], true_eta: f64) -> Result<EstimatorOutcome> {
    let k = config.design.policy_count();
    let singletons: Vec<Vec<usize>> = (1..k).map(|p| vec![p]).collect();
    let partition = PooledPartition::from_groups(&config.design, &singletons)?;
    let pooled = estimate_pools(config, &partition, data)?;
    let (some_best, min_best) = match pooled.best {
        Some(b) => best_inclusion(&partition.pools[b].members, true_best),
        None => (false, false),
    };
    Ok(EstimatorOutcome {
        estimator: Estimator::DirectOls,
        support_accuracy: None,
        support_correct: None,
        some_best,
        min_best,
        adjusted_error: pooled.adjusted - true_eta,
        naive_error: pooled.naive - true_eta,
        standardized: Vec::new(),
        r_squared: pooled.fit.diagnostics.r_squared,
    })
}

/// One simulated dataset scored by every configured estimator.
pub fn run_replication(
    config: &SimulationConfig,
    model: &TrueModel,
    n: usize,
    config_id: usize,
    replication: usize,
) -> Result<ReplicationOutcome> {
    let seed = derive_seed(config.seed, &[2, n as u64, config_id as u64, replication as u64]);
    let data = generate(config, model, n, seed)?;
    let (true_best, true_eta) = match true_best_pool(&data.true_partition, &data.true_beta) {
        Some(b) => {
            let p = &data.true_partition.pools[b];
            (p.members.clone(), data.true_beta[p.first()])
        }
        None => (vec![0], 0.0),
    };
    let results = config
        .estimators
        .iter()
        .map(|&e| {
            let r = match e {
                Estimator::Tva => run_tva(config, &data, &true_best, true_eta),
                Estimator::DirectOls => run_direct_ols(config, &data, &true_best, true_eta),
            };
            r.map_err(|err| err.to_string())
        })
        .collect();
    Ok(ReplicationOutcome { n, config: config_id, replication, results })
}

pub const METRICS: [&str; 6] = ["support_accuracy", "some_best", "min_best", "mse", "naive_mse", "r_squared"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub estimator: Estimator,
    pub metric: String,
    pub n: usize,
    /// Configuration id, or `None` for the average over configurations.
    pub config: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub n: usize,
    pub config: usize,
    pub replication: usize,
    pub estimator: Option<Estimator>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: SimulationConfig,
    pub models: Vec<TrueModel>,
    /// Per-configuration means over replications.
    pub rows: Vec<MetricRow>,
    /// Means over configurations of the per-configuration means.
    pub summary: Vec<MetricRow>,
    pub failures: Vec<Failure>,
}

impl StudyReport {
    /// Long-format CSV: estimator, metric, n, config, value. The summary
    /// rows carry `all` in the config column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,metric,n,config,value\n");
        for r in self.rows.iter().chain(&self.summary) {
            let cfg = r.config.map_or("all".to_string(), |c| c.to_string());
            out.push_str(&format!("{},{},{},{},{}\n", r.estimator.name(), r.metric, r.n, cfg, r.value));
        }
        out
    }

    pub fn summary_value(&self, estimator: Estimator, metric: &str, n: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.estimator == estimator && r.metric == metric && r.n == n)
            .map(|r| r.value)
    }
}

fn metric_values(o: &EstimatorOutcome) -> [Option<f64>; 6] {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    [
        o.support_accuracy,
        Some(b(o.some_best)),
        Some(b(o.min_best)),
        Some(o.adjusted_error.powi(2)),
        Some(o.naive_error.powi(2)),
        Some(o.r_squared),
    ]
}

/// Full grid n × configuration × replication, aggregated per configuration
/// and then across configurations. Failed replications are recorded and
/// left out of the averages.
pub fn run_study(config: &SimulationConfig) -> Result<StudyReport> {
    config.validate()?;
    let models: Vec<TrueModel> = (0..config.configurations).map(|c| sample_configuration(config, c)).collect();
    let tasks: Vec<(usize, usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.configurations).flat_map(move |c| (0..config.replications).map(move |r| (n, c, r))))
        .collect();
    let outcomes: Vec<(usize, usize, usize, Result<ReplicationOutcome>)> = tasks
        .par_iter()
        .map(|&(n, c, r)| (n, c, r, run_replication(config, &models[c], n, c, r)))
        .collect();

    let mut failures = Vec::new();
    // (estimator, metric index, n, config) -> values
    let mut acc: BTreeMap<(Estimator, usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for (n, c, r, out) in outcomes {
        match out {
            Err(e) => failures.push(Failure { n, config: c, replication: r, estimator: None, error: e.to_string() }),
            Ok(rep) => {
                for (est, res) in config.estimators.iter().zip(rep.results) {
                    match res {
                        Err(error) => failures.push(Failure { n, config: c, replication: r, estimator: Some(*est), error }),
                        Ok(o) => {
                            for (m, v) in metric_values(&o).into_iter().enumerate() {
                                if let Some(v) = v {
                                    acc.entry((*est, m, n, c)).or_default().push(v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rows: Vec<MetricRow> = acc
        .iter()
        .map(|(&(estimator, m, n, c), v)| MetricRow { estimator, metric: METRICS[m].into(), n, config: Some(c), value: mean(v) })
        .collect();
    let mut by_cell: BTreeMap<(Estimator, usize, usize), Vec<f64>> = BTreeMap::new();
    for (&(e, m, n, _), v) in &acc {
        by_cell.entry((e, m, n)).or_default().push(mean(v));
    }
    let summary = by_cell
        .iter()
        .map(|(&(estimator, m, n), v)| MetricRow { estimator, metric: METRICS[m].into(), n, config: None, value: mean(v) })
        .collect();
    Ok(StudyReport { config: config.clone(), models, rows, summary, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::winners_curse::inverse_norm_cdf;

    #[test]
    fn support_accuracy_examples() {
        assert_eq!(support_accuracy(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(support_accuracy(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(support_accuracy(&[1, 2, 3, 4], &[1, 2, 3]), 0.75);
        assert_eq!(support_accuracy(&[], &[]), 1.0);
    }

    #[test]
    fn best_inclusion_examples() {
        assert_eq!(best_inclusion(&[4, 5, 7, 8], &[4, 5, 7, 8]), (true, true));
        assert_eq!(best_inclusion(&[7, 8], &[4, 5, 7, 8]), (true, false));
        assert_eq!(best_inclusion(&[1], &[4, 5]), (false, false));
    }

    #[test]
    fn regime_rates() {
        let cfg = SimulationConfig {
            coefficient_rule: CoefficientRule::Regime { regime: Regime::R1 },
            ..SimulationConfig::default()
        };
        let m = sample_configuration(&cfg, 0);
        assert_eq!(m.terms.len(), 6);
        let k = cfg.design.policy_count();
        let a1 = m.alpha(k, 1000);
        let a10 = m.alpha(k, 10_000);
        for &(col, _, decay) in &m.terms {
            if decay == Decay::Fast {
                assert!((a1[col] / a10[col] - 10.0).abs() < 1e-9);
            } else {
                assert_eq!(a1[col], a10[col]);
            }
        }
    }

    #[test]
    fn zero_noise_is_piecewise_constant_on_true_pools() {
        let cfg = SimulationConfig { sigma: 0.0, ..SimulationConfig::default() };
        let model = sample_configuration(&cfg, 3);
        let d = generate(&cfg, &model, 2000, 9).unwrap();
        for (i, &a) in d.assignments.iter().enumerate() {
            let expect = match d.true_partition.pool_of[a] {
                Some(p) => d.true_beta[d.true_partition.pools[p].first()],
                None => 0.0,
            };
            assert_eq!(d.y[i], expect);
        }
    }

    #[test]
    fn configurations_exclude_intercept_and_are_distinct() {
        let cfg = SimulationConfig::default();
        for c in 0..50 {
            let s = sample_configuration(&cfg, c).support();
            assert!(!s.contains(&0));
            let mut d = s.clone();
            d.dedup();
            assert_eq!(d.len(), 3);
        }
    }

    #[test]
    fn ks_of_quantiles_is_small() {
        let v: Vec<f64> = (1..1000).map(|i| inverse_norm_cdf(i as f64 / 1000.0)).collect();
        assert!(ks_distance_normal(&v) < 0.002);
    }

    #[test]
    fn study_is_deterministic() {
        let cfg = SimulationConfig {
            n_grid: vec![1500],
            replications: 2,
            configurations: 2,
            seed: 42,
            projection: ProjectionOptions { draws: 2000, seed: 1 },
            ..SimulationConfig::default()
        };
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.summary_value(Estimator::Tva, "min_best", 1500).is_some());
    }
}
