//! End-to-end TVA: precondition, select, pool, estimate, and adjust the best
//! pooled policy for the winner's curse. Also the λ-sweep, bootstrap
//! stability and design diagnostics built on the same stages.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, TvaError};
use crate::estimation::{self, best_policy, pool_counts, pooled_dummies, Diagnostics, EstimationResult, FitOptions, VcovKind};
use crate::lattice::{marginal_matrix, Policy};
use crate::pooling::{pool, PooledPartition};
use crate::precondition::{self, puffer_cells, puffer_row_normalized, PufferDecomposition};
use crate::selection::{self, backward_eliminate, SelectionResult, Selector, SweepOutcome, SweepPoint};
use crate::sim::derive_seed;
use crate::winners_curse::{self, hybrid_with, inverse_norm_cdf, HybridEstimate, ProjectionOptions};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Ascending λ values; empty means 40 log-spaced values spanning the
    /// range where the support changes.
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Resample within policy cells.
    pub stratify: bool,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 200, stratify: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub selector: Selector,
    pub alpha: f64,
    pub beta: f64,
    /// Rescale Puffer rows to equal norm before selection (Puffer_N).
    pub row_normalize: bool,
    /// Apply observation weights in the selection stage as well as in estimation.
    pub weights_in_selection: bool,
    pub use_weights: bool,
    pub use_clusters: bool,
    pub use_fixed_effects: bool,
    pub projection: ProjectionOptions,
    pub sweep: Option<SweepConfig>,
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            selector: Selector::Backward { p_threshold: selection::DEFAULT_P_THRESHOLD },
            alpha: winners_curse::DEFAULT_ALPHA,
            beta: winners_curse::DEFAULT_BETA,
            row_normalize: true,
            weights_in_selection: true,
            use_weights: true,
            use_clusters: true,
            use_fixed_effects: true,
            projection: ProjectionOptions::default(),
            sweep: None,
            bootstrap: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(TvaError::Validation(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(0.0 < self.beta && self.beta < self.alpha && self.alpha < 1.0) {
            return Err(TvaError::Validation(format!(
                "need 0 < beta < alpha < 1, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if let Some(b) = &self.bootstrap {
            if b.replicates == 0 {
                return Err(TvaError::Validation("bootstrap needs at least one replicate".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub policy: Policy,
    pub description: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub selector: Selector,
    pub support: Vec<SupportEntry>,
    pub equivalent_lambda: Option<(f64, f64)>,
    pub eliminated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEstimate {
    pub pool: usize,
    pub label: String,
    pub description: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub cell_count: usize,
    pub n_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPolicyReport {
    pub no_effective_policy: bool,
    pub pool: Option<usize>,
    pub label: Option<String>,
    /// Cheapest member of the best pool.
    pub minimum_dosage_policy: Option<Policy>,
    pub description: Option<String>,
    pub control_mean: Option<f64>,
    pub hybrid: Option<HybridEstimate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub vcov_kind: VcovKind,
    pub n_effective: f64,
    pub dof: usize,
    pub intercept: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: u32,
    pub config: PipelineConfig,
    pub dosages: Vec<usize>,
    pub arms: Vec<String>,
    pub n_obs: usize,
    pub feasible_cells: usize,
    pub selection: SelectionSummary,
    pub partition: PooledPartition,
    pub estimates: Vec<PoolEstimate>,
    pub best_policy: BestPolicyReport,
    pub estimation: EstimationSummary,
    pub sweep: Option<Vec<SweepPoint>>,
    pub bootstrap: Option<StabilityReport>,
}

impl PipelineReport {
    /// Pooled-estimates table as CSV.
    pub fn estimates_csv(&self) -> String {
        let mut out = String::from("pool,label,description,estimate,std_error,ci95_lo,ci95_hi,cell_count,n_units\n");
        for e in &self.estimates {
            out.push_str(&format!(
                "{},\"{}\",\"{}\",{},{},{},{},{},{}\n",
                e.pool, e.label, e.description, e.estimate, e.std_error, e.ci95.0, e.ci95.1, e.cell_count, e.n_units
            ));
        }
        out
    }

    /// Best-policy block in a one-row table: label, adjusted effect, hybrid CI, control mean.
    pub fn best_policy_csv(&self) -> String {
        let b = &self.best_policy;
        let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let h = b.hybrid.as_ref();
        format!(
            "label,description,naive,adjusted,hybrid_ci_lo,hybrid_ci_hi,control_mean,no_effective_policy\n\"{}\",\"{}\",{},{},{},{},{},{}\n",
            b.label.clone().unwrap_or_default(),
            b.description.clone().unwrap_or_default(),
            f(h.map(|h| h.naive)),
            f(h.map(|h| h.adjusted_point)),
            f(h.map(|h| h.hybrid_ci.0)),
            f(h.map(|h| h.hybrid_ci.1)),
            f(b.control_mean),
            b.no_effective_policy
        )
    }

    pub fn support_csv(&self) -> String {
        let mut out = String::from("policy,description,coefficient\n");
        for s in &self.selection.support {
            out.push_str(&format!("\"{}\",\"{}\",{}\n", s.policy, s.description, s.coefficient));
        }
        out
    }
}

/// Everything downstream of selection for one support.
struct Analysis {
    partition: PooledPartition,
    fit: Option<EstimationResult>,
    best: Option<usize>,
    hybrid: Option<HybridEstimate>,
}

struct Prepared {
    cells: Vec<usize>,
    pd: PufferDecomposition,
}

fn prepare(data: &Dataset, config: &PipelineConfig) -> Result<Prepared> {
    let cells = data.feasible_cells();
    let weights = if config.use_weights && config.weights_in_selection { data.weights.as_deref() } else { None };
    let pd = puffer_cells(&data.design, &cells, &data.assignments, &data.y, weights)
        .map_err(|e| e.at_stage("precondition", "every feasible design cell needs observations and n must exceed the cell count"))?;
    let pd = if config.row_normalize {
        puffer_row_normalized(&pd).map_err(|e| e.at_stage("precondition", "disable row_normalize"))?
    } else {
        pd
    };
    Ok(Prepared { cells, pd })
}

fn select(prep: &Prepared, selector: Selector) -> Result<SelectionResult> {
    let r = match selector {
        Selector::Lasso { lambda } => selection::lasso(&prep.pd.fx, &prep.pd.fy, lambda),
        Selector::Backward { p_threshold } => backward_eliminate(&prep.pd, p_threshold),
    };
    r.map_err(|e| e.at_stage("selection", "check the selector settings"))
}

fn analyze(data: &Dataset, config: &PipelineConfig, support: &[usize]) -> Result<Analysis> {
    let partition =
        pool(&data.design, support).map_err(|e| e.at_stage("pooling", "reduce the number of selected marginals per profile"))?;
    if partition.pools.is_empty() {
        return Ok(Analysis { partition, fit: None, best: None, hybrid: None });
    }
    let z = pooled_dummies(&partition, &data.assignments)
        .map_err(|e| e.at_stage("estimation", "a selected pool has no observations"))?;
    let names: Vec<String> =
        std::iter::once("intercept".to_string()).chain(partition.pools.iter().map(|p| p.label.clone())).collect();
    let opts = FitOptions {
        weights: if config.use_weights { data.weights.as_deref() } else { None },
        fixed_effects: if config.use_fixed_effects { &data.fixed_effects } else { &[] },
        clusters: if config.use_clusters { data.clusters.as_deref() } else { None },
        names: Some(&names),
    };
    let fit = estimation::fit(&z, &data.y, &opts)
        .map_err(|e| e.at_stage("estimation", "drop collinear fixed effects or check the pooled regressors"))?;
    let best = best_policy(&fit, &partition).pool;
    let hybrid = hybrid_with(&fit.eta_hat, &fit.vcov_matrix(), config.alpha, config.beta, &config.projection)
        .map_err(|e| e.at_stage("winners_curse", "the pooled covariance must be positive definite"))?;
    Ok(Analysis { partition, fit: Some(fit), best, hybrid: Some(hybrid) })
}

fn to_canonical(cells: &[usize], positions: &[usize]) -> Vec<usize> {
    positions.iter().map(|&p| cells[p]).collect()
}

fn control_mean(data: &Dataset, config: &PipelineConfig) -> Option<f64> {
    let w = |i: usize| if config.use_weights { data.weights.as_ref().map_or(1.0, |w| w[i]) } else { 1.0 };
    let (mut s, mut sw) = (0.0, 0.0);
    for (i, &a) in data.assignments.iter().enumerate() {
        if a == 0 {
            s += w(i) * data.y[i];
            sw += w(i);
        }
    }
    (sw > 0.0).then(|| s / sw)
}

fn sweep_outcome(a: &Analysis) -> SweepOutcome {
    let fit = a.fit.as_ref();
    match (a.best, fit) {
        (Some(b), Some(fit)) => {
            let second = (0..fit.eta_hat.len())
                .filter(|&j| j != b)
                .max_by(|&i, &j| fit.eta_hat[i].total_cmp(&fit.eta_hat[j]).then(j.cmp(&i)));
            let h = a.hybrid.as_ref();
            SweepOutcome {
                best_label: a.partition.pools[b].label.clone(),
                best_policy_id: a.partition.pools[b].first(),
                second_label: second.map(|s| a.partition.pools[s].label.clone()),
                naive: Some(fit.eta_hat[b]),
                second_naive: second.map(|s| fit.eta_hat[s]),
                adjusted: h.map(|h| h.adjusted_point),
                ci: h.map(|h| h.hybrid_ci),
                no_effective_policy: false,
            }
        }
        _ => SweepOutcome {
            best_label: "control".into(),
            best_policy_id: 0,
            second_label: None,
            naive: None,
            second_naive: None,
            adjusted: None,
            ci: None,
            no_effective_policy: true,
        },
    }
}

/// Default sweep grid: log-spaced between the smallest and largest λ at
/// which a closed-form Puffer LASSO support changes.
fn auto_grid(pd: &PufferDecomposition) -> Vec<f64> {
    let c = pd.fx.tr_mul(&pd.fy);
    let knots: Vec<f64> = c.iter().skip(1).map(|v| 2.0 * v.abs()).filter(|v| *v > 0.0).collect();
    let hi = knots.iter().copied().fold(0.0, f64::max);
    let lo = knots.iter().copied().fold(f64::INFINITY, f64::min).max(hi * 1e-4);
    if !(hi > 0.0) {
        return vec![0.0];
    }
    let steps = 40;
    (0..steps).map(|i| lo * (hi / lo).powf(i as f64 / (steps - 1) as f64) * 1.0001).collect()
}

/// λ-sweep: refit the downstream stages for each penalty on the grid.
pub fn lambda_sweep(data: &Dataset, config: &PipelineConfig, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let prep = prepare(data, config)?;
    let grid = if grid.is_empty() { auto_grid(&prep.pd) } else { grid.to_vec() };
    let points = selection::lambda_sweep(&prep.pd.fx, &prep.pd.fy, &grid, |sel| {
        let support = to_canonical(&prep.cells, &sel.support);
        Ok(sweep_outcome(&analyze(data, config, &support)?))
    })
    .map_err(|e| e.at_stage("sweep", "use an ascending, non-negative λ grid"))?;
    // Report supports in canonical policy indices.
    Ok(points
        .into_iter()
        .map(|mut p| {
            p.selection.support = to_canonical(&prep.cells, &p.selection.support);
            p
        })
        .collect())
}

/// Algorithm steps 1–5 plus the optional sweep and bootstrap sections.
pub fn run_pipeline(data: &Dataset, config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let prep = prepare(data, config)?;
    let sel = select(&prep, config.selector)?;
    let support = to_canonical(&prep.cells, &sel.support);
    let analysis = analyze(data, config, &support)?;

    let selection = SelectionSummary {
        selector: sel.selector,
        support: sel
            .support
            .iter()
            .map(|&p| SupportEntry {
                policy: data.design.decode(prep.cells[p]),
                description: data.describe_policy(prep.cells[p]),
                coefficient: sel.coefficients[p],
            })
            .collect(),
        equivalent_lambda: sel.equivalent_lambda,
        eliminated: sel.trace.iter().filter(|t| t.dropped.is_some()).count(),
    };

    let counts = pool_counts(&analysis.partition, &data.assignments);
    let z975 = inverse_norm_cdf(0.975);
    let estimates: Vec<PoolEstimate> = match &analysis.fit {
        Some(fit) => {
            let se = fit.std_errors();
            analysis
                .partition
                .pools
                .iter()
                .enumerate()
                .map(|(j, p)| PoolEstimate {
                    pool: j,
                    label: p.label.clone(),
                    description: data.describe_policy(p.first()),
                    estimate: fit.eta_hat[j],
                    std_error: se[j],
                    ci95: (fit.eta_hat[j] - z975 * se[j], fit.eta_hat[j] + z975 * se[j]),
                    cell_count: p.members.len(),
                    n_units: counts[j],
                })
                .collect()
        }
        None => Vec::new(),
    };

    let best_policy = match analysis.best {
        Some(b) => {
            let p = &analysis.partition.pools[b];
            BestPolicyReport {
                no_effective_policy: false,
                pool: Some(b),
                label: Some(p.label.clone()),
                minimum_dosage_policy: Some(data.design.decode(p.first())),
                description: Some(data.describe_policy(p.first())),
                control_mean: control_mean(data, config),
                hybrid: analysis.hybrid.clone(),
            }
        }
        None => BestPolicyReport {
            no_effective_policy: true,
            pool: None,
            label: None,
            minimum_dosage_policy: None,
            description: None,
            control_mean: control_mean(data, config),
            hybrid: None,
        },
    };

    let estimation = match &analysis.fit {
        Some(fit) => EstimationSummary {
            vcov_kind: fit.vcov_kind,
            n_effective: fit.n_effective,
            dof: fit.dof,
            intercept: fit.intercept,
            diagnostics: fit.diagnostics.clone(),
        },
        None => EstimationSummary {
            vcov_kind: VcovKind::Hc1,
            n_effective: data.len() as f64,
            dof: data.len().saturating_sub(1),
            intercept: control_mean(data, config),
            diagnostics: Diagnostics {
                r_squared: 0.0,
                n_obs: data.len(),
                clusters: None,
                absorbed_levels: 0,
                fe_iterations: 0,
                warnings: vec!["every policy was pruned; no effective policy".into()],
            },
        },
    };

    let sweep = match &config.sweep {
        Some(s) => Some(lambda_sweep(data, config, &s.grid)?),
        None => None,
    };
    let bootstrap = match &config.bootstrap {
        Some(b) => Some(bootstrap_stability(data, config, b.replicates, b.stratify, b.seed)?),
        None => None,
    };

    Ok(PipelineReport {
        version: CONFIG_VERSION,
        config: config.clone(),
        dosages: data.design.dosages().to_vec(),
        arms: data.arm_names.clone(),
        n_obs: data.len(),
        feasible_cells: prep.cells.len(),
        selection,
        partition: analysis.partition,
        estimates,
        best_policy,
        estimation,
        sweep,
        bootstrap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportCount {
    pub support: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCount {
    pub label: String,
    pub minimum_dosage_policy: Option<Policy>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Some(Self { mean, sd, q05: q(0.05), q50: q(0.5), q95: q(0.95) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub replicates: usize,
    pub stratified: bool,
    pub seed: u64,
    pub original_support: Vec<usize>,
    pub original_best: Option<String>,
    /// Share of successful replicates selecting exactly the original support.
    pub support_stability: f64,
    /// Share of successful replicates whose best pool equals the original one.
    pub best_policy_stability: f64,
    pub supports: Vec<SupportCount>,
    pub best_policies: Vec<BestCount>,
    pub adjusted: Option<Spread>,
    pub failures: Vec<(usize, String)>,
}

struct ReplicateResult {
    support: Vec<usize>,
    best_members: Option<Vec<usize>>,
    best_label: String,
    best_min: Option<Policy>,
    adjusted: Option<f64>,
}

fn resample(data: &Dataset, cells: &[usize], stratify: bool, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let n = data.len();
    if stratify {
        let mut by_cell: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &a) in data.assignments.iter().enumerate() {
            by_cell.entry(a).or_default().push(i);
        }
        let mut rows = Vec::with_capacity(n);
        for members in by_cell.values() {
            for _ in 0..members.len() {
                rows.push(members[rng.random_range(0..members.len())]);
            }
        }
        return Some(rows);
    }
    // Redraw until every feasible cell is populated.
    for _ in 0..100 {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut seen = vec![false; data.design.policy_count()];
        for &r in &rows {
            seen[data.assignments[r]] = true;
        }
        if cells.iter().all(|&c| seen[c]) {
            return Some(rows);
        }
    }
    None
}

fn run_core(data: &Dataset, config: &PipelineConfig) -> Result<ReplicateResult> {
    let prep = prepare(data, config)?;
    let sel = select(&prep, config.selector)?;
    let support = to_canonical(&prep.cells, &sel.support);
    let a = analyze(data, config, &support)?;
    Ok(match a.best {
        Some(b) => {
            let p = &a.partition.pools[b];
            ReplicateResult {
                support,
                best_members: Some(p.members.clone()),
                best_label: p.label.clone(),
                best_min: Some(data.design.decode(p.first())),
                adjusted: a.hybrid.map(|h| h.adjusted_point),
            }
        }
        None => ReplicateResult { support, best_members: None, best_label: "control".into(), best_min: None, adjusted: None },
    })
}

/// Rerun the pipeline on bootstrap resamples of the units.
pub fn bootstrap_stability(
    data: &Dataset,
    config: &PipelineConfig,
    replicates: usize,
    stratify: bool,
    seed: u64,
) -> Result<StabilityReport> {
    config.validate()?;
    let original = run_core(data, config)?;
    let cells = data.feasible_cells();
    let results: Vec<Result<ReplicateResult>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3, b as u64]));
            let rows = resample(data, &cells, stratify, &mut rng)
                .ok_or_else(|| TvaError::Numerical("could not draw a resample covering every cell".into()))?;
            run_core(&data.subset(&rows), config)
        })
        .collect();

    let mut failures = Vec::new();
    let mut supports: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut bests: BTreeMap<(String, Option<Policy>), usize> = BTreeMap::new();
    let mut adjusted = Vec::new();
    let (mut same_support, mut same_best, mut ok) = (0usize, 0usize, 0usize);
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Err(e) => failures.push((b, e.to_string())),
            Ok(r) => {
                ok += 1;
                same_support += (r.support == original.support) as usize;
                same_best += (r.best_members == original.best_members) as usize;
                *supports.entry(r.support).or_default() += 1;
                *bests.entry((r.best_label, r.best_min)).or_default() += 1;
                adjusted.extend(r.adjusted);
            }
        }
    }
    let share = |k: usize| if ok > 0 { k as f64 / ok as f64 } else { 0.0 };
    let mut supports: Vec<SupportCount> = supports.into_iter().map(|(support, count)| SupportCount { support, count }).collect();
    supports.sort_by(|a, b| b.count.cmp(&a.count).then(a.support.cmp(&b.support)));
    let mut best_policies: Vec<BestCount> = bests
        .into_iter()
        .map(|((label, minimum_dosage_policy), count)| BestCount { label, minimum_dosage_policy, count })
        .collect();
    best_policies.sort_by(|a, b| b.count.cmp(&a.count).then(a.label.cmp(&b.label)));
    Ok(StabilityReport {
        replicates,
        stratified: stratify,
        seed,
        original_support: original.support,
        original_best: original.best_members.as_ref().map(|_| original.best_label.clone()),
        support_stability: share(same_support),
        best_policy_stability: share(same_best),
        supports,
        best_policies,
        adjusted: Spread::of(&adjusted),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrepresentabilityRow {
    pub policy: Policy,
    pub standardized: f64,
    pub unstandardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub dosages: Vec<usize>,
    pub n_obs: usize,
    pub feasible_cells: usize,
    /// Smallest singular value of `X/√n` on the feasible columns.
    pub min_singular_value: f64,
    /// Uniform-assignment limit of the same quantity for a symmetric design
    /// without exclusions.
    pub min_singular_value_limit: Option<f64>,
    pub irrepresentability: Vec<IrrepresentabilityRow>,
}

/// Irrepresentability norms of every marginal column and the conditioning
/// of the marginal design.
pub fn diagnose(data: &Dataset) -> Result<DesignDiagnostics> {
    let cells = data.feasible_cells();
    let full = marginal_matrix(&data.design, &data.assignments)?;
    let x = DMatrix::from_fn(data.len(), cells.len(), |i, j| full[(i, cells[j])]);
    let min_sv = precondition::empirical_xi_min(&x);
    let d = data.design.dosages();
    let symmetric = d.iter().all(|&r| r == d[0]);
    let limit = (symmetric && cells.len() == data.design.policy_count())
        .then(|| precondition::min_singular_closed_form(d[0], d.len()))
        .transpose()?;
    let irrepresentability = (1..cells.len())
        .into_par_iter()
        .map(|j| {
            Ok(IrrepresentabilityRow {
                policy: data.design.decode(cells[j]),
                standardized: precondition::irrepresentability_l1(&x, j, true)?,
                unstandardized: precondition::irrepresentability_l1(&x, j, false)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignDiagnostics {
        dosages: d.to_vec(),
        n_obs: data.len(),
        feasible_cells: cells.len(),
        min_singular_value: min_sv,
        min_singular_value_limit: limit,
        irrepresentability,
    })
}
