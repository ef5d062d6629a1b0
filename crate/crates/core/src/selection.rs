//! Support selection on the preconditioned marginal regression.
//!
//! The LASSO objective is `‖Fy − FXa‖² + λ‖a‖₁` with the squared error left
//! unhalved, so on an orthonormal design each coefficient is soft-thresholded
//! at `λ/2`. Column 0 is the intercept: never penalized, never dropped.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, TvaError};
use crate::precondition::PufferDecomposition;

pub const CD_TOL: f64 = 1e-10;
pub const CD_MAX_SWEEPS: usize = 100_000;
/// Orthonormality slack under which the closed form is used.
pub const ORTHONORMAL_TOL: f64 = 1e-8;
/// Default backward-elimination p-value threshold.
pub const DEFAULT_P_THRESHOLD: f64 = 5e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    Lasso { lambda: f64 },
    Backward { p_threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// λ for LASSO; for backward elimination, the p-value of the dropped column.
    pub parameter: f64,
    pub dropped: Option<usize>,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected non-intercept columns, ascending.
    pub support: Vec<usize>,
    /// K-vector; zero off the support except the intercept.
    pub coefficients: Vec<f64>,
    pub selector: Selector,
    pub trace: Vec<TraceStep>,
    /// λ interval under which closed-form Puffer LASSO yields the same support
    /// (descriptive; `None` when no such λ exists).
    pub equivalent_lambda: Option<(f64, f64)>,
}

impl SelectionResult {
    fn from_coefficients(coefficients: Vec<f64>, selector: Selector, trace: Vec<TraceStep>) -> Self {
        let support = support_of(&coefficients);
        Self { support, coefficients, selector, trace, equivalent_lambda: None }
    }
}

fn support_of(coef: &[f64]) -> Vec<usize> {
    (1..coef.len()).filter(|&j| coef[j] != 0.0).collect()
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(TvaError::InvalidArgument(format!("λ must be non-negative, got {lambda}")));
    }
    Ok(())
}

fn check_shapes(fx: &DMatrix<f64>, fy: &DVector<f64>) -> Result<()> {
    if fx.nrows() != fy.len() || fx.ncols() == 0 {
        return Err(TvaError::InvalidArgument(format!(
            "FX is {}×{}, Fy has {} rows",
            fx.nrows(),
            fx.ncols(),
            fy.len()
        )));
    }
    Ok(())
}

fn orthonormality_error(gram: &DMatrix<f64>) -> f64 {
    let k = gram.nrows();
    (gram - DMatrix::<f64>::identity(k, k)).abs().max()
}

/// LASSO on the preconditioned problem. Uses the closed form when FX has
/// orthonormal columns, cyclic coordinate descent otherwise.
pub fn lasso(fx: &DMatrix<f64>, fy: &DVector<f64>, lambda: f64) -> Result<SelectionResult> {
    check_lambda(lambda)?;
    check_shapes(fx, fy)?;
    let gram = fx.tr_mul(fx);
    let c = fx.tr_mul(fy);
    let coef = if orthonormality_error(&gram) <= ORTHONORMAL_TOL {
        closed_form(&c, lambda)
    } else {
        coordinate_descent_gram(&gram, &c, lambda, None, CD_TOL, CD_MAX_SWEEPS)?
    };
    let selector = Selector::Lasso { lambda };
    let support = support_of(&coef);
    let trace = vec![TraceStep { parameter: lambda, dropped: None, support }];
    Ok(SelectionResult::from_coefficients(coef, selector, trace))
}

/// Closed-form orthonormal LASSO from `c = (FX)'Fy`.
pub fn closed_form(c: &DVector<f64>, lambda: f64) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(j, &cj)| if j == 0 { cj } else { soft_threshold(cj, lambda / 2.0) })
        .collect()
}

/// Cyclic coordinate descent, forced even for orthonormal designs.
pub fn lasso_coordinate_descent(
    fx: &DMatrix<f64>,
    fy: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<SelectionResult> {
    check_lambda(lambda)?;
    check_shapes(fx, fy)?;
    let gram = fx.tr_mul(fx);
    let c = fx.tr_mul(fy);
    let coef = coordinate_descent_gram(&gram, &c, lambda, None, tol, max_sweeps)?;
    let selector = Selector::Lasso { lambda };
    let support = support_of(&coef);
    let trace = vec![TraceStep { parameter: lambda, dropped: None, support }];
    Ok(SelectionResult::from_coefficients(coef, selector, trace))
}

/// Coordinate descent on the Gram form `a'Ga − 2c'a + λ Σ_{j≥1} |a_j|`.
pub fn coordinate_descent_gram(
    gram: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    warm_start: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    let k = c.len();
    if let Some(j) = (0..k).find(|&j| !(gram[(j, j)] > 0.0)) {
        return Err(TvaError::SingularDesign {
            columns: vec![j],
            detail: "column has zero norm after preconditioning".into(),
        });
    }
    let mut a = warm_start.map_or_else(|| vec![0.0; k], |w| w.to_vec());
    // g = G a, kept in sync with a.
    let mut g: Vec<f64> = (0..k).map(|i| (0..k).map(|j| gram[(i, j)] * a[j]).sum()).collect();
    for _ in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..k {
            let gjj = gram[(j, j)];
            let z = c[j] - (g[j] - gjj * a[j]);
            let new = if j == 0 { z / gjj } else { soft_threshold(z, lambda / 2.0) / gjj };
            let delta = new - a[j];
            if delta != 0.0 {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += gram[(i, j)] * delta;
                }
                a[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
            max_abs = max_abs.max(new.abs());
        }
        if max_delta <= tol * max_abs.max(1.0) {
            return Ok(a);
        }
    }
    Err(TvaError::NonConvergence(format!(
        "coordinate descent did not reach tolerance {tol} within {max_sweeps} sweeps"
    )))
}

/// Backward elimination on a (possibly row-normalized) Puffer problem.
///
/// Each round refits least squares on the current support and drops the
/// column with the largest p-value above the threshold. The transformed
/// regression interpolates exactly, so p-values use the noise variance of
/// the untransformed fit and the sandwich covariance implied by the known
/// transformed-noise structure. Equal p-values drop the higher index.
pub fn backward_eliminate(pd: &PufferDecomposition, p_threshold: f64) -> Result<SelectionResult> {
    if !(p_threshold > 0.0 && p_threshold <= 1.0) {
        return Err(TvaError::InvalidArgument(format!("p-value threshold must lie in (0, 1], got {p_threshold}")));
    }
    let k = pd.k();
    let sigma2 = pd
        .sigma2_hat()
        .ok_or_else(|| TvaError::InvalidArgument("no residual degrees of freedom for p-values".into()))?;
    let t_dist = StudentsT::new(0.0, 1.0, pd.df as f64).map_err(|e| TvaError::Numerical(e.to_string()))?;
    let gram = pd.fx.tr_mul(&pd.fx);
    let c = pd.fx.tr_mul(&pd.fy);
    let cross = pd.fx.tr_mul(&pd.noise_factor());

    let mut active: Vec<usize> = (0..k).collect();
    let mut trace = Vec::new();
    let coef = loop {
        let s = active.len();
        let p_ss = DMatrix::from_fn(s, s, |a, b| gram[(active[a], active[b])]);
        let inv = p_ss
            .cholesky()
            .ok_or_else(|| TvaError::Numerical("support Gram matrix is not positive definite".into()))?
            .inverse();
        let q = DVector::from_iterator(s, active.iter().map(|&j| c[j]));
        let gamma = &inv * q;
        let c_s = DMatrix::from_fn(s, k, |a, b| cross[(active[a], b)]);
        let half = &inv * c_s;
        let mut worst: Option<(usize, f64)> = None;
        for pos in 1..s {
            let var = sigma2 * half.row(pos).norm_squared();
            let p = if var > 0.0 {
                let t = gamma[pos].abs() / var.sqrt();
                (2.0 * t_dist.sf(t)).min(1.0)
            } else if gamma[pos] == 0.0 {
                1.0
            } else {
                0.0
            };
            let replace = match worst {
                None => true,
                // Later positions hold higher canonical indices, so `>=` drops the higher one on ties.
                Some((_, wp)) => p >= wp,
            };
            if replace {
                worst = Some((pos, p));
            }
        }
        match worst {
            Some((pos, p)) if p > p_threshold => {
                let dropped = active.remove(pos);
                trace.push(TraceStep { parameter: p, dropped: Some(dropped), support: active[1..].to_vec() });
            }
            _ => {
                let mut full = vec![0.0; k];
                for (a, &j) in active.iter().enumerate() {
                    full[j] = gamma[a];
                }
                break full;
            }
        }
    };
    let mut res = SelectionResult::from_coefficients(coef, Selector::Backward { p_threshold }, trace);
    // A refit coefficient can be exactly zero only by accident; keep the active set as the support.
    res.support = active[1..].to_vec();
    res.equivalent_lambda = equivalent_lambda(&pd.ols_coefficients(), &res.support);
    Ok(res)
}

/// λ interval `[2·max off-support |c|, 2·min on-support |c|)` reproducing
/// `support` by soft-thresholding the least-squares coefficients.
pub fn equivalent_lambda(ols: &DVector<f64>, support: &[usize]) -> Option<(f64, f64)> {
    let k = ols.len();
    let inside = |j: usize| support.binary_search(&j).is_ok();
    let lo = (1..k).filter(|&j| !inside(j)).map(|j| ols[j].abs()).fold(0.0f64, f64::max);
    let hi = support.iter().map(|&j| ols[j].abs()).fold(f64::INFINITY, f64::min);
    (lo < hi).then(|| (2.0 * lo, 2.0 * hi))
}

/// Downstream summary of one λ in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub best_label: String,
    /// Minimal policy (canonical index) of the best pool; 0 when nothing survives.
    pub best_policy_id: usize,
    pub second_label: Option<String>,
    pub naive: Option<f64>,
    pub second_naive: Option<f64>,
    pub adjusted: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub no_effective_policy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub selection: SelectionResult,
    /// Downstream result, or the error message if a later stage failed.
    pub outcome: std::result::Result<SweepOutcome, String>,
}

/// Run closed-form (or coordinate-descent) LASSO for each λ and hand the
/// selection to `downstream`. Downstream errors are recorded per λ.
pub fn lambda_sweep<F>(
    fx: &DMatrix<f64>,
    fy: &DVector<f64>,
    grid: &[f64],
    downstream: F,
) -> Result<Vec<SweepPoint>>
where
    F: Fn(&SelectionResult) -> Result<SweepOutcome> + Sync,
{
    check_shapes(fx, fy)?;
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(TvaError::InvalidArgument("λ grid must be sorted ascending".into()));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    let gram = fx.tr_mul(fx);
    let c = fx.tr_mul(fy);
    let ortho = orthonormality_error(&gram) <= ORTHONORMAL_TOL;
    grid.par_iter()
        .map(|&lambda| {
            let coef = if ortho {
                closed_form(&c, lambda)
            } else {
                coordinate_descent_gram(&gram, &c, lambda, None, CD_TOL, CD_MAX_SWEEPS)?
            };
            let support = support_of(&coef);
            let trace = vec![TraceStep { parameter: lambda, dropped: None, support }];
            let selection = SelectionResult::from_coefficients(coef, Selector::Lasso { lambda }, trace);
            let outcome = downstream(&selection).map_err(|e| e.to_string());
            Ok(SweepPoint { lambda, selection, outcome })
        })
        .collect()
}

/// CSV rows for a sweep: λ, support bitmask, best id, estimates, CI.
pub fn sweep_csv(points: &[SweepPoint], k: usize) -> String {
    let mut out = String::from("lambda,support_bitmask,best_policy_id,best_label,naive,adjusted,ci_lo,ci_hi,error\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for p in points {
        let mask: String = (1..k)
            .map(|j| if p.selection.support.binary_search(&j).is_ok() { '1' } else { '0' })
            .collect();
        match &p.outcome {
            Ok(o) => out.push_str(&format!(
                "{},{},{},\"{}\",{},{},{},{},\n",
                p.lambda,
                mask,
                o.best_policy_id,
                o.best_label,
                fmt(o.naive),
                fmt(o.adjusted),
                fmt(o.ci.map(|c| c.0)),
                fmt(o.ci.map(|c| c.1)),
            )),
            Err(e) => out.push_str(&format!("{},{},,,,,,,\"{}\"\n", p.lambda, mask, e.replace('"', "'"))),
        }
    }
    out
}
