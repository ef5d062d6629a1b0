//! Puffer preconditioning of the marginal-effects regression, plus the
//! linear-algebra diagnostics: irrepresentability norms and the closed-form
//! minimum singular value of the marginal design.
//!
//! With the thin SVD `X = U D V'`, the Puffer operator is `F = U D⁻¹ U'`,
//! so `FX = U V'` has orthonormal columns and `Fy = U D⁻¹ U' y`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvaError};
use crate::lattice::{check_assignments, FactorialDesign, PolicyLattice};

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PufferDecomposition {
    /// n × K, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub singular_values: DVector<f64>,
    /// K × K right singular vectors (columns).
    pub v: DMatrix<f64>,
    pub fx: DMatrix<f64>,
    pub fy: DVector<f64>,
    /// `U'y` for the (weighted) outcome.
    pub uty: DVector<f64>,
    /// Per-row multipliers applied by [`puffer_row_normalized`]; `None` for plain Puffer.
    pub row_scale: Option<DVector<f64>>,
    /// Residual sum of squares of the untransformed least-squares fit.
    pub rss: f64,
    /// Residual degrees of freedom, n − K.
    pub df: usize,
}

impl PufferDecomposition {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    /// Least-squares coefficients of y on X, `V D⁻¹ U'y`.
    pub fn ols_coefficients(&self) -> DVector<f64> {
        let scaled = self.uty.component_div(&self.singular_values);
        &self.v * scaled
    }

    /// Noise variance estimate from the untransformed fit.
    pub fn sigma2_hat(&self) -> Option<f64> {
        (self.df > 0).then(|| self.rss / self.df as f64)
    }

    /// Matrix G with `Cov(transformed noise) = σ² G G'`.
    pub fn noise_factor(&self) -> DMatrix<f64> {
        let mut g = self.u.clone();
        for (j, mut col) in g.column_iter_mut().enumerate() {
            col /= self.singular_values[j];
        }
        if let Some(s) = &self.row_scale {
            for (i, mut row) in g.row_iter_mut().enumerate() {
                row *= s[i];
            }
        }
        g
    }

    /// Row norms of the effective preconditioner (`F` or `N F`).
    pub fn operator_row_norms(&self) -> DVector<f64> {
        let g = self.noise_factor();
        DVector::from_iterator(g.nrows(), g.row_iter().map(|r| r.norm()))
    }

    /// Diagonal of `Cov(transformed noise) / σ²`.
    pub fn transformed_noise_variances(&self) -> DVector<f64> {
        self.operator_row_norms().map(|r| r * r)
    }

    /// Largest entry of `|(FX)'(FX) − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.fx.tr_mul(&self.fx);
        let k = gram.nrows();
        (gram - DMatrix::<f64>::identity(k, k)).abs().max()
    }
}

fn check_rank(d: &DVector<f64>, v: &DMatrix<f64>, detail: impl FnOnce() -> String) -> Result<()> {
    let max = d.max();
    if !(max > 0.0) || !max.is_finite() {
        return Err(TvaError::SingularDesign { columns: (0..v.nrows()).collect(), detail: detail() });
    }
    let tiny: Vec<usize> = (0..d.len()).filter(|&j| d[j] < RANK_TOL * max).collect();
    if tiny.is_empty() {
        return Ok(());
    }
    let mut columns: Vec<usize> = Vec::new();
    for &j in &tiny {
        for c in 0..v.nrows() {
            if v[(c, j)].abs() > 1e-8 && !columns.contains(&c) {
                columns.push(c);
            }
        }
    }
    columns.sort_unstable();
    Err(TvaError::SingularDesign { columns, detail: detail() })
}

/// Puffer transformation of an arbitrary full-column-rank design.
pub fn puffer(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<PufferDecomposition> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(TvaError::InvalidArgument(format!("y has {} rows, X has {n}", y.len())));
    }
    if k == 0 || k >= n {
        return Err(TvaError::InvalidArgument(format!(
            "Puffer needs 0 < K < n, got K = {k}, n = {n}"
        )));
    }
    // Thin QR first; the SVD then runs on the small triangular factor.
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let svd = SVD::new(r, true, true);
    let ur = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let d = svd.singular_values;
    let v = vt.transpose();
    check_rank(&d, &v, || "X'X is not invertible".to_string())?;
    let u = q * ur;
    let fx = &u * &vt;
    let uty = u.tr_mul(y);
    let fy = &u * uty.component_div(&d);
    let rss = (y.norm_squared() - uty.norm_squared()).max(0.0);
    Ok(PufferDecomposition { u, singular_values: d, v, fx, fy, uty, row_scale: None, rss, df: n - k })
}

/// Puffer transformation of the marginal design of a factorial experiment,
/// computed from per-cell sufficient statistics.
///
/// With optional weights the transformation applies to `√w·X` and `√w·y`.
/// The result equals `puffer(marginal_matrix(..), y)` up to the sign of
/// each singular vector pair.
pub fn puffer_factorial(
    design: &FactorialDesign,
    assignments: &[usize],
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<PufferDecomposition> {
    let cells: Vec<usize> = (0..design.policy_count()).collect();
    puffer_cells(design, &cells, assignments, y, weights)
}

/// [`puffer_factorial`] restricted to a subset of cells, e.g. when whole
/// profiles are infeasible by construction. Column `j` of the result is the
/// marginal column of `cells[j]`; `cells` must be ascending and start with
/// the control.
pub fn puffer_cells(
    design: &FactorialDesign,
    cells: &[usize],
    assignments: &[usize],
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<PufferDecomposition> {
    check_assignments(design, assignments)?;
    if cells.first() != Some(&0) || cells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TvaError::InvalidArgument("cells must be ascending and start with the control".into()));
    }
    let mut position = vec![usize::MAX; design.policy_count()];
    for (j, &c) in cells.iter().enumerate() {
        design.check_index(c)?;
        position[c] = j;
    }
    let n = assignments.len();
    let k = cells.len();
    if let Some(i) = assignments.iter().position(|&a| position[a] == usize::MAX) {
        return Err(TvaError::InvalidArgument(format!(
            "unit {i} is assigned {}, which is not among the design cells",
            design.decode(assignments[i])
        )));
    }
    if y.len() != n {
        return Err(TvaError::InvalidArgument(format!("y has {} rows, expected {n}", y.len())));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(TvaError::InvalidArgument(format!("{} weights for {n} units", w.len())));
        }
        if let Some(i) = w.iter().position(|&wi| !(wi > 0.0) || !wi.is_finite()) {
            return Err(TvaError::InvalidArgument(format!("weight of unit {i} is {}", w[i])));
        }
    }
    if k >= n {
        return Err(TvaError::InvalidArgument(format!(
            "Puffer needs K < n, got K = {k}, n = {n}"
        )));
    }
    let wt = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut s = vec![0.0; k];
    let mut t = vec![0.0; k];
    let mut yy = 0.0;
    for (i, &a) in assignments.iter().enumerate() {
        let w = wt(i);
        let c = position[a];
        s[c] += w;
        t[c] += w * y[i];
        yy += w * y[i] * y[i];
    }
    let empty: Vec<usize> = (0..k).filter(|&c| s[c] == 0.0).collect();
    if !empty.is_empty() {
        let labels: Vec<String> = empty.iter().map(|&c| design.decode(cells[c]).to_string()).collect();
        // Column ℓ of X loses rank when every cell dominating it is empty;
        // report the empty cells themselves, which is what the user can act on.
        let columns = empty.iter().map(|&c| cells[c]).collect();
        return Err(TvaError::SingularDesign {
            columns,
            detail: format!("empty design cells {}", labels.join(" ")),
        });
    }
    let full = PolicyLattice::new(design.clone()).dominance_matrix();
    let w = DMatrix::from_fn(k, k, |r, c| full[(cells[r], cells[c])]);
    let sq: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
    let mut m = w;
    for (r, mut row) in m.row_iter_mut().enumerate() {
        row *= sq[r];
    }
    let svd = SVD::new(m, true, true);
    let us = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let d = svd.singular_values;
    let v = vt.transpose();
    check_rank(&d, &v, || "X'X is not invertible".to_string())?;

    let ytil = DVector::from_iterator(k, (0..k).map(|c| t[c] / sq[c]));
    let uty = us.tr_mul(&ytil);
    let h = &us * uty.component_div(&d);
    let g = &us * &vt;

    let mut u = DMatrix::zeros(n, k);
    let mut fx = DMatrix::zeros(n, k);
    let mut fy = DVector::zeros(n);
    for (i, &a) in assignments.iter().enumerate() {
        let a = position[a];
        let c = (wt(i) / s[a]).sqrt();
        for j in 0..k {
            u[(i, j)] = c * us[(a, j)];
            fx[(i, j)] = c * g[(a, j)];
        }
        fy[i] = c * h[a];
    }
    let rss = (yy - uty.norm_squared()).max(0.0);
    Ok(PufferDecomposition { u, singular_values: d, v, fx, fy, uty, row_scale: None, rss, df: n - k })
}

/// Puffer_N: rescale row i of `[FX | Fy]` by `1/‖F_i·‖₂` so every transformed
/// error has the same variance.
pub fn puffer_row_normalized(pd: &PufferDecomposition) -> Result<PufferDecomposition> {
    let norms = pd.operator_row_norms();
    if let Some(i) = norms.iter().position(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(TvaError::Numerical(format!("row {i} of the Puffer operator has norm {}", norms[i])));
    }
    let scale = norms.map(|r| 1.0 / r);
    let mut out = pd.clone();
    for (i, mut row) in out.fx.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    out.fy.component_mul_assign(&scale);
    out.row_scale = Some(match &pd.row_scale {
        Some(prev) => prev.component_mul(&scale),
        None => scale,
    });
    Ok(out)
}

/// Least squares with a rank check; returns coefficients.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = SVD::new(a.clone(), true, true);
    let v = svd.v_t.as_ref().expect("v requested").transpose();
    check_rank(&svd.singular_values, &v, || "regressor matrix is rank deficient".into())?;
    svd.solve(b, 0.0).map_err(|e| TvaError::Numerical(e.to_string()))
}

/// L1 norm of the coefficients from regressing column `target` of X on an
/// intercept and the remaining non-intercept columns.
///
/// Column 0 of a marginal design is the intercept and is never used as a
/// target or counted in the norm. With `standardized`, every non-intercept
/// column is centered and scaled to unit ℓ₂ norm first.
pub fn irrepresentability_l1(x: &DMatrix<f64>, target: usize, standardized: bool) -> Result<f64> {
    let (n, k) = x.shape();
    if target == 0 || target >= k {
        return Err(TvaError::InvalidArgument(format!(
            "target column {target} must be a non-intercept column in 1..{k}"
        )));
    }
    let prep = |j: usize| -> DVector<f64> {
        let col = x.column(j).clone_owned();
        if !standardized {
            return col;
        }
        let mean = col.mean();
        let centered = col.add_scalar(-mean);
        let norm = centered.norm();
        if norm > 0.0 {
            centered / norm
        } else {
            centered
        }
    };
    let others: Vec<usize> = (1..k).filter(|&j| j != target).collect();
    let mut a = DMatrix::zeros(n, others.len() + 1);
    a.column_mut(0).fill(1.0);
    for (c, &j) in others.iter().enumerate() {
        a.set_column(c + 1, &prep(j));
    }
    let gamma = lstsq(&a, &prep(target))?;
    Ok(gamma.iter().skip(1).map(|g| g.abs()).sum())
}

/// λ_min of the single-arm block `B_{R,1}`, from the eigenvalues of its
/// tridiagonal inverse.
pub fn lambda_min_b1(r: usize) -> Result<f64> {
    if r < 2 {
        return Err(TvaError::InvalidArgument(format!("R = {r}, need R ≥ 2")));
    }
    if r == 2 {
        return Ok(1.0);
    }
    let rf = r as f64;
    let s = (((rf - 1.5) / (rf - 0.5)) * std::f64::consts::FRAC_PI_2).sin();
    Ok(1.0 / (4.0 * s * s))
}

/// Closed-form limiting minimum singular value of `X/√n` for a symmetric
/// design, `(4R sin²(((R−3/2)/(R−1/2))·π/2))^{−M/2}`.
pub fn min_singular_closed_form(r: usize, m: usize) -> Result<f64> {
    if r < 2 {
        return Err(TvaError::InvalidArgument(format!("R = {r}, need R ≥ 2")));
    }
    if m == 0 {
        return Err(TvaError::InvalidArgument("M must be at least 1".into()));
    }
    let rf = r as f64;
    let s = (((rf - 1.5) / (rf - 0.5)) * std::f64::consts::FRAC_PI_2).sin();
    Ok((4.0 * rf * s * s).powf(-(m as f64) / 2.0))
}

/// `λ_min(C) = (1/K)·∏_m λ_min(B_{R_m,1})`, valid for asymmetric designs too.
pub fn min_eigen_closed_form(design: &FactorialDesign) -> Result<f64> {
    let mut prod = 1.0 / design.policy_count() as f64;
    for &r in design.dosages() {
        prod *= lambda_min_b1(r)?.min(1.0);
    }
    Ok(prod)
}

/// Limiting Gram matrix `lim X'X/n` under uniform assignment, with the
/// control column taken as the control-cell indicator rather than the
/// intercept. Entry (ℓ, ℓ') is the share of cells dominating both.
pub fn limiting_gram(design: &FactorialDesign) -> DMatrix<f64> {
    let k = design.policy_count();
    let kf = k as f64;
    let prof: Vec<_> = (0..k).map(|i| design.profile_of_index(i)).collect();
    DMatrix::from_fn(k, k, |a, b| {
        if prof[a] != prof[b] {
            return 0.0;
        }
        let mut count = 1.0;
        for m in prof[a].active_arms() {
            let top = design.intensity(a, m).max(design.intensity(b, m));
            count *= (design.dosages()[m] - top) as f64;
        }
        count / kf
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Smallest singular value of `X/√n`.
pub fn empirical_xi_min(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let gram = x.tr_mul(x) / n;
    min_eigenvalue(&gram).max(0.0).sqrt()
}

/// One row of the irrepresentability table for a symmetric design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrepresentabilityCell {
    pub levels: usize,
    pub arms: usize,
    pub n: usize,
    pub standardized: f64,
    pub unstandardized: f64,
}

/// L1 representability of the all-arms-max marginal column under i.i.d.
/// uniform assignment of `n` units, for every (R, M) pair.
pub fn irrepresentability_table(levels: &[usize], arms: &[usize], n: usize, seed: u64) -> Result<Vec<IrrepresentabilityCell>> {
    let mut rows = Vec::new();
    for &r in levels {
        for &m in arms {
            let design = FactorialDesign::symmetric(r, m)?;
            let k = design.policy_count();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((r * 1000 + m) as u64);
            let assignments: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let x = crate::lattice::marginal_matrix(&design, &assignments)?;
            rows.push(IrrepresentabilityCell {
                levels: r,
                arms: m,
                n,
                standardized: irrepresentability_l1(&x, k - 1, true)?,
                unstandardized: irrepresentability_l1(&x, k - 1, false)?,
            });
        }
    }
    Ok(rows)
}

pub fn irrepresentability_csv(rows: &[IrrepresentabilityCell]) -> String {
    let mut out = String::from("R,M,n,l1_standardized,l1_unstandardized\n");
    for c in rows {
        out.push_str(&format!("{},{},{},{},{}\n", c.levels, c.arms, c.n, c.standardized, c.unstandardized));
    }
    out
}

/// Closed-form against numeric λ_min of the limiting Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValueCheck {
    pub levels: usize,
    pub arms: usize,
    pub closed_form: f64,
    pub numeric: f64,
    pub abs_error: f64,
}

pub fn singular_value_checks(levels: &[usize], arms: &[usize]) -> Result<Vec<SingularValueCheck>> {
    let mut rows = Vec::new();
    for &r in levels {
        for &m in arms {
            let closed_form = min_singular_closed_form(r, m)?.powi(2);
            let numeric = min_eigenvalue(&limiting_gram(&FactorialDesign::symmetric(r, m)?));
            rows.push(SingularValueCheck { levels: r, arms: m, closed_form, numeric, abs_error: (closed_form - numeric).abs() });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::marginal_matrix;

    fn balanced(design: &FactorialDesign, reps: usize) -> Vec<usize> {
        (0..design.policy_count() * reps).map(|i| i % design.policy_count()).collect()
    }

    #[test]
    fn orthogonal_columns_are_rescaled() {
        let x = DMatrix::from_row_slice(4, 2, &[2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let pd = puffer(&x, &y).unwrap();
        let expect = &x / 2.0;
        assert!((pd.fx.abs() - expect.abs()).abs().max() < 1e-12);
        assert!(pd.orthonormality_error() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_rejected() {
        let mut x = DMatrix::from_fn(10, 3, |i, j| ((i * 3 + j * 5) % 7) as f64);
        let c = x.column(0).clone_owned();
        x.set_column(2, &c);
        let err = puffer(&x, &DVector::zeros(10)).unwrap_err();
        match err {
            TvaError::SingularDesign { columns, .. } => {
                assert!(columns.contains(&0) && columns.contains(&2))
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn factorial_path_matches_general_path() {
        let d = FactorialDesign::new(vec![3, 3]).unwrap();
        let a = balanced(&d, 100);
        let y: Vec<f64> = (0..a.len()).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let x = marginal_matrix(&d, &a).unwrap();
        let g = puffer(&x, &DVector::from_column_slice(&y)).unwrap();
        let f = puffer_factorial(&d, &a, &y, None).unwrap();
        assert!(f.orthonormality_error() < 1e-8);
        assert!((&g.fy - &f.fy).abs().max() < 1e-9);
        // FX is unique given X (U V' does not depend on singular-vector signs).
        assert!((&g.fx - &f.fx).abs().max() < 1e-9);
        assert!((g.ols_coefficients() - f.ols_coefficients()).abs().max() < 1e-9);
        assert!((g.rss - f.rss).abs() < 1e-6 * (1.0 + g.rss));
    }

    #[test]
    fn cell_subset_matches_general_path_on_feasible_columns() {
        // Arms 2 and 3 never run together: their joint profile is infeasible.
        let d = FactorialDesign::new(vec![3, 2, 2]).unwrap();
        let cells: Vec<usize> = (0..d.policy_count())
            .filter(|&c| !(d.intensity(c, 1) > 0 && d.intensity(c, 2) > 0))
            .collect();
        let a: Vec<usize> = (0..cells.len() * 40).map(|i| cells[i % cells.len()]).collect();
        let y: Vec<f64> = (0..a.len()).map(|i| ((i * 13) % 7) as f64 - 2.0).collect();
        let full = marginal_matrix(&d, &a).unwrap();
        let x = DMatrix::from_fn(a.len(), cells.len(), |i, j| full[(i, cells[j])]);
        let g = puffer(&x, &DVector::from_column_slice(&y)).unwrap();
        let f = puffer_cells(&d, &cells, &a, &y, None).unwrap();
        assert!((&g.fx - &f.fx).abs().max() < 1e-9);
        assert!((g.ols_coefficients() - f.ols_coefficients()).abs().max() < 1e-9);
        assert!(puffer_factorial(&d, &a, &y, None).is_err());
        assert!(puffer_cells(&d, &cells[1..], &a, &y, None).is_err());
    }

    #[test]
    fn empty_cell_is_singular() {
        let d = FactorialDesign::new(vec![3, 2]).unwrap();
        let a: Vec<usize> = (0..60).map(|i| i % 5).collect();
        assert!(matches!(
            puffer_factorial(&d, &a, &vec![0.0; 60], None),
            Err(TvaError::SingularDesign { .. })
        ));
    }

    #[test]
    fn row_normalization_equalizes_noise_variance() {
        let d = FactorialDesign::new(vec![3, 3]).unwrap();
        let a: Vec<usize> = (0..500).map(|i| if i < 450 { i % 9 } else { i % 3 }).collect();
        let y = vec![1.0; 500];
        let pd = puffer_factorial(&d, &a, &y, None).unwrap();
        let before = pd.transformed_noise_variances();
        assert!(before.max() - before.min() > 1e-4);
        let pn = puffer_row_normalized(&pd).unwrap();
        let after = pn.transformed_noise_variances();
        assert!((after.max() - after.min()).abs() < 1e-8);
        assert!((after[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn irrepresentability_trivial_cases() {
        // Orthogonal regressors (after centering) have zero cross-regression.
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
        );
        assert!(irrepresentability_l1(&x, 1, false).unwrap() < 1e-12);
        assert!(irrepresentability_l1(&x, 0, false).is_err());
    }

    #[test]
    fn closed_form_small_cases() {
        assert!((lambda_min_b1(3).unwrap() - 0.381_966).abs() < 1e-6);
        assert!((min_singular_closed_form(2, 1).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(min_singular_closed_form(1, 2).is_err());
        let b = limiting_gram(&FactorialDesign::symmetric(2, 1).unwrap());
        assert!((min_eigenvalue(&b) - 0.5).abs() < 1e-12);
    }
}
