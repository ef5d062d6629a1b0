use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tva_core::estimation::{fit, FitOptions, VcovKind};

struct Problem {
    z: DMatrix<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    clusters: Vec<usize>,
    fe: Vec<usize>,
}

fn problem(rng: &mut ChaCha8Rng) -> Problem {
    let n = rng.random_range(60..200);
    let pools = rng.random_range(1..5);
    let cell: Vec<usize> = (0..n).map(|i| if i <= pools { i } else { rng.random_range(0..=pools) }).collect();
    let z = DMatrix::from_fn(n, pools + 1, |i, j| if j == 0 || cell[i] == j { 1.0 } else { 0.0 });
    let y = (0..n).map(|i| cell[i] as f64 * 0.7 + rng.random_range(-2.0..2.0)).collect();
    let w = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let clusters = (0..n).map(|i| i % 13).collect();
    let fe = (0..n).map(|_| rng.random_range(0..4)).collect();
    Problem { z, y, w, clusters, fe }
}

/// Textbook WLS with explicit matrices: (Z'WZ)⁻¹ Z'Wy and the HC1 / CR1 sandwiches.
fn reference(z: &DMatrix<f64>, y: &[f64], w: &[f64], clusters: Option<&[usize]>, extra_params: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = z.nrows();
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let yv = DVector::from_column_slice(y);
    let bread = (z.transpose() * &wm * z).try_inverse().unwrap();
    let b = &bread * z.transpose() * &wm * &yv;
    let e = &yv - z * &b;
    let k = z.ncols() + extra_params;
    let meat = match clusters {
        None => {
            let mut m = DMatrix::zeros(z.ncols(), z.ncols());
            for i in 0..n {
                let zi = z.row(i).transpose();
                m += &zi * zi.transpose() * (w[i] * e[i]).powi(2);
            }
            m * (n as f64 / (n - k) as f64)
        }
        Some(cl) => {
            let g = cl.iter().max().unwrap() + 1;
            let mut m = DMatrix::zeros(z.ncols(), z.ncols());
            for c in 0..g {
                let mut s = DVector::zeros(z.ncols());
                for i in (0..n).filter(|&i| cl[i] == c) {
                    s += z.row(i).transpose() * (w[i] * e[i]);
                }
                m += &s * s.transpose();
            }
            let g = g as f64;
            m * (g / (g - 1.0) * (n as f64 - 1.0) / (n - k) as f64)
        }
    };
    (b, &bread * meat * &bread)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn weighted_fit_matches_textbook_hc1_and_cr1() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = problem(&mut rng);
        for clustered in [false, true] {
            let cl = clustered.then_some(p.clusters.as_slice());
            let opts = FitOptions { weights: Some(&p.w), clusters: cl, ..Default::default() };
            let got = fit(&p.z, &p.y, &opts).unwrap();
            let (b, v) = reference(&p.z, &p.y, &p.w, cl, 0);
            assert_eq!(got.vcov_kind, if clustered { VcovKind::Cr1 } else { VcovKind::Hc1 });
            assert!(close(got.intercept.unwrap(), b[0]));
            for i in 0..got.eta_hat.len() {
                assert!(close(got.eta_hat[i], b[i + 1]));
                for j in 0..got.eta_hat.len() {
                    assert!(close(got.vcov[i][j], v[(i + 1, j + 1)]), "{} vs {}", got.vcov[i][j], v[(i + 1, j + 1)]);
                }
            }
        }
    }
}

#[test]
fn absorbed_fixed_effects_match_explicit_dummies() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let p = problem(&mut rng);
        let n = p.z.nrows();
        let levels = p.fe.iter().max().unwrap() + 1;
        // Intercept replaced by a full set of FE dummies.
        let zf = DMatrix::from_fn(n, p.z.ncols() - 1 + levels, |i, j| {
            if j < p.z.ncols() - 1 {
                p.z[(i, j + 1)]
            } else if p.fe[i] == j - (p.z.ncols() - 1) {
                1.0
            } else {
                0.0
            }
        });
        let fe = vec![p.fe.clone()];
        let opts = FitOptions { weights: Some(&p.w), fixed_effects: &fe, clusters: Some(&p.clusters), ..Default::default() };
        let got = fit(&p.z, &p.y, &opts).unwrap();
        let (b, v) = reference(&zf, &p.y, &p.w, Some(&p.clusters), 0);
        assert!(got.intercept.is_none());
        for i in 0..got.eta_hat.len() {
            assert!(close(got.eta_hat[i], b[i]));
            assert!(close(got.vcov[i][i], v[(i, i)]), "{} vs {}", got.vcov[i][i], v[(i, i)]);
        }
    }
}

#[test]
fn effective_sample_size_is_kish() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = problem(&mut rng);
    let got = fit(&p.z, &p.y, &FitOptions { weights: Some(&p.w), ..Default::default() }).unwrap();
    let s: f64 = p.w.iter().sum();
    let s2: f64 = p.w.iter().map(|v| v * v).sum();
    assert!(close(got.n_effective, s * s / s2));
    let unweighted = fit(&p.z, &p.y, &FitOptions::default()).unwrap();
    assert_eq!(unweighted.n_effective, p.z.nrows() as f64);
}
