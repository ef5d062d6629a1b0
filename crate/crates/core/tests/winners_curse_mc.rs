mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tva_core::winners_curse::{
    argmax, conditional_median_estimate, projection_critical_value, truncated_normal_cdf, truncation_bounds,
    ProjectionOptions,
};

fn random_vcov(rng: &mut ChaCha8Rng, j: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(j, j, |_, _| rng.random_range(-1.0..1.0));
    a.transpose() * a + DMatrix::identity(j, j) * 0.2
}

fn sample(rng: &mut ChaCha8Rng, mu: &[f64], chol: &DMatrix<f64>) -> Vec<f64> {
    let z: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
    (0..mu.len()).map(|a| mu[a] + (0..=a).map(|b| chol[(a, b)] * z[b]).sum::<f64>()).collect()
}

#[test]
fn truncated_normal_cdf_matches_rejection_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (mu, sigma, lo, hi) in [(0.0, 1.0, -0.5, 2.0), (1.0, 2.0, 2.5, f64::INFINITY), (-1.0, 0.5, f64::NEG_INFINITY, -0.8)] {
        let mut kept = Vec::new();
        while kept.len() < 40_000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = mu + sigma * z;
            if x >= lo && x <= hi {
                kept.push(x);
            }
        }
        let probe_lo = if lo.is_finite() { lo } else { mu - 3.0 * sigma };
        let probe_hi = if hi.is_finite() { hi } else { mu + 3.0 * sigma };
        for i in 1..10 {
            let y = probe_lo + (probe_hi - probe_lo) * i as f64 / 10.0;
            let emp = kept.iter().filter(|&&x| x <= y).count() as f64 / kept.len() as f64;
            let exact = truncated_normal_cdf(y, mu, sigma, lo, hi);
            assert!((emp - exact).abs() < 0.01, "y={y}: {emp} vs {exact}");
        }
    }
}

#[test]
fn truncation_interval_is_the_set_where_the_winner_stays_on_top() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let j = rng.random_range(2..=6);
        let v = random_vcov(&mut rng, j);
        let eta: Vec<f64> = (0..j).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = argmax(&eta);
        let (lo, hi) = truncation_bounds(&eta, &v, w).unwrap();
        assert!(lo <= eta[w] && eta[w] <= hi);
        // Move y_w while holding the part of η independent of it fixed.
        let path = |y: f64| -> Vec<f64> {
            (0..j).map(|i| eta[i] + v[(i, w)] / v[(w, w)] * (y - eta[w])).collect()
        };
        let wins = |y: f64| {
            let e = path(y);
            e.iter().all(|&x| x <= e[w])
        };
        for t in 1..40 {
            let y = eta[w] - 8.0 + 16.0 * t as f64 / 40.0;
            let inside = y > lo + 1e-7 && y < hi - 1e-7;
            let outside = y < lo - 1e-7 || y > hi + 1e-7;
            if inside {
                assert!(wins(y), "y={y} in [{lo}, {hi}] but winner loses");
            }
            if outside {
                assert!(!wins(y), "y={y} outside [{lo}, {hi}] but winner still wins");
            }
        }
    }
}

#[test]
fn projection_value_has_nominal_coverage_under_equicorrelation() {
    for (dim, rho) in [(3usize, 0.5), (6, 0.3), (4, 0.8)] {
        let v = DMatrix::from_fn(dim, dim, |a, b| if a == b { 1.0 } else { rho });
        let c = projection_critical_value(&v, 0.005, &ProjectionOptions::default()).unwrap();
        let cover = common::equicorrelated_max_abs_cdf(dim, rho, c);
        assert!((cover - 0.995).abs() < 1.5e-3, "dim {dim}, rho {rho}: coverage {cover}");
    }
}

#[test]
fn conditional_median_is_median_unbiased_given_the_winner() {
    let mu = [0.0, 0.3, 0.5];
    let v = DMatrix::from_fn(3, 3, |a, b| if a == b { 1.0 } else { 0.4 });
    let chol = v.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut below = [0usize; 3];
    let mut wins = [0usize; 3];
    for _ in 0..6000 {
        let eta = sample(&mut rng, &mu, &chol);
        let w = argmax(&eta);
        let (lo, hi) = truncation_bounds(&eta, &v, w).unwrap();
        let est = conditional_median_estimate(eta[w], v[(w, w)], lo, hi).unwrap();
        wins[w] += 1;
        if est <= mu[w] {
            below[w] += 1;
        }
    }
    for w in 0..3 {
        let n = wins[w] as f64;
        let rate = below[w] as f64 / n;
        assert!((rate - 0.5).abs() < 4.0 * (0.25 / n).sqrt(), "winner {w}: {rate} over {n} draws");
    }
}
