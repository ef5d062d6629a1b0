//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use tva_core::lattice::{alpha_to_beta, FactorialDesign};

/// Random design with at most `max_cells` policies.
pub fn random_design<R: Rng>(rng: &mut R, max_cells: usize) -> FactorialDesign {
    loop {
        let m = rng.random_range(1..=4);
        let dosages: Vec<usize> = (0..m).map(|_| rng.random_range(2..=5)).collect();
        if dosages.iter().product::<usize>() <= max_cells {
            return FactorialDesign::new(dosages).unwrap();
        }
    }
}

/// Sparse random support of non-control marginal columns.
pub fn random_support<R: Rng>(rng: &mut R, design: &FactorialDesign, max_size: usize) -> Vec<usize> {
    let k = design.policy_count();
    let size = rng.random_range(0..=max_size.min(k - 1));
    let mut s: Vec<usize> = sample(rng, k - 1, size).into_iter().map(|i| i + 1).collect();
    s.sort_unstable();
    s
}

/// Groups policies by exactly equal β within each profile, pruning β = 0.
///
/// Support coefficients are distinct powers of two per profile, so two
/// policies share β iff the same support columns cover them, and all sums
/// are exact.
pub fn equal_beta_partition(design: &FactorialDesign, support: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let k = design.policy_count();
    let mut alpha = vec![0.0; k];
    let mut rank: BTreeMap<_, i32> = BTreeMap::new();
    for &s in support {
        let r = rank.entry(design.profile_of_index(s)).or_insert(0);
        alpha[s] = 2f64.powi(*r);
        *r += 1;
    }
    let beta = alpha_to_beta(design, &alpha).unwrap();
    let mut groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    let mut control = vec![0];
    for i in 1..k {
        if beta[i] == 0.0 {
            control.push(i);
        } else {
            let key = (design.profile_of_index(i).0 as u64, beta[i].to_bits());
            groups.entry(key).or_default().push(i);
        }
    }
    let mut g: Vec<Vec<usize>> = groups.into_values().collect();
    g.sort();
    (g, control)
}

/// P(max_i |Z_i| ≤ c) for an equicorrelated standard normal vector, by
/// quadrature over the common factor.
pub fn equicorrelated_max_abs_cdf(dim: usize, rho: f64, c: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let nd = Normal::new(0.0, 1.0).unwrap();
    let s = (1.0 - rho).sqrt();
    let r = rho.sqrt();
    let steps = 4000;
    let (lo, hi) = (-9.0, 9.0);
    let h = (hi - lo) / steps as f64;
    let f = |u: f64| {
        let inner = nd.cdf((c + r * u) / s) - nd.cdf((-c + r * u) / s);
        (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt() * inner.powi(dim as i32)
    };
    // composite Simpson
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let x = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}
