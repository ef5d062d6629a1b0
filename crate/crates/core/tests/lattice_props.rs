use proptest::prelude::*;
use tva_core::lattice::{
    alpha_to_beta, beta_to_alpha, marginal_matrix, unique_policy_matrix, FactorialDesign, PolicyLattice,
};

fn design() -> impl Strategy<Value = FactorialDesign> {
    prop::collection::vec(2usize..=5, 1..=4)
        .prop_filter("at most 300 cells", |d| d.iter().product::<usize>() <= 300)
        .prop_map(|d| FactorialDesign::new(d).unwrap())
}

fn design_and_alpha() -> impl Strategy<Value = (FactorialDesign, Vec<f64>)> {
    design().prop_flat_map(|d| {
        let k = d.policy_count();
        (Just(d), prop::collection::vec(-5.0f64..5.0, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_inverts_decode(d in design()) {
        for i in 0..d.policy_count() {
            let p = d.decode(i);
            prop_assert_eq!(d.encode(p.intensities()).unwrap(), i);
        }
    }

    #[test]
    fn mobius_inversion_round_trips((d, alpha) in design_and_alpha()) {
        let beta = alpha_to_beta(&d, &alpha).unwrap();
        let back = beta_to_alpha(&d, &beta).unwrap();
        for (a, b) in alpha.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_is_dominance_sum_within_profile((d, mut alpha) in design_and_alpha()) {
        alpha[0] = 0.0;
        let beta = alpha_to_beta(&d, &alpha).unwrap();
        let k = d.policy_count();
        for i in 1..k {
            let direct: f64 = (1..k)
                .filter(|&l| d.profile_of_index(l) == d.profile_of_index(i) && d.dominates(i, l))
                .map(|l| alpha[l])
                .sum();
            prop_assert!((beta[i] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn marginal_design_factors_through_cells(d in design(), seed in any::<u64>()) {
        let k = d.policy_count();
        let assignments: Vec<usize> = (0..2 * k).map(|i| ((i as u64).wrapping_mul(seed | 1) % k as u64) as usize).collect();
        let x = marginal_matrix(&d, &assignments).unwrap();
        let t = unique_policy_matrix(&d, &assignments).unwrap();
        let w = PolicyLattice::new(d.clone()).dominance_matrix();
        prop_assert_eq!(x, t * w);
    }
}

fn covering_pairs_brute(d: &FactorialDesign) -> Vec<(usize, usize)> {
    let k = d.policy_count();
    let mut out = Vec::new();
    for a in 1..k {
        for b in 1..k {
            if d.profile_of_index(a) != d.profile_of_index(b) || !d.dominates(b, a) || a == b {
                continue;
            }
            let step: usize = (0..d.arm_count()).map(|m| d.intensity(b, m) - d.intensity(a, m)).sum();
            if step == 1 {
                out.push((a, b));
            }
        }
    }
    out.sort_unstable();
    out
}

#[test]
fn hasse_edges_match_brute_force_covering_pairs() {
    for dosages in [vec![4], vec![3, 3], vec![5, 5, 3], vec![2, 3, 4, 2]] {
        let d = FactorialDesign::new(dosages).unwrap();
        let mut edges = PolicyLattice::new(d.clone()).hasse_edges();
        edges.sort_unstable();
        assert_eq!(edges, covering_pairs_brute(&d));
    }
}

#[test]
fn balanced_column_means_are_sphere_shares() {
    // One unit per cell: column ℓ's mean is the share of cells in ℓ's sphere,
    // Π over arms active in ℓ of (R_m − ℓ_m) / R_m.
    for dosages in [vec![3, 2], vec![5, 5, 3], vec![4, 3, 2]] {
        let d = FactorialDesign::new(dosages.clone()).unwrap();
        let k = d.policy_count();
        let x = marginal_matrix(&d, &(0..k).collect::<Vec<_>>()).unwrap();
        for l in 1..k {
            let mean = x.column(l).sum() / k as f64;
            let mut share = 1.0;
            for (m, &r) in dosages.iter().enumerate() {
                let lm = d.intensity(l, m);
                share *= if lm == 0 { 1.0 / r as f64 } else { (r - lm) as f64 / r as f64 };
            }
            assert!((mean - share).abs() < 1e-12, "column {l}: {mean} vs {share}");
        }
    }
}
