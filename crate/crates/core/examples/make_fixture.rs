//! Writes the synthetic immunization fixture used by the golden tests.
//!
//! 915 villages under 150 subcenters in 7 districts, observed over 4
//! quarters. Incentives and SMS coverage are randomized by subcenter,
//! ambassadors by village. Usage: `cargo run --example make_fixture -- DIR`.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const VILLAGES: usize = 915;
const SUBCENTERS: usize = 150;
const DISTRICTS: usize = 7;
const QUARTERS: usize = 4;

const SEEDS: [&str; 5] = ["none", "random", "trusted", "info_hub", "info_hub_trusted"];
const AMOUNTS: [&str; 3] = ["none", "low", "high"];
const SMS: [&str; 3] = ["none", "sms33", "sms66"];

// (slope, flat) pairs; the two incentive schedules never overlap.
const INCENTIVES: [(usize, usize); 5] = [(0, 0), (1, 0), (2, 0), (0, 1), (0, 2)];

fn shots_effect(seed: usize, slope: usize, flat: usize, sms: usize) -> f64 {
    let hub = seed >= 3;
    let mut e = 0.0;
    if hub && sms > 0 {
        e += 1.8;
    }
    if hub && sms > 0 && slope > 0 {
        e += 1.5;
    }
    if slope > 0 || flat > 0 {
        e += 0.6;
    }
    if seed == 1 {
        e -= 0.4;
    }
    e
}

fn incentive_cost(slope: usize, flat: usize) -> f64 {
    [0.0, 3.6, 6.4][slope] + [0.0, 2.7, 5.1][flat]
}

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    let mut rng = ChaCha8Rng::seed_from_u64(20161201);

    // Balanced subcenter-level assignment of the 15 incentive x SMS arms.
    let mut sc_arm: Vec<usize> = (0..SUBCENTERS).map(|s| s % 15).collect();
    sc_arm.shuffle(&mut rng);
    let sc_district: Vec<usize> = (0..SUBCENTERS).map(|s| s % DISTRICTS).collect();

    let mut village_sc: Vec<usize> = (0..VILLAGES).map(|v| v % SUBCENTERS).collect();
    village_sc.shuffle(&mut rng);

    // Ambassadors rotate within each incentive x SMS arm so every cell is hit.
    let mut seed_of = vec![0usize; VILLAGES];
    for arm in 0..15 {
        let mut members: Vec<usize> = (0..VILLAGES).filter(|&v| sc_arm[village_sc[v]] == arm).collect();
        members.shuffle(&mut rng);
        for (i, &v) in members.iter().enumerate() {
            seed_of[v] = i % SEEDS.len();
        }
    }

    let district_level: Vec<f64> = (0..DISTRICTS).map(|_| rng.random_range(4.0..9.0)).collect();
    let quarter_level = [0.0, 0.8, 1.3, 0.5];
    let noise = Normal::new(0.0, 1.0).unwrap();

    let mut csv = String::from("village,subcenter,district_time,population,seed,slope,flat,sms,shots,shots_per_dollar\n");
    for v in 0..VILLAGES {
        let sc = village_sc[v];
        let (slope, flat) = INCENTIVES[sc_arm[sc] / 3];
        let sms = sc_arm[sc] % 3;
        let seed = seed_of[v];
        let population: u32 = rng.random_range(400..4000);
        let scale = (population as f64 / 1500.0).sqrt();
        let village_effect = 1.2 * noise.sample(&mut rng);
        for q in 0..QUARTERS {
            let d = sc_district[sc];
            let mean = scale * (district_level[d] + quarter_level[q]) + shots_effect(seed, slope, flat, sms);
            let shots = (mean + village_effect + 2.5 * noise.sample(&mut rng)).max(0.0);
            let cost = 40.0 + 0.02 * population as f64 + shots * incentive_cost(slope, flat) + [0.0, 1.5, 3.0][sms];
            writeln!(
                csv,
                "v{v:03},sc{sc:03},d{d}q{q},{population},{},{},{},{},{shots:.2},{:.6}",
                SEEDS[seed],
                AMOUNTS[slope],
                AMOUNTS[flat],
                SMS[sms],
                shots / cost
            )
            .unwrap();
        }
    }
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("immunization.csv");
    std::fs::write(&path, csv).unwrap();
    println!("wrote {}", path.display());
}
