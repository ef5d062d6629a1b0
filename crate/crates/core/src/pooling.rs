//! From a marginal support to the pooled and pruned policy partition, via
//! spheres of influence, and the admissibility checks on partitions.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Result, TvaError};
use crate::lattice::{FactorialDesign, Policy, Profile};

/// Per-profile cap on support members; atoms are enumerated over 2^m sign patterns.
pub const MAX_MEMBERS_PER_PROFILE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    /// Canonical policy indices, ascending.
    pub members: Vec<usize>,
    pub policies: Vec<Policy>,
    pub label: String,
    pub profile: Profile,
    /// Support members whose spheres contain this pool.
    pub active_spheres: Vec<usize>,
}

impl Pool {
    /// Smallest canonical index, which is also the minimal-dosage member when the pool is a box.
    pub fn first(&self) -> usize {
        self.members[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPartition {
    pub pools: Vec<Pool>,
    /// Control plus every pruned policy, ascending.
    pub control_pool: Vec<usize>,
    /// Pool index of each policy; `None` for the control pool.
    pub pool_of: Vec<Option<usize>>,
}

impl PooledPartition {
    /// Build a partition from explicit groups (anything not listed goes to control).
    pub fn from_groups(design: &FactorialDesign, groups: &[Vec<usize>]) -> Result<Self> {
        let k = design.policy_count();
        let mut pool_of = vec![None; k];
        let mut pools = Vec::new();
        for g in groups {
            let mut members = g.clone();
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                continue;
            }
            for &m in &members {
                design.check_index(m)?;
                if m == 0 {
                    return Err(TvaError::InvalidArgument(
                        "the control policy cannot be placed in a treatment pool".into(),
                    ));
                }
                if pool_of[m].is_some() {
                    return Err(TvaError::InvalidArgument(format!(
                        "policy {} appears in more than one pool",
                        design.decode(m)
                    )));
                }
                pool_of[m] = Some(pools.len());
            }
            let profile = design.profile_of_index(members[0]);
            pools.push(Pool {
                policies: members.iter().map(|&m| design.decode(m)).collect(),
                label: pool_label(design, &members),
                profile,
                active_spheres: Vec::new(),
                members,
            });
        }
        let control_pool = (0..k).filter(|&i| pool_of[i].is_none()).collect();
        Ok(Self { pools, control_pool, pool_of })
    }

    pub fn pool_count(&self) -> usize {
        self.pools.len()
    }

    /// Partition as sets of sets: non-control pools sorted, then the control pool.
    pub fn canonical_groups(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let mut g: Vec<Vec<usize>> = self.pools.iter().map(|p| p.members.clone()).collect();
        g.sort();
        (g, self.control_pool.clone())
    }
}

/// Sphere of influence of a non-control policy: same-profile policies that dominate it.
pub fn sphere(design: &FactorialDesign, k: usize) -> Result<Vec<usize>> {
    design.check_index(k)?;
    if k == 0 {
        return Err(TvaError::InvalidArgument("the control policy has no sphere of influence".into()));
    }
    let p = design.profile_of_index(k);
    Ok((0..design.policy_count())
        .filter(|&j| design.profile_of_index(j) == p && design.dominates(j, k))
        .collect())
}

/// Maximal admissible pooled-and-pruned partition implied by a marginal support.
///
/// Within each profile, policies are grouped by which support spheres
/// contain them. Groups covered by no sphere, and profiles without support,
/// are pruned into the control pool. The intercept (index 0) is ignored.
pub fn pool(design: &FactorialDesign, support: &[usize]) -> Result<PooledPartition> {
    let k = design.policy_count();
    let mut by_profile: BTreeMap<Profile, Vec<usize>> = BTreeMap::new();
    for &s in support {
        design.check_index(s)?;
        if s != 0 {
            by_profile.entry(design.profile_of_index(s)).or_default().push(s);
        }
    }
    for (p, members) in by_profile.iter_mut() {
        members.sort_unstable();
        members.dedup();
        if members.len() > MAX_MEMBERS_PER_PROFILE {
            return Err(TvaError::InvalidArgument(format!(
                "profile {p} has {} support members; at most {MAX_MEMBERS_PER_PROFILE} are supported",
                members.len()
            )));
        }
    }

    // Atom key: (profile, sign pattern over that profile's members).
    let mut atoms: BTreeMap<(Profile, u32), Vec<usize>> = BTreeMap::new();
    let mut control_pool = vec![0usize];
    for j in 1..k {
        let p = design.profile_of_index(j);
        let signature = match by_profile.get(&p) {
            Some(members) => members
                .iter()
                .enumerate()
                .filter(|(_, &s)| design.dominates(j, s))
                .fold(0u32, |acc, (b, _)| acc | (1 << b)),
            None => 0,
        };
        if signature == 0 {
            control_pool.push(j);
        } else {
            atoms.entry((p, signature)).or_default().push(j);
        }
    }

    let mut pools: Vec<Pool> = atoms
        .into_iter()
        .map(|((p, sig), members)| {
            let spheres = &by_profile[&p];
            Pool {
                policies: members.iter().map(|&m| design.decode(m)).collect(),
                label: pool_label(design, &members),
                profile: p,
                active_spheres: (0..spheres.len())
                    .filter(|b| sig & (1 << b) != 0)
                    .map(|b| spheres[b])
                    .collect(),
                members,
            }
        })
        .collect();
    pools.sort_by_key(|p| p.first());
    let mut pool_of = vec![None; k];
    for (i, p) in pools.iter().enumerate() {
        for &m in &p.members {
            pool_of[m] = Some(i);
        }
    }
    Ok(PooledPartition { pools, control_pool, pool_of })
}

/// Interval label ("[2:3,1]") for box-shaped groups, explicit list otherwise.
pub fn pool_label(design: &FactorialDesign, members: &[usize]) -> String {
    let m = design.arm_count();
    let mut ranges = Vec::with_capacity(m);
    let mut volume = 1usize;
    for arm in 0..m {
        let vals: Vec<usize> = members.iter().map(|&i| design.intensity(i, arm)).collect();
        let lo = *vals.iter().min().unwrap_or(&0);
        let hi = *vals.iter().max().unwrap_or(&0);
        volume *= hi - lo + 1;
        ranges.push((lo, hi));
    }
    if volume == members.len() {
        let parts: Vec<String> = ranges
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo.to_string() } else { format!("{lo}:{hi}") })
            .collect();
        format!("[{}]", parts.join(","))
    } else {
        let parts: Vec<String> = members.iter().map(|&i| design.decode(i).to_string()).collect();
        format!("{{{}}}", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: u8,
    pub description: String,
    pub passed: bool,
    pub counterexamples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub rules: Vec<RuleCheck>,
}

impl AdmissibilityReport {
    pub fn all_passed(&self) -> bool {
        self.rules.iter().all(|r| r.passed)
    }

    pub fn rule(&self, n: u8) -> &RuleCheck {
        &self.rules[(n - 1) as usize]
    }
}

const MAX_COUNTEREXAMPLES: usize = 10;

/// Check a partition against the four admissibility rules, given unique-policy
/// effects β (control entry ignored; pruned policies must have β = 0).
pub fn validate_admissible(
    design: &FactorialDesign,
    partition: &PooledPartition,
    beta: &[f64],
) -> Result<AdmissibilityReport> {
    let k = design.policy_count();
    if beta.len() != k || partition.pool_of.len() != k {
        return Err(TvaError::InvalidArgument(format!(
            "partition and beta must both cover the {k} policies"
        )));
    }
    let effect = |i: usize| if i == 0 { 0.0 } else { beta[i] };
    let name = |i: usize| design.decode(i).to_string();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));

    let mut groups: Vec<(String, Vec<usize>, bool)> = partition
        .pools
        .iter()
        .map(|p| (p.label.clone(), p.members.clone(), false))
        .collect();
    groups.push(("control".into(), partition.control_pool.clone(), true));

    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut r3 = Vec::new();
    for (label, members, is_control) in &groups {
        let reference = if *is_control { 0.0 } else { effect(members[0]) };
        for &m in members {
            if !close(effect(m), reference) {
                r1.push(format!("{label}: β{} = {} differs from {}", name(m), effect(m), reference));
            }
        }
        if !is_control {
            let p0 = design.profile_of_index(members[0]);
            for &m in members {
                if design.profile_of_index(m) != p0 {
                    r2.push(format!(
                        "{label}: {} and {} have different profiles and the pool excludes control",
                        name(members[0]),
                        name(m)
                    ));
                }
            }
        }
        for &a in members {
            for &b in members {
                // Contiguity concerns variants; pairs across profiles are rule 2's business.
                if a == b
                    || design.profile_of_index(a) != design.profile_of_index(b)
                    || !design.dominates(b, a)
                {
                    continue;
                }
                for mid in 0..k {
                    if mid != a
                        && mid != b
                        && design.dominates(mid, a)
                        && design.dominates(b, mid)
                        && !members.contains(&mid)
                    {
                        r3.push(format!("{label}: {} ≤ {} ≤ {} but {} is outside", name(a), name(mid), name(b), name(mid)));
                    }
                }
            }
        }
    }

    let pool_id = |i: usize| partition.pool_of[i];
    let mut r4 = Vec::new();
    for kk in 1..k {
        let p = design.profile_of_index(kk);
        for arm in p.active_arms() {
            let r = design.intensity(kk, arm);
            if r < 2 {
                continue;
            }
            let kp = kk - design.stride(arm);
            if pool_id(kk) != pool_id(kp) {
                continue;
            }
            for j in 1..k {
                if j == kk
                    || design.profile_of_index(j) != p
                    || design.intensity(j, arm) != r
                    || !design.dominates(kk, j)
                {
                    continue;
                }
                let jp = j - design.stride(arm);
                if pool_id(j) != pool_id(jp) {
                    r4.push(format!(
                        "step {}→{} is pooled but {}→{} is not",
                        name(kp),
                        name(kk),
                        name(jp),
                        name(j)
                    ));
                }
            }
        }
    }

    let mk = |rule: u8, description: &str, mut v: Vec<String>| {
        v.sort();
        v.dedup();
        v.truncate(MAX_COUNTEREXAMPLES);
        RuleCheck { rule, description: description.into(), passed: v.is_empty(), counterexamples: v }
    };
    Ok(AdmissibilityReport {
        rules: vec![
            mk(1, "pooled policies have equal effects", r1),
            mk(2, "only variants are pooled unless pooled with control", r2),
            mk(3, "pools are order-convex", r3),
            mk(4, "pooled dosage steps propagate to every lower parallel step", r4),
        ],
    })
}
