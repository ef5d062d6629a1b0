//! Factorial designs with ordered dosages, the dominance order on policies,
//! and the linear maps between unique-policy effects (β) and marginal
//! effects (α).
//!
//! Policies are stored by their canonical index: a mixed-radix encoding of
//! the intensity vector with arm 1 as the slowest digit, so the control
//! policy `[0, …, 0]` is index 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Result, TvaError};

/// Arms and per-arm dosage counts. Dosage 0 means the arm is off.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FactorialDesign {
    dosages: Vec<usize>,
    strides: Vec<usize>,
    k: usize,
}

impl FactorialDesign {
    pub fn new(dosages: Vec<usize>) -> Result<Self> {
        if dosages.is_empty() {
            return Err(TvaError::InvalidDesign("design needs at least one arm".into()));
        }
        if dosages.len() > 31 {
            return Err(TvaError::InvalidDesign(format!(
                "{} arms requested, at most 31 are supported",
                dosages.len()
            )));
        }
        if let Some((m, r)) = dosages.iter().enumerate().find(|(_, &r)| r < 2) {
            return Err(TvaError::InvalidDesign(format!(
                "arm {} has {} dosage level(s); every arm needs at least 2 (off plus one on level)",
                m + 1,
                r
            )));
        }
        let mut strides = vec![1usize; dosages.len()];
        let mut k: usize = 1;
        for m in (0..dosages.len()).rev() {
            strides[m] = k;
            k = k.checked_mul(dosages[m]).ok_or_else(|| {
                TvaError::InvalidDesign("number of policies overflows".into())
            })?;
        }
        Ok(Self { dosages, strides, k })
    }

    /// Symmetric design with `arms` arms of `levels` dosages each.
    pub fn symmetric(levels: usize, arms: usize) -> Result<Self> {
        Self::new(vec![levels; arms])
    }

    pub fn arm_count(&self) -> usize {
        self.dosages.len()
    }

    pub fn dosages(&self) -> &[usize] {
        &self.dosages
    }

    /// K, the number of unique policies (cells).
    pub fn policy_count(&self) -> usize {
        self.k
    }

    /// Canonical index of an intensity vector.
    pub fn encode(&self, intensities: &[usize]) -> Result<usize> {
        if intensities.len() != self.dosages.len() {
            return Err(TvaError::UnknownPolicy(format!(
                "{:?} has {} intensities, design has {} arms",
                intensities,
                intensities.len(),
                self.dosages.len()
            )));
        }
        let mut idx = 0;
        for (m, (&r, &rm)) in intensities.iter().zip(&self.dosages).enumerate() {
            if r >= rm {
                return Err(TvaError::UnknownPolicy(format!(
                    "{:?}: arm {} intensity {} outside 0..{}",
                    intensities,
                    m + 1,
                    r,
                    rm - 1
                )));
            }
            idx += r * self.strides[m];
        }
        Ok(idx)
    }

    /// Intensity vector of a canonical index. Panics if `index >= K`.
    pub fn decode(&self, index: usize) -> Policy {
        assert!(index < self.k, "policy index {index} out of range");
        Policy(
            self.strides
                .iter()
                .zip(&self.dosages)
                .map(|(&s, &r)| (index / s) % r)
                .collect(),
        )
    }

    /// Intensity of arm `m` (0-based) in policy `index`.
    #[inline]
    pub fn intensity(&self, index: usize, m: usize) -> usize {
        (index / self.strides[m]) % self.dosages[m]
    }

    #[inline]
    pub fn stride(&self, m: usize) -> usize {
        self.strides[m]
    }

    pub fn profile_of_index(&self, index: usize) -> Profile {
        let mut bits = 0u32;
        for m in 0..self.dosages.len() {
            if self.intensity(index, m) > 0 {
                bits |= 1 << m;
            }
        }
        Profile(bits)
    }

    /// `a ≥ b` in every arm.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        (0..self.dosages.len()).all(|m| self.intensity(a, m) >= self.intensity(b, m))
    }

    /// Dominance restricted to a shared treatment profile.
    pub fn dominates_within_profile(&self, a: usize, b: usize) -> bool {
        self.profile_of_index(a) == self.profile_of_index(b) && self.dominates(a, b)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.k {
            Ok(())
        } else {
            Err(TvaError::UnknownPolicy(format!(
                "policy index {index} outside 0..{}",
                self.k
            )))
        }
    }
}

impl TryFrom<Vec<usize>> for FactorialDesign {
    type Error = TvaError;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FactorialDesign> for Vec<usize> {
    fn from(d: FactorialDesign) -> Self {
        d.dosages
    }
}

/// Intensity vector `[r_1, …, r_M]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn intensities(&self) -> &[usize] {
        &self.0
    }

    pub fn is_control(&self) -> bool {
        self.0.iter().all(|&r| r == 0)
    }

    pub fn profile(&self) -> Profile {
        profile_of(self)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, "]")
    }
}

/// The set of active arms, as a bitmask (bit m set iff arm m+1 is on).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(pub u32);

impl Profile {
    pub const CONTROL: Profile = Profile(0);

    /// Active arms, 0-based.
    pub fn active_arms(&self) -> Vec<usize> {
        (0..32).filter(|m| self.0 & (1 << m) != 0).collect()
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.0 & (1 << arm) != 0
    }

    pub fn is_control(&self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arms: Vec<String> = self.active_arms().iter().map(|m| (m + 1).to_string()).collect();
        write!(f, "{{{}}}", arms.join(","))
    }
}

/// All K policies in canonical order, control first.
pub fn enumerate_policies(design: &FactorialDesign) -> Vec<Policy> {
    (0..design.policy_count()).map(|i| design.decode(i)).collect()
}

pub fn profile_of(k: &Policy) -> Profile {
    let mut bits = 0u32;
    for (m, &r) in k.0.iter().enumerate() {
        if r > 0 {
            bits |= 1 << m;
        }
    }
    Profile(bits)
}

/// Every profile that occurs in the design (all 2^M of them), ordered by bitmask.
pub fn all_profiles(design: &FactorialDesign) -> Vec<Profile> {
    (0..(1u32 << design.arm_count())).map(Profile).collect()
}

/// Canonical indices of the policies in `profile`, ascending.
pub fn policies_in_profile(design: &FactorialDesign, profile: Profile) -> Vec<usize> {
    (0..design.policy_count())
        .filter(|&i| design.profile_of_index(i) == profile)
        .collect()
}

/// The dominance order together with the profile structure.
#[derive(Debug, Clone)]
pub struct PolicyLattice {
    design: FactorialDesign,
    profiles: Vec<Profile>,
}

impl PolicyLattice {
    pub fn new(design: FactorialDesign) -> Self {
        let profiles = (0..design.policy_count())
            .map(|i| design.profile_of_index(i))
            .collect();
        Self { design, profiles }
    }

    pub fn design(&self) -> &FactorialDesign {
        &self.design
    }

    pub fn profile(&self, index: usize) -> Profile {
        self.profiles[index]
    }

    /// `a ≥ b` in the plain product order.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        self.design.dominates(a, b)
    }

    /// Covering pairs `(lower, upper)` of the dominance order within each
    /// profile: `upper` raises one active arm of `lower` by one step.
    pub fn hasse_edges(&self) -> Vec<(usize, usize)> {
        let d = &self.design;
        let mut edges = Vec::new();
        for lower in 1..d.policy_count() {
            for m in 0..d.arm_count() {
                let r = d.intensity(lower, m);
                if r >= 1 && r + 1 < d.dosages()[m] {
                    edges.push((lower, lower + d.stride(m)));
                }
            }
        }
        edges
    }

    /// W with `W[k, ℓ] = 1` iff `k ≥ ℓ` within a shared profile, plus the
    /// all-ones intercept in the control column. `X = T·W`.
    pub fn dominance_matrix(&self) -> DMatrix<f64> {
        let k = self.design.policy_count();
        DMatrix::from_fn(k, k, |a, b| {
            if b == 0 || (self.profiles[a] == self.profiles[b] && self.design.dominates(a, b)) {
                1.0
            } else {
                0.0
            }
        })
    }
}

fn check_len(design: &FactorialDesign, v: &[f64], what: &str) -> Result<()> {
    if v.len() == design.policy_count() {
        Ok(())
    } else {
        Err(TvaError::InvalidArgument(format!(
            "{what} has length {}, design has {} policies",
            v.len(),
            design.policy_count()
        )))
    }
}

/// β_k = Σ α_ℓ over same-profile ℓ ≤ k; the control entry passes through.
pub fn alpha_to_beta(design: &FactorialDesign, alpha: &[f64]) -> Result<Vec<f64>> {
    check_len(design, alpha, "alpha")?;
    let mut beta = alpha.to_vec();
    // Cumulative sums along each arm, only across cells whose intensity on
    // that arm is at least 2 (so the predecessor stays in the profile).
    for m in 0..design.arm_count() {
        let s = design.stride(m);
        for idx in 0..beta.len() {
            if design.intensity(idx, m) >= 2 {
                beta[idx] += beta[idx - s];
            }
        }
    }
    Ok(beta)
}

/// Möbius inversion of [`alpha_to_beta`].
pub fn beta_to_alpha(design: &FactorialDesign, beta: &[f64]) -> Result<Vec<f64>> {
    check_len(design, beta, "beta")?;
    let mut alpha = beta.to_vec();
    for m in 0..design.arm_count() {
        let s = design.stride(m);
        for idx in (0..alpha.len()).rev() {
            if design.intensity(idx, m) >= 2 {
                alpha[idx] -= alpha[idx - s];
            }
        }
    }
    Ok(alpha)
}

pub fn check_assignments(design: &FactorialDesign, assignments: &[usize]) -> Result<()> {
    match assignments.iter().position(|&a| a >= design.policy_count()) {
        Some(i) => Err(TvaError::UnknownPolicy(format!(
            "unit {} assigned policy index {} outside 0..{}",
            i,
            assignments[i],
            design.policy_count()
        ))),
        None => Ok(()),
    }
}

/// Canonical indices for a list of intensity vectors.
pub fn encode_assignments(design: &FactorialDesign, policies: &[Vec<usize>]) -> Result<Vec<usize>> {
    policies.iter().map(|p| design.encode(p)).collect()
}

/// Marginal-effects design X (n × K): `X[i, ℓ] = 1` iff unit i's policy
/// dominates ℓ within ℓ's profile; column 0 is the intercept.
pub fn marginal_matrix(design: &FactorialDesign, assignments: &[usize]) -> Result<DMatrix<f64>> {
    check_assignments(design, assignments)?;
    let w = PolicyLattice::new(design.clone()).dominance_matrix();
    Ok(DMatrix::from_fn(assignments.len(), design.policy_count(), |i, l| {
        w[(assignments[i], l)]
    }))
}

/// Unique-policy indicator matrix T (n × K).
pub fn unique_policy_matrix(design: &FactorialDesign, assignments: &[usize]) -> Result<DMatrix<f64>> {
    check_assignments(design, assignments)?;
    let mut t = DMatrix::zeros(assignments.len(), design.policy_count());
    for (i, &a) in assignments.iter().enumerate() {
        t[(i, a)] = 1.0;
    }
    Ok(t)
}

/// Number of units in each cell.
pub fn cell_counts(design: &FactorialDesign, assignments: &[usize]) -> Result<Vec<usize>> {
    check_assignments(design, assignments)?;
    let mut counts = vec![0usize; design.policy_count()];
    for &a in assignments {
        counts[a] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_sizes_and_order() {
        let d = FactorialDesign::new(vec![3, 3]).unwrap();
        let p = enumerate_policies(&d);
        assert_eq!(p.len(), 9);
        assert_eq!(p[0], Policy(vec![0, 0]));
        assert_eq!(p[1], Policy(vec![0, 1]));
        assert_eq!(p[3], Policy(vec![1, 0]));
        assert_eq!(enumerate_policies(&FactorialDesign::new(vec![5, 5, 3]).unwrap()).len(), 75);
        let tiny = FactorialDesign::new(vec![2]).unwrap();
        assert_eq!(enumerate_policies(&tiny), vec![Policy(vec![0]), Policy(vec![1])]);
    }

    #[test]
    fn invalid_designs() {
        assert!(FactorialDesign::new(vec![3, 1]).is_err());
        assert!(FactorialDesign::new(vec![]).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let d = FactorialDesign::new(vec![4, 2, 3]).unwrap();
        for i in 0..d.policy_count() {
            assert_eq!(d.encode(d.decode(i).intensities()).unwrap(), i);
        }
        assert!(d.encode(&[4, 0, 0]).is_err());
        assert!(d.encode(&[1, 1]).is_err());
    }

    #[test]
    fn profiles() {
        assert!(profile_of(&Policy(vec![0, 0])).is_control());
        assert_eq!(profile_of(&Policy(vec![1, 0, 2])).active_arms(), vec![0, 2]);
        assert_eq!(profile_of(&Policy(vec![1, 0, 2])).to_string(), "{1,3}");
        assert_eq!(profile_of(&Policy(vec![1, 2])), profile_of(&Policy(vec![2, 1])));
    }

    #[test]
    fn hasse_edges_cover_within_profile() {
        let d = FactorialDesign::new(vec![4, 4]).unwrap();
        let lat = PolicyLattice::new(d.clone());
        let edges = lat.hasse_edges();
        // Both-on profile is a 3x3 grid: 12 edges; each single-arm profile a 3-chain: 2 edges.
        assert_eq!(edges.len(), 12 + 2 + 2);
        for (lo, hi) in edges {
            assert!(lat.dominates(hi, lo) && hi != lo);
            assert_eq!(lat.profile(lo), lat.profile(hi));
        }
    }

    #[test]
    fn marginal_row_for_single_arm_policy() {
        let d = FactorialDesign::new(vec![3, 3]).unwrap();
        let k = d.encode(&[2, 0]).unwrap();
        let x = marginal_matrix(&d, &[k, 0]).unwrap();
        let ones: Vec<usize> = (0..9).filter(|&l| x[(0, l)] == 1.0).collect();
        assert_eq!(ones, vec![0, d.encode(&[1, 0]).unwrap(), k]);
        let ones: Vec<usize> = (0..9).filter(|&l| x[(1, l)] == 1.0).collect();
        assert_eq!(ones, vec![0]);
        assert!(marginal_matrix(&d, &[9]).is_err());
    }

    #[test]
    fn alpha_beta_examples() {
        let d = FactorialDesign::new(vec![3, 3]).unwrap();
        let mut alpha = vec![0.0; 9];
        alpha[d.encode(&[1, 1]).unwrap()] = 2.0;
        let beta = alpha_to_beta(&d, &alpha).unwrap();
        for i in 0..9 {
            let p = d.decode(i);
            let expect = if p.0[0] > 0 && p.0[1] > 0 { 2.0 } else { 0.0 };
            assert_eq!(beta[i], expect, "policy {p}");
        }

        let mut beta = vec![0.0; 9];
        for (p, b) in [([1, 1], 2.0), ([2, 1], 2.0), ([1, 2], 2.0), ([2, 2], 5.0)] {
            beta[d.encode(&p).unwrap()] = b;
        }
        let alpha = beta_to_alpha(&d, &beta).unwrap();
        let got: Vec<f64> = [[1, 1], [2, 1], [1, 2], [2, 2]]
            .iter()
            .map(|p| alpha[d.encode(p).unwrap()])
            .collect();
        assert_eq!(got, vec![2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn interaction_identity_m2_r4() {
        let d = FactorialDesign::new(vec![4, 4]).unwrap();
        let beta: Vec<f64> = (0..16).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let alpha = beta_to_alpha(&d, &beta).unwrap();
        let b = |p: [usize; 2]| beta[d.encode(&p).unwrap()];
        let a22 = alpha[d.encode(&[2, 2]).unwrap()];
        assert_eq!(a22, (b([2, 2]) - b([2, 1])) - (b([1, 2]) - b([1, 1])));
    }
}
