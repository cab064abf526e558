//! Enumerated state spaces: the k-particle configurations on n sites in
//! colexicographic order, or an explicit equicardinal support such as the
//! bases of a matroid.

use std::collections::HashMap;

use crate::combin::{binomial, enumerate_subsets};
use crate::config::SpinConfig;
use crate::error::{Error, Result};
use nalgebra::DVector;

/// Hard cap on enumerated states (~N = 21 at m = 0); beyond it only sampling
/// paths are allowed.
pub const ENUMERATION_CAP: usize = 2_000_000;

/// An enumerated, equicardinal family of configurations with a rank/unrank
/// bijection. `full` spaces contain every k-subset of the n sites.
#[derive(Clone, Debug)]
pub struct StateSpace {
    n: usize,
    k: usize,
    masks: Vec<u64>,
    rank: HashMap<u64, u32>,
    full: bool,
}

/// Particle count for magnetisation m on n sites; errors unless n(1+m)/2 is
/// an integer in [0, n].
pub fn particle_count(n: usize, m: f64) -> Result<usize> {
    if !(-1.0..=1.0).contains(&m) {
        return Err(Error::parameter(format!("magnetisation {m} outside [-1,1]")));
    }
    let kf = n as f64 * (1.0 + m) / 2.0;
    let k = kf.round();
    if (kf - k).abs() > 1e-9 {
        return Err(Error::parameter(format!(
            "magnetisation {m} on {n} sites gives non-integer particle count {kf}"
        )));
    }
    Ok(k as usize)
}

impl StateSpace {
    /// All k-subsets of {0,…,n−1}, colex order.
    pub fn full(n: usize, k: usize) -> Result<Self> {
        if n == 0 || n > 63 {
            return Err(Error::parameter(format!(
                "enumeration supports 1 <= n <= 63, got {n}"
            )));
        }
        if k > n {
            return Err(Error::parameter(format!("k = {k} exceeds n = {n}")));
        }
        let size = binomial(n, k);
        if size > ENUMERATION_CAP as u128 {
            return Err(Error::Capacity(format!(
                "C({n},{k}) = {size} exceeds the enumeration cap {ENUMERATION_CAP}"
            )));
        }
        let masks = enumerate_subsets(n, k);
        let rank = masks
            .iter()
            .enumerate()
            .map(|(r, &m)| (m, r as u32))
            .collect();
        Ok(StateSpace {
            n,
            k,
            masks,
            rank,
            full: true,
        })
    }

    /// The space for magnetisation m (validated integer particle count).
    pub fn from_magnetisation(n: usize, m: f64) -> Result<Self> {
        Self::full(n, particle_count(n, m)?)
    }

    /// Explicit support (sorted, deduplicated; must be equicardinal and
    /// nonempty).
    pub fn with_support(n: usize, mut masks: Vec<u64>) -> Result<Self> {
        if n == 0 || n > 63 {
            return Err(Error::parameter(format!(
                "enumeration supports 1 <= n <= 63, got {n}"
            )));
        }
        masks.sort_unstable();
        masks.dedup();
        if masks.is_empty() {
            return Err(Error::parameter("empty support"));
        }
        if masks.len() > ENUMERATION_CAP {
            return Err(Error::Capacity(format!(
                "support of {} states exceeds the enumeration cap",
                masks.len()
            )));
        }
        let k = masks[0].count_ones() as usize;
        if masks.iter().any(|m| m.count_ones() as usize != k) {
            return Err(Error::Model(
                "support is not equicardinal (mixed particle counts)".into(),
            ));
        }
        let limit = if n == 63 { u64::MAX >> 1 } else { (1u64 << n) - 1 };
        if masks.iter().any(|&m| m > limit) {
            return Err(Error::parameter("support mask has bits above n"));
        }
        let full = masks.len() as u128 == binomial(n, k);
        let rank = masks
            .iter()
            .enumerate()
            .map(|(r, &m)| (m, r as u32))
            .collect();
        Ok(StateSpace {
            n,
            k,
            masks,
            rank,
            full,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// True when the support is all of the k-subsets.
    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn magnetisation(&self) -> f64 {
        (2.0 * self.k as f64 - self.n as f64) / self.n as f64
    }

    pub fn mask(&self, index: usize) -> u64 {
        self.masks[index]
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    pub fn index_of(&self, mask: u64) -> Option<usize> {
        self.rank.get(&mask).map(|&r| r as usize)
    }

    pub fn contains(&self, mask: u64) -> bool {
        self.rank.contains_key(&mask)
    }

    pub fn config(&self, index: usize) -> SpinConfig {
        SpinConfig::from_mask(self.n, self.masks[index])
    }

    /// Dense ±1 vector of the state at `index`.
    pub fn spin_vector(&self, index: usize) -> DVector<f64> {
        let mask = self.masks[index];
        DVector::from_fn(self.n, |i, _| {
            if mask >> i & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.masks.iter().copied().enumerate()
    }

    /// Mask after exchanging the (distinct-valued) sites i and j.
    pub fn exchanged(mask: u64, i: usize, j: usize) -> u64 {
        debug_assert_ne!(mask >> i & 1, mask >> j & 1, "exchange needs opposite spins");
        mask ^ (1 << i) ^ (1 << j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_space_rank_roundtrip() {
        let s = StateSpace::full(6, 3).unwrap();
        assert_eq!(s.len(), 20);
        for (idx, mask) in s.iter() {
            assert_eq!(s.index_of(mask), Some(idx));
        }
        assert!(s.is_full());
        assert_eq!(s.magnetisation(), 0.0);
    }

    #[test]
    fn particle_count_validation() {
        assert_eq!(particle_count(4, 0.0).unwrap(), 2);
        assert_eq!(particle_count(4, 0.5).unwrap(), 3);
        assert_eq!(particle_count(10, -0.2).unwrap(), 4);
        assert!(particle_count(5, 0.0).is_err()); // k = 2.5
        assert!(particle_count(4, 0.3).is_err());
    }

    #[test]
    fn support_space_checks_cardinality() {
        let s = StateSpace::with_support(4, vec![0b0011, 0b1100, 0b0011]).unwrap();
        assert_eq!(s.len(), 2);
        assert!(!s.is_full());
        assert!(StateSpace::with_support(4, vec![0b0011, 0b0111]).is_err());
    }

    #[test]
    fn capacity_cap_enforced() {
        // C(34,17) ≈ 2.3e9 >> cap
        assert!(matches!(
            StateSpace::full(34, 17),
            Err(Error::Parameter(_)) | Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn exchange_flips_exactly_two_bits() {
        let m = 0b0110u64;
        assert_eq!(StateSpace::exchanged(m, 1, 0), 0b0101);
    }
}
