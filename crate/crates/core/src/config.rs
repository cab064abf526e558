//! Spin configurations σ ∈ {±1}^n, bit-packed over the sites carrying +1
//! ("particles"). The particle count k is conserved by every dynamic in this
//! crate, so it doubles as the magnetisation coordinate m = (2k − n)/n.

use nalgebra::DVector;

/// A ±1 configuration on `n` sites; bit `i` set means σ_i = +1.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SpinConfig {
    n: usize,
    words: Vec<u64>,
}

impl SpinConfig {
    /// All-minus configuration.
    pub fn all_minus(n: usize) -> Self {
        SpinConfig {
            n,
            words: vec![0; n.div_ceil(64)],
        }
    }

    /// From a single 64-bit mask (n ≤ 64).
    pub fn from_mask(n: usize, mask: u64) -> Self {
        assert!(n <= 64, "from_mask needs n <= 64");
        assert!(n == 64 || mask < (1u64 << n), "mask has bits above n");
        SpinConfig {
            n,
            words: vec![mask],
        }
    }

    /// +1 exactly on the listed sites.
    pub fn from_plus_sites(n: usize, sites: &[usize]) -> Self {
        let mut c = Self::all_minus(n);
        for &i in sites {
            c.set(i, true);
        }
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of +1 sites.
    pub fn k(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn magnetisation(&self) -> f64 {
        (2.0 * self.k() as f64 - self.n as f64) / self.n as f64
    }

    pub fn is_plus(&self, i: usize) -> bool {
        debug_assert!(i < self.n);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// σ_i as ±1.0.
    pub fn spin(&self, i: usize) -> f64 {
        if self.is_plus(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn set(&mut self, i: usize, plus: bool) {
        debug_assert!(i < self.n);
        let w = &mut self.words[i / 64];
        if plus {
            *w |= 1 << (i % 64);
        } else {
            *w &= !(1 << (i % 64));
        }
    }

    /// Exchange the values at sites i and j.
    pub fn swap(&mut self, i: usize, j: usize) {
        let (pi, pj) = (self.is_plus(i), self.is_plus(j));
        if pi != pj {
            self.set(i, pj);
            self.set(j, pi);
        }
    }

    /// The packed mask for n ≤ 64 state spaces.
    pub fn mask64(&self) -> u64 {
        assert!(self.n <= 64);
        self.words[0]
    }

    pub fn plus_sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| self.is_plus(i))
    }

    pub fn minus_sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| !self.is_plus(i))
    }

    /// Dense ±1 vector, for quadratic forms.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.spin(i))
    }

    /// Global spin flip σ → −σ (particles become holes).
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            out.set(i, !self.is_plus(i));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_roundtrip_and_counts() {
        let c = SpinConfig::from_mask(6, 0b101100);
        assert_eq!(c.k(), 3);
        assert_eq!(c.mask64(), 0b101100);
        assert_eq!(c.plus_sites().collect::<Vec<_>>(), vec![2, 3, 5]);
        assert_eq!(c.magnetisation(), 0.0);
    }

    #[test]
    fn swap_conserves_particles() {
        let mut c = SpinConfig::from_plus_sites(70, &[0, 65]);
        c.swap(0, 3);
        assert!(c.is_plus(3) && !c.is_plus(0) && c.is_plus(65));
        assert_eq!(c.k(), 2);
        c.swap(3, 65); // both plus: no-op
        assert_eq!(c.k(), 2);
    }

    #[test]
    fn flip_exchanges_roles() {
        let c = SpinConfig::from_mask(5, 0b00011);
        let f = c.flipped();
        assert_eq!(f.k(), 3);
        assert_eq!(f.mask64(), 0b11100);
    }
}
