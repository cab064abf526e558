//! Subset combinatorics for bit-packed configurations: binomial coefficients
//! and the colexicographic order on k-element subsets of {0, …, n−1}.
//!
//! Colex order compares subsets by their largest differing element, which for
//! bit masks coincides with plain numeric order on the mask value. Ranks use
//! the combinatorial number system: `rank(S) = Σ_t C(p_t, t+1)` where
//! `p_0 < p_1 < …` are the elements of `S`.

/// Exact binomial coefficient in u128 (overflow-checked; desk scale never
/// comes close to the limit).
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul((n - k + i + 1) as u128)
            .expect("binomial overflow");
        acc /= (i + 1) as u128;
    }
    acc
}

/// Next mask with the same popcount in numeric (= colex) order.
/// Gosper's hack; returns `None` when `mask` is the last k-subset of a
/// 64-bit word.
pub fn next_same_popcount(mask: u64) -> Option<u64> {
    if mask == 0 {
        return None;
    }
    let c = mask & mask.wrapping_neg();
    let r = mask.checked_add(c)?;
    Some((((r ^ mask) >> 2) / c) | r)
}

/// All k-subsets of {0,…,n−1} as masks, in colex order.
pub fn enumerate_subsets(n: usize, k: usize) -> Vec<u64> {
    assert!(n <= 63, "mask enumeration limited to n <= 63");
    if k > n {
        return Vec::new();
    }
    if k == 0 {
        return vec![0];
    }
    let count = binomial(n, k) as usize;
    let mut out = Vec::with_capacity(count);
    let mut mask: u64 = (1u64 << k) - 1;
    let limit: u64 = if n == 63 { u64::MAX >> 1 } else { (1u64 << n) - 1 };
    loop {
        out.push(mask);
        match next_same_popcount(mask) {
            Some(next) if next <= limit => mask = next,
            _ => break,
        }
    }
    debug_assert_eq!(out.len(), count);
    out
}

/// Colex rank of a subset mask among all subsets of the same size.
pub fn colex_rank(mask: u64) -> u128 {
    let mut rank: u128 = 0;
    let mut rest = mask;
    let mut t = 0usize;
    while rest != 0 {
        let p = rest.trailing_zeros() as usize;
        t += 1;
        rank += binomial(p, t);
        rest &= rest - 1;
    }
    rank
}

/// Inverse of [`colex_rank`] for k-subsets of {0,…,n−1}.
pub fn colex_unrank(n: usize, k: usize, rank: u128) -> u64 {
    assert!(rank < binomial(n, k), "rank out of range");
    let mut mask: u64 = 0;
    let mut rem = rank;
    let mut p = n;
    for t in (1..=k).rev() {
        // largest p with C(p, t) <= rem
        while binomial(p - 1, t) > rem {
            p -= 1;
        }
        p -= 1;
        rem -= binomial(p, t);
        mask |= 1u64 << p;
    }
    mask
}
