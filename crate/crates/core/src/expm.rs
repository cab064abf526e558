//! Exact transition probabilities `e^{tQ}` via uniformisation.
//!
//! The generator is written as `Q = Λ(P − I)` with `P = I + Q/Λ` stochastic,
//! so `e^{tQ} = Σ_k Pois_{Λt}(k) P^k` with every partial sum substochastic.
//! For large `Λt` the series is evaluated at `t/2^s` and squared `s` times;
//! squaring at most doubles the accumulated truncation error per level, so
//! the per-step tolerance is divided by `2^s` up front.

use nalgebra::DMatrix;

use crate::dynamics::Generator;
use crate::error::{Error, Result};
use crate::ising::Measure;

/// Largest state count accepted for dense exponentials.
pub const EXPM_CAP: usize = 2048;

/// Total truncation budget for one `transition_matrix` call (row-sum norm).
const SERIES_TOL: f64 = 1e-10;

/// Hard cap on Poisson series terms per scaled step (`Λt/2^s ≤ 1` needs ~30).
const MAX_TERMS: usize = 400;

/// Dense `e^{tQ}`, rows indexed by starting state.
pub fn transition_matrix(gen: &Generator, t: f64) -> Result<DMatrix<f64>> {
    let n = gen.n();
    if n == 0 {
        return Err(Error::parameter("empty generator"));
    }
    if n > EXPM_CAP {
        return Err(Error::Capacity(format!(
            "{n} states exceeds the dense exponential cap {EXPM_CAP}"
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::parameter("time must be finite and nonnegative"));
    }
    let lambda = gen.lambda();
    if t == 0.0 || lambda == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }

    // P = I + Q/Λ.
    let mut p = DMatrix::<f64>::zeros(n, n);
    for (x, row) in gen.rows().iter().enumerate() {
        for m in row {
            p[(x, m.to)] += m.rate / lambda;
        }
        p[(x, x)] += 1.0 - gen.exit_rates()[x] / lambda;
    }

    let squarings = (lambda * t).log2().ceil().max(0.0) as u32;
    let tau = lambda * t / f64::powi(2.0, squarings as i32);
    let step_tol = SERIES_TOL / f64::powi(2.0, squarings as i32);

    // Poisson-weighted power series at the scaled time.
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut weight = (-tau).exp();
    let mut acc = &term * weight;
    let mut mass = weight;
    let mut k = 1usize;
    while 1.0 - mass > step_tol {
        if k > MAX_TERMS {
            return Err(Error::Numerical(
                "Poisson series for the uniformised kernel did not converge".into(),
            ));
        }
        term = &term * &p;
        weight *= tau / k as f64;
        acc += &term * weight;
        mass += weight;
        k += 1;
    }

    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    Ok(acc)
}

/// Worst-case total-variation distance from stationarity at time `t`:
/// `max_x ½ Σ_y |e^{tQ}(x,y) − μ(y)|`.
pub fn tv_from_stationarity(gen: &Generator, mu: &Measure, t: f64) -> Result<f64> {
    if mu.len() != gen.n() {
        return Err(Error::parameter(
            "measure length does not match the generator",
        ));
    }
    let p = transition_matrix(gen, t)?;
    let mut worst = 0.0f64;
    for x in 0..gen.n() {
        let mut acc = 0.0;
        for y in 0..gen.n() {
            acc += (p[(x, y)] - mu.prob(y)).abs();
        }
        worst = worst.max(0.5 * acc);
    }
    Ok(worst)
}
