//! Particle-level decomposition of a k-particle measure.
//!
//! A measure `π` on configurations with `k` particles factorises through the
//! sub-configurations obtained by removing `ℓ` of them: `ν_ℓ` weights each
//! compatible `(k−ℓ)`-particle configuration `φ` by `π(σ ≥ φ)/C(k,ℓ)`, and
//! `μ_ℓ^φ = π(·|σ ≥ φ)` recovers `π` as the mixture `E_π F = E_{ν_ℓ} E_{μ_ℓ^φ} F`.
//! Adjacent levels are linked by the particle-adding kernel `P_{ℓ,ℓ+1}`.
//!
//! On top of the decomposition sit the entropy inequalities that drive the
//! mixing bounds: the level-`p` contraction `Ent_π(F) ≤ (k/p)·E_{ν_p}[Ent_{μ_p}F]`,
//! the entropic-independence bound for the one-particle projection, the
//! two-particle contraction of the down-up step matrix, and the reduction of
//! a k-particle log-Sobolev constant to one-particle chains.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::dynamics::{dirichlet_form, Generator, Move, RateKernel};
use crate::error::{Error, Result};
use crate::funcineq::{self, SearchBracket};
use crate::ising::{Measure, SearchBudget};
use crate::space::StateSpace;

/// Slack for the exact-arithmetic identities and inequality checks.
const CHECK_TOL: f64 = 1e-12;

/// One level of the decomposition: the measure `ν_ℓ` over the compatible
/// `(k−ℓ)`-particle configurations together with the conditional measures
/// `μ_ℓ^φ` on the original space.
#[derive(Debug, Clone)]
pub struct LevelDecomposition {
    removed: usize,
    k: usize,
    configs: Vec<u64>,
    nu: Vec<f64>,
    /// `π(σ ≥ φ)` per configuration.
    mass: Vec<f64>,
    /// Conditional supports: `(state index, μ_ℓ^φ probability)` pairs.
    cond: Vec<Vec<(usize, f64)>>,
}

/// Builds the level-`ell` decomposition of `pi` (`ell` = particles removed).
pub fn level_decomposition(
    space: &StateSpace,
    pi: &Measure,
    ell: usize,
) -> Result<LevelDecomposition> {
    if pi.len() != space.len() {
        return Err(Error::parameter("measure length does not match the space"));
    }
    let k = space.k();
    if ell > k {
        return Err(Error::parameter(format!(
            "cannot remove {ell} of {k} particles"
        )));
    }
    let keep = k - ell;

    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut configs: Vec<u64> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    let mut cond: Vec<Vec<(usize, f64)>> = Vec::new();
    for (idx, sigma) in space.iter() {
        let p = pi.prob(idx);
        if p <= 0.0 {
            continue;
        }
        for phi in sub_configurations(sigma, keep) {
            let at = *index.entry(phi).or_insert_with(|| {
                configs.push(phi);
                mass.push(0.0);
                cond.push(Vec::new());
                configs.len() - 1
            });
            mass[at] += p;
            cond[at].push((idx, p));
        }
    }

    let mut order: Vec<usize> = (0..configs.len()).collect();
    order.sort_by_key(|&i| configs[i]);
    let binom = crate::combin::binomial(k, ell) as f64;
    let mut out = LevelDecomposition {
        removed: ell,
        k,
        configs: Vec::with_capacity(order.len()),
        nu: Vec::with_capacity(order.len()),
        mass: Vec::with_capacity(order.len()),
        cond: Vec::with_capacity(order.len()),
    };
    for i in order {
        out.configs.push(configs[i]);
        out.nu.push(mass[i] / binom);
        out.mass.push(mass[i]);
        let total = mass[i];
        out.cond.push(
            cond[i]
                .iter()
                .map(|&(idx, p)| (idx, p / total))
                .collect(),
        );
    }
    Ok(out)
}

/// All sub-masks of `sigma` with `keep` bits.
fn sub_configurations(sigma: u64, keep: usize) -> Vec<u64> {
    let bits: Vec<u32> = (0..64).filter(|b| sigma >> b & 1 == 1).collect();
    let mut out = Vec::new();
    let mut pick = vec![0usize; keep];
    fn rec(bits: &[u32], keep: usize, start: usize, depth: usize, pick: &mut [usize], out: &mut Vec<u64>) {
        if depth == keep {
            let mut m = 0u64;
            for &b in pick.iter() {
                m |= 1 << bits[b];
            }
            out.push(m);
            return;
        }
        for s in start..=(bits.len() - (keep - depth)) {
            pick[depth] = s;
            rec(bits, keep, s + 1, depth + 1, pick, out);
        }
    }
    if keep <= bits.len() {
        rec(&bits, keep, 0, 0, &mut pick, &mut out);
    }
    out
}

impl LevelDecomposition {
    /// Number of particles removed (the level index `ℓ`).
    pub fn removed(&self) -> usize {
        self.removed
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Compatible `(k−ℓ)`-particle configurations, as sorted bit masks.
    pub fn configs(&self) -> &[u64] {
        &self.configs
    }

    /// `ν_ℓ` in the order of [`configs`](Self::configs).
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// `π(σ ≥ φ)`.
    pub fn upward_mass(&self, phi: usize) -> f64 {
        self.mass[phi]
    }

    /// Conditional measure `μ_ℓ^φ` as `(state index, probability)` pairs.
    pub fn conditional(&self, phi: usize) -> &[(usize, f64)] {
        &self.cond[phi]
    }

    pub fn index_of(&self, phi_mask: u64) -> Option<usize> {
        self.configs.binary_search(&phi_mask).ok()
    }

    /// `E_{μ_ℓ^φ}[F]`.
    pub fn conditional_mean(&self, phi: usize, f: &[f64]) -> f64 {
        self.cond[phi].iter().map(|&(idx, p)| p * f[idx]).sum()
    }

    /// `Ent_{μ_ℓ^φ}(F)`.
    pub fn conditional_entropy(&self, phi: usize, f: &[f64]) -> f64 {
        let mean = self.conditional_mean(phi, f);
        if mean <= 0.0 {
            return 0.0;
        }
        let raw: f64 = self.cond[phi]
            .iter()
            .map(|&(idx, p)| if f[idx] > 0.0 { p * f[idx] * f[idx].ln() } else { 0.0 })
            .sum();
        raw - mean * mean.ln()
    }

    /// `E_{ν_ℓ}[Ent_{μ_ℓ}(F)]`.
    pub fn mean_entropy(&self, f: &[f64]) -> f64 {
        (0..self.configs.len())
            .map(|phi| self.nu[phi] * self.conditional_entropy(phi, f))
            .sum()
    }

    /// `|E_π[F] − E_{ν_ℓ}[E_{μ_ℓ}[F]]|`: zero up to rounding by construction.
    pub fn decomposition_residual(&self, pi: &Measure, f: &[f64]) -> f64 {
        let direct: f64 = f.iter().enumerate().map(|(x, &v)| pi.prob(x) * v).sum();
        let split: f64 = (0..self.configs.len())
            .map(|phi| self.nu[phi] * self.conditional_mean(phi, f))
            .sum();
        (direct - split).abs()
    }
}

/// The particle-adding kernel `P_{ℓ,ℓ+1}` between two adjacent levels:
/// from `ψ` (ℓ+1 removed) it adds one particle at `i`, landing on
/// `φ = ψ + 1_i` (ℓ removed) with probability `π(σ≥φ) / ((ℓ+1)·π(σ≥ψ))`.
#[derive(Debug, Clone)]
pub struct LevelKernel {
    /// Rows indexed like the upper level's configs; entries
    /// `(site, lower config index, probability)`.
    rows: Vec<Vec<(u32, usize, f64)>>,
}

pub fn level_kernel(lower: &LevelDecomposition, upper: &LevelDecomposition) -> Result<LevelKernel> {
    if upper.removed != lower.removed + 1 || upper.k != lower.k {
        return Err(Error::parameter(
            "kernel needs adjacent levels of the same decomposition",
        ));
    }
    let ell1 = upper.removed as f64;
    let mut rows = Vec::with_capacity(upper.configs.len());
    for (psi_idx, &psi) in upper.configs.iter().enumerate() {
        let mut row = Vec::new();
        for i in 0..64u32 {
            if psi >> i & 1 == 1 {
                continue;
            }
            let phi = psi | 1 << i;
            if let Some(phi_idx) = lower.index_of(phi) {
                let p = lower.mass[phi_idx] / (ell1 * upper.mass[psi_idx]);
                row.push((i, phi_idx, p));
            }
        }
        rows.push(row);
    }
    Ok(LevelKernel { rows })
}

impl LevelKernel {
    pub fn rows(&self) -> &[Vec<(u32, usize, f64)>] {
        &self.rows
    }

    /// `(P g)(ψ) = Σ_i P^ψ(i) g(ψ + 1_i)` for `g` on the lower level.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, phi, p)| p * g[phi]).sum())
            .collect()
    }

    /// `max_ψ |Σ_i P^ψ(i) − 1|`.
    pub fn stochasticity_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| (row.iter().map(|&(_, _, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_φ |Σ_ψ ν_{ℓ+1}(ψ) P(ψ,φ) − ν_ℓ(φ)|`.
    pub fn measure_intertwining_residual(
        &self,
        lower: &LevelDecomposition,
        upper: &LevelDecomposition,
    ) -> f64 {
        let mut pushed = vec![0.0f64; lower.configs.len()];
        for (psi, row) in self.rows.iter().enumerate() {
            for &(_, phi, p) in row {
                pushed[phi] += upper.nu[psi] * p;
            }
        }
        pushed
            .iter()
            .zip(&lower.nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max_ψ |P E_{μ_ℓ}[F](ψ) − E_{μ_{ℓ+1}^ψ}[F]|`.
    pub fn mean_intertwining_residual(
        &self,
        lower: &LevelDecomposition,
        upper: &LevelDecomposition,
        f: &[f64],
    ) -> f64 {
        let g: Vec<f64> = (0..lower.configs.len())
            .map(|phi| lower.conditional_mean(phi, f))
            .collect();
        self.apply(&g)
            .iter()
            .enumerate()
            .map(|(psi, v)| (v - upper.conditional_mean(psi, f)).abs())
            .fold(0.0, f64::max)
    }

    /// Per-`ψ` entropy of `i ↦ E_{μ_ℓ^{ψ+1_i}}[F]` under the row measure.
    pub fn row_entropy(&self, lower: &LevelDecomposition, psi: usize, f: &[f64]) -> f64 {
        let row = &self.rows[psi];
        let mean: f64 = row
            .iter()
            .map(|&(_, phi, p)| p * lower.conditional_mean(phi, f))
            .sum();
        if mean <= 0.0 {
            return 0.0;
        }
        let raw: f64 = row
            .iter()
            .map(|&(_, phi, p)| {
                let g = lower.conditional_mean(phi, f);
                if g > 0.0 {
                    p * g * g.ln()
                } else {
                    0.0
                }
            })
            .sum();
        raw - mean * mean.ln()
    }
}

/// Two evaluated sides of an inequality check.
#[derive(Debug, Clone, Copy)]
pub struct SidePair {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn side_pair(lhs: f64, rhs: f64) -> SidePair {
    SidePair {
        lhs,
        rhs,
        holds: lhs <= rhs + CHECK_TOL * (1.0 + rhs.abs()),
    }
}

/// Level-`p` entropy contraction `Ent_π(F) ≤ (k/p)·E_{ν_p}[Ent_{μ_p}(F)]`,
/// with equality at `p = k`.
pub fn entropy_contraction_check(
    space: &StateSpace,
    pi: &Measure,
    f: &[f64],
    p: usize,
) -> Result<SidePair> {
    let k = space.k();
    if p == 0 || p > k {
        return Err(Error::parameter(format!(
            "contraction level must satisfy 1 ≤ p ≤ {k}, got {p}"
        )));
    }
    let lhs = funcineq::entropy(pi, f)?;
    let level = level_decomposition(space, pi, p)?;
    let rhs = k as f64 / p as f64 * level.mean_entropy(f);
    Ok(side_pair(lhs, rhs))
}

/// One-level loss at a fixed `ψ`:
/// `Ent_{P^ψ}(i ↦ E_{μ_ℓ^{ψ+1_i}}F) ≤ Ent_{μ_{ℓ+1}^ψ}(F)/(ℓ+1)`.
pub fn one_level_loss_check(
    lower: &LevelDecomposition,
    upper: &LevelDecomposition,
    kernel: &LevelKernel,
    psi: usize,
    f: &[f64],
) -> SidePair {
    let lhs = kernel.row_entropy(lower, psi, f);
    let rhs = upper.conditional_entropy(psi, f) / upper.removed as f64;
    side_pair(lhs, rhs)
}

/// Exact chain rule linking adjacent levels:
/// `E_{ν_{ℓ+1}}[Ent_{μ_{ℓ+1}}F] = E_{ν_ℓ}[Ent_{μ_ℓ}F] + E_{ν_{ℓ+1}}[Ent_{P^ψ}(E_{μ_ℓ}F)]`.
/// Returns the absolute defect, which is zero up to rounding.
pub fn chain_rule_residual(
    lower: &LevelDecomposition,
    upper: &LevelDecomposition,
    kernel: &LevelKernel,
    f: &[f64],
) -> f64 {
    let upper_side = upper.mean_entropy(f);
    let loss: f64 = (0..upper.configs().len())
        .map(|psi| upper.nu[psi] * kernel.row_entropy(lower, psi, f))
        .sum();
    (upper_side - lower.mean_entropy(f) - loss).abs()
}

/// Outcome of the entropic-independence comparison.
#[derive(Debug, Clone)]
pub struct EiCheck {
    /// `H(μD_{k→1} | πD_{k→1})`.
    pub lhs: f64,
    /// `H(μ|π)/k`.
    pub rhs: f64,
    pub holds: bool,
    /// `πD_{k→1}`: site marginals of `π` scaled by `1/k`.
    pub base_projection: Vec<f64>,
    /// `μD_{k→1}`.
    pub test_projection: Vec<f64>,
}

/// Checks `H(μD_{k→1} | πD_{k→1}) ≤ H(μ|π)/k` for a measure `μ ≪ π` given
/// as a probability vector over the same enumerated space.
pub fn entropic_independence_check(
    space: &StateSpace,
    pi: &Measure,
    mu: &[f64],
) -> Result<EiCheck> {
    if mu.len() != space.len() || pi.len() != space.len() {
        return Err(Error::parameter("measure lengths must match the space"));
    }
    let total: f64 = mu.iter().sum();
    if mu.iter().any(|&v| v < -1e-15) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::parameter(
            "test measure must be a probability vector",
        ));
    }
    let k = space.k();
    if k == 0 {
        return Err(Error::parameter("projection needs at least one particle"));
    }
    let n = space.n();
    let mut base = vec![0.0f64; n];
    let mut test = vec![0.0f64; n];
    let mut rel_ent = 0.0f64;
    for (idx, mask) in space.iter() {
        let p = pi.prob(idx);
        let q = mu[idx];
        if q > 0.0 && p <= 0.0 {
            return Err(Error::Domain(format!(
                "test measure is not absolutely continuous: state {idx} has π = 0"
            )));
        }
        if q > 0.0 {
            rel_ent += q * (q / p).ln();
        }
        for i in 0..n {
            if mask >> i & 1 == 1 {
                base[i] += p / k as f64;
                test[i] += q / k as f64;
            }
        }
    }
    let mut lhs = 0.0f64;
    for i in 0..n {
        if test[i] > 0.0 {
            lhs += test[i] * (test[i] / base[i]).ln();
        }
    }
    let rhs = rel_ent / k as f64;
    let pair = side_pair(lhs, rhs);
    Ok(EiCheck {
        lhs: pair.lhs,
        rhs: pair.rhs,
        holds: pair.holds,
        base_projection: base,
        test_projection: test,
    })
}

/// Searches for a measure maximising `H(μD|πD) − H(μ|π)/k` by softmax ascent;
/// for measures in the log-concave class the objective stays nonpositive, so
/// the returned measure is an adversarial stress case for
/// [`entropic_independence_check`].
pub fn adversarial_ei_measure(
    space: &StateSpace,
    pi: &Measure,
    budget: &SearchBudget,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = space.len();
    if pi.len() != m {
        return Err(Error::parameter("measure length does not match the space"));
    }
    let k = space.k() as f64;
    let n = space.n();
    let support: Vec<usize> = (0..m).filter(|&x| pi.prob(x) > 0.0).collect();
    if support.len() < 2 {
        return Err(Error::parameter("support too small for an ascent"));
    }
    let bits: Vec<u64> = support.iter().map(|&x| space.mask(x)).collect();
    let base: Vec<f64> = {
        let mut b = vec![0.0f64; n];
        for (idx, mask) in space.iter() {
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    b[i] += pi.prob(idx) / k;
                }
            }
        }
        b
    };

    let objective_grad = |theta: &[f64]| -> (f64, Vec<f64>) {
        let mx = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = theta.iter().map(|t| (t - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        let mu: Vec<f64> = w.iter().map(|v| v / z).collect();
        let mut test = vec![0.0f64; n];
        for (s, &mask) in bits.iter().enumerate() {
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    test[i] += mu[s] / k;
                }
            }
        }
        let mut obj = 0.0;
        for i in 0..n {
            if test[i] > 0.0 {
                obj += test[i] * (test[i] / base[i]).ln();
            }
        }
        let mut dmu: Vec<f64> = Vec::with_capacity(support.len());
        for (s, &x) in support.iter().enumerate() {
            let mut d = 0.0;
            for i in 0..n {
                if bits[s] >> i & 1 == 1 {
                    d += ((test[i] / base[i]).ln() + 1.0) / k;
                }
            }
            obj -= mu[s] * (mu[s] / pi.prob(x)).ln() / k;
            d -= ((mu[s] / pi.prob(x)).ln() + 1.0) / k;
            dmu.push(d);
        }
        let avg: f64 = dmu.iter().zip(&mu).map(|(d, m)| d * m).sum();
        let grad: Vec<f64> = dmu
            .iter()
            .zip(&mu)
            .map(|(d, m)| m * (d - avg))
            .collect();
        (obj, grad)
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..budget.restarts.max(1) {
        let mut rng = crate::rng::substream(seed, "levels.ei", r as u64);
        let mut theta: Vec<f64> = if r == 0 {
            support.iter().map(|&x| pi.prob(x).ln()).collect()
        } else {
            use rand::Rng;
            (0..support.len())
                .map(|_| rng.random::<f64>() * 6.0 - 3.0)
                .collect()
        };
        let (mut obj, mut grad) = objective_grad(&theta);
        let mut step = 1.0f64;
        for _ in 0..budget.max_steps {
            let gnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gnorm < 1e-10 {
                break;
            }
            let mut accepted = false;
            while step > 1e-16 {
                let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + step * g).collect();
                let (o, gr) = objective_grad(&cand);
                if o >= obj + 1e-15 {
                    theta = cand;
                    obj = o;
                    grad = gr;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| obj > *b) {
            let mx = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = theta.iter().map(|t| (t - mx).exp()).collect();
            let z: f64 = w.iter().sum();
            let mut mu = vec![0.0f64; m];
            for (s, &x) in support.iter().enumerate() {
                mu[x] = w[s] / z;
            }
            best = Some((obj, mu));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// One step of the discrete-time down-up walk: remove a particle uniformly,
/// then re-add it proportionally to `π`. Equals `(1/k)·c^du` off-diagonal.
pub fn down_up_step_matrix(space: &StateSpace, pi: &Measure) -> Result<DMatrix<f64>> {
    let m = space.len();
    if pi.len() != m {
        return Err(Error::parameter("measure length does not match the space"));
    }
    let k = space.k();
    if k == 0 {
        return Err(Error::parameter("walk needs at least one particle"));
    }
    if pi.min_prob() <= 0.0 {
        return Err(Error::Domain(
            "walk needs a measure positive on the enumerated support".into(),
        ));
    }
    let level = level_decomposition(space, pi, 1)?;
    let mut p = DMatrix::<f64>::zeros(m, m);
    for (idx, mask) in space.iter() {
        for i in 0..space.n() {
            if mask >> i & 1 == 0 {
                continue;
            }
            let phi = level
                .index_of(mask & !(1 << i))
                .expect("sub-configuration of a support state");
            for &(to, q) in level.conditional(phi) {
                p[(idx, to)] += q / k as f64;
            }
        }
    }
    Ok(p)
}

/// Two-particle contraction of the down-up step matrix, together with the
/// equivalent modified log-Sobolev form.
#[derive(Debug, Clone)]
pub struct TwoParticleCheck {
    /// `Ent_π(P̃F)` vs `½·Ent_π(F)`.
    pub contraction: SidePair,
    /// `Ent_π(F)` vs `D^du(F, log F)`.
    pub mlsi: SidePair,
}

pub fn two_particle_contraction(
    space: &StateSpace,
    pi: &Measure,
    f: &[f64],
) -> Result<TwoParticleCheck> {
    if space.k() != 2 {
        return Err(Error::parameter(format!(
            "two-particle contraction needs k = 2, got {}",
            space.k()
        )));
    }
    if f.len() != space.len() {
        return Err(Error::parameter("function length does not match the space"));
    }
    let p = down_up_step_matrix(space, pi)?;
    let pf: Vec<f64> = (0..space.len())
        .map(|x| (0..space.len()).map(|y| p[(x, y)] * f[y]).sum())
        .collect();
    let contraction = side_pair(
        funcineq::entropy(pi, &pf)?,
        0.5 * funcineq::entropy(pi, f)?,
    );

    let kernel = RateKernel::down_up(space, pi);
    let logf: Vec<f64> = f
        .iter()
        .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .collect();
    if logf.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "modified log-Sobolev form needs strictly positive F".into(),
        ));
    }
    let mlsi = side_pair(
        funcineq::entropy(pi, f)?,
        dirichlet_form(pi, &kernel, f, Some(&logf)),
    );
    Ok(TwoParticleCheck { contraction, mlsi })
}

/// Jensen step behind the two-particle bound, valid for every `k`:
/// `Ent_π(P̃F) ≤ E_π[F] · H(π^F D_{k→k−1} | π D_{k→k−1})` with
/// `π^F = Fπ/E_π[F]`.
pub fn jensen_step_check(space: &StateSpace, pi: &Measure, f: &[f64]) -> Result<SidePair> {
    if f.len() != space.len() {
        return Err(Error::parameter("function length does not match the space"));
    }
    let p = down_up_step_matrix(space, pi)?;
    let m = space.len();
    let pf: Vec<f64> = (0..m)
        .map(|x| (0..m).map(|y| p[(x, y)] * f[y]).sum())
        .collect();
    let lhs = funcineq::entropy(pi, &pf)?;

    let ef: f64 = f.iter().enumerate().map(|(x, &v)| pi.prob(x) * v).sum();
    if ef <= 0.0 {
        return Ok(side_pair(lhs, 0.0));
    }
    let k = space.k() as f64;
    let level = level_decomposition(space, pi, 1)?;
    // π D_{k→k−1} = ν₁; the tilted projection reweights states by F/E[F].
    let mut tilted = vec![0.0f64; level.configs().len()];
    for (idx, mask) in space.iter() {
        let w = pi.prob(idx) * f[idx] / ef;
        if w <= 0.0 {
            continue;
        }
        for i in 0..space.n() {
            if mask >> i & 1 == 1 {
                let phi = level
                    .index_of(mask & !(1 << i))
                    .expect("sub-configuration of a support state");
                tilted[phi] += w / k;
            }
        }
    }
    let mut rel = 0.0f64;
    for (phi, &t) in tilted.iter().enumerate() {
        if t > 0.0 {
            rel += t * (t / level.nu()[phi]).ln();
        }
    }
    Ok(side_pair(lhs, ef * rel))
}

/// Reduction of the k-particle log-Sobolev problem to one-particle chains:
/// for each `(k−1)`-particle configuration `φ`, the free particle moves on
/// the sites where it can sit, with the original jump rates; `γ(q,φ)` is the
/// log-Sobolev constant of that small chain.
#[derive(Debug)]
pub struct OneParticleReduction {
    /// `(φ mask, searched γ(q,φ))`, in config order.
    pub per_chain: Vec<(u64, f64)>,
    /// `min_φ γ(q,φ)`: certified-up-to-search lower-bound constant for the
    /// assembled k-particle inequality.
    pub gamma_min: f64,
    /// `1/γ_min`: upper bound on the inverse k-particle constant.
    pub assembled_inverse: f64,
    gammas: HashMap<u64, f64>,
}

pub fn one_particle_reduction(
    space: &StateSpace,
    pi: &Measure,
    kernel: &RateKernel,
    budget: &SearchBudget,
    seed: u64,
) -> Result<OneParticleReduction> {
    if pi.len() != space.len() {
        return Err(Error::parameter("measure length does not match the space"));
    }
    if space.k() == 0 {
        return Err(Error::parameter("reduction needs at least one particle"));
    }
    let level = level_decomposition(space, pi, 1)?;
    let mut per_chain = Vec::with_capacity(level.configs().len());
    let mut gammas = HashMap::new();
    for (phi_idx, &phi) in level.configs().iter().enumerate() {
        // Sites the free particle can occupy, with their state indices.
        let sites: Vec<(u32, usize)> = level
            .conditional(phi_idx)
            .iter()
            .map(|&(idx, _)| {
                let free = space.mask(idx) & !phi;
                (free.trailing_zeros(), idx)
            })
            .collect();
        let gamma = if sites.len() < 2 {
            f64::INFINITY
        } else {
            let site_of: HashMap<u32, usize> =
                sites.iter().enumerate().map(|(s, &(i, _))| (i, s)).collect();
            let mut rows: Vec<Vec<Move>> = vec![Vec::new(); sites.len()];
            for (s, &(i, idx)) in sites.iter().enumerate() {
                for mv in kernel.moves(idx) {
                    // Keep only moves of the free particle: the departing
                    // site is whichever exchanged site is occupied.
                    let occupied = space.mask(idx) >> mv.i & 1 == 1;
                    let (from, to_site) = if occupied { (mv.i, mv.j) } else { (mv.j, mv.i) };
                    if from != i {
                        continue;
                    }
                    if let Some(&t) = site_of.get(&to_site) {
                        rows[s].push(Move {
                            to: t,
                            i: from,
                            j: to_site,
                            rate: mv.rate,
                        });
                    }
                }
            }
            let gen = Generator::from_rows(rows);
            let log_w: Vec<f64> = sites
                .iter()
                .map(|&(_, idx)| pi.prob(idx).ln())
                .collect();
            let mu1 = Measure::from_log_weights(&log_w);
            let bracket: SearchBracket =
                funcineq::lsi_search(&gen, &mu1, budget, seed.wrapping_add(phi_idx as u64))?;
            if bracket.failed {
                return Err(Error::Sampling(format!(
                    "one-particle search degenerate at configuration {phi:#b}"
                )));
            }
            bracket.value
        };
        per_chain.push((phi, gamma));
        gammas.insert(phi, gamma);
    }
    let gamma_min = per_chain
        .iter()
        .map(|&(_, g)| g)
        .fold(f64::INFINITY, f64::min);
    Ok(OneParticleReduction {
        per_chain,
        gamma_min,
        assembled_inverse: 1.0 / gamma_min,
        gammas,
    })
}

impl OneParticleReduction {
    /// Right-hand side of the assembled inequality
    /// `Ent_π(F) ≤ Σ_σ π(σ) Σ_moves (1/γ(q, σ−1_i)) q(σ,σ^{ij}) (∇_ij √F)²`.
    pub fn assembled_rhs(
        &self,
        space: &StateSpace,
        pi: &Measure,
        kernel: &RateKernel,
        f: &[f64],
    ) -> Result<f64> {
        if f.len() != space.len() {
            return Err(Error::parameter("function length does not match the space"));
        }
        if f.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("assembled form needs nonnegative F".into()));
        }
        let sq: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
        let mut acc = 0.0;
        for (idx, mask) in space.iter() {
            let p = pi.prob(idx);
            if p <= 0.0 {
                continue;
            }
            for mv in kernel.moves(idx) {
                let occupied = mask >> mv.i & 1 == 1;
                let from = if occupied { mv.i } else { mv.j };
                let phi = mask & !(1 << from);
                let gamma = self
                    .gammas
                    .get(&phi)
                    .copied()
                    .ok_or_else(|| Error::Model("move leaves the decomposition".into()))?;
                let d = sq[mv.to] - sq[idx];
                acc += p * mv.rate * d * d / gamma;
            }
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::Coupling;
    use crate::graph::Graph;
    use crate::ising::CanonicalModel;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;

    fn uniform_instance(n: usize, k: usize) -> (StateSpace, Measure) {
        let space = StateSpace::full(n, k).expect("space");
        let mu = Measure::uniform(space.len());
        (space, mu)
    }

    fn canonical_instance(n: usize, beta: f64, h: Vec<f64>, m: f64) -> (StateSpace, Measure) {
        let coupling = Coupling::from_graph(&Graph::complete(n)).expect("coupling");
        let model =
            CanonicalModel::new(coupling, beta, DVector::from_vec(h), m).expect("model");
        let space = model.space().expect("space");
        let mu = model.measure(&space).expect("measure");
        (space, mu)
    }

    fn random_positive(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, "levels.random-f");
        (0..len).map(|_| rng.random::<f64>() + 0.05).collect()
    }

    #[test]
    fn uniform_four_two_level_one() {
        let (space, pi) = uniform_instance(4, 2);
        let level = level_decomposition(&space, &pi, 1).expect("level");
        assert_eq!(level.configs(), &[0b0001, 0b0010, 0b0100, 0b1000]);
        for &w in level.nu() {
            assert_relative_eq!(w, 0.25, epsilon = 1e-14);
        }
        for phi in 0..4 {
            assert_eq!(level.conditional(phi).len(), 3);
        }
    }

    #[test]
    fn boundary_levels() {
        let (space, pi) = canonical_instance(5, 0.2, vec![0.4, -0.3, 0.0, 0.8, -0.1], 0.2);
        // ℓ=0: ν₀ is π itself; conditionals are point masses.
        let l0 = level_decomposition(&space, &pi, 0).expect("level");
        assert_eq!(l0.configs().len(), space.len());
        for (phi, &mask) in l0.configs().iter().enumerate() {
            let idx = space.index_of(mask).unwrap();
            assert_relative_eq!(l0.nu()[phi], pi.prob(idx), epsilon = 1e-14);
            assert_eq!(l0.conditional(phi).len(), 1);
        }
        // ℓ=k: a single empty configuration carrying π itself.
        let lk = level_decomposition(&space, &pi, space.k()).expect("level");
        assert_eq!(lk.configs(), &[0u64]);
        assert_relative_eq!(lk.nu()[0], 1.0, epsilon = 1e-12);
        let f = random_positive(space.len(), 5);
        assert_relative_eq!(
            lk.conditional_entropy(0, &f),
            funcineq::entropy(&pi, &f).unwrap(),
            epsilon = 1e-12
        );
        assert!(level_decomposition(&space, &pi, space.k() + 1).is_err());
    }

    #[test]
    fn decomposition_identity_all_levels() {
        let (space, pi) = canonical_instance(6, 0.25, vec![0.3, -0.4, 0.1, 0.0, 0.7, -0.2], 0.0);
        let f = random_positive(space.len(), 9);
        for ell in 0..=space.k() {
            let level = level_decomposition(&space, &pi, ell).expect("level");
            assert!(
                level.decomposition_residual(&pi, &f) < 1e-12,
                "level {ell}"
            );
        }
    }

    #[test]
    fn kernel_stochastic_and_intertwining() {
        let (space, pi) = canonical_instance(6, 0.2, vec![0.5, -0.5, 0.25, 0.0, -0.25, 0.1], 0.0);
        let f = random_positive(space.len(), 13);
        for ell in 0..space.k() {
            let lower = level_decomposition(&space, &pi, ell).expect("lower");
            let upper = level_decomposition(&space, &pi, ell + 1).expect("upper");
            let kernel = level_kernel(&lower, &upper).expect("kernel");
            assert!(kernel.stochasticity_residual() < 1e-12, "level {ell}");
            assert!(
                kernel.measure_intertwining_residual(&lower, &upper) < 1e-12,
                "level {ell}"
            );
            assert!(
                kernel.mean_intertwining_residual(&lower, &upper, &f) < 1e-12,
                "level {ell}"
            );
        }
    }

    #[test]
    fn chain_rule_and_telescoping() {
        let (space, pi) = canonical_instance(6, 0.3, vec![0.2, -0.6, 0.4, 0.0, 0.3, -0.1], 0.0);
        let f = random_positive(space.len(), 21);
        let k = space.k();
        for ell in 0..k {
            let lower = level_decomposition(&space, &pi, ell).expect("lower");
            let upper = level_decomposition(&space, &pi, ell + 1).expect("upper");
            let kernel = level_kernel(&lower, &upper).expect("kernel");
            assert!(
                chain_rule_residual(&lower, &upper, &kernel, &f) < 1e-12,
                "level {ell}"
            );
        }
        // Per-level factors (ℓ+1)/ℓ accumulate to exactly k/p.
        for p in 1..=k {
            let mut factor = 1.0;
            for ell in p..k {
                factor *= (ell + 1) as f64 / ell as f64;
            }
            assert_relative_eq!(factor, k as f64 / p as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn contraction_holds_and_is_tight_at_top() {
        let (space, pi) = uniform_instance(6, 3);
        for seed in 0..20 {
            let f = random_positive(space.len(), 100 + seed);
            for p in 1..=space.k() {
                let check = entropy_contraction_check(&space, &pi, &f, p).expect("check");
                assert!(check.holds, "p={p} lhs={} rhs={}", check.lhs, check.rhs);
            }
            let top = entropy_contraction_check(&space, &pi, &f, space.k()).expect("check");
            assert_relative_eq!(top.lhs, top.rhs, epsilon = 1e-12);
        }
        assert!(entropy_contraction_check(&space, &pi, &[1.0; 20], 0).is_err());
    }

    #[test]
    fn one_level_loss_per_fixed_configuration() {
        let (space, pi) = uniform_instance(6, 3);
        let f = random_positive(space.len(), 31);
        for ell in 0..space.k() {
            let lower = level_decomposition(&space, &pi, ell).expect("lower");
            let upper = level_decomposition(&space, &pi, ell + 1).expect("upper");
            let kernel = level_kernel(&lower, &upper).expect("kernel");
            for psi in 0..upper.configs().len() {
                let check = one_level_loss_check(&lower, &upper, &kernel, psi, &f);
                assert!(
                    check.holds,
                    "ell={ell} psi={psi} lhs={} rhs={}",
                    check.lhs,
                    check.rhs
                );
            }
        }
    }

    #[test]
    fn ei_check_basics() {
        let (space, pi) = uniform_instance(4, 2);
        // μ = π gives 0 ≤ 0.
        let same = entropic_independence_check(&space, &pi, pi.probs()).expect("check");
        assert!(same.holds);
        assert!(same.lhs.abs() < 1e-14 && same.rhs.abs() < 1e-14);
        for &b in &same.base_projection {
            assert_relative_eq!(b, 0.25, epsilon = 1e-14);
        }
        // A spiky test measure.
        let mut mu = vec![0.0; space.len()];
        mu[0] = 0.9;
        mu[3] = 0.1;
        let check = entropic_independence_check(&space, &pi, &mu).expect("check");
        assert!(check.holds, "lhs={} rhs={}", check.lhs, check.rhs);
        // Absolute continuity is enforced.
        let mut probs = vec![1.0 / (space.len() - 1) as f64; space.len()];
        probs[2] = 0.0;
        let zero_pi = Measure::from_probs(&probs).expect("measure");
        let mut offending = vec![0.0; space.len()];
        offending[2] = 1.0;
        assert!(matches!(
            entropic_independence_check(&space, &zero_pi, &offending),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn adversarial_ei_stays_nonpositive() {
        let (space, pi) = canonical_instance(5, 0.0, vec![0.6, -0.4, 0.2, 0.0, -0.3], 0.2);
        let budget = SearchBudget {
            restarts: 6,
            max_steps: 200,
        };
        let mu = adversarial_ei_measure(&space, &pi, &budget, 41).expect("ascent");
        let check = entropic_independence_check(&space, &pi, &mu).expect("check");
        assert!(
            check.lhs <= check.rhs + 1e-10,
            "adversarial gap {}",
            check.lhs - check.rhs
        );
    }

    #[test]
    fn down_up_step_matches_rates() {
        let (space, pi) = canonical_instance(5, 0.2, vec![0.3, -0.2, 0.5, 0.0, -0.4], 0.2);
        let p = down_up_step_matrix(&space, &pi).expect("matrix");
        let m = space.len();
        for x in 0..m {
            let row: f64 = (0..m).map(|y| p[(x, y)]).sum();
            assert_relative_eq!(row, 1.0, epsilon = 1e-12);
        }
        // Off-diagonal entries are the continuous-time rates over k.
        let kernel = RateKernel::down_up(&space, &pi);
        let k = space.k() as f64;
        for x in 0..m {
            let mut expected = vec![0.0f64; m];
            for mv in kernel.moves(x) {
                expected[mv.to] += mv.rate / k;
            }
            for y in 0..m {
                if y != x {
                    assert_relative_eq!(p[(x, y)], expected[y], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_particle_contraction_uniform() {
        let (space, pi) = uniform_instance(4, 2);
        // Constant F: both entropies vanish.
        let flat = two_particle_contraction(&space, &pi, &[1.0; 6]).expect("check");
        assert!(flat.contraction.lhs.abs() < 1e-14 && flat.contraction.holds);
        // Near-indicator: strict inequality.
        let mut f = vec![1e-9; 6];
        f[0] = 1.0;
        let check = two_particle_contraction(&space, &pi, &f).expect("check");
        assert!(check.contraction.holds);
        assert!(check.contraction.lhs < check.contraction.rhs - 1e-6);
        assert!(check.mlsi.holds, "mlsi lhs={} rhs={}", check.mlsi.lhs, check.mlsi.rhs);
        // k ≠ 2 is rejected.
        let (space3, pi3) = uniform_instance(6, 3);
        assert!(two_particle_contraction(&space3, &pi3, &vec![1.0; space3.len()]).is_err());
    }

    #[test]
    fn two_particle_contraction_random_measures() {
        let mut rng = crate::rng::stream(53, "levels.two-particle");
        for trial in 0..10 {
            let (space, pi) = canonical_instance(
                6,
                0.25,
                (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                -1.0 / 3.0,
            );
            assert_eq!(space.k(), 2);
            let f = random_positive(space.len(), 700 + trial);
            let check = two_particle_contraction(&space, &pi, &f).expect("check");
            assert!(check.contraction.holds && check.mlsi.holds, "trial {trial}");
        }
    }

    #[test]
    fn jensen_step_all_k() {
        let mut rng = crate::rng::stream(67, "levels.jensen");
        for &(n, m) in &[(6usize, 0.0f64), (6, 1.0 / 3.0), (5, 0.2)] {
            let h: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let (space, pi) = canonical_instance(n, 0.2, h, m);
            for t in 0..5 {
                let f = random_positive(space.len(), 900 + t);
                let check = jensen_step_check(&space, &pi, &f).expect("check");
                assert!(check.holds, "n={n} m={m} lhs={} rhs={}", check.lhs, check.rhs);
            }
        }
    }

    #[test]
    fn one_particle_reduction_k1_is_identity() {
        let (space, pi) = canonical_instance(5, 0.2, vec![0.3, -0.2, 0.5, 0.0, -0.4], -0.6);
        assert_eq!(space.k(), 1);
        let kernel = RateKernel::standard(&space, &pi);
        let budget = SearchBudget {
            restarts: 8,
            max_steps: 250,
        };
        let reduction =
            one_particle_reduction(&space, &pi, &kernel, &budget, 71).expect("reduction");
        assert_eq!(reduction.per_chain.len(), 1);
        assert_eq!(reduction.per_chain[0].0, 0u64);
        // The single chain is the full chain: same search, same answer.
        let gen = Generator::build(&kernel);
        let direct = funcineq::lsi_search(&gen, &pi, &budget, 71).expect("search");
        assert_relative_eq!(reduction.gamma_min, direct.value, epsilon = 1e-9);
    }

    #[test]
    fn one_particle_reduction_ordering() {
        let (space, pi) = uniform_instance(5, 2);
        let kernel = RateKernel::standard(&space, &pi);
        let budget = SearchBudget {
            restarts: 8,
            max_steps: 250,
        };
        let reduction =
            one_particle_reduction(&space, &pi, &kernel, &budget, 73).expect("reduction");
        let gen = Generator::build(&kernel);
        let gap = funcineq::spectral_gap_exact(&gen, &pi).expect("gap").gap;
        let bracket = funcineq::lsi_search(&gen, &pi, &budget, 73).expect("search");
        // The assembled inverse constant can never undercut the inverse gap
        // or the inverse of the searched bracket.
        assert!(
            reduction.assembled_inverse >= 1.0 / gap - 1e-6,
            "assembled {} vs 1/gap {}",
            reduction.assembled_inverse,
            1.0 / gap
        );
        assert!(
            reduction.assembled_inverse >= 1.0 / bracket.value - 1e-6,
            "assembled {} vs 1/bracket {}",
            reduction.assembled_inverse,
            1.0 / bracket.value
        );
        // The assembled right-hand side dominates the entropy.
        for t in 0..10 {
            let f = random_positive(space.len(), 300 + t);
            let rhs = reduction
                .assembled_rhs(&space, &pi, &kernel, &f)
                .expect("rhs");
            let ent = funcineq::entropy(&pi, &f).unwrap();
            assert!(ent <= rhs + 1e-9, "trial {t}: ent {ent} rhs {rhs}");
        }
    }
}
