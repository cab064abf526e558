//! Entropy functionals, exact spectral gaps, and searched brackets for
//! log-Sobolev-type constants.
//!
//! The three constants compared here, for a reversible generator `Q` with
//! stationary measure `μ` and Dirichlet form `D`:
//!
//! * spectral gap `λ`: `Var(F) ≤ D(F,F)/λ`, computed exactly by a dense
//!   symmetric eigensolve;
//! * modified log-Sobolev `γ_m`: `Ent(F) ≤ D(F, log F)/(2γ_m)`, bracketed
//!   from above by minimising the witness ratio;
//! * log-Sobolev `γ`: `Ent(F) ≤ 2 D(√F, √F)/γ`, bracketed the same way.
//!
//! Pointwise `(a−b)(log a − log b) ≥ 4(√a−√b)²`, so for every fixed `F` the
//! γ-ratio is below the γ_m-ratio; seeding the γ search with the γ_m witness
//! therefore makes the reported brackets satisfy `γ ≤ γ_m` by construction,
//! matching the ordering `γ ≤ γ_m ≤ λ` of the underlying constants.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma};

use crate::dynamics::Generator;
use crate::error::{Error, Result};
use crate::expm;
use crate::ising::{Measure, SearchBudget};
use crate::rng;

/// Entropies below this are treated as zero when deciding whether a ratio is
/// defined at all.
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Search iterates with entropy below this are rejected as degenerate: the
/// ratio is a quotient of two quantities that both vanish at constant `F`,
/// and its cancellation noise (~1e-16/Ent for unit-mean `F`) would otherwise
/// let the line search harvest spurious decreases near the constants.
pub const SEARCH_ENTROPY_FLOOR: f64 = 1e-9;

/// Dense-eigensolve cap for exact gaps.
pub const GAP_CAP: usize = 2048;

const GRAD_TOL: f64 = 1e-9;
const MIN_STEP: f64 = 1e-18;

/// `Ent_μ(F) = E[F log F] − E[F] log E[F]` with the convention `0·log 0 = 0`.
pub fn entropy(mu: &Measure, f: &[f64]) -> Result<f64> {
    if f.len() != mu.len() {
        return Err(Error::parameter("function length does not match measure"));
    }
    let mut ef = 0.0;
    let mut eflogf = 0.0;
    for (x, &v) in f.iter().enumerate() {
        if v < 0.0 {
            return Err(Error::Domain(format!(
                "entropy needs a nonnegative function, got {v} at state {x}"
            )));
        }
        let p = mu.prob(x);
        ef += p * v;
        if v > 0.0 {
            eflogf += p * v * v.ln();
        }
    }
    if ef <= 0.0 {
        return Ok(0.0);
    }
    Ok(eflogf - ef * ef.ln())
}

/// `Var_μ(F)`.
pub fn variance(mu: &Measure, f: &[f64]) -> Result<f64> {
    if f.len() != mu.len() {
        return Err(Error::parameter("function length does not match measure"));
    }
    let mean: f64 = f.iter().enumerate().map(|(x, &v)| mu.prob(x) * v).sum();
    Ok(f.iter()
        .enumerate()
        .map(|(x, &v)| mu.prob(x) * (v - mean) * (v - mean))
        .sum())
}

/// Exact spectral gap of a reversible generator.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Smallest nonzero eigenvalue of `−Q` in `L²(μ)`.
    pub gap: f64,
    /// Eigenfunction attaining the gap, normalised to unit sup norm.
    pub witness: Vec<f64>,
}

/// Smallest nonzero eigenvalue of the symmetrised `−Q`, with its witness.
///
/// Errors on reducible chains (reporting the communicating components) and on
/// generators that are not reversible for `mu`.
pub fn spectral_gap_exact(gen: &Generator, mu: &Measure) -> Result<GapReport> {
    let n = gen.n();
    if n < 2 {
        return Err(Error::parameter("gap needs at least two states"));
    }
    if n > GAP_CAP {
        return Err(Error::Capacity(format!(
            "{n} states exceeds the dense eigensolve cap {GAP_CAP}"
        )));
    }
    if mu.len() != n {
        return Err(Error::parameter(
            "measure length does not match the generator",
        ));
    }
    let sizes = component_sizes(gen);
    if sizes.len() > 1 {
        return Err(Error::Model(format!(
            "chain is reducible: {} components of sizes {:?}",
            sizes.len(),
            sizes
        )));
    }
    let resid = gen.reversibility_residual(mu);
    if resid > 1e-8 * (1.0 + gen.lambda()) {
        return Err(Error::Model(format!(
            "generator is not reversible for the supplied measure (flow residual {resid:.3e})"
        )));
    }

    // S = D^{1/2} (−Q) D^{−1/2} shares the spectrum of −Q and is symmetric.
    let q = gen.dense();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            s[(x, y)] = -(mu.prob(x) / mu.prob(y)).sqrt() * q[(x, y)];
        }
    }
    let s = (&s + &s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let second = order[1];
    let gap = eig.eigenvalues[second];

    let mut witness: Vec<f64> = (0..n)
        .map(|x| eig.eigenvectors[(x, second)] / mu.prob(x).sqrt())
        .collect();
    let scale = witness.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sign = witness
        .iter()
        .find(|v| v.abs() > 1e-14 * scale)
        .map_or(1.0, |v| v.signum());
    for w in &mut witness {
        *w *= sign / scale;
    }
    Ok(GapReport { gap, witness })
}

fn component_sizes(gen: &Generator) -> Vec<usize> {
    let n = gen.n();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        comp[start] = id;
        stack.push(start);
        while let Some(x) = stack.pop() {
            size += 1;
            for m in &gen.rows()[x] {
                if m.rate > 0.0 && comp[m.to] == usize::MAX {
                    comp[m.to] = id;
                    stack.push(m.to);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

/// Witness ratio whose infimum over positive `F` is the constant `γ_m`:
/// `D(F, log F) / (2 Ent(F))`.
pub fn mlsi_ratio(gen: &Generator, mu: &Measure, f: &[f64]) -> Result<f64> {
    let ent = entropy(mu, f)?;
    if ent < ENTROPY_FLOOR {
        return Err(Error::Domain(
            "ratio undefined: entropy below the degeneracy floor".into(),
        ));
    }
    if f.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain(
            "modified log-Sobolev ratio needs strictly positive F".into(),
        ));
    }
    let logf: Vec<f64> = f.iter().map(|v| v.ln()).collect();
    Ok(gen.dirichlet(mu, f, &logf) / (2.0 * ent))
}

/// Witness ratio whose infimum over positive `F` is the constant `γ`:
/// `2 D(√F, √F) / Ent(F)`.
pub fn lsi_ratio(gen: &Generator, mu: &Measure, f: &[f64]) -> Result<f64> {
    let ent = entropy(mu, f)?;
    if ent < ENTROPY_FLOOR {
        return Err(Error::Domain(
            "ratio undefined: entropy below the degeneracy floor".into(),
        ));
    }
    let sq: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
    Ok(2.0 * gen.dirichlet(mu, &sq, &sq) / ent)
}

/// Result of a ratio-minimising search. `value` is an upper bracket for the
/// constant; `witness` is the minimising function, in state-space order.
#[derive(Debug, Clone)]
pub struct SearchBracket {
    pub value: f64,
    pub witness: Vec<f64>,
    pub starts_used: usize,
    pub degenerate_starts: usize,
    /// Every start collapsed below the entropy floor.
    pub failed: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum RatioKind {
    Mlsi,
    Lsi,
}

/// Upper bracket for the modified log-Sobolev constant `γ_m` by projected
/// gradient descent on `G = log F` with multi-start (gap-witness curve,
/// near-indicators, symmetric Dirichlet(½) draws).
pub fn mlsi_search(
    gen: &Generator,
    mu: &Measure,
    budget: &SearchBudget,
    seed: u64,
) -> Result<SearchBracket> {
    ratio_search(RatioKind::Mlsi, gen, mu, budget, seed, &[])
}

/// Upper bracket for the log-Sobolev constant `γ`. Runs the γ_m search first
/// and reuses its witness as an extra start, so the reported brackets always
/// satisfy `γ-bracket ≤ γ_m-bracket`.
pub fn lsi_search(
    gen: &Generator,
    mu: &Measure,
    budget: &SearchBudget,
    seed: u64,
) -> Result<SearchBracket> {
    let mlsi = mlsi_search(gen, mu, budget, seed)?;
    let extra: Vec<Vec<f64>> = if mlsi.failed {
        Vec::new()
    } else {
        vec![mlsi.witness.iter().map(|v| v.max(1e-300).ln()).collect()]
    };
    ratio_search(RatioKind::Lsi, gen, mu, budget, seed, &extra)
}

fn ratio_search(
    kind: RatioKind,
    gen: &Generator,
    mu: &Measure,
    budget: &SearchBudget,
    seed: u64,
    extra_starts: &[Vec<f64>],
) -> Result<SearchBracket> {
    let n = gen.n();
    if mu.len() != n {
        return Err(Error::parameter(
            "measure length does not match the generator",
        ));
    }
    if n < 2 {
        return Err(Error::parameter("ratio search needs at least two states"));
    }

    let mut starts: Vec<Vec<f64>> = extra_starts.to_vec();

    // Gap-witness curve: F = e^{εw} interpolates towards the Poincaré regime,
    // where both ratios converge to the exact gap.
    if let Ok(gap) = spectral_gap_exact(gen, mu) {
        for &eps in &[0.5, 0.1, 1e-2, 1e-3, 1e-4, 1e-5] {
            starts.push(gap.witness.iter().map(|w| eps * w).collect());
        }
    }

    // Near-indicator starts at extreme states.
    let argmin = (0..n).min_by(|&a, &b| mu.prob(a).total_cmp(&mu.prob(b)));
    let argmax = (0..n).max_by(|&a, &b| mu.prob(a).total_cmp(&mu.prob(b)));
    let mut picks = vec![0, n / 2, n - 1];
    picks.extend(argmin);
    picks.extend(argmax);
    picks.sort_unstable();
    picks.dedup();
    for z in picks {
        let mut g = vec![-12.0; n];
        g[z] = 0.0;
        starts.push(g);
    }

    // Random spiky-to-flat functions: symmetric Dirichlet(½) over states.
    let label = match kind {
        RatioKind::Mlsi => "funcineq.mlsi",
        RatioKind::Lsi => "funcineq.lsi",
    };
    let gamma = Gamma::new(0.5, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    for r in 0..budget.restarts {
        let mut rng = rng::substream(seed, label, r as u64);
        let draw: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draw.iter().sum();
        starts.push(
            draw.iter()
                .map(|v| (v / total).max(ENTROPY_FLOOR).ln())
                .collect(),
        );
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut degenerate = 0usize;
    let starts_used = starts.len();
    for g0 in starts {
        match descend(kind, gen, mu, g0, budget.max_steps) {
            Some((r, f)) => {
                if best.as_ref().is_none_or(|(b, _)| r < *b) {
                    best = Some((r, f));
                }
            }
            None => degenerate += 1,
        }
    }

    match best {
        Some((value, witness)) => Ok(SearchBracket {
            value,
            witness,
            starts_used,
            degenerate_starts: degenerate,
            failed: false,
        }),
        None => Ok(SearchBracket {
            value: f64::INFINITY,
            witness: vec![1.0; n],
            starts_used,
            degenerate_starts: degenerate,
            failed: true,
        }),
    }
}

/// One evaluation of the ratio and its gradient in the `G = log F` chart.
fn ratio_and_grad(
    kind: RatioKind,
    gen: &Generator,
    mu: &Measure,
    g: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let n = g.len();
    let f: Vec<f64> = g.iter().map(|v| v.exp()).collect();
    let ef: f64 = f.iter().enumerate().map(|(x, &v)| mu.prob(x) * v).sum();
    if !(ef.is_finite() && ef > 0.0) {
        return None;
    }
    let ent: f64 = f
        .iter()
        .zip(g)
        .enumerate()
        .map(|(x, (&fv, &gv))| mu.prob(x) * fv * gv)
        .sum::<f64>()
        - ef * ef.ln();
    // Recentred iterates have E[F] = O(1), so the floor is an absolute one.
    if !(ent.is_finite() && ent > SEARCH_ENTROPY_FLOOR) {
        return None;
    }
    let grad_ent: Vec<f64> = (0..n)
        .map(|x| mu.prob(x) * f[x] * (g[x] - ef.ln()))
        .collect();

    let (num, grad_num): (f64, Vec<f64>) = match kind {
        RatioKind::Mlsi => {
            // D(F, log F) = ⟨F, −QG⟩_μ for reversible Q.
            let qg = gen.apply(g);
            let qf = gen.apply(&f);
            let d: f64 = (0..n).map(|x| -mu.prob(x) * f[x] * qg[x]).sum();
            let grad = (0..n)
                .map(|x| -mu.prob(x) * (f[x] * qg[x] + qf[x]))
                .collect();
            (d / 2.0, {
                let mut v: Vec<f64> = grad;
                for w in &mut v {
                    *w *= 0.5;
                }
                v
            })
        }
        RatioKind::Lsi => {
            let h: Vec<f64> = g.iter().map(|v| (v / 2.0).exp()).collect();
            let qh = gen.apply(&h);
            let d: f64 = (0..n).map(|x| -mu.prob(x) * h[x] * qh[x]).sum();
            let grad = (0..n).map(|x| -2.0 * mu.prob(x) * h[x] * qh[x]).collect();
            (2.0 * d, grad)
        }
    };
    if !num.is_finite() {
        return None;
    }
    let ratio = num / ent;
    let grad = (0..n)
        .map(|x| (grad_num[x] * ent - num * grad_ent[x]) / (ent * ent))
        .collect();
    Some((ratio, grad))
}

/// Gradient descent with backtracking in the shift-invariant `log F` chart.
fn descend(
    kind: RatioKind,
    gen: &Generator,
    mu: &Measure,
    mut g: Vec<f64>,
    max_steps: usize,
) -> Option<(f64, Vec<f64>)> {
    recentre(mu, &mut g);
    let (mut ratio, mut grad) = ratio_and_grad(kind, gen, mu, &g)?;
    let mut step = 1.0f64;
    for _ in 0..max_steps {
        let gnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < GRAD_TOL {
            break;
        }
        let mut accepted = false;
        while step >= MIN_STEP {
            let mut cand: Vec<f64> = g.iter().zip(&grad).map(|(x, d)| x - step * d).collect();
            recentre(mu, &mut cand);
            if let Some((r, gr)) = ratio_and_grad(kind, gen, mu, &cand) {
                if r <= ratio - 1e-14 {
                    g = cand;
                    ratio = r;
                    grad = gr;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((ratio, g.iter().map(|v| v.exp()).collect()))
}

/// The ratio is invariant under `G → G + c`; keep iterates bounded.
fn recentre(mu: &Measure, g: &mut [f64]) {
    let mean: f64 = g.iter().enumerate().map(|(x, &v)| mu.prob(x) * v).sum();
    for v in g.iter_mut() {
        *v = (*v - mean).clamp(-60.0, 60.0);
    }
}

/// Log-Sobolev constant implied by a modified log-Sobolev constant and the
/// minimal transition probability of the discretised chain:
/// `20 · C_mlsi · log(1/c_min)`.
pub fn lsi_from_mlsi(c_mlsi: f64, c_min: f64) -> Result<f64> {
    if !(c_min > 0.0 && c_min < 1.0) {
        return Err(Error::Domain(format!(
            "minimal transition probability must lie in (0,1), got {c_min}"
        )));
    }
    if !(c_mlsi.is_finite() && c_mlsi >= 0.0) {
        return Err(Error::Domain(format!(
            "modified log-Sobolev constant must be finite and nonnegative, got {c_mlsi}"
        )));
    }
    Ok(20.0 * c_mlsi * (1.0 / c_min).ln())
}

/// Smallest `t` with `max_x ‖e^{tQ}(x,·) − μ‖_TV ≤ eps`, located by doubling
/// plus bisection to relative accuracy `1e-3`. Returns `0` when the chain
/// already starts within `eps`.
pub fn tv_mixing_exact(gen: &Generator, mu: &Measure, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::parameter("eps must be positive"));
    }
    if expm::tv_from_stationarity(gen, mu, 0.0)? <= eps {
        return Ok(0.0);
    }
    if gen.lambda() == 0.0 {
        return Err(Error::Model(
            "frozen chain never reaches the target distance".into(),
        ));
    }
    let mut hi = 1.0 / gen.lambda();
    let mut doublings = 0;
    while expm::tv_from_stationarity(gen, mu, hi)? > eps {
        hi *= 2.0;
        doublings += 1;
        if doublings > 80 {
            return Err(Error::Numerical(
                "mixing-time bracket did not close after 80 doublings".into(),
            ));
        }
    }
    let mut lo = if doublings == 0 { 0.0 } else { hi / 2.0 };
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if expm::tv_from_stationarity(gen, mu, mid)? <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Mixing-time bound from a certified gap-type constant:
/// `(2/γ̂)·(1 + ¼ log log max_σ 1/ν(σ))`, with the iterated log clamped at
/// zero for spaces too small for it to be positive.
pub fn mixing_bound_from_gap(gamma_hat: f64, min_prob: f64) -> Result<f64> {
    if !(gamma_hat > 0.0) {
        return Err(Error::Domain("certified constant must be positive".into()));
    }
    if !(min_prob > 0.0 && min_prob <= 1.0) {
        return Err(Error::Domain(format!(
            "minimal probability must lie in (0,1], got {min_prob}"
        )));
    }
    let inner = (1.0 / min_prob).ln();
    let loglog = if inner > 1.0 { inner.ln() } else { 0.0 };
    Ok(2.0 / gamma_hat * (1.0 + 0.25 * loglog))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::Coupling;
    use crate::dynamics::{Flavour, RateKernel};
    use crate::graph::Graph;
    use crate::ising::CanonicalModel;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;

    fn instance(
        g: &Graph,
        beta: f64,
        h: Vec<f64>,
        m: f64,
    ) -> (Generator, Measure) {
        let coupling = Coupling::from_graph(g).expect("coupling");
        let model =
            CanonicalModel::new(coupling, beta, DVector::from_vec(h), m).expect("model");
        let space = model.space().expect("space");
        let mu = model.measure(&space).expect("measure");
        let gen = Generator::build(&RateKernel::down_up(&space, &mu));
        (gen, mu)
    }

    fn two_state() -> (Generator, Measure) {
        let g = Graph::complete(2);
        let coupling = Coupling::from_graph(&g).expect("coupling");
        let model = CanonicalModel::new(coupling, 0.0, DVector::zeros(2), 0.0).expect("model");
        let space = model.space().expect("space");
        let mu = model.measure(&space).expect("measure");
        let gen = Generator::build(&RateKernel::standard(&space, &mu));
        (gen, mu)
    }

    #[test]
    fn entropy_and_variance_basics() {
        let mu = Measure::uniform(2);
        assert_relative_eq!(entropy(&mu, &[3.0, 3.0]).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(variance(&mu, &[3.0, 3.0]).unwrap(), 0.0, epsilon = 1e-15);
        // E[F]=1 ⇒ Ent = ½·2 log 2 = log 2; Var = 1.
        assert_relative_eq!(
            entropy(&mu, &[2.0, 0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-14
        );
        assert_relative_eq!(variance(&mu, &[2.0, 0.0]).unwrap(), 1.0, epsilon = 1e-14);
        assert!(matches!(
            entropy(&mu, &[1.0, -0.5]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn entropy_second_order_expansion() {
        let mu = Measure::uniform(12);
        let mut rng = rng::stream(7, "funcineq.expansion");
        let g: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let eps = 1e-3;
        let f: Vec<f64> = g.iter().map(|v| 1.0 + eps * v).collect();
        let ent = entropy(&mu, &f).unwrap();
        let var = variance(&mu, &g).unwrap();
        let predicted = eps * eps * var / 2.0;
        assert!(
            (ent - predicted).abs() <= 1e-2 * predicted,
            "Ent {ent} vs ε²Var/2 {predicted}"
        );
    }

    #[test]
    fn two_state_gap_is_one() {
        let (gen, mu) = two_state();
        let rep = spectral_gap_exact(&gen, &mu).expect("gap");
        assert_relative_eq!(rep.gap, 1.0, epsilon = 1e-10);
        let var = variance(&mu, &rep.witness).unwrap();
        let d = gen.dirichlet(&mu, &rep.witness, &rep.witness);
        assert!((var * rep.gap - d).abs() < 1e-8, "eigen identity violated");
    }

    #[test]
    fn down_up_gap_at_least_half() {
        let (gen, mu) = instance(&Graph::complete(8), 0.0, vec![0.0; 8], 0.0);
        let rep = spectral_gap_exact(&gen, &mu).expect("gap");
        assert!(rep.gap >= 0.5 - 1e-9, "gap {}", rep.gap);
        let var = variance(&mu, &rep.witness).unwrap();
        let d = gen.dirichlet(&mu, &rep.witness, &rep.witness);
        assert!((var * rep.gap - d).abs() < 1e-8);
    }

    #[test]
    fn reducible_chain_reports_components() {
        // Exchanges restricted to the disjoint edges (0,1) and (2,3) freeze
        // every configuration whose discordant pairs are split across them.
        let g = Graph::from_edges(4, [(0, 1), (2, 3)]).expect("graph");
        let coupling = Coupling::from_graph(&Graph::complete(4)).expect("coupling");
        let model =
            CanonicalModel::new(coupling, 0.0, DVector::zeros(4), 0.0).expect("model");
        let space = model.space().expect("space");
        let mu = model.measure(&space).expect("measure");
        let kernel =
            RateKernel::kawasaki(&space, &mu, &g, Flavour::HeatBath).expect("kernel");
        let gen = Generator::build(&kernel);
        let err = spectral_gap_exact(&gen, &mu).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reducible") && msg.contains("components"), "{msg}");
    }

    #[test]
    fn mlsi_search_matches_two_state_scan() {
        let (gen, mu) = two_state();
        // One-parameter family F = (a, 1) covers everything by scale and
        // symmetry; dense log-spaced scan is the oracle, restricted to the
        // same non-degenerate entropy region the search explores.
        let mut scan = f64::INFINITY;
        for i in 0..200_000 {
            let a = (i as f64 / 199_999.0 * 8.0 - 4.0).exp();
            let mean = (a + 1.0) / 2.0;
            let f = [a / mean, 1.0 / mean];
            if entropy(&mu, &f).unwrap() <= SEARCH_ENTROPY_FLOOR {
                continue;
            }
            if let Ok(r) = mlsi_ratio(&gen, &mu, &f) {
                scan = scan.min(r);
            }
        }
        let budget = SearchBudget {
            restarts: 16,
            max_steps: 400,
        };
        let found = mlsi_search(&gen, &mu, &budget, 11).expect("search");
        assert!(!found.failed);
        assert!(
            (found.value - scan).abs() < 1e-6,
            "search {} vs scan {}",
            found.value,
            scan
        );
    }

    #[test]
    fn lsi_search_matches_two_state_scan() {
        let (gen, mu) = two_state();
        let mut scan = f64::INFINITY;
        for i in 0..200_000 {
            let a = (i as f64 / 199_999.0 * 8.0 - 4.0).exp();
            let mean = (a + 1.0) / 2.0;
            let f = [a / mean, 1.0 / mean];
            if entropy(&mu, &f).unwrap() <= SEARCH_ENTROPY_FLOOR {
                continue;
            }
            if let Ok(r) = lsi_ratio(&gen, &mu, &f) {
                scan = scan.min(r);
            }
        }
        let budget = SearchBudget {
            restarts: 16,
            max_steps: 400,
        };
        let found = lsi_search(&gen, &mu, &budget, 11).expect("search");
        assert!(!found.failed);
        assert!(
            (found.value - scan).abs() < 1e-6,
            "search {} vs scan {}",
            found.value,
            scan
        );
    }

    #[test]
    fn ratio_scale_invariance() {
        let (gen, mu) = instance(&Graph::complete(6), 0.2, vec![0.3, -0.1, 0.0, 0.5, -0.4, 0.2], 0.0);
        let mut rng = rng::stream(3, "funcineq.scale");
        let f: Vec<f64> = (0..gen.n()).map(|_| rng.random::<f64>() + 0.1).collect();
        let m0 = mlsi_ratio(&gen, &mu, &f).unwrap();
        let l0 = lsi_ratio(&gen, &mu, &f).unwrap();
        for &c in &[1e-3, 1.0, 1e3] {
            let scaled: Vec<f64> = f.iter().map(|v| c * v).collect();
            assert_relative_eq!(mlsi_ratio(&gen, &mu, &scaled).unwrap(), m0, epsilon = 1e-9);
            assert_relative_eq!(lsi_ratio(&gen, &mu, &scaled).unwrap(), l0, epsilon = 1e-9);
        }
    }

    #[test]
    fn bracket_ordering_gamma_le_gamma_m_le_lambda() {
        let cases: Vec<(Graph, f64, Vec<f64>, f64)> = vec![
            (Graph::complete(6), 0.2, vec![0.3, -0.1, 0.0, 0.5, -0.4, 0.2], 0.0),
            (Graph::cycle(6), 0.3, vec![0.0; 6], 1.0 / 3.0),
            (Graph::complete(5), 0.1, vec![1.0, -1.0, 0.5, 0.0, -0.5], -0.2),
        ];
        let budget = SearchBudget {
            restarts: 12,
            max_steps: 250,
        };
        for (g, beta, h, m) in cases {
            let (gen, mu) = instance(&g, beta, h, m);
            let lambda = spectral_gap_exact(&gen, &mu).expect("gap").gap;
            let mlsi = mlsi_search(&gen, &mu, &budget, 21).expect("mlsi");
            let lsi = lsi_search(&gen, &mu, &budget, 21).expect("lsi");
            assert!(!mlsi.failed && !lsi.failed);
            assert!(
                lsi.value <= mlsi.value + 1e-12,
                "γ bracket {} above γ_m bracket {}",
                lsi.value,
                mlsi.value
            );
            assert!(
                mlsi.value <= lambda * (1.0 + 1e-6) + 1e-9,
                "γ_m bracket {} above exact gap {}",
                mlsi.value,
                lambda
            );
        }
    }

    #[test]
    fn down_up_mlsi_never_below_half() {
        // The uniform-in-(N,m,h) entropy inequality pins γ_m ≥ ½ for the
        // per-particle down-up walk; a searched witness below ½ would
        // disprove it.
        let mut rng = rng::stream(17, "funcineq.theorem");
        let budget = SearchBudget {
            restarts: 8,
            max_steps: 150,
        };
        for trial in 0..4 {
            let n = 6;
            let h: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let m = if trial % 2 == 0 { 0.0 } else { 1.0 / 3.0 };
            let (gen, mu) = instance(&Graph::complete(n), 0.0, h, m);
            let found = mlsi_search(&gen, &mu, &budget, 100 + trial as u64).expect("search");
            assert!(
                found.value >= 0.5 - 1e-9,
                "witness ratio {} below 1/2",
                found.value
            );
        }
    }

    #[test]
    fn lsi_from_mlsi_plugins() {
        assert_relative_eq!(
            lsi_from_mlsi(1.0, (-1.0f64).exp()).unwrap(),
            20.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            lsi_from_mlsi(0.5, 0.01).unwrap(),
            10.0 * 100.0f64.ln(),
            epsilon = 1e-12
        );
        assert!(lsi_from_mlsi(1.0, 0.0).is_err());
        assert!(lsi_from_mlsi(1.0, 1.0).is_err());
        assert!(lsi_from_mlsi(-1.0, 0.5).is_err());
    }

    #[test]
    fn two_state_mixing_time_closed_form() {
        let (gen, mu) = two_state();
        // TV(t) = ½e^{−t}, so t_mix(1/e) solves ½e^{−t} = 1/e.
        let t = tv_mixing_exact(&gen, &mu, (-1.0f64).exp()).expect("mix");
        let exact = 1.0 - std::f64::consts::LN_2;
        assert!(
            (t - exact).abs() <= 2e-3 * exact.max(1.0),
            "t {} vs exact {}",
            t,
            exact
        );
        assert_eq!(tv_mixing_exact(&gen, &mu, 1.0).unwrap(), 0.0);
        let t_strict = tv_mixing_exact(&gen, &mu, 0.05).unwrap();
        let t_loose = tv_mixing_exact(&gen, &mu, 0.2).unwrap();
        assert!(t_strict >= t_loose);
    }

    #[test]
    fn mixing_bound_shape() {
        let b = mixing_bound_from_gap(0.5, 1e-6).unwrap();
        let expected = 4.0 * (1.0 + 0.25 * (1e6f64).ln().ln());
        assert_relative_eq!(b, expected, epsilon = 1e-12);
        // Tiny spaces: iterated log clamped, bound reduces to 2/γ.
        assert_relative_eq!(mixing_bound_from_gap(2.0, 0.9).unwrap(), 1.0, epsilon = 1e-12);
        assert!(mixing_bound_from_gap(0.0, 0.5).is_err());
    }
}
