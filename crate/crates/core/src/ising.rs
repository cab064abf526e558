//! The canonical (fixed-magnetisation) Ising measure, its β = 0 product
//! counterpart, exact enumeration and moments, and the two condition reports
//! that produce the comparison constant M(β): the spectral form (from the
//! spread of the nontrivial coupling spectrum) and the covariance form (from
//! a searched bound on the largest covariance eigenvalue along temperatures).

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::rng;
use crate::space::{particle_count, StateSpace};

/// Normalised probability vector over an enumerated state space, kept with
/// the log-normaliser of the weights that produced it.
#[derive(Clone, Debug)]
pub struct Measure {
    probs: Vec<f64>,
    log_z: f64,
}

impl Measure {
    /// Normalise exp(log_weights) by log-sum-exp.
    pub fn from_log_weights(log_weights: &[f64]) -> Self {
        assert!(!log_weights.is_empty());
        let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_weights.iter().map(|lw| (lw - m).exp()).sum();
        let log_z = m + sum.ln();
        let probs = log_weights.iter().map(|lw| (lw - log_z).exp()).collect();
        Measure { probs, log_z }
    }

    pub fn uniform(len: usize) -> Self {
        Measure {
            probs: vec![1.0 / len as f64; len],
            log_z: (len as f64).ln(),
        }
    }

    /// Normalise an explicit nonnegative weight vector. Unlike
    /// [`from_log_weights`](Self::from_log_weights) this admits states of
    /// probability exactly zero.
    pub fn from_probs(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::parameter("measure needs at least one state"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::parameter("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::parameter("weights must not all vanish"));
        }
        Ok(Measure {
            probs: weights.iter().map(|w| w / total).collect(),
            log_z: total.ln(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, idx: usize) -> f64 {
        self.probs[idx]
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        let mean = self.expectation(f);
        self.probs
            .iter()
            .zip(f)
            .map(|(p, v)| p * (v - mean) * (v - mean))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Canonical model: weight w(σ) = exp(−(β/2)(σ, Aσ) + (h, σ)) on the
/// configurations with N(1+m)/2 plus sites.
#[derive(Clone, Debug)]
pub struct CanonicalModel {
    coupling: Coupling,
    beta: f64,
    h: DVector<f64>,
    m: f64,
    k: usize,
}

impl CanonicalModel {
    pub fn new(coupling: Coupling, beta: f64, h: DVector<f64>, m: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::parameter(format!("beta must be >= 0, got {beta}")));
        }
        if h.len() != coupling.n() {
            return Err(Error::parameter(format!(
                "field length {} does not match N = {}",
                h.len(),
                coupling.n()
            )));
        }
        let k = particle_count(coupling.n(), m)?;
        Ok(CanonicalModel {
            coupling,
            beta,
            h,
            m,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.coupling.n()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// Same measure, but written on the normal-form coupling with β rescaled
    /// accordingly (probabilities agree configuration by configuration).
    pub fn normal_form(&self) -> Result<CanonicalModel> {
        CanonicalModel::new(
            Coupling::new(self.coupling.normalised().clone())?,
            self.coupling.normalised_beta(self.beta),
            self.h.clone(),
            self.m,
        )
    }

    pub fn space(&self) -> Result<StateSpace> {
        StateSpace::from_magnetisation(self.n(), self.m)
    }

    /// log w(σ) for the configuration given by its plus-site mask.
    pub fn log_weight(&self, mask: u64) -> f64 {
        log_weight_for(self.coupling.raw(), self.beta, &self.h, self.n(), mask)
    }

    /// Exact normalised measure over an enumerated space.
    pub fn measure(&self, space: &StateSpace) -> Result<Measure> {
        if space.n() != self.n() || space.k() != self.k {
            return Err(Error::parameter("state space does not match model (n, k)"));
        }
        let lw: Vec<f64> = space.masks().iter().map(|&m| self.log_weight(m)).collect();
        Ok(Measure::from_log_weights(&lw))
    }
}

/// log w with σ_i = +1 on mask bits: (σ, Aσ) expanded over plus-site pairs
/// via σ = 2x − 𝟙 and A𝟙 = λ₁𝟙.
fn log_weight_for(a: &DMatrix<f64>, beta: f64, h: &DVector<f64>, n: usize, mask: u64) -> f64 {
    let mut quad_plus = 0.0; // Σ_{i,j ∈ I} A_ij
    let mut field = 0.0;
    let mut bits_i = mask;
    while bits_i != 0 {
        let i = bits_i.trailing_zeros() as usize;
        bits_i &= bits_i - 1;
        field += h[i];
        let mut bits_j = mask;
        while bits_j != 0 {
            let j = bits_j.trailing_zeros() as usize;
            bits_j &= bits_j - 1;
            quad_plus += a[(i, j)];
        }
    }
    let k = mask.count_ones() as f64;
    let row_sum = a.row(0).sum(); // = λ₁ (constant eigenvector)
    let quad = 4.0 * quad_plus - 4.0 * row_sum * k + row_sum * n as f64;
    let h_total: f64 = h.iter().sum();
    -(beta / 2.0) * quad + (2.0 * field - h_total)
}

/// β = 0 measure: π(σ) ∝ Π e^{σ_i h_i} on the same constrained cube.
pub fn product_measure(h: &DVector<f64>, space: &StateSpace) -> Result<Measure> {
    if h.len() != space.n() {
        return Err(Error::parameter("field length does not match space"));
    }
    let h_total: f64 = h.iter().sum();
    let lw: Vec<f64> = space
        .masks()
        .iter()
        .map(|&mask| {
            let mut field = 0.0;
            let mut bits = mask;
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                field += h[i];
            }
            2.0 * field - h_total
        })
        .collect();
    Ok(Measure::from_log_weights(&lw))
}

/// Exact mean and covariance of σ under a measure on an enumerated space.
pub fn moments(measure: &Measure, space: &StateSpace) -> Moments {
    let n = space.n();
    let mut mean = DVector::zeros(n);
    let mut second = DMatrix::<f64>::zeros(n, n);
    let mut spin = vec![-1.0f64; n];
    for (idx, &mask) in space.masks().iter().enumerate() {
        let p = measure.prob(idx);
        for (i, s) in spin.iter_mut().enumerate() {
            *s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
        }
        for i in 0..n {
            mean[i] += p * spin[i];
            for j in i..n {
                second[(i, j)] += p * spin[i] * spin[j];
            }
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = second[(i, j)] - mean[i] * mean[j];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Moments {
        mean,
        covariance: cov,
    }
}

// ---- condition reports ---------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConditionKind {
    Spectral,
    Covariance,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChiPoint {
    pub t: f64,
    pub chi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub kind: ConditionKind,
    pub holds: bool,
    /// Comparison constant; `None` when the condition fails (unbounded).
    pub m_beta: Option<f64>,
    /// Spectral support length δ(A) (spectral report only).
    pub delta: Option<f64>,
    /// Searched χ̄⁰ values per grid point (covariance report only).
    pub grid: Option<Vec<ChiPoint>>,
    /// The covariance search maximises over fields; its result is a lower
    /// estimate of the true sup.
    pub lower_estimate: bool,
    pub budget_exhausted: bool,
}

/// Spectral condition: holds iff 2βδ(A) < 1, with M(β) = 1/(1 − 2βδ(A)).
pub fn check_sc(coupling: &Coupling, beta: f64) -> ConditionReport {
    let delta = coupling.delta();
    let holds = 2.0 * beta * delta < 1.0;
    ConditionReport {
        kind: ConditionKind::Spectral,
        holds,
        m_beta: holds.then(|| 1.0 / (1.0 - 2.0 * beta * delta)),
        delta: Some(delta),
        grid: None,
        lower_estimate: false,
        budget_exhausted: false,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SearchBudget {
    pub restarts: usize,
    pub max_steps: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            restarts: 32,
            max_steps: 200,
        }
    }
}

/// Covariance condition: estimates χ̄⁰(t) = sup_h λ_max(cov of the measure at
/// inverse temperature t, field h) at each grid point by multi-start gradient
/// ascent over h, then reports M = exp(right-endpoint Riemann sum over
/// [0, β]). The grid must be strictly increasing and end at β.
pub fn check_cc(
    coupling: &Coupling,
    t_grid: &[f64],
    n: usize,
    m: f64,
    budget: SearchBudget,
    seed: u64,
) -> Result<ConditionReport> {
    if coupling.n() != n {
        return Err(Error::parameter("coupling size does not match n"));
    }
    if t_grid.is_empty() || t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::parameter(
            "temperature grid must be strictly increasing and positive",
        ));
    }
    let space = StateSpace::from_magnetisation(n, m)?;
    let mut grid = Vec::with_capacity(t_grid.len());
    let mut integral = 0.0;
    let mut prev_t = 0.0;
    let mut exhausted = false;
    for (gi, &t) in t_grid.iter().enumerate() {
        let (chi, hit_budget) =
            sup_cov_eigenvalue(coupling.raw(), t, &space, budget, rng::substream(seed, "ising.cc", gi as u64))?;
        exhausted |= hit_budget;
        integral += chi * (t - prev_t);
        prev_t = t;
        grid.push(ChiPoint { t, chi });
    }
    Ok(ConditionReport {
        kind: ConditionKind::Covariance,
        holds: true,
        m_beta: Some(integral.exp()),
        delta: None,
        grid: Some(grid),
        lower_estimate: true,
        budget_exhausted: exhausted,
    })
}

/// One grid point of the χ̄⁰ search: sup over fields of the top covariance
/// eigenvalue, by ascent with an exact supergradient (top eigenvector frozen
/// per step) and backtracking line search.
pub fn sup_cov_eigenvalue(
    a: &DMatrix<f64>,
    t: f64,
    space: &StateSpace,
    budget: SearchBudget,
    mut rng: impl rand::Rng,
) -> Result<(f64, bool)> {
    let n = space.n();
    let normal = Normal::new(0.0, 2.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut best = f64::NEG_INFINITY;
    let mut exhausted = false;
    for restart in 0..budget.restarts {
        let mut h = if restart == 0 {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |_, _| normal.sample(&mut rng))
        };
        let (mut val, mut f) = top_cov_eig(a, t, &h, space);
        let mut step = 0.5;
        let mut converged = false;
        for _ in 0..budget.max_steps {
            let grad = eig_field_gradient(a, t, &h, space, &f);
            if grad.norm() < 1e-7 {
                converged = true;
                break;
            }
            // backtracking on the frozen-eigenvector objective
            let mut advanced = false;
            while step > 1e-10 {
                let h_try = &h + step * &grad;
                let (v_try, f_try) = top_cov_eig(a, t, &h_try, space);
                if v_try > val + 1e-14 {
                    h = h_try;
                    val = v_try;
                    f = f_try;
                    step *= 1.5;
                    advanced = true;
                    break;
                }
                step *= 0.5;
            }
            if !advanced {
                converged = true;
                break;
            }
        }
        exhausted |= !converged;
        best = best.max(val);
    }
    Ok((best, exhausted))
}

fn measure_at(a: &DMatrix<f64>, t: f64, h: &DVector<f64>, space: &StateSpace) -> Measure {
    let lw: Vec<f64> = space
        .masks()
        .iter()
        .map(|&mask| log_weight_for(a, t, h, space.n(), mask))
        .collect();
    Measure::from_log_weights(&lw)
}

fn top_cov_eig(
    a: &DMatrix<f64>,
    t: f64,
    h: &DVector<f64>,
    space: &StateSpace,
) -> (f64, DVector<f64>) {
    let mu = measure_at(a, t, h, space);
    let mom = moments(&mu, space);
    let se = mom.covariance.clone().symmetric_eigen();
    let mut top = 0;
    for i in 1..se.eigenvalues.len() {
        if se.eigenvalues[i] > se.eigenvalues[top] {
            top = i;
        }
    }
    (se.eigenvalues[top], se.eigenvectors.column(top).into())
}

/// ∂/∂h_i var((f,σ)) at frozen f: cov(X², σ_i) − 2·E[X]·cov(X, σ_i),
/// X = (f, σ). (d/dh_i E[g] = cov(g, σ_i) for this exponential family.)
fn eig_field_gradient(
    a: &DMatrix<f64>,
    t: f64,
    h: &DVector<f64>,
    space: &StateSpace,
    f: &DVector<f64>,
) -> DVector<f64> {
    let n = space.n();
    let mu = measure_at(a, t, h, space);
    let mut ex = 0.0;
    let mut ex2 = 0.0;
    let mut es = DVector::<f64>::zeros(n);
    let mut exs = DVector::<f64>::zeros(n);
    let mut ex2s = DVector::<f64>::zeros(n);
    let mut spin = vec![-1.0f64; n];
    for (idx, &mask) in space.masks().iter().enumerate() {
        let p = mu.prob(idx);
        let mut x = 0.0;
        for (i, s) in spin.iter_mut().enumerate() {
            *s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
            x += f[i] * *s;
        }
        ex += p * x;
        ex2 += p * x * x;
        for i in 0..n {
            es[i] += p * spin[i];
            exs[i] += p * x * spin[i];
            ex2s[i] += p * x * x * spin[i];
        }
    }
    DVector::from_fn(n, |i, _| {
        let cov_x2_s = ex2s[i] - ex2 * es[i];
        let cov_x_s = exs[i] - ex * es[i];
        cov_x2_s - 2.0 * ex * cov_x_s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::coupling::zero_sum_projector;
    use crate::graph::Graph;
    use rand::Rng;

    fn k_n_model(n: usize, beta: f64, h: DVector<f64>, m: f64) -> CanonicalModel {
        let c = Coupling::from_graph(&Graph::complete(n)).unwrap();
        CanonicalModel::new(c, beta, h, m).unwrap()
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let model = k_n_model(4, 0.0, DVector::zeros(4), 0.0);
        let space = model.space().unwrap();
        let mu = model.measure(&space).unwrap();
        for &p in mu.probs() {
            assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(mu.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_site_closed_form() {
        let (h1, h2) = (0.8, -0.3);
        for beta in [0.0, 0.4, 2.0] {
            let model = k_n_model(2, beta, DVector::from_vec(vec![h1, h2]), 0.0);
            let space = model.space().unwrap();
            let mu = model.measure(&space).unwrap();
            let want = (h1 - h2).exp() / ((h1 - h2).exp() + (h2 - h1).exp());
            // mask 0b01: site 0 is the plus site
            let idx = space.index_of(0b01).unwrap();
            assert_abs_diff_eq!(mu.prob(idx), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn complete_graph_weights_are_flat_at_any_beta() {
        let model = k_n_model(4, 0.3, DVector::zeros(4), 0.0);
        let space = model.space().unwrap();
        let mu = model.measure(&space).unwrap();
        for &p in mu.probs() {
            assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn product_measure_single_site_marginal() {
        let t = 0.7;
        let space = StateSpace::from_magnetisation(4, 0.0).unwrap();
        let h = DVector::from_vec(vec![t, 0.0, 0.0, 0.0]);
        let mu = product_measure(&h, &space).unwrap();
        let p1: f64 = space
            .masks()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m & 1 == 1)
            .map(|(i, _)| mu.prob(i))
            .sum();
        assert_abs_diff_eq!(p1, (2.0 * t).exp() / ((2.0 * t).exp() + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn product_measure_matches_zero_beta_weights() {
        let mut rng = crate::rng::stream(11, "test.ising.product");
        let normal = Normal::new(0.0, 1.5).unwrap();
        for _ in 0..20 {
            let n = 2 * (2 + (rng.random::<u32>() % 5) as usize); // 4..12 even
            let h = DVector::from_fn(n, |_, _| normal.sample(&mut rng));
            let model = k_n_model(n, 0.0, h.clone(), 0.0);
            let space = model.space().unwrap();
            let a = model.measure(&space).unwrap();
            let b = product_measure(&h, &space).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn uniform_moments_on_four_sites() {
        let space = StateSpace::from_magnetisation(4, 0.0).unwrap();
        let mu = Measure::uniform(space.len());
        let mom = moments(&mu, &space);
        for i in 0..4 {
            assert_abs_diff_eq!(mom.mean[i], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(mom.covariance[(i, i)], 1.0, epsilon = 1e-14);
            for j in 0..4 {
                if i != j {
                    assert_abs_diff_eq!(mom.covariance[(i, j)], -1.0 / 3.0, epsilon = 1e-14);
                }
            }
        }
        // conservation: covariance annihilates constants
        let row_sums = &mom.covariance * DVector::from_element(4, 1.0);
        assert!(row_sums.norm() < 1e-12);
    }

    #[test]
    fn shift_by_projector_leaves_measure_unchanged() {
        let g = Graph::cycle(6);
        let a = g.adjacency_dense();
        let shifted = &a + 3.7 * zero_sum_projector(6);
        let h = DVector::from_vec(vec![0.3, -0.2, 0.0, 0.5, -0.4, 0.1]);
        let m1 = CanonicalModel::new(Coupling::new(a).unwrap(), 0.4, h.clone(), 0.0).unwrap();
        let m2 = CanonicalModel::new(Coupling::new(shifted).unwrap(), 0.4, h, 0.0).unwrap();
        let space = m1.space().unwrap();
        let p1 = m1.measure(&space).unwrap();
        let p2 = m2.measure(&space).unwrap();
        for (a, b) in p1.probs().iter().zip(p2.probs()) {
            assert!((a / b - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn normal_form_reproduces_measure() {
        let g = Graph::cycle(6);
        let h = DVector::from_vec(vec![0.3, -0.2, 0.0, 0.5, -0.4, 0.1]);
        let model =
            CanonicalModel::new(Coupling::from_graph(&g).unwrap(), 0.4, h, 0.0).unwrap();
        let space = model.space().unwrap();
        let p1 = model.measure(&space).unwrap();
        let p2 = model.normal_form().unwrap().measure(&space).unwrap();
        for (a, b) in p1.probs().iter().zip(p2.probs()) {
            assert!((a / b - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn covariance_matches_log_partition_hessian() {
        let g = Graph::cycle(5);
        let h = DVector::from_vec(vec![0.2, -0.1, 0.4, 0.0, -0.3]);
        let c = Coupling::from_graph(&g).unwrap();
        let space = StateSpace::from_magnetisation(5, 0.2).unwrap(); // k = 3
        let beta = 0.35;
        let log_z = |hv: &DVector<f64>| {
            let model = CanonicalModel::new(c.clone(), beta, hv.clone(), 0.2).unwrap();
            model.measure(&space).unwrap().log_z()
        };
        let model = CanonicalModel::new(c.clone(), beta, h.clone(), 0.2).unwrap();
        let mom = moments(&model.measure(&space).unwrap(), &space);
        let s = 1e-4;
        for i in 0..5 {
            for j in 0..5 {
                let mut hpp = h.clone();
                hpp[i] += s;
                hpp[j] += s;
                let mut hpm = h.clone();
                hpm[i] += s;
                hpm[j] -= s;
                let mut hmp = h.clone();
                hmp[i] -= s;
                hmp[j] += s;
                let mut hmm = h.clone();
                hmm[i] -= s;
                hmm[j] -= s;
                let fd = (log_z(&hpp) - log_z(&hpm) - log_z(&hmp) + log_z(&hmm)) / (4.0 * s * s);
                assert_abs_diff_eq!(fd, mom.covariance[(i, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn product_measures_are_negatively_correlated() {
        let mut rng = crate::rng::stream(23, "test.ising.nc");
        let normal = Normal::new(0.0, 1.5).unwrap();
        for _ in 0..25 {
            let n = 3 + (rng.random::<u32>() % 8) as usize;
            let k = 1 + (rng.random::<u32>() % (n as u32 - 1)) as usize;
            let space = StateSpace::full(n, k).unwrap();
            let h = DVector::from_fn(n, |_, _| normal.sample(&mut rng));
            let mu = product_measure(&h, &space).unwrap();
            let mom = moments(&mu, &space);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert!(mom.covariance[(i, j)] <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn product_variance_bound_for_zero_sum_directions() {
        let mut rng = crate::rng::stream(31, "test.ising.varbd");
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..25 {
            let n = 4 + (rng.random::<u32>() % 7) as usize;
            let k = 1 + (rng.random::<u32>() % (n as u32 - 1)) as usize;
            let space = StateSpace::full(n, k).unwrap();
            let h = DVector::from_fn(n, |_, _| 1.5 * normal.sample(&mut rng));
            let mu = product_measure(&h, &space).unwrap();
            let mut f = DVector::from_fn(n, |_, _| normal.sample(&mut rng));
            let mean = f.mean();
            f.add_scalar_mut(-mean);
            let fx: Vec<f64> = space
                .masks()
                .iter()
                .map(|&mask| {
                    (0..n)
                        .map(|i| f[i] * if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                        .sum()
                })
                .collect();
            assert!(mu.variance(&fx) <= 2.0 * f.norm_squared() + 1e-12);
        }
    }

    #[test]
    fn canonical_variance_bound_below_half_beta() {
        let mut rng = crate::rng::stream(37, "test.ising.lemma-var");
        let normal = Normal::new(0.0, 1.0).unwrap();
        for beta in [0.1, 0.3] {
            for _ in 0..10 {
                let g = Graph::cycle(8);
                let c = Coupling::from_graph(&g).unwrap();
                let h = DVector::from_fn(8, |_, _| normal.sample(&mut rng));
                // normal-form coupling, plain beta
                let model = CanonicalModel::new(
                    Coupling::new(c.normalised().clone()).unwrap(),
                    beta,
                    h,
                    0.0,
                )
                .unwrap();
                let space = model.space().unwrap();
                let mu = model.measure(&space).unwrap();
                let mut f = DVector::from_fn(8, |_, _| normal.sample(&mut rng));
                let mean = f.mean();
                f.add_scalar_mut(-mean);
                let fx: Vec<f64> = space
                    .masks()
                    .iter()
                    .map(|&mask| {
                        (0..8)
                            .map(|i| f[i] * if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                            .sum()
                    })
                    .collect();
                let bound = f.norm_squared() / (0.5 - beta);
                assert!(mu.variance(&fx) <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn spectral_condition_examples() {
        let k4 = Coupling::from_graph(&Graph::complete(4)).unwrap();
        for beta in [0.1, 1.0, 10.0] {
            let rep = check_sc(&k4, beta);
            assert!(rep.holds);
            assert_abs_diff_eq!(rep.m_beta.unwrap(), 1.0, epsilon = 1e-12);
        }
        let c4 = Coupling::from_graph(&Graph::cycle(4)).unwrap();
        let rep = check_sc(&c4, 0.2);
        assert!(rep.holds);
        assert_abs_diff_eq!(rep.m_beta.unwrap(), 5.0, epsilon = 1e-12);
        let fail = check_sc(&c4, 0.3); // 2·0.3·2 = 1.2 >= 1
        assert!(!fail.holds);
        assert!(fail.m_beta.is_none());
    }

    #[test]
    fn two_site_chi_search_finds_closed_form_peak() {
        // N=2, m=0: cov is rank one with lambda_max = 8p(1-p) <= 2,
        // maximised at h1 = h2; the quadratic part is constant so the
        // temperature is irrelevant.
        let c = Coupling::from_graph(&Graph::complete(2)).unwrap();
        let space = StateSpace::from_magnetisation(2, 0.0).unwrap();
        let budget = SearchBudget {
            restarts: 8,
            max_steps: 100,
        };
        let (chi, _) = sup_cov_eigenvalue(
            c.raw(),
            0.3,
            &space,
            budget,
            crate::rng::stream(5, "test.chi2"),
        )
        .unwrap();
        assert_abs_diff_eq!(chi, 2.0, epsilon = 1e-6);

        let rep = check_cc(&c, &[0.1, 0.2], 2, 0.0, budget, 5).unwrap();
        assert!(rep.holds);
        assert!(rep.lower_estimate);
        assert_abs_diff_eq!(rep.m_beta.unwrap(), (0.4f64).exp(), epsilon = 1e-5);
    }

    #[test]
    fn chi_search_respects_paper_bounds() {
        // beta = 0: chi <= 2 for conditioned products
        let c = Coupling::from_graph(&Graph::cycle(4)).unwrap();
        let space = StateSpace::from_magnetisation(4, 0.0).unwrap();
        let budget = SearchBudget {
            restarts: 8,
            max_steps: 80,
        };
        let (chi0, _) = sup_cov_eigenvalue(
            c.raw(),
            0.0,
            &space,
            budget,
            crate::rng::stream(9, "test.chi0"),
        )
        .unwrap();
        assert!(chi0 <= 2.0 + 1e-9, "chi0 = {chi0}");
        // t < 1/2 with the normal form: chi(t) <= 2/(1-2t)
        let cn = Coupling::new(c.normalised().clone()).unwrap();
        let t = 0.3;
        let (chit, _) = sup_cov_eigenvalue(
            cn.raw(),
            t,
            &space,
            budget,
            crate::rng::stream(10, "test.chit"),
        )
        .unwrap();
        assert!(chit <= 2.0 / (1.0 - 2.0 * t) + 1e-6, "chi({t}) = {chit}");
    }
}
