//! Matroid bases — uniform, graphic, and explicit — with pairwise-perturbed
//! measures on them, the basis down-up walk, and generating polynomials.
//!
//! The perturbation μ(ω) ∝ Π_{e≠f}(1 + ε_ef ω_e ω_f) π(ω) is mapped exactly
//! onto Ising form through (1+ε)^{ω_e ω_f} = 1 + ε ω_e ω_f (the exponent is
//! 0/1-valued), giving βA_ef = −½ log(1+ε_ef) and an induced field; from
//! there the usual normal-form constants apply on the bases support.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{zero_sum_projector, Coupling};
use crate::dynamics::{Generator, RateKernel};
use crate::error::{Error, Result};
use crate::funcineq::{mlsi_search, SearchBracket};
use crate::graph::Graph;
use crate::ising::{Measure, SearchBudget};
use crate::space::StateSpace;

/// Exhaustive basis enumeration is limited to graphic matroids this size.
const GRAPHIC_EDGE_CAP: usize = 12;
/// Required agreement between the product-form and Ising-form weights.
const AGREEMENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum MatroidKind {
    Uniform { k: usize },
    Graphic { graph: Graph },
    Explicit { bases: Vec<u64> },
}

/// Basis oracle over a ground set of `ground` elements: membership tests,
/// exchange sets, and exhaustive enumeration.
#[derive(Clone, Debug)]
pub struct MatroidOracle {
    ground: usize,
    rank: usize,
    kind: MatroidKind,
}

fn uf_root(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

impl MatroidOracle {
    /// Uniform matroid U(n, k): every k-subset is a basis.
    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        if n == 0 || n > 63 {
            return Err(Error::parameter(format!(
                "ground set must have 1..=63 elements, got {n}"
            )));
        }
        if k == 0 || k > n {
            return Err(Error::parameter(format!(
                "uniform matroid rank must be in 1..={n}, got {k}"
            )));
        }
        Ok(MatroidOracle {
            ground: n,
            rank: k,
            kind: MatroidKind::Uniform { k },
        })
    }

    /// Graphic matroid of a graph: ground set = edges in the graph's edge
    /// order, bases = maximal spanning forests.
    pub fn graphic(graph: Graph) -> Result<Self> {
        let e = graph.n_edges();
        if e == 0 || e > 63 {
            return Err(Error::parameter(format!(
                "graphic matroid needs 1..=63 edges, got {e}"
            )));
        }
        let rank = graph.n() - graph.component_count();
        if rank == 0 {
            return Err(Error::Model("graph has no spanning forest edges".into()));
        }
        Ok(MatroidOracle {
            ground: e,
            rank,
            kind: MatroidKind::Graphic { graph },
        })
    }

    /// Explicit basis list. Validates equicardinality and the basis exchange
    /// property exhaustively.
    pub fn explicit(ground: usize, bases: Vec<u64>) -> Result<Self> {
        if ground == 0 || ground > 63 {
            return Err(Error::parameter(format!(
                "ground set must have 1..=63 elements, got {ground}"
            )));
        }
        let mut bases = bases;
        bases.sort_unstable();
        bases.dedup();
        if bases.is_empty() {
            return Err(Error::parameter("explicit matroid needs at least one basis"));
        }
        let limit = if ground == 63 {
            u64::MAX >> 1
        } else {
            (1u64 << ground) - 1
        };
        if bases.iter().any(|&b| b > limit) {
            return Err(Error::parameter("basis mask has bits above the ground set"));
        }
        let rank = bases[0].count_ones() as usize;
        if bases.iter().any(|b| b.count_ones() as usize != rank) {
            return Err(Error::Model("bases are not equicardinal".into()));
        }
        let oracle = MatroidOracle {
            ground,
            rank,
            kind: MatroidKind::Explicit {
                bases: bases.clone(),
            },
        };
        oracle.verify_exchange_property(&bases)?;
        Ok(oracle)
    }

    pub fn ground_size(&self) -> usize {
        self.ground
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kind(&self) -> &MatroidKind {
        &self.kind
    }

    /// Membership test: is the subset a basis?
    pub fn is_basis(&self, subset: u64) -> bool {
        if subset.count_ones() as usize != self.rank {
            return false;
        }
        match &self.kind {
            MatroidKind::Uniform { .. } => true,
            MatroidKind::Explicit { bases } => bases.binary_search(&subset).is_ok(),
            MatroidKind::Graphic { graph } => {
                // acyclic with rank = n − components edges ⇒ maximal forest
                let mut parent: Vec<usize> = (0..graph.n()).collect();
                for (e, &(u, v)) in graph.edges().iter().enumerate() {
                    if (subset >> e) & 1 == 0 {
                        continue;
                    }
                    let (a, b) = (
                        uf_root(&mut parent, u as usize),
                        uf_root(&mut parent, v as usize),
                    );
                    if a == b {
                        return false;
                    }
                    parent[a] = b;
                }
                true
            }
        }
    }

    /// Exchange set J_a(B): elements b (including a itself) with B∖{a}∪{b}
    /// a basis. Graphic matroids answer through union-find on B∖{a}; the
    /// others scan the ground set with the membership test.
    pub fn exchange_set(&self, basis: u64, a: usize) -> Result<Vec<usize>> {
        if a >= self.ground {
            return Err(Error::parameter(format!(
                "element {a} out of range for {} ground elements",
                self.ground
            )));
        }
        if (basis >> a) & 1 == 0 {
            return Err(Error::parameter(format!("element {a} is not in the basis")));
        }
        if !self.is_basis(basis) {
            return Err(Error::Model(format!("{basis:#x} is not a basis")));
        }
        match &self.kind {
            MatroidKind::Uniform { .. } => {
                let mut j = vec![a];
                for b in 0..self.ground {
                    if (basis >> b) & 1 == 0 {
                        j.push(b);
                    }
                }
                j.sort_unstable();
                Ok(j)
            }
            MatroidKind::Graphic { graph } => {
                let mut parent: Vec<usize> = (0..graph.n()).collect();
                for (e, &(u, v)) in graph.edges().iter().enumerate() {
                    if e != a && (basis >> e) & 1 == 1 {
                        let (x, y) = (
                            uf_root(&mut parent, u as usize),
                            uf_root(&mut parent, v as usize),
                        );
                        parent[x] = y;
                    }
                }
                let mut j = Vec::new();
                for (e, &(u, v)) in graph.edges().iter().enumerate() {
                    if e != a && (basis >> e) & 1 == 1 {
                        continue;
                    }
                    if uf_root(&mut parent, u as usize) != uf_root(&mut parent, v as usize) {
                        j.push(e);
                    }
                }
                Ok(j)
            }
            MatroidKind::Explicit { .. } => {
                let stripped = basis & !(1u64 << a);
                let mut j = Vec::new();
                for b in 0..self.ground {
                    if (stripped >> b) & 1 == 1 {
                        continue;
                    }
                    if self.is_basis(stripped | (1u64 << b)) {
                        j.push(b);
                    }
                }
                Ok(j)
            }
        }
    }

    /// Basis exchange property over an enumerated list: for every pair
    /// B₁ ≠ B₂ and every a ∈ B₁∖B₂ there is b ∈ B₂∖B₁ with B₁∖{a}∪{b} a
    /// basis. Trivial for uniform matroids, checked exhaustively otherwise.
    fn verify_exchange_property(&self, bases: &[u64]) -> Result<()> {
        if matches!(self.kind, MatroidKind::Uniform { .. }) {
            return Ok(());
        }
        bases
            .par_iter()
            .try_for_each(|&b1| {
                for &b2 in bases {
                    if b1 == b2 {
                        continue;
                    }
                    let only1 = b1 & !b2;
                    let only2 = b2 & !b1;
                    for a in 0..self.ground {
                        if (only1 >> a) & 1 == 0 {
                            continue;
                        }
                        let stripped = b1 & !(1u64 << a);
                        let ok = (0..self.ground).any(|b| {
                            (only2 >> b) & 1 == 1 && self.is_basis(stripped | (1u64 << b))
                        });
                        if !ok {
                            return Err(Error::Model(format!(
                                "basis exchange fails for {b1:#x} → {b2:#x} removing {a}"
                            )));
                        }
                    }
                }
                Ok(())
            })
    }

    /// Enumerates all bases as a state space over the ground set. Graphic
    /// matroids are capped at 12 edges and cross-checked against the
    /// matrix-tree determinant; graphic and explicit instances get the
    /// exchange property verified exhaustively.
    pub fn enumerate_bases(&self) -> Result<StateSpace> {
        match &self.kind {
            MatroidKind::Uniform { k } => StateSpace::full(self.ground, *k),
            MatroidKind::Explicit { bases } => StateSpace::with_support(self.ground, bases.clone()),
            MatroidKind::Graphic { graph } => {
                if self.ground > GRAPHIC_EDGE_CAP {
                    return Err(Error::Capacity(format!(
                        "exhaustive enumeration is limited to {GRAPHIC_EDGE_CAP} edges, got {}",
                        self.ground
                    )));
                }
                let all = StateSpace::full(self.ground, self.rank)?;
                let bases: Vec<u64> = all
                    .masks()
                    .iter()
                    .copied()
                    .filter(|&m| self.is_basis(m))
                    .collect();
                if bases.is_empty() {
                    return Err(Error::Model("graph has no spanning forest".into()));
                }
                if graph.is_connected() {
                    let det = spanning_tree_count(graph)?;
                    if det != bases.len() as u64 {
                        return Err(Error::Numerical(format!(
                            "enumerated {} spanning trees but the determinant gives {det}",
                            bases.len()
                        )));
                    }
                }
                self.verify_exchange_property(&bases)?;
                StateSpace::with_support(self.ground, bases)
            }
        }
    }
}

/// Spanning-tree count by the matrix-tree theorem: integer determinant of a
/// reduced Laplacian via fraction-free (Bareiss) elimination in i128.
pub fn spanning_tree_count(g: &Graph) -> Result<u64> {
    let n = g.n();
    if n == 0 {
        return Err(Error::parameter("empty graph"));
    }
    if n == 1 {
        return Ok(1);
    }
    let m = n - 1;
    let mut a = vec![vec![0i128; m]; m];
    for i in 0..m {
        a[i][i] = g.degree(i) as i128;
    }
    for &(u, v) in g.edges() {
        let (u, v) = (u as usize, v as usize);
        if u < m && v < m {
            a[u][v] -= 1;
            a[v][u] -= 1;
        }
    }
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..m {
        if a[k][k] == 0 {
            let Some(swap) = (k + 1..m).find(|&r| a[r][k] != 0) else {
                return Ok(0);
            };
            a.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..m {
            for j in k + 1..m {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    let det = sign * a[m - 1][m - 1];
    if det < 0 {
        return Err(Error::Numerical(
            "matrix-tree determinant came out negative".into(),
        ));
    }
    u64::try_from(det).map_err(|_| Error::Capacity("spanning-tree count exceeds u64".into()))
}

/// Equivalent Ising-form parameters of a pairwise perturbation. The pair sum
/// in the energy runs over unordered pairs, so the log-weight in matrix form
/// is −¼ (σ, coupling σ) + (field, σ).
#[derive(Clone, Debug)]
pub struct IsingForm {
    /// βA with βA_ef = −½ log(1+ε_ef).
    pub coupling: DMatrix<f64>,
    /// ¼ (log(1+ε)) 𝟙 + external field.
    pub field: DVector<f64>,
}

/// Pairwise-perturbed measure on a bases space, with its exact Ising form.
#[derive(Clone, Debug)]
pub struct PerturbedMeasure {
    pub measure: Measure,
    /// ε̄ = max_e Σ_f |ε_ef|.
    pub eps_bar: f64,
    pub ising: IsingForm,
    /// Worst probability gap between product-form and Ising-form weights.
    pub agreement: f64,
}

/// μ(ω) ∝ Π_{{e,f}}(1 + ε_ef ω_e ω_f) e^{(h,σ)} π(ω) on the bases space, the
/// product over unordered pairs, built from the product form and verified
/// against the Ising form to 1e−10.
/// Errors: entries ≤ −1 or a nonzero diagonal → `Domain`; asymmetry → `Model`.
pub fn perturbed_weights(
    space: &StateSpace,
    eps: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<PerturbedMeasure> {
    let e = space.n();
    if eps.nrows() != e || eps.ncols() != e {
        return Err(Error::parameter(format!(
            "perturbation is {}x{}, ground set has {e} elements",
            eps.nrows(),
            eps.ncols()
        )));
    }
    if h.len() != e {
        return Err(Error::parameter("field length does not match the ground set"));
    }
    if (eps - eps.transpose()).abs().max() > 1e-12 {
        return Err(Error::Model("perturbation must be symmetric".into()));
    }
    if eps.iter().any(|&v| v <= -1.0) {
        return Err(Error::Domain("perturbation entries must exceed −1".into()));
    }
    if (0..e).any(|i| eps[(i, i)] != 0.0) {
        return Err(Error::Domain(
            "perturbation diagonal must be zero; use the field for linear terms".into(),
        ));
    }
    let l = eps.map(f64::ln_1p);
    let eps_bar = (0..e)
        .map(|i| (0..e).map(|j| eps[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);

    // product form: Σ_{e<f, both occupied} L_ef, plus the spin field
    let direct: Vec<f64> = (0..space.len())
        .map(|idx| {
            let mask = space.mask(idx);
            let mut lw = 0.0;
            let mut rest = mask;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let mut above = rest;
                while above != 0 {
                    let j = above.trailing_zeros() as usize;
                    above &= above - 1;
                    lw += l[(i, j)];
                }
            }
            lw + h.dot(&space.spin_vector(idx))
        })
        .collect();
    let measure = Measure::from_log_weights(&direct);

    let coupling = l.map(|v| -0.5 * v);
    let ones = DVector::from_element(e, 1.0);
    let field = 0.25 * (&l * &ones) + h;
    let ising_lw: Vec<f64> = (0..space.len())
        .map(|idx| {
            let s = space.spin_vector(idx);
            -0.25 * (&coupling * &s).dot(&s) + field.dot(&s)
        })
        .collect();
    let check = Measure::from_log_weights(&ising_lw);
    let agreement = measure
        .probs()
        .iter()
        .zip(check.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if agreement > AGREEMENT_TOL {
        return Err(Error::Numerical(format!(
            "product and Ising weights disagree by {agreement:.3e}"
        )));
    }
    Ok(PerturbedMeasure {
        measure,
        eps_bar,
        ising: IsingForm { coupling, field },
        agreement,
    })
}

impl PerturbedMeasure {
    /// Coupling/field pair with 𝟙 restored as an exact eigenvector, producing
    /// the same measure on the fixed-cardinality support under the standard
    /// log-weight −½ (σ, Bσ) + (g, σ): half the stored unordered-pair
    /// coupling, projected onto the zero-sum complement, with the field
    /// shifted by the mean spin along the removed direction.
    pub fn canonical_pair(&self, space: &StateSpace) -> Result<(Coupling, DVector<f64>)> {
        let e = space.n();
        let b = 0.5 * &self.ising.coupling;
        let p = zero_sum_projector(e);
        let projected = &p * &b * &p;
        let projected = (&projected + projected.transpose()) * 0.5;
        let mean_spin = (2.0 * space.k() as f64 - e as f64) / e as f64;
        let ones = DVector::from_element(e, 1.0);
        let field = &self.ising.field - mean_spin * (&b * ones);
        Ok((Coupling::new(projected)?, field))
    }
}

/// The down-up walk on a bases space: remove an element uniformly, reinsert
/// from the conditional measure. On a bases support the admissible
/// reinsertions are exactly the matroid exchange sets, so this is the plain
/// down-up kernel on the enumerated support.
pub fn downup_on_bases<'a>(space: &'a StateSpace, measure: &'a Measure) -> RateKernel<'a> {
    RateKernel::down_up(space, measure)
}

/// Outcome of testing the perturbed down-up walk against the uniform
/// entropy-contraction constant C(ε̄) = e^{8β_n} M(β_n).
#[derive(Clone, Debug, Serialize)]
pub struct PerturbationCheck {
    pub eps_bar: f64,
    /// Normal-form β of the projected perturbation coupling.
    pub beta_normal: f64,
    pub magnifier: f64,
    /// C(ε̄): the claimed uniform constant in Ent_μ(F) ≤ C · D^{du}(F, log F).
    pub constant: f64,
    /// Smallest D/(2 Ent) ratio the witness search found.
    pub worst_ratio: f64,
    /// 1/(2C): `worst_ratio` must not drop below this.
    pub bound_ratio: f64,
    pub holds: bool,
    pub search_failed: bool,
}

/// Searches for a violation of Ent_μ(F) ≤ C(ε̄) · D^{du}_μ(F, log F) on an
/// enumerated bases space; `holds` means none was found.
pub fn perturbation_mlsi_check(
    space: &StateSpace,
    pm: &PerturbedMeasure,
    budget: &SearchBudget,
    seed: u64,
) -> Result<PerturbationCheck> {
    // β(ε̄) comes from the map βA_ef = −½ log(1+ε_ef) itself, i.e. the stored
    // coupling (twice the standard-convention equivalent).
    let (pair, _) = pm.canonical_pair(space)?;
    let coupling = Coupling::new(pair.raw() * 2.0)?;
    let (beta_normal, magnifier) = if coupling.delta() <= 1e-12 {
        (0.0, 1.0)
    } else {
        (coupling.normalised_beta(1.0), coupling.magnifier(1.0)?)
    };
    let constant = (8.0 * beta_normal).exp() * magnifier;
    let kernel = downup_on_bases(space, &pm.measure);
    let gen = Generator::build(&kernel);
    let bracket: SearchBracket = mlsi_search(&gen, &pm.measure, budget, seed)?;
    let bound_ratio = 1.0 / (2.0 * constant);
    let holds = !bracket.failed && bracket.value >= bound_ratio - 1e-9;
    Ok(PerturbationCheck {
        eps_bar: pm.eps_bar,
        beta_normal,
        magnifier,
        constant,
        worst_ratio: bracket.value,
        bound_ratio,
        holds,
        search_failed: bracket.failed,
    })
}

/// Scales a perturbation template through a grid and reports the
/// entropy-contraction check at each ε̄, stopping early if a scale leaves the
/// admissible region. The largest ε̄ with `holds` is the explored frontier.
pub fn perturbation_frontier(
    space: &StateSpace,
    template: &DMatrix<f64>,
    h: &DVector<f64>,
    scales: &[f64],
    budget: &SearchBudget,
    seed: u64,
) -> Result<Vec<PerturbationCheck>> {
    let mut out = Vec::new();
    for (q, &s) in scales.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::parameter("frontier scales must be positive"));
        }
        let pm = match perturbed_weights(space, &(template * s), h) {
            Ok(pm) => pm,
            Err(Error::Domain(_)) => break,
            Err(err) => return Err(err),
        };
        out.push(perturbation_mlsi_check(
            space,
            &pm,
            budget,
            seed.wrapping_add(q as u64),
        )?);
    }
    Ok(out)
}

/// Basis generating polynomial g(z) = E_π[Π_{e∈B} z_e] at a positive point.
pub fn generating_polynomial(
    space: &StateSpace,
    measure: &Measure,
    z: &DVector<f64>,
) -> Result<f64> {
    if z.len() != space.n() {
        return Err(Error::parameter("evaluation point length does not match"));
    }
    if measure.len() != space.len() {
        return Err(Error::parameter("measure length does not match the space"));
    }
    if z.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain(
            "generating polynomial needs strictly positive coordinates".into(),
        ));
    }
    let mut total = 0.0;
    for idx in 0..space.len() {
        let mut prod = 1.0;
        let mut rest = space.mask(idx);
        while rest != 0 {
            let e = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            prod *= z[e];
        }
        total += measure.prob(idx) * prod;
    }
    Ok(total)
}

/// ∂_i∂_j log g at z = 𝟙 together with its largest eigenvalue.
#[derive(Clone, Debug)]
pub struct LogHessianReport {
    /// In occupation variables: cov(ω) − diag(E[ω]).
    pub hessian: DMatrix<f64>,
    pub max_eigenvalue: f64,
    /// Negative semidefiniteness of the log-Hessian (log-concavity at 𝟙).
    pub log_concave: bool,
}

/// Exact log-Hessian of the generating polynomial at 𝟙.
pub fn log_hessian_at_one(space: &StateSpace, measure: &Measure) -> Result<LogHessianReport> {
    if measure.len() != space.len() {
        return Err(Error::parameter("measure length does not match the space"));
    }
    let e = space.n();
    let mut mean = vec![0.0f64; e];
    let mut second = DMatrix::zeros(e, e);
    for idx in 0..space.len() {
        let p = measure.prob(idx);
        let mask = space.mask(idx);
        let mut rest = mask;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            mean[i] += p;
            let mut other = mask;
            while other != 0 {
                let j = other.trailing_zeros() as usize;
                other &= other - 1;
                second[(i, j)] += p;
            }
        }
    }
    let mut hessian = second;
    for i in 0..e {
        for j in 0..e {
            hessian[(i, j)] -= mean[i] * mean[j];
        }
        hessian[(i, i)] -= mean[i];
    }
    let max_eigenvalue = hessian.symmetric_eigenvalues().max();
    Ok(LogHessianReport {
        hessian,
        max_eigenvalue,
        log_concave: max_eigenvalue <= 1e-10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::DecompositionContext;
    use crate::levels::entropic_independence_check;
    use crate::rng;
    use rand::Rng;
    use std::collections::HashSet;

    fn k4_trees() -> (MatroidOracle, StateSpace) {
        let oracle = MatroidOracle::graphic(Graph::complete(4)).unwrap();
        let space = oracle.enumerate_bases().unwrap();
        (oracle, space)
    }

    fn uniform_on(space: &StateSpace) -> Measure {
        Measure::from_log_weights(&vec![0.0; space.len()])
    }

    /// Symmetric zero-diagonal pattern with ε̄ ≤ 0.1 on six elements.
    fn small_eps() -> DMatrix<f64> {
        let mut eps = DMatrix::zeros(6, 6);
        for i in 0..6 {
            for j in i + 1..6 {
                let v = match (i + j) % 3 {
                    0 => 0.02,
                    1 => -0.015,
                    _ => 0.01,
                };
                eps[(i, j)] = v;
                eps[(j, i)] = v;
            }
        }
        eps
    }

    #[test]
    fn uniform_matroid_enumerates_all_subsets() {
        let oracle = MatroidOracle::uniform(4, 2).unwrap();
        let space = oracle.enumerate_bases().unwrap();
        assert_eq!(space.len(), 6);
        assert_eq!(space.masks(), StateSpace::full(4, 2).unwrap().masks());
        let j = oracle.exchange_set(0b0011, 0).unwrap();
        assert_eq!(j, vec![0, 2, 3]);
        assert!(oracle.is_basis(0b1010));
        assert!(!oracle.is_basis(0b0111));
    }

    #[test]
    fn spanning_tree_counts_match_matrix_tree() {
        let (_, trees) = k4_trees();
        assert_eq!(trees.len(), 16);
        assert_eq!(spanning_tree_count(&Graph::complete(4)).unwrap(), 16);

        let c4 = MatroidOracle::graphic(Graph::cycle(4)).unwrap();
        assert_eq!(c4.enumerate_bases().unwrap().len(), 4);
        assert_eq!(spanning_tree_count(&Graph::cycle(4)).unwrap(), 4);

        assert_eq!(spanning_tree_count(&Graph::petersen()).unwrap(), 2000);
        let petersen = MatroidOracle::graphic(Graph::petersen()).unwrap();
        assert!(matches!(
            petersen.enumerate_bases(),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn graphic_exchange_sets_match_membership_scan() {
        let (oracle, space) = k4_trees();
        for idx in 0..space.len() {
            let basis = space.mask(idx);
            for a in 0..oracle.ground_size() {
                if (basis >> a) & 1 == 0 {
                    continue;
                }
                let fast = oracle.exchange_set(basis, a).unwrap();
                let stripped = basis & !(1u64 << a);
                let brute: Vec<usize> = (0..oracle.ground_size())
                    .filter(|&b| {
                        (b == a || (basis >> b) & 1 == 0)
                            && oracle.is_basis(stripped | (1u64 << b))
                    })
                    .collect();
                assert_eq!(fast, brute, "basis {basis:#b}, removed {a}");
                assert!(fast.contains(&a));
            }
        }
    }

    #[test]
    fn explicit_oracle_rejects_exchange_violation() {
        let err = MatroidOracle::explicit(4, vec![0b0011, 0b1100]).unwrap_err();
        assert!(matches!(err, Error::Model(_)), "{err}");
        // all 2-subsets form a valid (uniform) exchange structure
        let masks = StateSpace::full(4, 2).unwrap().masks().to_vec();
        let oracle = MatroidOracle::explicit(4, masks).unwrap();
        assert_eq!(oracle.enumerate_bases().unwrap().len(), 6);
    }

    #[test]
    fn zero_perturbation_is_uniform() {
        let (_, space) = k4_trees();
        let pm =
            perturbed_weights(&space, &DMatrix::zeros(6, 6), &DVector::zeros(6)).unwrap();
        assert_eq!(pm.eps_bar, 0.0);
        assert_eq!(pm.agreement, 0.0);
        for idx in 0..space.len() {
            assert!((pm.measure.prob(idx) - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_pair_perturbation_doubles_joint_trees() {
        let (_, space) = k4_trees();
        let mut eps = DMatrix::zeros(6, 6);
        eps[(0, 1)] = 1.0;
        eps[(1, 0)] = 1.0;
        let pm = perturbed_weights(&space, &eps, &DVector::zeros(6)).unwrap();
        // independent expected weights straight from the product formula
        let weights: Vec<f64> = (0..space.len())
            .map(|idx| {
                let m = space.mask(idx);
                if m & 0b11 == 0b11 {
                    2.0
                } else {
                    1.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for idx in 0..space.len() {
            assert!(
                (pm.measure.prob(idx) - weights[idx] / total).abs() < 1e-14,
                "tree {idx}"
            );
        }
        assert!((pm.eps_bar - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ising_map_reproduces_the_product_measure() {
        let (_, space) = k4_trees();
        let eps = small_eps();
        let h = DVector::from_fn(6, |i, _| 0.05 * i as f64 - 0.1);
        let pm = perturbed_weights(&space, &eps, &h).unwrap();
        assert!(pm.agreement <= 1e-12, "agreement {}", pm.agreement);
        let expected_bar: f64 = (0..6)
            .map(|i| (0..6).map(|j| eps[(i, j)].abs()).sum())
            .fold(0.0, f64::max);
        assert!((pm.eps_bar - expected_bar).abs() < 1e-15);

        // canonical pair generates the same measure on the support
        let (coupling, field) = pm.canonical_pair(&space).unwrap();
        let lw: Vec<f64> = (0..space.len())
            .map(|idx| {
                let s = space.spin_vector(idx);
                -0.5 * (coupling.raw() * &s).dot(&s) + field.dot(&s)
            })
            .collect();
        let rebuilt = Measure::from_log_weights(&lw);
        for idx in 0..space.len() {
            assert!((rebuilt.prob(idx) - pm.measure.prob(idx)).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_validation_errors() {
        let (_, space) = k4_trees();
        let mut bad = DMatrix::zeros(6, 6);
        bad[(0, 1)] = -1.5;
        bad[(1, 0)] = -1.5;
        assert!(matches!(
            perturbed_weights(&space, &bad, &DVector::zeros(6)),
            Err(Error::Domain(_))
        ));
        let mut diag = DMatrix::zeros(6, 6);
        diag[(2, 2)] = 0.3;
        assert!(matches!(
            perturbed_weights(&space, &diag, &DVector::zeros(6)),
            Err(Error::Domain(_))
        ));
        let mut asym = DMatrix::zeros(6, 6);
        asym[(0, 1)] = 0.2;
        assert!(matches!(
            perturbed_weights(&space, &asym, &DVector::zeros(6)),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn downup_moves_are_exactly_the_exchange_sets() {
        let (oracle, space) = k4_trees();
        let nu = uniform_on(&space);
        let kernel = downup_on_bases(&space, &nu);
        for idx in 0..space.len() {
            let basis = space.mask(idx);
            let from_kernel: HashSet<(u32, u32, usize)> = kernel
                .moves(idx)
                .into_iter()
                .map(|mv| (mv.i, mv.j, mv.to))
                .collect();
            let mut predicted = HashSet::new();
            for a in 0..oracle.ground_size() {
                if (basis >> a) & 1 == 0 {
                    continue;
                }
                for b in oracle.exchange_set(basis, a).unwrap() {
                    if b == a {
                        continue;
                    }
                    let target = (basis & !(1u64 << a)) | (1u64 << b);
                    let to = space.index_of(target).expect("exchange stays on bases");
                    predicted.insert((a as u32, b as u32, to));
                }
            }
            assert_eq!(from_kernel, predicted, "basis {basis:#b}");
        }
    }

    #[test]
    fn downup_on_trees_is_reversible() {
        let (_, space) = k4_trees();
        let nu = uniform_on(&space);
        let kernel = downup_on_bases(&space, &nu);
        let mut worst = 0.0f64;
        for x in 0..space.len() {
            for mv in kernel.moves(x) {
                let back = kernel
                    .moves(mv.to)
                    .into_iter()
                    .find(|rv| rv.to == x)
                    .expect("reverse move exists");
                worst = worst.max((nu.prob(x) * mv.rate - nu.prob(mv.to) * back.rate).abs());
            }
        }
        assert!(worst < 1e-10, "detailed balance residual {worst}");
    }

    #[test]
    fn entropy_contraction_holds_below_the_tested_frontier() {
        let (_, space) = k4_trees();
        let pm = perturbed_weights(&space, &small_eps(), &DVector::zeros(6)).unwrap();
        assert!(pm.eps_bar <= 0.1);
        let check =
            perturbation_mlsi_check(&space, &pm, &SearchBudget::default(), 7).unwrap();
        assert!(!check.search_failed);
        assert!(check.constant >= 1.0);
        assert!(
            check.holds,
            "worst ratio {} fell below {}",
            check.worst_ratio, check.bound_ratio
        );
    }

    #[test]
    fn frontier_reports_passing_scales() {
        let (_, space) = k4_trees();
        let template = small_eps();
        let grid =
            perturbation_frontier(&space, &template, &DVector::zeros(6), &[0.5, 1.0, 2.0],
                &SearchBudget { restarts: 8, max_steps: 120 }, 3)
                .unwrap();
        assert_eq!(grid.len(), 3);
        for check in grid.iter().filter(|c| c.eps_bar <= 0.1) {
            assert!(check.holds, "ε̄ = {} should pass", check.eps_bar);
        }
        assert!(grid[0].eps_bar < grid[1].eps_bar);
    }

    #[test]
    fn comparison_factor_bound_extends_to_bases_support() {
        let (_, space) = k4_trees();
        let pm = perturbed_weights(&space, &small_eps(), &DVector::zeros(6)).unwrap();
        let (coupling, field) = pm.canonical_pair(&space).unwrap();
        let beta_n = coupling.normalised_beta(1.0);
        let ctx = DecompositionContext::new(coupling.normalised().clone(), beta_n).unwrap();
        let worst = ctx.comparison_factor_max(&space, &field).unwrap();
        assert!(
            worst <= (8.0 * beta_n).exp() + 1e-9,
            "K = {worst} exceeds e^(8β) = {}",
            (8.0 * beta_n).exp()
        );
    }

    #[test]
    fn generating_polynomial_normalises_and_is_log_concave() {
        let (_, space) = k4_trees();
        let nu = uniform_on(&space);
        let ones = DVector::from_element(6, 1.0);
        assert!((generating_polynomial(&space, &nu, &ones).unwrap() - 1.0).abs() < 1e-14);
        let mut zero = ones.clone();
        zero[2] = 0.0;
        assert!(matches!(
            generating_polynomial(&space, &nu, &zero),
            Err(Error::Domain(_))
        ));

        let trees = log_hessian_at_one(&space, &nu).unwrap();
        assert!(trees.log_concave, "max eigenvalue {}", trees.max_eigenvalue);

        let u = MatroidOracle::uniform(4, 2).unwrap().enumerate_bases().unwrap();
        let report = log_hessian_at_one(&u, &uniform_on(&u)).unwrap();
        assert!(report.log_concave, "max eigenvalue {}", report.max_eigenvalue);
    }

    #[test]
    fn linear_statistics_obey_the_factor_four_bound() {
        let (_, space) = k4_trees();
        let nu = uniform_on(&space);
        let mut r = rng::stream(5, "matroid.var");
        for _ in 0..50 {
            let f: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let norm_sq: f64 = f.iter().map(|v| v * v).sum();
            let obs: Vec<f64> = (0..space.len())
                .map(|idx| {
                    let s = space.spin_vector(idx);
                    f.iter().zip(s.iter()).map(|(a, b)| a * b).sum()
                })
                .collect();
            assert!(nu.variance(&obs) <= 4.0 * norm_sq + 1e-12);
        }
    }

    #[test]
    fn entropic_independence_on_spanning_trees() {
        let (_, space) = k4_trees();
        let pi = uniform_on(&space);
        let mut r = rng::stream(9, "matroid.ei");
        for _ in 0..20 {
            let raw: Vec<f64> = (0..space.len()).map(|_| r.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mu: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let check = entropic_independence_check(&space, &pi, &mu).unwrap();
            assert!(check.holds, "lhs {} rhs {}", check.lhs, check.rhs);
        }
    }
}
