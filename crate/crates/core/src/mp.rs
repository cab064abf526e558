//! Comparison of exchange Dirichlet forms.
//!
//! The central object is the quadratic form F ↦ Σ_{(i,j)∈S} E_ν[(∇_ij F)²]
//! attached to a set S of exchange pairs, where ∇_ij F(σ) = F(σ) − F(σ^{ij}).
//! On enumerable spaces the optimal constant between two such forms is a
//! generalized eigenvalue and is computed exactly, together with a witness
//! function that achieves it. On geometries too large to enumerate the module
//! falls back to path censuses: route every pair through a canonical path,
//! record the worst edge load, and multiply by a constant calibrated once per
//! model class from an exact small-instance comparison.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::zero_sum_basis;
use crate::error::{Error, Result};
use crate::graph::{geodesic_paths, regular_congestion_bound, Graph};
use crate::ising::Measure;
use crate::space::StateSpace;

/// Largest site count admitted by the exact lattice census.
const CENSUS_SITE_CAP: usize = 4096;
/// Relative eigenvalue cutoff separating the kernel of a restricted form.
const KERNEL_TOL: f64 = 1e-10;
/// Relative tolerance for "the full form vanishes on the restricted kernel".
const KERNEL_LEAK_TOL: f64 = 1e-8;

/// Gibbs measure ν(σ) ∝ exp(−β/2 (σ, Aσ) + (h, σ)) on an enumerated space.
///
/// Unlike the normal-form constructors this accepts any symmetric coupling;
/// everything here is exact enumeration, so no spectral preconditioning is
/// needed.
pub fn gibbs_measure(
    space: &StateSpace,
    coupling: &DMatrix<f64>,
    beta: f64,
    h: &DVector<f64>,
) -> Result<Measure> {
    let n = space.n();
    if coupling.nrows() != n || coupling.ncols() != n {
        return Err(Error::parameter(format!(
            "coupling is {}x{}, space has {} sites",
            coupling.nrows(),
            coupling.ncols(),
            n
        )));
    }
    if h.len() != n {
        return Err(Error::parameter("field length does not match site count"));
    }
    if !beta.is_finite() {
        return Err(Error::parameter("beta must be finite"));
    }
    let asym = (coupling - coupling.transpose()).abs().max();
    if asym > 1e-12 {
        return Err(Error::Model(format!(
            "coupling asymmetry {asym:.3e} exceeds 1e-12"
        )));
    }
    let lw: Vec<f64> = (0..space.len())
        .map(|idx| {
            let s = space.spin_vector(idx);
            -0.5 * beta * (coupling * &s).dot(&s) + h.dot(&s)
        })
        .collect();
    Ok(Measure::from_log_weights(&lw))
}

fn check_pairs(space: &StateSpace, pairs: &[(usize, usize)]) -> Result<()> {
    let n = space.n();
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(Error::parameter(format!(
                "exchange pair ({i},{j}) out of range for {n} sites"
            )));
        }
        if i == j {
            return Err(Error::parameter(format!("degenerate exchange pair ({i},{i})")));
        }
    }
    Ok(())
}

/// Index of σ^{ij} in the space, or None when the exchange is trivial
/// (equal spins) or leaves a restricted-support space.
fn exchange_target(space: &StateSpace, idx: usize, i: usize, j: usize) -> Option<usize> {
    let mask = space.mask(idx);
    if (mask >> i) & 1 == (mask >> j) & 1 {
        return None;
    }
    space.index_of(mask ^ (1 << i) ^ (1 << j))
}

/// Dense matrix M of the form F ↦ Σ_{(i,j)∈pairs} E_ν[(∇_ij F)²] = FᵀMF.
pub fn exchange_form(
    space: &StateSpace,
    measure: &Measure,
    pairs: &[(usize, usize)],
) -> Result<DMatrix<f64>> {
    check_pairs(space, pairs)?;
    if measure.len() != space.len() {
        return Err(Error::parameter("measure length does not match state space"));
    }
    let len = space.len();
    let mut m = DMatrix::zeros(len, len);
    for &(i, j) in pairs {
        for q in 0..len {
            let Some(r) = exchange_target(space, q, i, j) else {
                continue;
            };
            let w = measure.prob(q);
            m[(q, q)] += w;
            m[(r, r)] += w;
            m[(q, r)] -= w;
            m[(r, q)] -= w;
        }
    }
    Ok(m)
}

/// Σ_{(i,j)∈pairs} E_ν[(∇_ij F)²] evaluated directly, without building M.
pub fn evaluate_form(
    space: &StateSpace,
    measure: &Measure,
    pairs: &[(usize, usize)],
    f: &[f64],
) -> Result<f64> {
    check_pairs(space, pairs)?;
    if measure.len() != space.len() || f.len() != space.len() {
        return Err(Error::parameter(
            "measure or observable length does not match state space",
        ));
    }
    let mut total = 0.0;
    for &(i, j) in pairs {
        for q in 0..space.len() {
            if let Some(r) = exchange_target(space, q, i, j) {
                let d = f[q] - f[r];
                total += measure.prob(q) * d * d;
            }
        }
    }
    Ok(total)
}

fn uf_find(parent: &mut [usize], x: usize) -> usize {
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

/// Whether the exchange pairs connect every pair of states.
fn connected_under(space: &StateSpace, pairs: &[(usize, usize)]) -> bool {
    let len = space.len();
    let mut parent: Vec<usize> = (0..len).collect();
    for &(i, j) in pairs {
        for q in 0..len {
            if let Some(r) = exchange_target(space, q, i, j) {
                let (a, b) = (uf_find(&mut parent, q), uf_find(&mut parent, r));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let root = uf_find(&mut parent, 0);
    (1..len).all(|q| uf_find(&mut parent, q) == root)
}

/// Optimal constant between two exchange forms, with the function achieving it.
#[derive(Clone, Debug, Serialize)]
pub struct ExactComparison {
    /// Largest generalized eigenvalue sup_F full(F)/restricted(F).
    pub constant: f64,
    /// Maximiser, sup-normalised; evaluating both forms on it recovers the
    /// constant.
    pub witness: Vec<f64>,
    /// full(witness)/restricted(witness), recomputed from the raw forms as a
    /// cross-check on the eigensolve.
    pub achieved: f64,
}

fn witness_ratio(
    space: &StateSpace,
    measure: &Measure,
    full: &[(usize, usize)],
    restricted: &[(usize, usize)],
    w: &DVector<f64>,
) -> Result<(Vec<f64>, f64)> {
    let sup = w.abs().max();
    if sup <= 0.0 {
        return Err(Error::Numerical("comparison witness vanished".into()));
    }
    let witness: Vec<f64> = w.iter().map(|x| x / sup).collect();
    let num = evaluate_form(space, measure, full, &witness)?;
    let den = evaluate_form(space, measure, restricted, &witness)?;
    if den <= 0.0 {
        return Err(Error::Numerical(
            "restricted form vanished on the comparison witness".into(),
        ));
    }
    Ok((witness, num / den))
}

/// Exact optimal constant C = sup_F full(F)/restricted(F) over non-constant F.
///
/// Requires the restricted pairs to connect the state space, so that the
/// restricted form is positive definite off constants; the generalized
/// eigenproblem is then solved on the zero-sum complement via a Cholesky
/// reduction. Errors: `Model` when the restricted pairs leave the space
/// disconnected.
pub fn exact_comparison(
    space: &StateSpace,
    measure: &Measure,
    full: &[(usize, usize)],
    restricted: &[(usize, usize)],
) -> Result<ExactComparison> {
    if space.len() < 2 {
        return Err(Error::parameter("state space needs at least two states"));
    }
    if !connected_under(space, restricted) {
        return Err(Error::Model(
            "restricted exchange pairs do not connect the state space".into(),
        ));
    }
    let m_full = exchange_form(space, measure, full)?;
    let m_res = exchange_form(space, measure, restricted)?;
    let w = zero_sum_basis(space.len());
    let a_res = w.transpose() * &m_res * &w;
    let a_full = w.transpose() * &m_full * &w;
    let chol = a_res.clone().cholesky().ok_or_else(|| {
        Error::Numerical("restricted form is not positive definite off constants".into())
    })?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&a_full)
        .ok_or_else(|| Error::Numerical("triangular solve failed in form comparison".into()))?;
    let b = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed in form comparison".into()))?;
    let b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();
    let (mut arg, mut best) = (0, f64::NEG_INFINITY);
    for (q, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > best {
            best = ev;
            arg = q;
        }
    }
    let q = eig.eigenvectors.column(arg).into_owned();
    let reduced = l
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::Numerical("triangular solve failed in form comparison".into()))?;
    let (witness, achieved) = witness_ratio(space, measure, full, restricted, &(&w * reduced))?;
    Ok(ExactComparison {
        constant: best,
        witness,
        achieved,
    })
}

/// Optimal constant between two forms when the restricted form has a kernel
/// beyond constants (e.g. exchanges confined to a sub-interval, which cannot
/// change the configuration outside it).
///
/// The restricted form is eigendecomposed, its kernel split off by a relative
/// threshold, and the full form is required to vanish on that kernel — the
/// comparison is meaningless otherwise and violating it is a `Model` error.
pub fn form_ratio(
    space: &StateSpace,
    measure: &Measure,
    full: &[(usize, usize)],
    restricted: &[(usize, usize)],
) -> Result<ExactComparison> {
    let m_full = exchange_form(space, measure, full)?;
    let m_res = exchange_form(space, measure, restricted)?;
    let eig = m_res.symmetric_eigen();
    let lam_max = eig.eigenvalues.max();
    if !(lam_max > 0.0) {
        return Err(Error::Model("restricted form vanishes identically".into()));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&q| eig.eigenvalues[q] > KERNEL_TOL * lam_max)
        .collect();
    let kernel: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&q| eig.eigenvalues[q] <= KERNEL_TOL * lam_max)
        .collect();
    let scale = m_full.abs().max().max(lam_max);
    let mut leak = 0.0f64;
    for &a in &kernel {
        let va = eig.eigenvectors.column(a);
        let mfa = &m_full * va;
        for &b in &kernel {
            leak = leak.max((eig.eigenvectors.column(b).dot(&mfa)).abs());
        }
    }
    if leak > KERNEL_LEAK_TOL * scale {
        return Err(Error::Model(format!(
            "full form leaks {leak:.3e} onto the kernel of the restricted form"
        )));
    }
    let mut u = DMatrix::zeros(space.len(), keep.len());
    for (col, &q) in keep.iter().enumerate() {
        let s = eig.eigenvalues[q].sqrt();
        u.column_mut(col)
            .copy_from(&(eig.eigenvectors.column(q) / s));
    }
    let b = u.transpose() * &m_full * &u;
    let b = (&b + b.transpose()) * 0.5;
    let inner = b.symmetric_eigen();
    let (mut arg, mut best) = (0, f64::NEG_INFINITY);
    for (q, &ev) in inner.eigenvalues.iter().enumerate() {
        if ev > best {
            best = ev;
            arg = q;
        }
    }
    let q = inner.eigenvectors.column(arg);
    let (witness, achieved) = witness_ratio(space, measure, full, restricted, &(&u * q))?;
    Ok(ExactComparison {
        constant: best,
        witness,
        achieved,
    })
}

/// Interaction range of a coupling: largest |i−j| with A_ij ≠ 0 off-diagonal.
pub fn coupling_range(coupling: &DMatrix<f64>) -> usize {
    let mut r = 0;
    for i in 0..coupling.nrows() {
        for j in 0..i {
            if coupling[(i, j)] != 0.0 {
                r = r.max(i - j);
            }
        }
    }
    r
}

/// Outcome of testing one function against an instantiated bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Long-range exchange on an interval bounded through nearest-neighbour ones:
/// E[(∇_ij F)²] ≤ constant · |i−j| · Σ_{k=i}^{j−1} E[(∇_{k,k+1} F)²].
#[derive(Clone, Debug, Serialize)]
pub struct IntervalBound {
    pub i: usize,
    pub j: usize,
    /// constant · |i−j|, the multiplier applied to the nearest-neighbour sum.
    pub multiplier: f64,
    /// Transport route from i to j in hops of at most range+1 sites.
    pub steps: Vec<(usize, usize)>,
}

/// Instantiates the interval bound for the pair (i, j) of an n-site chain
/// whose coupling has the given interaction range. Errors: `Model` when the
/// range does not fit inside the chain (a range violation), `Parameter` for
/// a degenerate or out-of-range pair.
pub fn interval_path_bound(
    n: usize,
    range: usize,
    i: usize,
    j: usize,
    constant: f64,
) -> Result<IntervalBound> {
    if i >= n || j >= n {
        return Err(Error::parameter(format!(
            "pair ({i},{j}) out of range for a {n}-site chain"
        )));
    }
    if i == j {
        return Err(Error::parameter("interval bound needs two distinct sites"));
    }
    if !(constant > 0.0) {
        return Err(Error::parameter("comparison constant must be positive"));
    }
    if range == 0 || range >= n {
        return Err(Error::Model(format!(
            "interaction range {range} violates the {n}-site chain geometry"
        )));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let hop = range + 1;
    let mut steps = Vec::new();
    let mut at = lo;
    while at < hi {
        let next = (at + hop).min(hi);
        steps.push((at, next));
        at = next;
    }
    Ok(IntervalBound {
        i: lo,
        j: hi,
        multiplier: constant * (hi - lo) as f64,
        steps,
    })
}

impl IntervalBound {
    /// Tests the bound on one function under the given measure.
    pub fn check(&self, space: &StateSpace, measure: &Measure, f: &[f64]) -> Result<BoundCheck> {
        let lhs = evaluate_form(space, measure, &[(self.i, self.j)], f)?;
        let nn: Vec<(usize, usize)> = (self.i..self.j).map(|k| (k, k + 1)).collect();
        let rhs = self.multiplier * evaluate_form(space, measure, &nn, f)?;
        Ok(BoundCheck {
            lhs,
            rhs,
            holds: lhs <= rhs * (1.0 + 1e-12) + 1e-12,
        })
    }
}

/// Smallest constant making the interval bound valid on this model:
/// max over pairs of the exact single-pair/nearest-neighbour ratio ÷ |i−j|.
pub fn calibrate_interval(space: &StateSpace, measure: &Measure) -> Result<f64> {
    let n = space.n();
    if n < 2 {
        return Err(Error::parameter("chain needs at least two sites"));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let ratios: Result<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let nn: Vec<(usize, usize)> = (i..j).map(|k| (k, k + 1)).collect();
            let cmp = form_ratio(space, measure, &[(i, j)], &nn)?;
            Ok(cmp.constant / (j - i) as f64)
        })
        .collect();
    ratios?
        .into_iter()
        .reduce(f64::max)
        .ok_or_else(|| Error::parameter("chain needs at least two sites"))
}

/// Worst exact single-pair constant at each separation: entries
/// (ℓ, max over i of sup_F E[(∇_{i,i+ℓ}F)²] / Σ nearest-neighbour terms).
pub fn interval_profile(space: &StateSpace, measure: &Measure) -> Result<Vec<(usize, f64)>> {
    let n = space.n();
    if n < 2 {
        return Err(Error::parameter("chain needs at least two sites"));
    }
    (1..n)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&ell| {
            let mut worst = 0.0f64;
            for i in 0..n - ell {
                let j = i + ell;
                let nn: Vec<(usize, usize)> = (i..j).map(|k| (k, k + 1)).collect();
                let cmp = form_ratio(space, measure, &[(i, j)], &nn)?;
                worst = worst.max(cmp.constant);
            }
            Ok((ell, worst))
        })
        .collect()
}

/// Edge-load census of a path system: every pair routed through its path,
/// each edge on the path charged the full path length.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PathCensus {
    /// Worst edge load max_e Σ_{pairs through e} |path|.
    pub max_load: u64,
    /// An edge attaining it.
    pub argmax_edge: (u32, u32),
    /// Σ over pairs of |path|², i.e. the total load across all edges.
    pub total_load: u64,
    /// Σ over pairs of |path|.
    pub total_path_length: u64,
}

fn edge_index(g: &Graph) -> HashMap<(u32, u32), usize> {
    g.edges()
        .iter()
        .enumerate()
        .map(|(q, &(u, v))| ((u.min(v), u.max(v)), q))
        .collect()
}

fn census_from_loads(g: &Graph, loads: &[u64], total_path_length: u64) -> PathCensus {
    let (mut arg, mut best) = (0usize, 0u64);
    for (q, &load) in loads.iter().enumerate() {
        if load > best {
            best = load;
            arg = q;
        }
    }
    PathCensus {
        max_load: best,
        argmax_edge: g.edges()[arg],
        total_load: loads.iter().sum(),
        total_path_length,
    }
}

/// Census of the coordinate-path routing on the periodic-free cube {0,…,l−1}^d:
/// the pair (s, t) with s < t is routed by adjusting one coordinate axis at a
/// time, lowest axis first. Errors: `Capacity` beyond 4096 sites.
pub fn lattice_census(l: usize, d: usize) -> Result<PathCensus> {
    if l < 2 || d == 0 {
        return Err(Error::parameter("cube needs side ≥ 2 and dimension ≥ 1"));
    }
    let n = l.checked_pow(d as u32).filter(|&n| n <= CENSUS_SITE_CAP);
    let Some(n) = n else {
        return Err(Error::Capacity(format!(
            "lattice census of side {l} dimension {d} exceeds {CENSUS_SITE_CAP} sites"
        )));
    };
    let g = Graph::lattice(l, d);
    let index = edge_index(&g);
    let strides: Vec<usize> = (0..d).map(|c| l.pow(c as u32)).collect();
    let coords = |s: usize| -> Vec<usize> { (0..d).map(|c| (s / strides[c]) % l).collect() };
    let (loads, total_len) = (0..n)
        .into_par_iter()
        .map(|s| {
            let cs = coords(s);
            let mut local = vec![0u64; index.len()];
            let mut len_sum = 0u64;
            for t in s + 1..n {
                let ct = coords(t);
                let dist: usize = cs.iter().zip(&ct).map(|(a, b)| a.abs_diff(*b)).sum();
                len_sum += dist as u64;
                let mut cur = cs.clone();
                for c in 0..d {
                    while cur[c] != ct[c] {
                        let u = (0..d).map(|q| cur[q] * strides[q]).sum::<usize>() as u32;
                        cur[c] = if ct[c] > cur[c] { cur[c] + 1 } else { cur[c] - 1 };
                        let v = (0..d).map(|q| cur[q] * strides[q]).sum::<usize>() as u32;
                        local[index[&(u.min(v), u.max(v))]] += dist as u64;
                    }
                }
            }
            (local, len_sum)
        })
        .reduce(
            || (vec![0u64; index.len()], 0u64),
            |(mut a, la), (b, lb)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                (a, la + lb)
            },
        );
    Ok(census_from_loads(&g, &loads, total_len))
}

/// Census of the lowest-index geodesic routing on an arbitrary connected
/// graph. Recomputes loads from the materialised paths, which must agree
/// exactly with the congestion scan of the graph module.
pub fn graph_census(g: &Graph) -> Result<PathCensus> {
    let ps = geodesic_paths(g)?;
    let index = edge_index(g);
    let n = g.n();
    let (loads, total_len) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut local = vec![0u64; index.len()];
            let mut len_sum = 0u64;
            for j in i + 1..n {
                let path = ps.path(i, j);
                let len = (path.len() - 1) as u64;
                len_sum += len;
                for w in path.windows(2) {
                    let (u, v) = (w[0].min(w[1]), w[0].max(w[1]));
                    local[index[&(u, v)]] += len;
                }
            }
            (local, len_sum)
        })
        .reduce(
            || (vec![0u64; index.len()], 0u64),
            |(mut a, la), (b, lb)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                (a, la + lb)
            },
        );
    Ok(census_from_loads(g, &loads, total_len))
}

/// Geometry a comparison report refers to.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum Geometry {
    Interval { sites: usize },
    Cube { side: usize, dim: usize },
    Graph { sites: usize, edges: usize },
}

/// Outcome of comparing the all-pairs form to the geometry-restricted one.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub geometry: Geometry,
    /// Constant carried from an exact small-instance comparison of the same
    /// model class.
    pub calibration: f64,
    /// Worst edge load of the canonical routing.
    pub max_load: u64,
    /// max_load normalised by the site count.
    pub congestion: f64,
    /// calibration × max_load: the instantiated upper bound on the optimal
    /// comparison constant.
    pub analytic_bound: f64,
    /// Exact optimal constant, when the model was small enough to enumerate.
    pub exact: Option<ExactComparison>,
}

/// Calibration constant of a model class: exact optimal constant of a small
/// instance divided by that instance's worst edge load.
pub fn calibration_constant(exact: &ExactComparison, max_load: u64) -> Result<f64> {
    if max_load == 0 {
        return Err(Error::parameter("calibration instance has no routed load"));
    }
    Ok(exact.constant / max_load as f64)
}

fn all_site_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

fn report_for(
    geometry: Geometry,
    g: &Graph,
    census: PathCensus,
    calibration: f64,
    model: Option<(&StateSpace, &Measure)>,
) -> Result<ComparisonReport> {
    if !(calibration > 0.0) {
        return Err(Error::parameter("calibration constant must be positive"));
    }
    let exact = match model {
        None => None,
        Some((space, measure)) => {
            if space.n() != g.n() {
                return Err(Error::parameter(
                    "state space site count does not match the geometry",
                ));
            }
            let restricted: Vec<(usize, usize)> = g
                .edges()
                .iter()
                .map(|&(u, v)| (u as usize, v as usize))
                .collect();
            Some(exact_comparison(
                space,
                measure,
                &all_site_pairs(space.n()),
                &restricted,
            )?)
        }
    };
    Ok(ComparisonReport {
        geometry,
        calibration,
        max_load: census.max_load,
        congestion: census.max_load as f64 / g.n() as f64,
        analytic_bound: calibration * census.max_load as f64,
        exact,
    })
}

/// All-pairs vs edge-exchange comparison on a connected graph: census-based
/// bound, plus the exact constant when a model on the same sites is supplied.
pub fn graph_path_bound(
    g: &Graph,
    calibration: f64,
    model: Option<(&StateSpace, &Measure)>,
) -> Result<ComparisonReport> {
    let census = graph_census(g)?;
    report_for(
        Geometry::Graph {
            sites: g.n(),
            edges: g.n_edges(),
        },
        g,
        census,
        calibration,
        model,
    )
}

/// All-pairs vs nearest-neighbour comparison on the cube {0,…,l−1}^d using
/// the coordinate-path census.
pub fn lattice_path_bound(
    l: usize,
    d: usize,
    calibration: f64,
    model: Option<(&StateSpace, &Measure)>,
) -> Result<ComparisonReport> {
    let census = lattice_census(l, d)?;
    let g = Graph::lattice(l, d);
    report_for(Geometry::Cube { side: l, dim: d }, &g, census, calibration, model)
}

/// Congestion-based relaxation bound of a random regular graph measured
/// against log⁴ n.
pub fn log4_ratio(n: usize, degree: usize, diameter: u32) -> Result<f64> {
    if n < 3 {
        return Err(Error::parameter("need at least three vertices"));
    }
    if degree < 3 {
        return Err(Error::parameter("need degree at least three"));
    }
    let logn = (n as f64).ln();
    Ok(regular_congestion_bound(n, degree, diameter) / logn.powi(4))
}

/// Agreement between conditional laws on an interval and the global measure.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConditionalReport {
    /// Number of distinct outside configurations conditioned on.
    pub groups: usize,
    /// Worst max-norm gap between the conditioned global law and the interval
    /// model rebuilt with the boundary field absorbed into h.
    pub law_residual: f64,
    /// Gap in the tower property for the endpoint-exchange energy, with the
    /// inner expectation taken under the rebuilt conditional laws.
    pub tower_residual: f64,
}

/// Conditions the Gibbs measure on the configuration outside the site
/// interval [lo, hi], rebuilds each conditional law from the interval model
/// with boundary field h_i − β Σ_{j∉I} A_ij σ_j, and cross-checks both the
/// laws and the tower decomposition of E[(∇_{lo,hi} F)²] against global
/// enumeration.
pub fn conditional_check(
    space: &StateSpace,
    coupling: &DMatrix<f64>,
    beta: f64,
    h: &DVector<f64>,
    lo: usize,
    hi: usize,
    f: &[f64],
) -> Result<ConditionalReport> {
    let n = space.n();
    if lo >= hi || hi >= n {
        return Err(Error::parameter(format!(
            "interval [{lo},{hi}] does not fit in {n} sites"
        )));
    }
    if f.len() != space.len() {
        return Err(Error::parameter("observable length does not match state space"));
    }
    let nu = gibbs_measure(space, coupling, beta, h)?;
    let inside: Vec<usize> = (lo..=hi).collect();
    let outside_mask = !inside.iter().fold(0u64, |m, &i| m | (1 << i));

    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for idx in 0..space.len() {
        groups
            .entry(space.mask(idx) & outside_mask)
            .or_default()
            .push(idx);
    }

    let spin = |mask: u64, i: usize| -> f64 {
        if (mask >> i) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    };
    let mut law_residual = 0.0f64;
    let mut tower = 0.0f64;
    for (out, states) in &groups {
        let mass: f64 = states.iter().map(|&q| nu.prob(q)).sum();
        if mass <= 0.0 {
            continue;
        }
        // Boundary field picked up from the frozen outside spins.
        let mut field: Vec<f64> = inside.iter().map(|&i| h[i]).collect();
        for (a, &i) in inside.iter().enumerate() {
            for j in 0..n {
                if (outside_mask >> j) & 1 == 1 {
                    field[a] -= beta * coupling[(i, j)] * spin(*out, j);
                }
            }
        }
        let rebuilt: Vec<f64> = states
            .iter()
            .map(|&q| {
                let mask = space.mask(q);
                let mut lw = 0.0;
                for (a, &i) in inside.iter().enumerate() {
                    lw += field[a] * spin(mask, i);
                }
                for (a, &i) in inside.iter().enumerate() {
                    for &j in &inside[a..] {
                        let w = if i == j { 0.5 } else { 1.0 };
                        lw -= w * beta * coupling[(i, j)] * spin(mask, i) * spin(mask, j);
                    }
                }
                lw
            })
            .collect();
        let shift = rebuilt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = rebuilt.iter().map(|&lw| (lw - shift).exp()).sum();
        let mut cond_energy = 0.0;
        for (pos, &q) in states.iter().enumerate() {
            let p_cond = nu.prob(q) / mass;
            let p_rebuilt = (rebuilt[pos] - shift).exp() / z;
            law_residual = law_residual.max((p_cond - p_rebuilt).abs());
            if let Some(r) = exchange_target(space, q, lo, hi) {
                let d = f[q] - f[r];
                cond_energy += p_rebuilt * d * d;
            }
        }
        tower += mass * cond_energy;
    }
    let lhs = evaluate_form(space, &nu, &[(lo, hi)], f)?;
    Ok(ConditionalReport {
        groups: groups.len(),
        law_residual,
        tower_residual: (lhs - tower).abs(),
    })
}
