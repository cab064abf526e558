//! Conservative spin-exchange dynamics: jump-rate kernels (mean-field
//! standard rates, down-up / up-down walks, nearest-neighbour Kawasaki),
//! exact generators on enumerated spaces, Dirichlet forms, and seeded
//! continuous-time simulation.
//!
//! All kernels act by exchanging a discordant pair σ_i ≠ σ_j, so the
//! magnetisation is conserved pathwise. Every kernel is reversible with
//! respect to its declared measure.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::config::SpinConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ising::Measure;
use crate::rng;
use crate::space::StateSpace;

/// Concrete reversible rate choice for nearest-neighbour exchanges. The two
/// flavours are pointwise within a factor 2 of each other, so constants in
/// any comparison statement are flavour-robust.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavour {
    Metropolis,
    HeatBath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// c(σ, σ^{ij}) = (1/2N)(1 + μ(σ^{ij})/μ(σ)) for every discordant pair.
    Standard,
    /// Particle at i jumps into its admissible fan, weighted by the target
    /// measure: rate μ(σ^{ij}) / Σ_{l ∈ J_i(σ)} μ(σ^{il}), with
    /// J_i = {i} ∪ holes reachable within the support. The normalisation is
    /// per particle (each + spin is updated about once per unit time), not
    /// divided by the particle count.
    DownUp,
    /// Mirror of the down-up walk exchanging the roles of particles and
    /// holes (used when holes are the minority).
    UpDown,
    /// Exchanges restricted to graph edges with flavoured rates.
    Kawasaki(Flavour),
}

/// A single admissible move: exchange sites (i, j), landing on state `to`.
#[derive(Clone, Copy, Debug)]
pub struct Move {
    pub to: usize,
    pub i: u32,
    pub j: u32,
    pub rate: f64,
}

/// Jump rates for a measure on an enumerated space.
pub struct RateKernel<'a> {
    kind: KernelKind,
    space: &'a StateSpace,
    measure: &'a Measure,
    graph: Option<&'a Graph>,
}

impl<'a> RateKernel<'a> {
    pub fn standard(space: &'a StateSpace, measure: &'a Measure) -> Self {
        RateKernel {
            kind: KernelKind::Standard,
            space,
            measure,
            graph: None,
        }
    }

    pub fn down_up(space: &'a StateSpace, measure: &'a Measure) -> Self {
        RateKernel {
            kind: KernelKind::DownUp,
            space,
            measure,
            graph: None,
        }
    }

    pub fn up_down(space: &'a StateSpace, measure: &'a Measure) -> Self {
        RateKernel {
            kind: KernelKind::UpDown,
            space,
            measure,
            graph: None,
        }
    }

    /// Down-up when particles are the minority or balanced (m ≤ 0), up-down
    /// otherwise.
    pub fn exchange_walk(space: &'a StateSpace, measure: &'a Measure) -> Self {
        if 2 * space.k() <= space.n() {
            Self::down_up(space, measure)
        } else {
            Self::up_down(space, measure)
        }
    }

    pub fn kawasaki(
        space: &'a StateSpace,
        measure: &'a Measure,
        graph: &'a Graph,
        flavour: Flavour,
    ) -> Result<Self> {
        if graph.n() != space.n() {
            return Err(Error::parameter("graph size does not match state space"));
        }
        Ok(RateKernel {
            kind: KernelKind::Kawasaki(flavour),
            space,
            measure,
            graph: Some(graph),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn space(&self) -> &StateSpace {
        self.space
    }

    pub fn measure(&self) -> &Measure {
        self.measure
    }

    /// All moves out of state `x` with their generator rates.
    pub fn moves(&self, x: usize) -> Vec<Move> {
        let mask = self.space.mask(x);
        let n = self.space.n();
        match self.kind {
            KernelKind::Standard => {
                let mut out = Vec::new();
                let px = self.measure.prob(x);
                for i in 0..n as u32 {
                    for j in (i + 1)..n as u32 {
                        if (mask >> i & 1) == (mask >> j & 1) {
                            continue;
                        }
                        let y_mask = StateSpace::exchanged(mask, i as usize, j as usize);
                        if let Some(y) = self.space.index_of(y_mask) {
                            let rate =
                                (1.0 + self.measure.prob(y) / px) / (2.0 * n as f64);
                            out.push(Move { to: y, i, j, rate });
                        }
                    }
                }
                out
            }
            KernelKind::DownUp => self.half_walk_moves(x, true),
            KernelKind::UpDown => self.half_walk_moves(x, false),
            KernelKind::Kawasaki(flavour) => {
                let mut out = Vec::new();
                let px = self.measure.prob(x);
                let g = self.graph.expect("kawasaki kernel carries a graph");
                for &(i, j) in g.edges() {
                    if (mask >> i & 1) == (mask >> j & 1) {
                        continue;
                    }
                    let y_mask = StateSpace::exchanged(mask, i as usize, j as usize);
                    if let Some(y) = self.space.index_of(y_mask) {
                        let r = self.measure.prob(y) / px;
                        let rate = match flavour {
                            Flavour::Metropolis => r.min(1.0),
                            Flavour::HeatBath => r / (1.0 + r),
                        };
                        out.push(Move { to: y, i, j, rate });
                    }
                }
                out
            }
        }
    }

    /// Down-up (`from_plus`) or up-down walk moves: every site on the chosen
    /// side jumps within its admissible exchange fan J, weighted by the
    /// target measure. The stay term l = i (σ^{ii} = σ) always contributes
    /// μ(σ) to the denominator.
    fn half_walk_moves(&self, x: usize, from_plus: bool) -> Vec<Move> {
        let mask = self.space.mask(x);
        let n = self.space.n();
        let mut out = Vec::new();
        for i in 0..n as u32 {
            let on_side = (mask >> i & 1 == 1) == from_plus;
            if !on_side {
                continue;
            }
            let mut fan: Vec<(usize, u32)> = Vec::new();
            let mut denom = self.measure.prob(x);
            for j in 0..n as u32 {
                if j == i || ((mask >> j & 1 == 1) == from_plus) {
                    continue;
                }
                let y_mask = StateSpace::exchanged(mask, i as usize, j as usize);
                if let Some(y) = self.space.index_of(y_mask) {
                    denom += self.measure.prob(y);
                    fan.push((y, j));
                }
            }
            for (y, j) in fan {
                let rate = self.measure.prob(y) / denom;
                let (a, b) = if from_plus { (i, j) } else { (j, i) };
                out.push(Move {
                    to: y,
                    i: a,
                    j: b,
                    rate,
                });
            }
        }
        out
    }

    pub fn exit_rate(&self, x: usize) -> f64 {
        self.moves(x).iter().map(|m| m.rate).sum()
    }
}

// ---- exact generators -----------------------------------------------------

/// Sparse generator Q on an enumerated space: off-diagonal rows of moves,
/// diagonal = −(total exit rate).
pub struct Generator {
    rows: Vec<Vec<Move>>,
    exit: Vec<f64>,
    lambda: f64,
}

impl Generator {
    pub fn build(kernel: &RateKernel) -> Generator {
        let n_states = kernel.space().len();
        let mut rows = Vec::with_capacity(n_states);
        let mut exit = Vec::with_capacity(n_states);
        let mut lambda = 0.0f64;
        for x in 0..n_states {
            let mv = kernel.moves(x);
            let e: f64 = mv.iter().map(|m| m.rate).sum();
            lambda = lambda.max(e);
            rows.push(mv);
            exit.push(e);
        }
        Generator { rows, exit, lambda }
    }

    /// Assemble a generator directly from per-state move lists, for chains
    /// that have no enumerated `StateSpace` behind them.
    pub fn from_rows(rows: Vec<Vec<Move>>) -> Generator {
        let mut exit = Vec::with_capacity(rows.len());
        let mut lambda = 0.0f64;
        for row in &rows {
            let e: f64 = row.iter().map(|m| m.rate).sum();
            lambda = lambda.max(e);
            exit.push(e);
        }
        Generator { rows, exit, lambda }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<Move>] {
        &self.rows
    }

    pub fn exit_rates(&self) -> &[f64] {
        &self.exit
    }

    /// Max total exit rate (uniformisation constant).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// (Qf)_x = Σ_y rate(x→y)(f_y − f_x).
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for (x, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for m in row {
                acc += m.rate * (f[m.to] - f[x]);
            }
            out[x] = acc;
        }
        out
    }

    /// Dense matrix form (tests and small exact solves).
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut q = DMatrix::zeros(n, n);
        for (x, row) in self.rows.iter().enumerate() {
            for m in row {
                q[(x, m.to)] += m.rate;
            }
            q[(x, x)] = -self.exit[x];
        }
        q
    }

    /// ½ Σ_x μ(x) Σ_moves rate·(ΔF)(ΔG).
    pub fn dirichlet(&self, mu: &Measure, f: &[f64], g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, row) in self.rows.iter().enumerate() {
            let px = mu.prob(x);
            for m in row {
                acc += px * m.rate * (f[m.to] - f[x]) * (g[m.to] - g[x]);
            }
        }
        0.5 * acc
    }

    /// max_y |(μQ)_y| — zero for a stationary measure.
    pub fn stationarity_residual(&self, mu: &Measure) -> f64 {
        let mut acc = vec![0.0f64; self.n()];
        for (x, row) in self.rows.iter().enumerate() {
            let px = mu.prob(x);
            acc[x] -= px * self.exit[x];
            for m in row {
                acc[m.to] += px * m.rate;
            }
        }
        acc.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// max |μ(x)Q(x,y) − μ(y)Q(y,x)| over transitions.
    pub fn reversibility_residual(&self, mu: &Measure) -> f64 {
        use std::collections::HashMap;
        let mut flow: HashMap<(usize, usize), f64> = HashMap::new();
        for (x, row) in self.rows.iter().enumerate() {
            for m in row {
                *flow.entry((x, m.to)).or_insert(0.0) += mu.prob(x) * m.rate;
            }
        }
        let mut worst = 0.0f64;
        for (&(x, y), &fxy) in &flow {
            let fyx = flow.get(&(y, x)).copied().unwrap_or(0.0);
            worst = worst.max((fxy - fyx).abs());
        }
        worst
    }

    /// Connectivity of the transition graph.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(x) = stack.pop() {
            for m in &self.rows[x] {
                if m.rate > 0.0 && !seen[m.to] {
                    seen[m.to] = true;
                    count += 1;
                    stack.push(m.to);
                }
            }
        }
        count == n
    }
}

/// Dirichlet form straight from a kernel (no generator materialisation):
/// ½ Σ_{σ,σ'} μ(σ) c(σ,σ') (F(σ')−F(σ))(G(σ')−G(σ)); G defaults to F.
pub fn dirichlet_form(
    measure: &Measure,
    kernel: &RateKernel,
    f: &[f64],
    g: Option<&[f64]>,
) -> f64 {
    let g = g.unwrap_or(f);
    let mut acc = 0.0;
    for x in 0..kernel.space().len() {
        let px = measure.prob(x);
        for m in kernel.moves(x) {
            acc += px * m.rate * (f[m.to] - f[x]) * (g[m.to] - g[x]);
        }
    }
    0.5 * acc
}

// ---- continuous-time simulation --------------------------------------------

/// Observables recorded along a trajectory: the overlap with the start
/// configuration is always recorded; an energy (σ, Aσ) needs the coupling;
/// each functional f is recorded as (f, σ).
#[derive(Default)]
pub struct Observables<'b> {
    pub coupling: Option<&'b DMatrix<f64>>,
    pub functionals: &'b [DVector<f64>],
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub overlap: Vec<f64>,
    pub energy: Option<Vec<f64>>,
    pub extras: Vec<Vec<f64>>,
    pub jumps: u64,
    /// Proposed-but-rejected ticks (edge-proposal simulation only).
    pub proposals: u64,
    pub final_state: SpinConfig,
}

fn record_grid(t_max: f64, records: usize) -> Vec<f64> {
    let r = records.max(2);
    (0..r).map(|i| t_max * i as f64 / (r - 1) as f64).collect()
}

/// Event-driven (exact holding-time) simulation of an enumerated kernel.
pub fn run_chain(
    kernel: &RateKernel,
    start_mask: u64,
    t_max: f64,
    records: usize,
    obs: &Observables,
    seed: u64,
) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::parameter(format!("t_max must be positive, got {t_max}")));
    }
    let space = kernel.space();
    let n = space.n();
    let start = space
        .index_of(start_mask)
        .ok_or_else(|| Error::parameter("start configuration not in state space"))?;
    let grid = record_grid(t_max, records);
    let mut rng = rng::stream(seed, "dynamics.run_chain");

    let spin = |mask: u64, i: usize| if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
    let eval = |mask: u64| -> (f64, Option<f64>, Vec<f64>) {
        let sigma = DVector::from_fn(n, |i, _| spin(mask, i));
        let sigma0 = DVector::from_fn(n, |i, _| spin(start_mask, i));
        let overlap = sigma.dot(&sigma0);
        let energy = obs.coupling.map(|a| (a * &sigma).dot(&sigma));
        let extras = obs.functionals.iter().map(|f| f.dot(&sigma)).collect();
        (overlap, energy, extras)
    };

    let mut times = Vec::with_capacity(grid.len());
    let mut overlap = Vec::with_capacity(grid.len());
    let mut energy: Option<Vec<f64>> = obs.coupling.map(|_| Vec::with_capacity(grid.len()));
    let mut extras = vec![Vec::with_capacity(grid.len()); obs.functionals.len()];

    let mut record = |t: f64, mask: u64| {
        let (o, e, xs) = eval(mask);
        times.push(t);
        overlap.push(o);
        if let (Some(store), Some(val)) = (energy.as_mut(), e) {
            store.push(val);
        }
        for (row, v) in extras.iter_mut().zip(xs) {
            row.push(v);
        }
    };

    let mut cache: std::collections::HashMap<usize, (Vec<Move>, f64)> =
        std::collections::HashMap::new();
    let mut x = start;
    let mut t = 0.0f64;
    let mut next_record = 0usize;
    let mut jumps = 0u64;
    loop {
        let (moves, exit) = cache
            .entry(x)
            .or_insert_with(|| {
                let mv = kernel.moves(x);
                let e = mv.iter().map(|m| m.rate).sum();
                (mv, e)
            })
            .clone();
        let dt = if exit > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            e / exit
        } else {
            f64::INFINITY
        };
        let t_next = t + dt;
        while next_record < grid.len() && grid[next_record] <= t_next.min(t_max) {
            record(grid[next_record], space.mask(x));
            next_record += 1;
        }
        if t_next >= t_max || !t_next.is_finite() {
            break;
        }
        // choose a move proportionally to its rate
        let mut u: f64 = rng.random::<f64>() * exit;
        let mut chosen = moves.len() - 1;
        for (idx, m) in moves.iter().enumerate() {
            u -= m.rate;
            if u <= 0.0 {
                chosen = idx;
                break;
            }
        }
        let mv = moves[chosen];
        debug_assert_eq!(
            space.mask(x).count_ones(),
            space.mask(mv.to).count_ones(),
            "exchange must conserve magnetisation"
        );
        x = mv.to;
        t = t_next;
        jumps += 1;
    }
    while next_record < grid.len() {
        record(grid[next_record], space.mask(x));
        next_record += 1;
    }
    Ok(Trajectory {
        times,
        overlap,
        energy,
        extras,
        jumps,
        proposals: 0,
        final_state: SpinConfig::from_mask(n, space.mask(x)),
    })
}

/// Exact Kawasaki simulation without enumeration: every flavoured edge rate
/// is ≤ 1, so uniform edge proposals at Poisson rate |E|, accepted with
/// probability c_e(σ), realise the jump law (thinning). Energy differences
/// use the cached field a = Aσ, refreshed along graph neighbourhoods.
#[allow(clippy::too_many_arguments)]
pub fn run_kawasaki_chain(
    graph: &Graph,
    beta: f64,
    h: &DVector<f64>,
    flavour: Flavour,
    start: &SpinConfig,
    t_max: f64,
    records: usize,
    functionals: &[DVector<f64>],
    seed: u64,
) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::parameter(format!("t_max must be positive, got {t_max}")));
    }
    let n = graph.n();
    if start.n() != n || h.len() != n {
        return Err(Error::parameter("start/h dimensions do not match graph"));
    }
    let mut rng = rng::stream(seed, "dynamics.kawasaki_chain");
    let grid = record_grid(t_max, records);
    let m_edges = graph.n_edges() as f64;

    let mut spins: Vec<f64> = (0..n).map(|i| start.spin(i)).collect();
    let mut a: Vec<f64> = (0..n)
        .map(|v| graph.neighbours(v).iter().map(|&w| spins[w as usize]).sum())
        .collect();
    let mut energy: f64 = (0..n).map(|v| spins[v] * a[v]).sum();
    let mut overlap = n as f64;
    let mut fvals: Vec<f64> = functionals
        .iter()
        .map(|f| (0..n).map(|v| f[v] * spins[v]).sum())
        .collect();

    let mut times = Vec::with_capacity(grid.len());
    let mut overlaps = Vec::with_capacity(grid.len());
    let mut energies = Vec::with_capacity(grid.len());
    let mut extras = vec![Vec::with_capacity(grid.len()); functionals.len()];

    let mut t = 0.0f64;
    let mut next_record = 0usize;
    let mut jumps = 0u64;
    let mut proposals = 0u64;
    loop {
        let e: f64 = Exp1.sample(&mut rng);
        let t_next = t + e / m_edges;
        while next_record < grid.len() && grid[next_record] <= t_next.min(t_max) {
            times.push(grid[next_record]);
            overlaps.push(overlap);
            energies.push(energy);
            for (row, v) in extras.iter_mut().zip(&fvals) {
                row.push(*v);
            }
            next_record += 1;
        }
        if t_next >= t_max {
            break;
        }
        t = t_next;
        proposals += 1;
        let &(u, v) = &graph.edges()[rng.random_range(0..graph.n_edges())];
        let (u, v) = (u as usize, v as usize);
        if spins[u] == spins[v] {
            continue;
        }
        let (i, j) = if spins[u] > 0.0 { (u, v) } else { (v, u) }; // i: plus, j: minus
        // A_ij = 1 on an edge: Δ(σ,Aσ) = −4a_i + 4a_j − 8
        let dquad = -4.0 * a[i] + 4.0 * a[j] - 8.0;
        let dfield = -2.0 * h[i] + 2.0 * h[j];
        let r = (-(beta / 2.0) * dquad + dfield).exp();
        let accept = match flavour {
            Flavour::Metropolis => r.min(1.0),
            Flavour::HeatBath => r / (1.0 + r),
        };
        if rng.random::<f64>() < accept {
            spins[i] = -1.0;
            spins[j] = 1.0;
            for &w in graph.neighbours(i) {
                a[w as usize] -= 2.0;
            }
            for &w in graph.neighbours(j) {
                a[w as usize] += 2.0;
            }
            energy += dquad;
            overlap += -2.0 * start.spin(i) + 2.0 * start.spin(j);
            for (val, f) in fvals.iter_mut().zip(functionals) {
                *val += -2.0 * f[i] + 2.0 * f[j];
            }
            jumps += 1;
        }
    }
    while next_record < grid.len() {
        times.push(grid[next_record]);
        overlaps.push(overlap);
        energies.push(energy);
        for (row, v) in extras.iter_mut().zip(&fvals) {
            row.push(*v);
        }
        next_record += 1;
    }
    let mut final_cfg = SpinConfig::all_minus(n);
    for (v, s) in spins.iter().enumerate() {
        if *s > 0.0 {
            final_cfg.set(v, true);
        }
    }
    Ok(Trajectory {
        times,
        overlap: overlaps,
        energy: Some(energies),
        extras,
        jumps,
        proposals,
        final_state: final_cfg,
    })
}
