//! Interaction graphs: random regular sampling via the pairing model,
//! all-sources BFS (diameters), deterministic geodesic path systems, and
//! exact edge-congestion censuses.
//!
//! Congestion is normalised as `max_e (1/2n) Σ_{i≠j ordered} |γ_ij| 1_{e∈γ_ij}`
//! (each unordered pair counted twice), the quantity that multiplies
//! nearest-neighbour Dirichlet forms in path comparison bounds.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// Simple undirected graph with sorted, deduplicated edge list and CSR-style
/// adjacency (neighbour + edge-id arrays) for traversal work.
#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    nbr: Vec<u32>,
    eid: Vec<u32>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleStats {
    /// Pairing-model attempts consumed (loops/multi-edges cause full restart).
    pub attempts: u32,
    /// Simple graphs discarded because they were disconnected.
    pub connectivity_resamples: u32,
}

/// Exact diameter, or a component count when the graph is disconnected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Diameter {
    Finite(u32),
    Infinite { components: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct CongestionReport {
    /// max_e (1/2n) Σ_{ordered pairs} |γ_ij| 1_{e ∈ γ_ij}
    pub max_congestion: f64,
    /// Edge achieving the maximum.
    pub argmax_edge: (u32, u32),
    /// Total path length Σ_{i<j} |γ_ij| (diagnostic).
    pub total_length: u64,
}

impl Graph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut list: Vec<(u32, u32)> = Vec::new();
        for (a, b) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::parameter(format!(
                    "edge ({a},{b}) outside vertex range 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::parameter(format!("self-loop at vertex {a}")));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        let before = list.len();
        list.dedup();
        if list.len() != before {
            return Err(Error::parameter("parallel edges in input"));
        }
        Ok(Self::from_sorted_simple(n, list))
    }

    fn from_sorted_simple(n: usize, edges: Vec<(u32, u32)>) -> Self {
        let mut deg = vec![0usize; n];
        for &(a, b) in &edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut cursor = offsets.clone();
        let mut nbr = vec![0u32; 2 * edges.len()];
        let mut eid = vec![0u32; 2 * edges.len()];
        for (e, &(a, b)) in edges.iter().enumerate() {
            nbr[cursor[a as usize]] = b;
            eid[cursor[a as usize]] = e as u32;
            cursor[a as usize] += 1;
            nbr[cursor[b as usize]] = a;
            eid[cursor[b as usize]] = e as u32;
            cursor[b as usize] += 1;
        }
        // sort each adjacency slice by neighbour index (deterministic BFS ties)
        for v in 0..n {
            let lo = offsets[v];
            let hi = offsets[v + 1];
            let mut pairs: Vec<(u32, u32)> =
                nbr[lo..hi].iter().copied().zip(eid[lo..hi].iter().copied()).collect();
            pairs.sort_unstable();
            for (t, (w, e)) in pairs.into_iter().enumerate() {
                nbr[lo + t] = w;
                eid[lo + t] = e;
            }
        }
        Graph {
            n,
            edges,
            offsets,
            nbr,
            eid,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbours(&self, v: usize) -> &[u32] {
        &self.nbr[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Uniform degree if the graph is regular.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degree(0);
        (1..self.n).all(|v| self.degree(v) == d).then_some(d)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbours(a).binary_search(&(b as u32)).is_ok()
    }

    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a[(u as usize, v as usize)] = 1.0;
            a[(v as usize, u as usize)] = 1.0;
        }
        a
    }

    /// y = A x for the adjacency matrix, without materialising it.
    pub fn adjacency_matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for v in 0..self.n {
            let mut acc = 0.0;
            for &w in self.neighbours(v) {
                acc += x[w as usize];
            }
            y[v] = acc;
        }
    }

    // ---- stock constructions -------------------------------------------

    pub fn complete(n: usize) -> Self {
        let edges = (0..n as u32)
            .flat_map(|a| ((a + 1)..n as u32).map(move |b| (a, b)))
            .collect();
        Self::from_sorted_simple(n, edges)
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3);
        let mut edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|a| (a, a + 1)).collect();
        edges.push((0, n as u32 - 1));
        edges.sort_unstable();
        Self::from_sorted_simple(n, edges)
    }

    /// The path 0 – 1 – … – (n−1) (interval geometry).
    pub fn path(n: usize) -> Self {
        assert!(n >= 2);
        let edges = (0..n as u32 - 1).map(|a| (a, a + 1)).collect();
        Self::from_sorted_simple(n, edges)
    }

    /// Petersen graph (3-regular, n = 10, diameter 2).
    pub fn petersen() -> Self {
        let mut edges = Vec::with_capacity(15);
        for i in 0..5u32 {
            edges.push((i, (i + 1) % 5));
            edges.push((i, i + 5));
            edges.push((5 + i, 5 + (i + 2) % 5));
        }
        Self::from_edges(10, edges).unwrap()
    }

    /// Cube [0,L)^d with nearest-neighbour edges, site index Σ x_t L^t.
    pub fn lattice(l: usize, d: usize) -> Self {
        assert!(l >= 2 && d >= 1);
        let n = l.pow(d as u32);
        let mut edges = Vec::new();
        for site in 0..n {
            let mut rem = site;
            let mut stride = 1;
            for _ in 0..d {
                let x = rem % l;
                if x + 1 < l {
                    edges.push((site as u32, (site + stride) as u32));
                }
                rem /= l;
                stride *= l;
            }
        }
        edges.sort_unstable();
        Self::from_sorted_simple(n, edges)
    }

    // ---- traversal ------------------------------------------------------

    /// BFS distances from `src` (u32::MAX = unreachable).
    pub fn bfs_distances(&self, src: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        dist[src] = 0;
        queue.push_back(src as u32);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v as usize];
            for &w in self.neighbours(v as usize) {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dv + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if !seen[s] {
                count += 1;
                let d = self.bfs_distances(s);
                for v in 0..self.n {
                    if d[v] != u32::MAX {
                        seen[v] = true;
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.bfs_distances(0).iter().all(|&d| d != u32::MAX)
    }

    /// Exact diameter via all-sources BFS.
    pub fn diameter(&self) -> Diameter {
        let mut best = 0u32;
        for s in 0..self.n {
            let dist = self.bfs_distances(s);
            for &d in &dist {
                if d == u32::MAX {
                    return Diameter::Infinite {
                        components: self.component_count(),
                    };
                }
                best = best.max(d);
            }
        }
        Diameter::Finite(best)
    }
}

// ---- random regular sampling ------------------------------------------

/// Pairing/configuration model with full restart on loops and multi-edges,
/// and resampling until connected. Deterministic per seed.
pub fn sample_regular(n: usize, d: usize, seed: u64) -> Result<(Graph, SampleStats)> {
    if n * d % 2 != 0 {
        return Err(Error::parameter(format!(
            "n·d must be even for a {d}-regular graph on {n} vertices"
        )));
    }
    if d < 3 {
        return Err(Error::parameter("degree must be at least 3"));
    }
    if n <= d {
        return Err(Error::parameter(format!("need n > d, got n={n}, d={d}")));
    }
    let mut rng = rng::stream(seed, "graph.sample_regular");
    let mut points: Vec<u32> = (0..(n * d) as u32).collect();
    let mut stats = SampleStats {
        attempts: 0,
        connectivity_resamples: 0,
    };
    const MAX_ATTEMPTS: u32 = 10_000;
    'attempt: loop {
        stats.attempts += 1;
        if stats.attempts > MAX_ATTEMPTS {
            return Err(Error::Sampling(format!(
                "pairing model exhausted {MAX_ATTEMPTS} attempts for (n={n}, d={d})"
            )));
        }
        points.shuffle(&mut rng);
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(n * d / 2);
        for pair in points.chunks_exact(2) {
            let (a, b) = (pair[0] / d as u32, pair[1] / d as u32);
            if a == b {
                continue 'attempt; // loop
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            continue 'attempt; // multi-edge
        }
        let g = Graph::from_sorted_simple(n, edges);
        if !g.is_connected() {
            stats.connectivity_resamples += 1;
            continue 'attempt;
        }
        debug_assert_eq!(g.regular_degree(), Some(d));
        return Ok((g, stats));
    }
}

// ---- geodesic path systems ----------------------------------------------

/// One geodesic per unordered pair: the BFS tree rooted at the smaller
/// endpoint, with parent = lowest-index neighbour one level closer. Stored
/// as parent/distance tables (paths materialise on demand).
pub struct PathSystem {
    n: usize,
    parent: Vec<u32>,
    dist: Vec<u16>,
}

/// Materialisation cap: parent/dist tables are n² entries.
pub const PATH_SYSTEM_CAP: usize = 4096;

pub fn geodesic_paths(g: &Graph) -> Result<PathSystem> {
    if !g.is_connected() {
        return Err(Error::Model("geodesic paths need a connected graph".into()));
    }
    if g.n() > PATH_SYSTEM_CAP {
        return Err(Error::Capacity(format!(
            "path system tables need n <= {PATH_SYSTEM_CAP} (got {}); use congestion_scan",
            g.n()
        )));
    }
    let n = g.n();
    let mut parent = vec![u32::MAX; n * n];
    let mut dist = vec![0u16; n * n];
    for s in 0..n {
        let d = g.bfs_distances(s);
        let row_p = &mut parent[s * n..(s + 1) * n];
        let row_d = &mut dist[s * n..(s + 1) * n];
        for v in 0..n {
            row_d[v] = u16::try_from(d[v]).expect("distance exceeds u16");
            if v != s {
                // adjacency is sorted, so the first match is the lowest index
                row_p[v] = *g
                    .neighbours(v)
                    .iter()
                    .find(|&&w| d[w as usize] + 1 == d[v])
                    .expect("BFS parent must exist");
            }
        }
    }
    Ok(PathSystem { n, parent, dist })
}

impl PathSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dist(&self, i: usize, j: usize) -> usize {
        let (s, v) = (i.min(j), i.max(j));
        self.dist[s * self.n + v] as usize
    }

    /// Vertex sequence from i to j (inclusive), geodesic.
    pub fn path(&self, i: usize, j: usize) -> Vec<u32> {
        let (s, v) = (i.min(j), i.max(j));
        let mut rev = vec![v as u32];
        let mut cur = v;
        while cur != s {
            cur = self.parent[s * self.n + cur] as usize;
            rev.push(cur as u32);
        }
        if s == i {
            rev.reverse();
        }
        rev
    }

    pub fn max_len(&self) -> usize {
        (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |j| self.dist(i, j)))
            .max()
            .unwrap_or(0)
    }
}

/// Exact congestion census of a materialised path system.
pub fn congestion(g: &Graph, ps: &PathSystem) -> Result<CongestionReport> {
    let n = g.n();
    if ps.n() != n {
        return Err(Error::parameter("path system / graph size mismatch"));
    }
    let mut loads = vec![0u64; g.n_edges()];
    let mut total = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let len = ps.dist(i, j) as u64;
            total += len;
            let mut cur = j;
            while cur != i {
                let p = ps.parent[i * n + cur] as usize;
                let e = edge_id(g, p, cur)?;
                loads[e] += len;
                cur = p;
            }
        }
    }
    Ok(report_from_loads(g, &loads, total))
}

/// Same census without materialising paths: per-source subtree aggregation
/// over the deterministic BFS forest (identical loads, any size).
pub fn congestion_scan(g: &Graph) -> Result<CongestionReport> {
    if !g.is_connected() {
        return Err(Error::Model("congestion needs a connected graph".into()));
    }
    let n = g.n();
    let mut loads = vec![0u64; g.n_edges()];
    let mut total = 0u64;
    let mut order: Vec<u32> = Vec::with_capacity(n);
    let mut parent_edge = vec![u32::MAX; n];
    let mut parent = vec![u32::MAX; n];
    let mut acc = vec![0u64; n];
    for s in 0..n {
        let dist = g.bfs_distances(s);
        order.clear();
        order.extend(0..n as u32);
        // deepest vertices first, so children are folded before parents
        order.sort_unstable_by_key(|&v| std::cmp::Reverse(dist[v as usize]));
        for v in 0..n {
            acc[v] = if v > s { dist[v] as u64 } else { 0 };
            total += if v > s { dist[v] as u64 } else { 0 };
            if v != s {
                let lo = g.offsets[v];
                let hi = g.offsets[v + 1];
                let slot = (lo..hi)
                    .find(|&t| dist[g.nbr[t] as usize] + 1 == dist[v])
                    .expect("BFS parent must exist");
                parent[v] = g.nbr[slot];
                parent_edge[v] = g.eid[slot];
            }
        }
        for &v in &order {
            let v = v as usize;
            if v == s {
                continue;
            }
            loads[parent_edge[v] as usize] += acc[v];
            acc[parent[v] as usize] += acc[v];
        }
    }
    Ok(report_from_loads(g, &loads, total))
}

fn edge_id(g: &Graph, a: usize, b: usize) -> Result<usize> {
    let lo = g.offsets[a];
    let hi = g.offsets[a + 1];
    g.nbr[lo..hi]
        .binary_search(&(b as u32))
        .map(|t| g.eid[lo + t] as usize)
        .map_err(|_| Error::Model(format!("path uses non-edge ({a},{b})")))
}

fn report_from_loads(g: &Graph, loads: &[u64], total: u64) -> CongestionReport {
    let (best_e, &best) = loads
        .iter()
        .enumerate()
        .max_by_key(|&(_, &l)| l)
        .expect("graph has no edges");
    CongestionReport {
        max_congestion: best as f64 / g.n() as f64,
        argmax_edge: g.edges[best_e],
        total_length: total,
    }
}

/// Analytic congestion bound D³(d−1)^D / n for a d-regular graph of
/// diameter D (path counting through a fixed edge).
pub fn regular_congestion_bound(n: usize, d: usize, diameter: u32) -> f64 {
    let dd = diameter as f64;
    dd.powi(3) * ((d - 1) as f64).powf(dd) / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_basics() {
        let g = Graph::complete(4);
        assert_eq!(g.n_edges(), 6);
        assert_eq!(g.regular_degree(), Some(3));
        assert_eq!(g.diameter(), Diameter::Finite(1));
    }

    #[test]
    fn petersen_diameter_and_paths() {
        let g = Graph::petersen();
        assert_eq!(g.regular_degree(), Some(3));
        assert_eq!(g.diameter(), Diameter::Finite(2));
        let ps = geodesic_paths(&g).unwrap();
        assert_eq!(ps.max_len(), 2);
        // 45 unordered pairs, every geodesic length <= 2
        for i in 0..10 {
            for j in (i + 1)..10 {
                let p = ps.path(i, j);
                assert_eq!(p.len() - 1, ps.dist(i, j));
                assert_eq!(p[0] as usize, i);
                assert_eq!(*p.last().unwrap() as usize, j);
                for w in p.windows(2) {
                    assert!(g.has_edge(w[0] as usize, w[1] as usize));
                }
            }
        }
    }

    #[test]
    fn four_cycle_tie_break_goes_low() {
        let g = Graph::cycle(4);
        let ps = geodesic_paths(&g).unwrap();
        // antipodal pair (0,2): both 0-1-2 and 0-3-2 are geodesics
        assert_eq!(ps.path(0, 2), vec![0, 1, 2]);
    }

    #[test]
    fn complete_graph_congestion_is_one_over_n() {
        let g = Graph::complete(6);
        let ps = geodesic_paths(&g).unwrap();
        let rep = congestion(&g, &ps).unwrap();
        assert!((rep.max_congestion - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn congestion_scan_matches_census() {
        for g in [Graph::cycle(6), Graph::petersen(), Graph::lattice(3, 2)] {
            let ps = geodesic_paths(&g).unwrap();
            let a = congestion(&g, &ps).unwrap();
            let b = congestion_scan(&g).unwrap();
            assert_eq!(a.total_length, b.total_length);
            assert!((a.max_congestion - b.max_congestion).abs() < 1e-12);
            assert_eq!(a.argmax_edge, b.argmax_edge);
        }
    }

    #[test]
    fn sampler_rejects_bad_parity_and_produces_regular() {
        assert!(sample_regular(5, 3, 1).is_err());
        let (g, stats) = sample_regular(10, 3, 12345).unwrap();
        assert_eq!(g.regular_degree(), Some(3));
        assert!(g.is_connected());
        assert!(stats.attempts >= 1);
        // K4 is the unique 3-regular graph on 4 vertices
        let (k4, _) = sample_regular(4, 3, 99).unwrap();
        assert_eq!(k4.n_edges(), 6);
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let (g1, _) = sample_regular(24, 3, 7).unwrap();
        let (g2, _) = sample_regular(24, 3, 7).unwrap();
        let (g3, _) = sample_regular(24, 3, 8).unwrap();
        assert_eq!(g1.edges(), g2.edges());
        assert_ne!(g1.edges(), g3.edges());
    }

    #[test]
    fn lattice_structure() {
        let g = Graph::lattice(3, 2);
        assert_eq!(g.n(), 9);
        assert_eq!(g.n_edges(), 12);
        assert_eq!(g.diameter(), Diameter::Finite(4));
    }

    #[test]
    fn disconnected_graphs_are_reported() {
        let g = Graph::from_edges(4, [(0u32, 1u32), (2, 3)]).unwrap();
        assert_eq!(g.diameter(), Diameter::Infinite { components: 2 });
        assert!(geodesic_paths(&g).is_err());
    }
}
