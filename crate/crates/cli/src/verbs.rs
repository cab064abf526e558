//! One handler per CLI verb; each returns the primary JSON report and writes
//! any side outputs (witness dumps, trajectory grids, basis lists) itself.

use crate::io;
use crate::model::{self, build_instance, build_kernel};
use clap::Subcommand;
use kawaflow::config::SpinConfig;
use kawaflow::coupling::Coupling;
use kawaflow::decomp::DecompositionContext;
use kawaflow::dynamics::{self, Generator};
use kawaflow::error::{Error, Result};
use kawaflow::funcineq::{lsi_search, mlsi_search, spectral_gap_exact, tv_mixing_exact};
use kawaflow::graph::{congestion, geodesic_paths, regular_congestion_bound, Diameter, Graph};
use kawaflow::ising::{self, moments, SearchBudget};
use kawaflow::matroid::{
    downup_on_bases, generating_polynomial, log_hessian_at_one, perturbation_mlsi_check,
    perturbed_weights, MatroidOracle,
};
use kawaflow::space::StateSpace;
use kawaflow::{mp, spectral};
use nalgebra::DVector;
use serde_json::{json, Value};
use std::path::PathBuf;

#[derive(Subcommand)]
pub enum GraphCmd {
    /// Sample a random regular graph and report its geometry.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
    },
    /// Geometry report for a named graph.
    Info {
        #[arg(long)]
        graph: String,
    },
}

#[derive(Subcommand)]
pub enum IsingCmd {
    /// Spectral condition report: holds iff 2βδ(A) < 1, with M(β).
    CheckSc {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
    },
    /// Exact canonical measure summary (log Z, extremes, moments).
    Measure {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
    },
}

#[derive(Subcommand)]
pub enum DynCmd {
    /// Exact spectral gap of a chain on the enumerated space.
    Gap {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
        #[arg(long, default_value = "down-up")]
        kernel: String,
    },
    /// Exact TV mixing time to the given distance.
    Mix {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
        #[arg(long, default_value = "down-up")]
        kernel: String,
        #[arg(long, default_value_t = 0.367_879_441_171_442_33)]
        eps: f64,
    },
    /// Event-driven Kawasaki simulation (no enumeration; any N).
    Simulate {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
        #[arg(long, default_value = "metropolis")]
        flavour: String,
        #[arg(long)]
        t_max: f64,
        #[arg(long, default_value_t = 200)]
        records: usize,
        /// Trajectory grid CSV (times, overlap, energy).
        #[arg(long)]
        traj_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum FiCmd {
    /// Adversarial search for the worst modified log-Sobolev ratio.
    Mlsi {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
        #[arg(long, default_value = "down-up")]
        kernel: String,
        #[arg(long, default_value_t = 32)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
        /// Minimising function, raw little-endian f64.
        #[arg(long)]
        witness_out: Option<PathBuf>,
    },
    /// Adversarial search for the worst log-Sobolev ratio.
    Lsi {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
        #[arg(long, default_value = "down-up")]
        kernel: String,
        #[arg(long, default_value_t = 32)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
        #[arg(long)]
        witness_out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum DecompCmd {
    /// Worst measure-change comparison factor against the e^{8β} bound.
    Kfactor {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
    },
    /// Gaussian convolution identity spread at interpolation time t.
    Convolution {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long)]
        t: f64,
    },
}

#[derive(Subcommand)]
pub enum MpCmd {
    /// Exact optimal constant between two exchange Dirichlet forms.
    Exact {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value = "zero")]
        field: String,
        /// Graph whose adjacency is the coupling; mutually exclusive with
        /// --coupling-file.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        coupling_file: Option<PathBuf>,
        /// Restricted pair set: "nn", "all", or a file of "i j" lines.
        #[arg(long, default_value = "nn")]
        pairs: String,
        #[arg(long)]
        witness_out: Option<PathBuf>,
    },
    /// Census-based comparison bound on a graph (exact constant when a model
    /// is attached via --beta).
    GraphBound {
        #[arg(long)]
        graph: String,
        #[arg(long)]
        calibration: f64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
    },
    /// Census-based comparison bound on the cube {0,…,L−1}^d.
    Lattice {
        #[arg(long)]
        side: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        calibration: f64,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        m: f64,
        #[arg(long, default_value = "zero")]
        field: String,
    },
}

#[derive(clap::Args)]
pub struct MatroidSource {
    /// Graphic matroid over this graph's edges.
    #[arg(long)]
    graph: Option<String>,
    /// Uniform matroid "N,K".
    #[arg(long)]
    uniform: Option<String>,
    /// Explicit basis list file.
    #[arg(long)]
    bases: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum MatroidCmd {
    /// Enumerate the bases (optionally writing a basis list file).
    Enum {
        #[command(flatten)]
        source: MatroidSource,
        #[arg(long)]
        list_out: Option<PathBuf>,
    },
    /// Pairwise-perturbed measure summary with its Ising-form agreement.
    Perturb {
        #[command(flatten)]
        source: MatroidSource,
        #[arg(long)]
        eps: PathBuf,
        #[arg(long, default_value = "zero")]
        field: String,
    },
    /// Down-up walk diagnostics; with --eps, the entropy-contraction check.
    Walk {
        #[command(flatten)]
        source: MatroidSource,
        #[arg(long)]
        eps: Option<PathBuf>,
        #[arg(long, default_value = "zero")]
        field: String,
        #[arg(long, default_value_t = 32)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
    },
    /// Generating polynomial value and the log-Hessian at the all-ones point.
    Gpoly {
        #[command(flatten)]
        source: MatroidSource,
        #[arg(long)]
        eps: Option<PathBuf>,
        #[arg(long, default_value = "zero")]
        field: String,
        /// "ones" or "file:PATH".
        #[arg(long, default_value = "ones")]
        z: String,
    },
}

impl MatroidSource {
    fn oracle(&self) -> Result<MatroidOracle> {
        match (&self.graph, &self.uniform, &self.bases) {
            (Some(spec), None, None) => MatroidOracle::graphic(model::parse_graph(spec)?),
            (None, Some(nk), None) => {
                let (n, k) = nk
                    .split_once(',')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                    .ok_or_else(|| {
                        Error::parameter(format!("uniform matroid spec {nk:?} is not N,K"))
                    })?;
                MatroidOracle::uniform(n, k)
            }
            (None, None, Some(path)) => {
                let masks = io::read_bases(path)?;
                let ground = masks
                    .iter()
                    .map(|m| 64 - m.leading_zeros() as usize)
                    .max()
                    .unwrap_or(0);
                MatroidOracle::explicit(ground, masks)
            }
            _ => Err(Error::parameter(
                "give exactly one of --graph, --uniform, --bases",
            )),
        }
    }
}

fn diameter_of(g: &Graph) -> Result<u32> {
    match g.diameter() {
        Diameter::Finite(d) => Ok(d),
        Diameter::Infinite { components } => Err(Error::Model(format!(
            "graph is disconnected ({components} components)"
        ))),
    }
}

fn graph_report(g: &Graph, seed: Option<u64>, dd: Option<usize>) -> Result<Value> {
    let diam = diameter_of(g)?;
    let spec = spectral::spectrum(g, seed.unwrap_or(0))?;
    let ps = geodesic_paths(g)?;
    let cong = congestion(g, &ps)?;
    let bound = g
        .regular_degree()
        .map(|d| regular_congestion_bound(g.n(), d, diam));
    Ok(json!({
        "n": g.n(),
        "edges": g.n_edges(),
        "d": dd.or(g.regular_degree()),
        "seed": seed,
        "diameter": diam,
        "lambda2": spec.lambda2,
        "lambda_min": spec.lambda_min,
        "max_congestion": cong.max_congestion,
        "total_path_length": cong.total_length,
        "congestion_bound": bound,
    }))
}

pub fn graph_cmd(cmd: &GraphCmd, seed: u64) -> Result<Value> {
    match cmd {
        GraphCmd::Sample { n, d } => {
            let (g, stats) = kawaflow::graph::sample_regular(*n, *d, seed)?;
            let mut v = graph_report(&g, Some(seed), Some(*d))?;
            v["sample_attempts"] = json!(stats.attempts);
            v["connectivity_resamples"] = json!(stats.connectivity_resamples);
            Ok(v)
        }
        GraphCmd::Info { graph } => graph_report(&model::parse_graph(graph)?, None, None),
    }
}

pub fn ising_cmd(cmd: &IsingCmd, seed: u64) -> Result<Value> {
    match cmd {
        IsingCmd::CheckSc { graph, beta } => {
            let g = model::parse_graph(graph)?;
            let coupling = Coupling::from_graph(&g)?;
            let report = ising::check_sc(&coupling, *beta);
            serde_json::to_value(&report).map_err(|e| Error::Numerical(e.to_string()))
        }
        IsingCmd::Measure {
            graph,
            beta,
            m,
            field,
        } => {
            let inst = build_instance(graph, *beta, *m, field, seed)?;
            let mom = moments(&inst.measure, &inst.space);
            let n = inst.space.n();
            let max_offdiag = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| mom.covariance[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(json!({
                "n": n,
                "k": inst.space.k(),
                "m": m,
                "beta": beta,
                "states": inst.space.len(),
                "log_z": inst.measure.log_z(),
                "min_prob": inst.measure.min_prob(),
                "mean": mom.mean.as_slice(),
                "max_offdiag_cov": max_offdiag,
            }))
        }
    }
}

pub fn dyn_cmd(cmd: &DynCmd, seed: u64) -> Result<Value> {
    match cmd {
        DynCmd::Gap {
            graph,
            beta,
            m,
            field,
            kernel,
        } => {
            let inst = build_instance(graph, *beta, *m, field, seed)?;
            let kern = build_kernel(kernel, &inst.space, &inst.measure, &inst.graph)?;
            let gen = Generator::build(&kern);
            let gap = spectral_gap_exact(&gen, &inst.measure)?;
            Ok(json!({
                "kernel": kernel,
                "states": inst.space.len(),
                "gap": gap.gap,
            }))
        }
        DynCmd::Mix {
            graph,
            beta,
            m,
            field,
            kernel,
            eps,
        } => {
            let inst = build_instance(graph, *beta, *m, field, seed)?;
            let kern = build_kernel(kernel, &inst.space, &inst.measure, &inst.graph)?;
            let gen = Generator::build(&kern);
            let t_mix = tv_mixing_exact(&gen, &inst.measure, *eps)?;
            Ok(json!({
                "kernel": kernel,
                "states": inst.space.len(),
                "eps": eps,
                "t_mix": t_mix,
            }))
        }
        DynCmd::Simulate {
            graph,
            beta,
            m,
            field,
            flavour,
            t_max,
            records,
            traj_out,
        } => {
            let g = model::parse_graph(graph)?;
            let n = g.n();
            let h = model::parse_field(field, n, seed)?;
            let k = kawaflow::space::particle_count(n, *m)?;
            let start = SpinConfig::from_plus_sites(n, &(0..k).collect::<Vec<_>>());
            let traj = dynamics::run_kawasaki_chain(
                &g,
                *beta,
                &h,
                model::parse_flavour(flavour)?,
                &start,
                *t_max,
                *records,
                &[],
                seed,
            )?;
            if let Some(path) = traj_out {
                let energy = traj.energy.as_ref();
                let rows: Vec<Vec<String>> = traj
                    .times
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        vec![
                            t.to_string(),
                            traj.overlap[i].to_string(),
                            energy.map_or(String::new(), |e| e[i].to_string()),
                        ]
                    })
                    .collect();
                io::write_csv(path, &["time", "overlap", "energy"], &rows)?;
            }
            Ok(json!({
                "n": n,
                "k": k,
                "t_max": t_max,
                "jumps": traj.jumps,
                "proposals": traj.proposals,
                "acceptance": traj.jumps as f64 / (traj.proposals.max(1)) as f64,
                "final_overlap": traj.overlap.last(),
            }))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn search_cmd(
    graph: &str,
    beta: f64,
    m: f64,
    field: &str,
    kernel: &str,
    restarts: usize,
    max_steps: usize,
    witness_out: &Option<PathBuf>,
    seed: u64,
    lsi: bool,
) -> Result<Value> {
    let inst = build_instance(graph, beta, m, field, seed)?;
    let kern = build_kernel(kernel, &inst.space, &inst.measure, &inst.graph)?;
    let gen = Generator::build(&kern);
    let budget = SearchBudget {
        restarts,
        max_steps,
    };
    let bracket = if lsi {
        lsi_search(&gen, &inst.measure, &budget, seed)?
    } else {
        mlsi_search(&gen, &inst.measure, &budget, seed)?
    };
    if let Some(path) = witness_out {
        io::write_f64_bin(path, &bracket.witness)?;
    }
    Ok(json!({
        "kind": if lsi { "lsi" } else { "mlsi" },
        "kernel": kernel,
        "states": inst.space.len(),
        "value": bracket.value,
        "starts_used": bracket.starts_used,
        "degenerate_starts": bracket.degenerate_starts,
        "failed": bracket.failed,
    }))
}

pub fn fi_cmd(cmd: &FiCmd, seed: u64) -> Result<Value> {
    match cmd {
        FiCmd::Mlsi {
            graph,
            beta,
            m,
            field,
            kernel,
            restarts,
            max_steps,
            witness_out,
        } => search_cmd(
            graph,
            *beta,
            *m,
            field,
            kernel,
            *restarts,
            *max_steps,
            witness_out,
            seed,
            false,
        ),
        FiCmd::Lsi {
            graph,
            beta,
            m,
            field,
            kernel,
            restarts,
            max_steps,
            witness_out,
        } => search_cmd(
            graph,
            *beta,
            *m,
            field,
            kernel,
            *restarts,
            *max_steps,
            witness_out,
            seed,
            true,
        ),
    }
}

pub fn decomp_cmd(cmd: &DecompCmd, seed: u64) -> Result<Value> {
    match cmd {
        DecompCmd::Kfactor {
            graph,
            beta,
            m,
            field,
        } => {
            let inst = build_instance(graph, *beta, *m, field, seed)?;
            let normal = inst.model.normal_form()?;
            let ctx =
                DecompositionContext::new(normal.coupling().raw().clone(), normal.beta())?;
            let worst = ctx.comparison_factor_max(&inst.space, &inst.h)?;
            let bound = (8.0 * normal.beta()).exp();
            Ok(json!({
                "beta_normal": normal.beta(),
                "worst": worst,
                "bound": bound,
                "holds": worst <= bound + 1e-9,
            }))
        }
        DecompCmd::Convolution { graph, beta, m, t } => {
            let g = model::parse_graph(graph)?;
            let coupling = Coupling::from_graph(&g)?;
            let normal_beta = coupling.normalised_beta(*beta);
            let ctx = DecompositionContext::new(coupling.normalised().clone(), normal_beta)?;
            let space = StateSpace::from_magnetisation(g.n(), *m)?;
            let spread = ctx.convolution_spread(&space, *t)?;
            Ok(json!({
                "beta_normal": normal_beta,
                "t": t,
                "spread": spread.spread,
                "nodes": spread.nodes,
                "converged": spread.converged,
            }))
        }
    }
}

fn parse_pairs_arg(spec: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    match spec {
        "nn" => Ok((0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()),
        "all" => Ok((0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect()),
        path => io::read_pairs(std::path::Path::new(path)),
    }
}

pub fn mp_cmd(cmd: &MpCmd, seed: u64) -> Result<Value> {
    match cmd {
        MpCmd::Exact {
            n,
            k,
            beta,
            field,
            graph,
            coupling_file,
            pairs,
            witness_out,
        } => {
            let coupling = match (graph, coupling_file) {
                (Some(spec), None) => model::parse_graph(spec)?.adjacency_dense(),
                (None, Some(path)) => io::read_matrix(path)?,
                (None, None) => nalgebra::DMatrix::zeros(*n, *n),
                _ => {
                    return Err(Error::parameter(
                        "give at most one of --graph and --coupling-file",
                    ))
                }
            };
            let space = StateSpace::full(*n, *k)?;
            let h = model::parse_field(field, *n, seed)?;
            let measure = mp::gibbs_measure(&space, &coupling, *beta, &h)?;
            let full: Vec<(usize, usize)> = (0..*n)
                .flat_map(|i| (i + 1..*n).map(move |j| (i, j)))
                .collect();
            let restricted = parse_pairs_arg(pairs, *n)?;
            let cmp = mp::exact_comparison(&space, &measure, &full, &restricted)?;
            if let Some(path) = witness_out {
                io::write_f64_bin(path, &cmp.witness)?;
            }
            Ok(json!({
                "n": n,
                "k": k,
                "states": space.len(),
                "constant": cmp.constant,
                "achieved": cmp.achieved,
            }))
        }
        MpCmd::GraphBound {
            graph,
            calibration,
            beta,
            m,
            field,
        } => {
            let g = model::parse_graph(graph)?;
            let report = match beta {
                None => mp::graph_path_bound(&g, *calibration, None)?,
                Some(b) => {
                    let inst = build_instance(graph, *b, *m, field, seed)?;
                    mp::graph_path_bound(&g, *calibration, Some((&inst.space, &inst.measure)))?
                }
            };
            serde_json::to_value(&report).map_err(|e| Error::Numerical(e.to_string()))
        }
        MpCmd::Lattice {
            side,
            dim,
            calibration,
            beta,
            m,
            field,
        } => {
            let report = match beta {
                None => mp::lattice_path_bound(*side, *dim, *calibration, None)?,
                Some(b) => {
                    let g = Graph::lattice(*side, *dim);
                    let h = model::parse_field(field, g.n(), seed)?;
                    let coupling = Coupling::from_graph(&g)?;
                    let model = ising::CanonicalModel::new(coupling, *b, h, *m)?;
                    let space = model.space()?;
                    let measure = model.measure(&space)?;
                    mp::lattice_path_bound(*side, *dim, *calibration, Some((&space, &measure)))?
                }
            };
            serde_json::to_value(&report).map_err(|e| Error::Numerical(e.to_string()))
        }
    }
}

fn perturbation_for(
    source: &MatroidSource,
    eps_path: &Option<PathBuf>,
    field: &str,
    seed: u64,
) -> Result<(StateSpace, kawaflow::matroid::PerturbedMeasure)> {
    let oracle = source.oracle()?;
    let space = oracle.enumerate_bases()?;
    let e = oracle.ground_size();
    let eps = match eps_path {
        Some(path) => io::read_matrix(path)?,
        None => nalgebra::DMatrix::zeros(e, e),
    };
    let h = model::parse_field(field, e, seed)?;
    let pm = perturbed_weights(&space, &eps, &h)?;
    Ok((space, pm))
}

pub fn matroid_cmd(cmd: &MatroidCmd, seed: u64) -> Result<Value> {
    match cmd {
        MatroidCmd::Enum { source, list_out } => {
            let oracle = source.oracle()?;
            let space = oracle.enumerate_bases()?;
            if let Some(path) = list_out {
                io::write_bases(path, space.masks())?;
            }
            Ok(json!({
                "ground": oracle.ground_size(),
                "rank": oracle.rank(),
                "count": space.len(),
            }))
        }
        MatroidCmd::Perturb { source, eps, field } => {
            let (space, pm) = perturbation_for(source, &Some(eps.clone()), field, seed)?;
            Ok(json!({
                "ground": pm.ising.field.len(),
                "count": space.len(),
                "eps_bar": pm.eps_bar,
                "agreement": pm.agreement,
                "log_z": pm.measure.log_z(),
                "min_prob": pm.measure.min_prob(),
            }))
        }
        MatroidCmd::Walk {
            source,
            eps,
            field,
            restarts,
            max_steps,
        } => {
            let (space, pm) = perturbation_for(source, eps, field, seed)?;
            let kernel = downup_on_bases(&space, &pm.measure);
            let gen = Generator::build(&kernel);
            let reversibility = gen.reversibility_residual(&pm.measure);
            let gap = spectral_gap_exact(&gen, &pm.measure)?.gap;
            let check = match eps {
                None => None,
                Some(_) => Some(perturbation_mlsi_check(
                    &space,
                    &pm,
                    &SearchBudget {
                        restarts: *restarts,
                        max_steps: *max_steps,
                    },
                    seed,
                )?),
            };
            Ok(json!({
                "states": space.len(),
                "gap": gap,
                "reversibility_residual": reversibility,
                "check": check,
            }))
        }
        MatroidCmd::Gpoly {
            source,
            eps,
            field,
            z,
        } => {
            let (space, pm) = perturbation_for(source, eps, field, seed)?;
            let e = pm.ising.field.len();
            let z_vec = match z.as_str() {
                "ones" => DVector::from_element(e, 1.0),
                other => {
                    let path = other.strip_prefix("file:").ok_or_else(|| {
                        Error::parameter(format!("z spec {other:?} is not \"ones\" or file:PATH"))
                    })?;
                    let v = io::read_vector(std::path::Path::new(path))?;
                    if v.len() != e {
                        return Err(Error::parameter(format!(
                            "z has {} entries, ground set has {e}",
                            v.len()
                        )));
                    }
                    DVector::from_vec(v)
                }
            };
            let value = generating_polynomial(&space, &pm.measure, &z_vec)?;
            let hess = log_hessian_at_one(&space, &pm.measure)?;
            Ok(json!({
                "value": value,
                "max_eigenvalue": hess.max_eigenvalue,
                "log_concave": hess.log_concave,
            }))
        }
    }
}

