//! Shared argument grammar: graph specs, field specs, kernel names, and the
//! canonical-model assembly all verbs go through.

use crate::io;
use kawaflow::coupling::Coupling;
use kawaflow::dynamics::{Flavour, RateKernel};
use kawaflow::error::{Error, Result};
use kawaflow::graph::{self, Graph};
use kawaflow::ising::{CanonicalModel, Measure};
use kawaflow::rng;
use kawaflow::space::StateSpace;
use nalgebra::DVector;
use rand::Rng;
use std::path::Path;

/// `complete:N`, `cycle:N`, `path:N`, `petersen`, `lattice:LxD`, or
/// `sample:N,D,SEED` (configuration-model regular graph).
pub fn parse_graph(spec: &str) -> Result<Graph> {
    let bad = || Error::parameter(format!("unrecognised graph spec {spec:?}"));
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "petersen" if rest.is_empty() => Ok(Graph::petersen()),
        "complete" => Ok(Graph::complete(parse_num(rest).ok_or_else(bad)?)),
        "cycle" => Ok(Graph::cycle(parse_num(rest).ok_or_else(bad)?)),
        "path" => Ok(Graph::path(parse_num(rest).ok_or_else(bad)?)),
        "lattice" => {
            let (l, d) = rest.split_once('x').ok_or_else(bad)?;
            Ok(Graph::lattice(
                parse_num(l).ok_or_else(bad)?,
                parse_num(d).ok_or_else(bad)?,
            ))
        }
        "sample" => {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let n = parse_num(parts[0]).ok_or_else(bad)?;
            let d = parse_num(parts[1]).ok_or_else(bad)?;
            let seed: u64 = parts[2].parse().map_err(|_| bad())?;
            Ok(graph::sample_regular(n, d, seed)?.0)
        }
        _ => Err(bad()),
    }
}

fn parse_num(s: &str) -> Option<usize> {
    s.parse().ok().filter(|&n| n > 0)
}

/// `zero`, `const:V`, `alt:A,B` (alternating sites), `random:LO,HI` (drawn
/// from the seed stream), or `file:PATH`.
pub fn parse_field(spec: &str, n: usize, seed: u64) -> Result<DVector<f64>> {
    let bad = || Error::parameter(format!("unrecognised field spec {spec:?}"));
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "zero" if rest.is_empty() => Ok(DVector::zeros(n)),
        "const" => {
            let v: f64 = rest.parse().map_err(|_| bad())?;
            Ok(DVector::from_element(n, v))
        }
        "alt" => {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            let a: f64 = a.parse().map_err(|_| bad())?;
            let b: f64 = b.parse().map_err(|_| bad())?;
            Ok(DVector::from_fn(n, |i, _| if i % 2 == 0 { a } else { b }))
        }
        "random" => {
            let (lo, hi) = rest.split_once(',').ok_or_else(bad)?;
            let lo: f64 = lo.parse().map_err(|_| bad())?;
            let hi: f64 = hi.parse().map_err(|_| bad())?;
            if !(lo < hi) {
                return Err(bad());
            }
            let mut r = rng::stream(seed, "cli.field");
            Ok(DVector::from_fn(n, |_, _| r.random_range(lo..hi)))
        }
        "file" => {
            let v = io::read_vector(Path::new(rest))?;
            if v.len() != n {
                return Err(Error::parameter(format!(
                    "field file has {} entries, model has {n} sites",
                    v.len()
                )));
            }
            Ok(DVector::from_vec(v))
        }
        _ => Err(bad()),
    }
}

pub struct ModelInstance {
    pub graph: Graph,
    pub model: CanonicalModel,
    pub space: StateSpace,
    pub measure: Measure,
    pub h: DVector<f64>,
}

/// Graph spec + (β, m, field spec) → enumerated canonical instance.
pub fn build_instance(
    graph_spec: &str,
    beta: f64,
    m: f64,
    field_spec: &str,
    seed: u64,
) -> Result<ModelInstance> {
    let graph = parse_graph(graph_spec)?;
    let h = parse_field(field_spec, graph.n(), seed)?;
    let coupling = Coupling::from_graph(&graph)?;
    let model = CanonicalModel::new(coupling, beta, h.clone(), m)?;
    let space = model.space()?;
    let measure = model.measure(&space)?;
    Ok(ModelInstance {
        graph,
        model,
        space,
        measure,
        h,
    })
}

/// `standard`, `down-up`, `up-down`, `exchange`, `kawasaki-metropolis`, or
/// `kawasaki-heatbath`.
pub fn build_kernel<'a>(
    name: &str,
    space: &'a StateSpace,
    measure: &'a Measure,
    graph: &'a Graph,
) -> Result<RateKernel<'a>> {
    match name {
        "standard" => Ok(RateKernel::standard(space, measure)),
        "down-up" => Ok(RateKernel::down_up(space, measure)),
        "up-down" => Ok(RateKernel::up_down(space, measure)),
        "exchange" => Ok(RateKernel::exchange_walk(space, measure)),
        "kawasaki-metropolis" => RateKernel::kawasaki(space, measure, graph, Flavour::Metropolis),
        "kawasaki-heatbath" => RateKernel::kawasaki(space, measure, graph, Flavour::HeatBath),
        _ => Err(Error::parameter(format!("unrecognised kernel {name:?}"))),
    }
}

pub fn parse_flavour(name: &str) -> Result<Flavour> {
    match name {
        "metropolis" => Ok(Flavour::Metropolis),
        "heatbath" => Ok(Flavour::HeatBath),
        _ => Err(Error::parameter(format!("unrecognised flavour {name:?}"))),
    }
}
