use kawaflow::coupling::Coupling;
use kawaflow::decomp::DecompositionContext;
use kawaflow::dynamics::{Flavour, Generator, RateKernel};
use kawaflow::funcineq::{
    lsi_from_mlsi, mixing_bound_from_gap, spectral_gap_exact, tv_mixing_exact,
};
use kawaflow::graph::{self, Graph};
use kawaflow::ising::CanonicalModel;
use kawaflow::{mp, rng, spectral};
use nalgebra::DVector;
use rand::Rng;

/// Sampled sparse graph → spectrum → coupling → canonical measure →
/// edge-restricted chain, checking each stage hands the next one what it
/// promises.
#[test]
fn regular_graph_chain_end_to_end() {
    let (g, _) = graph::sample_regular(12, 3, 42).unwrap();
    let spec = spectral::spectrum(&g, 7).unwrap();
    assert!(spec.lambda2 < 3.0 && spec.lambda_min > -3.0);

    let coupling = Coupling::from_graph(&g).unwrap();
    let beta = 0.08; // inside the sparse-regular window 1/(8√2) ≈ 0.088
    let mut r = rng::stream(3, "pipeline.h");
    let h = DVector::from_fn(12, |_, _| r.random_range(-0.5..0.5));
    let model = CanonicalModel::new(coupling, beta, h.clone(), 0.0).unwrap();
    let space = model.space().unwrap();
    let mu = model.measure(&space).unwrap();

    let kernel = RateKernel::kawasaki(&space, &mu, &g, Flavour::Metropolis).unwrap();
    let gen = Generator::build(&kernel);
    assert!(gen.is_irreducible());
    assert!(gen.reversibility_residual(&mu) < 1e-10);
    let gap = spectral_gap_exact(&gen, &mu).unwrap();
    assert!(gap.gap > 0.0);

    // normal form feeds the decomposition bound K ≤ e^{8β}
    let normal = model.normal_form().unwrap();
    let ctx =
        DecompositionContext::new(normal.coupling().raw().clone(), normal.beta()).unwrap();
    let worst = ctx.comparison_factor_max(&space, &h).unwrap();
    assert!(worst <= (8.0 * normal.beta()).exp() + 1e-9);
}

/// The measured exchange-form comparison constant really is the supremum:
/// no sampled function beats it.
#[test]
fn comparison_constant_dominates_sampled_ratios() {
    let space = kawaflow::space::StateSpace::full(6, 3).unwrap();
    let mut band = nalgebra::DMatrix::zeros(6, 6);
    for i in 0..5 {
        band[(i, i + 1)] = 0.3;
        band[(i + 1, i)] = 0.3;
    }
    let h = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
    let mu = mp::gibbs_measure(&space, &band, 1.0, &h).unwrap();

    let full: Vec<(usize, usize)> =
        (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).collect();
    let nn: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
    let cmp = mp::exact_comparison(&space, &mu, &full, &nn).unwrap();
    assert!((cmp.achieved - cmp.constant).abs() <= 1e-8 * cmp.constant);

    let mut r = rng::stream(11, "pipeline.ratio");
    for _ in 0..100 {
        let f: Vec<f64> = (0..space.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let num = mp::evaluate_form(&space, &mu, &full, &f).unwrap();
        let den = mp::evaluate_form(&space, &mu, &nn, &f).unwrap();
        if den > 1e-12 {
            assert!(num / den <= cmp.constant * (1.0 + 1e-9));
        }
    }
}

/// Theorem-side mixing bound: M(β) · measured comparison factor · the
/// mLSI→LSI factor assemble into γ̂, and the exact TV mixing time of the
/// down-up chain stays below (2/γ̂)(1 + ¼ loglog max 1/ν).
#[test]
fn assembled_mixing_bound_dominates_exact_mixing() {
    let coupling = Coupling::from_graph(&Graph::cycle(6)).unwrap();
    let beta = 0.1;
    let h = DVector::from_fn(6, |i, _| if i % 2 == 0 { 0.3 } else { -0.2 });
    let model = CanonicalModel::new(coupling, beta, h.clone(), 0.0).unwrap();
    let space = model.space().unwrap();
    let mu = model.measure(&space).unwrap();

    let normal = model.normal_form().unwrap();
    let beta_n = normal.beta();
    let magnifier = normal.coupling().magnifier(beta_n).unwrap();
    let ctx =
        DecompositionContext::new(normal.coupling().raw().clone(), beta_n).unwrap();
    let k_measured = ctx.comparison_factor_max(&space, &h).unwrap();

    let kernel = RateKernel::down_up(&space, &mu);
    let gen = Generator::build(&kernel);
    let c_min = gen
        .rows()
        .iter()
        .zip(gen.exit_rates())
        .flat_map(|(row, &exit)| row.iter().map(move |mv| mv.rate / exit))
        .fold(f64::INFINITY, f64::min);
    let c_mlsi = magnifier * k_measured; // down-up constant 1
    let c_lsi = lsi_from_mlsi(c_mlsi, c_min).unwrap();
    let bound = mixing_bound_from_gap(1.0 / c_lsi, mu.min_prob()).unwrap();

    let t_mix = tv_mixing_exact(&gen, &mu, (-1.0f64).exp()).unwrap();
    assert!(
        t_mix <= bound,
        "exact mixing {t_mix} exceeded assembled bound {bound}"
    );
}
