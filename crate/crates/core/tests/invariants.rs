use kawaflow::coupling::Coupling;
use kawaflow::dynamics::{Generator, RateKernel};
use kawaflow::graph::Graph;
use kawaflow::ising::{CanonicalModel, Measure};
use kawaflow::space::StateSpace;
use nalgebra::DVector;
use proptest::prelude::*;

proptest! {
    /// Masks enumerate in strictly increasing numeric order, carry the right
    /// particle count, and round-trip through index_of.
    #[test]
    fn masks_sort_and_round_trip(n in 1usize..13, pick in 0usize..64) {
        let k = pick % (n + 1);
        let space = StateSpace::full(n, k).unwrap();
        let masks = space.masks();
        prop_assert!(masks.windows(2).all(|w| w[0] < w[1]));
        for (idx, &m) in masks.iter().enumerate() {
            prop_assert_eq!(m.count_ones() as usize, k);
            prop_assert_eq!(space.index_of(m), Some(idx));
        }
        prop_assert_eq!(space.index_of(1 << n), None);
    }

    /// Swapping a discordant pair twice restores the configuration, and a
    /// single swap never changes the particle count.
    #[test]
    fn exchange_is_an_involution(n in 2usize..14, raw in any::<u64>(), i in 0usize..14, j in 0usize..14) {
        let mask = raw & ((1 << n) - 1);
        let (i, j) = (i % n, j % n);
        prop_assume!((mask >> i) & 1 != (mask >> j) & 1);
        let once = StateSpace::exchanged(mask, i, j);
        prop_assert_eq!(once.count_ones(), mask.count_ones());
        prop_assert_eq!(StateSpace::exchanged(once, i, j), mask);
    }

    /// Normalisation from log-weights: probabilities sum to one, stay
    /// positive, and constants have the trivial mean and variance.
    #[test]
    fn measures_normalise(lw in prop::collection::vec(-40.0..40.0f64, 1..60)) {
        let mu = Measure::from_log_weights(&lw);
        let total: f64 = mu.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(mu.min_prob() > 0.0);
        let c = vec![3.25; lw.len()];
        prop_assert!((mu.expectation(&c) - 3.25).abs() < 1e-9);
        prop_assert!(mu.variance(&c).abs() < 1e-9);
    }

    /// Every kernel family is reversible and stationary for the canonical
    /// measure it was built from.
    #[test]
    fn kernels_balance_their_measure(
        n in 3usize..8,
        k_pick in 1usize..64,
        beta in 0.0..0.4f64,
        h_raw in prop::collection::vec(-1.5..1.5f64, 8),
        which in 0usize..3,
    ) {
        let k = 1 + k_pick % (n - 1);
        let m = (2 * k) as f64 / n as f64 - 1.0;
        let h = DVector::from_iterator(n, h_raw[..n].iter().copied());
        let coupling = Coupling::from_graph(&Graph::cycle(n)).unwrap();
        let model = CanonicalModel::new(coupling, beta, h, m).unwrap();
        let space = model.space().unwrap();
        let mu = model.measure(&space).unwrap();
        let kernel = match which {
            0 => RateKernel::standard(&space, &mu),
            1 => RateKernel::down_up(&space, &mu),
            _ => RateKernel::exchange_walk(&space, &mu),
        };
        let gen = Generator::build(&kernel);
        prop_assert!(gen.reversibility_residual(&mu) < 1e-10);
        prop_assert!(gen.stationarity_residual(&mu) < 1e-10);
    }
}
