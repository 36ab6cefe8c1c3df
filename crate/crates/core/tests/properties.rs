use localrhat::chains::{parse_chains, ChainSet, Layout};
use localrhat::diagnostics::{rhat_curve, rhat_infinity, Grid};
use localrhat::multivariate::{rhat_max_infinity, DirectionSet, MvGrid, DEFAULT_DIRECTION_CAP};
use proptest::prelude::*;

fn chain_set(max_m: usize, max_n: usize) -> impl Strategy<Value = ChainSet> {
    (2..=max_m, 2..=max_n).prop_flat_map(|(m, n)| {
        prop::collection::vec(prop::collection::vec(-50i32..50, n), m).prop_map(|chains| {
            let chains = chains
                .into_iter()
                .map(|c| c.into_iter().map(|v| v as f64 / 8.0).collect())
                .collect();
            ChainSet::from_chains(chains).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rhat_inf_is_invariant_under_increasing_maps(cs in chain_set(5, 40)) {
        let base = rhat_infinity(&cs, &Grid::AllPoints).unwrap();
        let mapped = cs.map_values(|_, v| (v / 3.0).exp() + 7.0 * v.powi(3)).unwrap();
        let other = rhat_infinity(&mapped, &Grid::AllPoints).unwrap();
        prop_assert_eq!(base.value.to_bits(), other.value.to_bits());
        prop_assert_eq!(base.disjoint_supports, other.disjoint_supports);
    }

    #[test]
    fn rhat_inf_is_invariant_under_chain_permutation(cs in chain_set(6, 30), seed in any::<u64>()) {
        let m = cs.num_chains();
        let mut order: Vec<usize> = (0..m).collect();
        let mut s = seed;
        for i in (1..m).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = rhat_infinity(&cs, &Grid::AllPoints).unwrap();
        let b = rhat_infinity(&cs.permute_chains(&order).unwrap(), &Grid::AllPoints).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn curve_values_are_at_least_one(cs in chain_set(5, 30)) {
        let curve = rhat_curve(&cs, &Grid::AllPoints).unwrap();
        for v in curve.values() {
            prop_assert!(v >= 1.0 - 1e-12 || v.is_infinite());
        }
    }

    #[test]
    fn strided_maximum_never_exceeds_full(cs in chain_set(4, 40), k in 2usize..10) {
        let full = rhat_infinity(&cs, &Grid::AllPoints).unwrap();
        let coarse = rhat_infinity(&cs, &Grid::Stride(k)).unwrap();
        prop_assert!(coarse.value <= full.value);
    }

    #[test]
    fn csv_round_trip(cs in chain_set(4, 20)) {
        for layout in [Layout::Wide, Layout::Long] {
            let text = cs.to_csv(layout).unwrap();
            let back = parse_chains(&text, layout).unwrap();
            prop_assert_eq!(back.as_flat(), cs.as_flat());
            prop_assert_eq!(back.num_chains(), cs.num_chains());
        }
    }

    #[test]
    fn directional_maximum_is_invariant_under_increasing_maps(cs in chain_set(3, 15)) {
        let chains: Vec<Vec<Vec<f64>>> = (0..cs.num_chains())
            .map(|j| cs.chain(j).iter().enumerate().map(|(i, &v)| vec![v, (i % 5) as f64 - v]).collect())
            .collect();
        let mv = ChainSet::from_draws(chains).unwrap();
        let mapped = mv.map_values(|p, v| if p == 0 { v.exp() } else { 2.0 * v + 1.0 }).unwrap();
        let grid = MvGrid::default();
        let a = rhat_max_infinity(&mv, &grid, DirectionSet::Canonical, DEFAULT_DIRECTION_CAP).unwrap();
        let b = rhat_max_infinity(&mapped, &grid, DirectionSet::Canonical, DEFAULT_DIRECTION_CAP).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}
