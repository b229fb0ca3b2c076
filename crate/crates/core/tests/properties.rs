use coalescing_walks::engine::{simulate, Lattice, ParticleConfig, StopRule, DEFAULT_EVENT_CAP};
use coalescing_walks::kingman::{builtin_test_functions, carre_du_champ, sample_path, SValue, TestFunction};
use coalescing_walks::lattice::{jump_kernel, walk_transition_probability, TorusGeometry};
use coalescing_walks::oracle::{
    expected_hitting_time, occupation_identity_check, pair_coalescence_law, random_reversible_chain,
};
use coalescing_walks::seeding::replica_rng;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_symmetric_and_normalized(d in 2usize..5, n in 2usize..9) {
        let g = TorusGeometry::new(d, n).unwrap();
        let mut total = 0.0;
        for s in 0..g.num_sites() {
            let p = g.point_of(s);
            prop_assert_eq!(jump_kernel(&g, &p), jump_kernel(&g, &g.neg(&p)));
            total += jump_kernel(&g, &p);
        }
        prop_assert!((total - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn transition_probabilities_are_symmetric(x in 0usize..9, y in 0usize..9, t in 0.0f64..20.0) {
        let g = TorusGeometry::new(2, 3).unwrap();
        let (px, py) = (g.point_of(x), g.point_of(y));
        let a = walk_transition_probability(&g, &px, &py, t, 1.0).unwrap();
        let b = walk_transition_probability(&g, &py, &px, t, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn counts_drop_by_one_and_times_increase(seed in 0u64..5000, d in 2usize..4, n in 3usize..7, k in 2usize..12) {
        let g = TorusGeometry::new(d, n).unwrap();
        let lattice = Lattice::new(g);
        let mut rng = replica_rng(seed, 0);
        let sites: Vec<usize> = (0..k).map(|_| rng.gen_range(0..g.num_sites())).collect();
        let initial = ParticleConfig::from_sites(&lattice, &sites).unwrap();
        let r = simulate(&initial, StopRule::FullCoalescence, &mut rng, DEFAULT_EVENT_CAP).unwrap();
        let levels: Vec<usize> = r.tau.keys().copied().collect();
        prop_assert_eq!(levels, (1..=initial.count()).collect::<Vec<_>>());
        let times: Vec<f64> = r.tau.iter().rev().map(|(_, &t)| t).collect();
        prop_assert!(times.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(r.coalescence_time(), Some(r.final_time));
    }

    #[test]
    fn records_are_reproducible(seed in 0u64..5000) {
        let lattice = Lattice::new(TorusGeometry::new(2, 5).unwrap());
        let full = ParticleConfig::full(&lattice);
        let a = simulate(&full, StopRule::ReachCount(3), &mut replica_rng(seed, 1), DEFAULT_EVENT_CAP).unwrap();
        let b = simulate(&full, StopRule::ReachCount(3), &mut replica_rng(seed, 1), DEFAULT_EVENT_CAP).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn kingman_paths_step_down_by_one(seed in 0u64..5000, start in 2u64..200) {
        let p = sample_path(SValue::inverse(start), 1.0, 1e-4, &mut replica_rng(seed, 0)).unwrap();
        prop_assert_eq!(p.jump_times.len() as u64, start - 1);
        prop_assert!(p.jump_times.windows(2).all(|w| w[1] >= w[0]));
        let mut last = p.value_at(0.0);
        for &t in &p.jump_times {
            let v = p.value_at(t);
            let before = p.level_at(t) + 1;
            prop_assert!((v - 1.0 / (before - 1) as f64).abs() < 1e-15);
            prop_assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn carre_du_champ_bilinear(i in 0usize..10, j in 0usize..10, k in 0usize..10, a in -3.0f64..3.0, b in -3.0f64..3.0, n in 2u64..500) {
        let fs = builtin_test_functions();
        let comb = TestFunction::linear_combination(a, &fs[i], b, &fs[k]);
        for y in [SValue::inverse(n), SValue::ZERO] {
            let lhs = carre_du_champ(&comb, &fs[j], y);
            let rhs = a * carre_du_champ(&fs[i], &fs[j], y) + b * carre_du_champ(&fs[k], &fs[j], y);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn occupation_identity_random_chains(seed in 0u64..100_000, size in 3usize..=50) {
        let mut rng = replica_rng(seed, 0);
        let chain = random_reversible_chain(size, &mut rng);
        let target = vec![rng.gen_range(0..size)];
        let f: Vec<f64> = (0..size).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let check = occupation_identity_check(&chain, &target, &f).unwrap();
        prop_assert!(check.abs_diff <= 1e-9, "{:?}", check);
    }

    #[test]
    fn hitting_times_scale_inversely_with_rates(seed in 0u64..100_000, c in 0.01f64..100.0) {
        let mut rng = replica_rng(seed, 0);
        let chain = random_reversible_chain(15, &mut rng);
        let h = expected_hitting_time(&chain, &[0]).unwrap();
        let hc = expected_hitting_time(&chain.scaled(c), &[0]).unwrap();
        for (a, b) in h.times.iter().zip(&hc.times) {
            prop_assert!((a / c - b).abs() <= 1e-9 * (a / c).max(1e-12));
        }
    }

    #[test]
    fn pair_survival_is_monotone(dx in 0usize..5, dy in 0usize..5, ts in proptest::collection::vec(0.0f64..200.0, 1..12)) {
        let g = TorusGeometry::new(2, 5).unwrap();
        let mut grid = ts.clone();
        grid.sort_by(f64::total_cmp);
        let y = g.point(&[dx as i64, dy as i64]).unwrap();
        let s = pair_coalescence_law(&g, &g.origin(), &y, &grid).unwrap();
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
