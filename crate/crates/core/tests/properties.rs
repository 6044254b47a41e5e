use opsim::agents::{ButtonLayout, OperatorCommand, OperatorState};
use opsim::sim::WorldState;
use opsim::{RunConfig, StatAccumulator};
use proptest::prelude::*;

fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

fn config() -> impl Strategy<Value = RunConfig> {
    let reals = (
        1e-6..10.0f64,
        1e-6..10.0f64,
        1e-6..10.0f64,
        0.0..10.0f64,
        -100.0..100.0f64,
        1e-6..10.0f64,
        0.0..10.0f64,
        -5.0..5.0f64,
        -5.0..5.0f64,
        1e-9..1.0f64,
    );
    let ints = (
        0u32..100,
        2usize..500,
        2u64..100,
        any::<bool>(),
        any::<bool>(),
        proptest::option::of(0u64..1_000_000),
        proptest::collection::btree_set(1u32..100_000, 1..8),
        1u32..1000,
        any::<u64>(),
    );
    (reals, ints).prop_map(|(r, i)| RunConfig {
        walk_sigma: r.0,
        beam_step: r.1,
        sigma0: r.2,
        misalign_gain: r.3,
        mu: r.4,
        fa: r.5,
        switch_cost_per_unit: r.6,
        button_left: r.7,
        button_right: r.8,
        nominal_te: r.9,
        nd: i.0,
        se_window: i.1,
        min_events: i.2,
        adjust_error: i.3,
        cutoff_time: i.4,
        budget_ticks: i.5,
        pq_grid: i.6.into_iter().rev().map(|x| x as f64 / 7.0).collect(),
        replications: i.7,
        base_seed: i.8,
    })
}

proptest! {
    #[test]
    fn streaming_matches_two_pass(
        loc in -1e3..1e3f64,
        xs in proptest::collection::vec(-1.0..1.0f64, 2..300),
    ) {
        let xs: Vec<f64> = xs.iter().map(|x| loc + x).collect();
        let (mean, var) = two_pass(&xs);
        let acc = StatAccumulator::from_slice(&xs);
        prop_assert!((acc.mean() - mean).abs() <= 1e-10 * mean.abs().max(1.0));
        prop_assert!(close(acc.variance().unwrap(), var, 1e-9));
        prop_assert!(close(acc.stderr(), (var / xs.len() as f64).sqrt(), 1e-9));
    }

    #[test]
    fn merge_is_split_invariant(
        xs in proptest::collection::vec(-50.0..50.0f64, 2..300),
        cut in any::<proptest::sample::Index>(),
    ) {
        let cut = cut.index(xs.len() + 1);
        let whole = StatAccumulator::from_slice(&xs);
        let a = StatAccumulator::from_slice(&xs[..cut]);
        let b = StatAccumulator::from_slice(&xs[cut..]);
        let ab = a.merge(&b);
        let ba = b.merge(&a);
        prop_assert_eq!(ab.count(), whole.count());
        prop_assert!((ab.mean() - whole.mean()).abs() <= 1e-10 * whole.mean().abs().max(1.0));
        prop_assert!(close(ab.m2(), whole.m2(), 1e-9));
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn config_round_trips(cfg in config()) {
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn operator_never_moves_below_acuity_or_away(
        fa in 0.01..2.0f64,
        nd in 0u32..5,
        cost in 0.0..4.0f64,
        offsets in proptest::collection::vec(-3.0..3.0f64, 1..200),
    ) {
        let beam_step = 0.1;
        let mut op = OperatorState::new(fa, nd, ButtonLayout::default(), cost);
        for off in offsets {
            let world = WorldState { stream_pos: off, beam_pos: 0.0 };
            op.observe(&world);
            let cmd = op.act(&world, beam_step);
            let m = world.misalignment();
            if m < fa || m <= beam_step / 2.0 {
                prop_assert_eq!(cmd, OperatorCommand::Hold);
            }
            match cmd {
                OperatorCommand::Right => prop_assert!(off > 0.0),
                OperatorCommand::Left => prop_assert!(off < 0.0),
                OperatorCommand::Hold => {}
            }
        }
    }
}
