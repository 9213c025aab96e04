use proptest::prelude::*;
use ring_march::engine::{replay, Mode};
use ring_march::io::{parse_trace, render_trace};
use ring_march::{parse_grid, render_grid, run_until_stable, step, Configuration, Coord, Heading, ModelParams, RngStream, SwitchPolicy};

fn config_strategy() -> impl Strategy<Value = Configuration> {
    (3usize..12, 1usize..5)
        .prop_flat_map(|(n, k)| (Just(n), Just(k), proptest::collection::vec(0u8..3, n * k)))
        .prop_map(|(n, k, cells)| {
            let locusts = cells.iter().enumerate().filter(|(_, &g)| g > 0).map(|(i, &g)| {
                let h = if g == 1 { Heading::Clockwise } else { Heading::Counterclockwise };
                (Coord::new(i % n, i / n + 1), h)
            });
            Configuration::from_locusts(n, k, locusts.collect::<Vec<_>>()).unwrap()
        })
}

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (0.0f64..0.3, 0.0f64..0.3, 0usize..3, any::<bool>()).prop_map(|(r, p, pol, guard)| ModelParams {
        r,
        p,
        switch_policy: [SwitchPolicy::Never, SwitchPolicy::Eager, SwitchPolicy::Probabilistic(0.5)][pol],
        guard_min_two_per_track: guard,
    })
}

fn guarded(config: &Configuration) -> bool {
    (1..=config.k()).all(|y| config.track_population(y) >= 2)
}

proptest! {
    #[test]
    fn grids_round_trip(config in config_strategy()) {
        let text = render_grid(&config);
        let back = parse_grid(&text).unwrap();
        prop_assert_eq!(render_grid(&back), text);
        prop_assert_eq!(back, config.canonical());
    }

    #[test]
    fn steps_are_seed_deterministic(config in config_strategy(), params in params_strategy(), seed in any::<u64>()) {
        prop_assume!(guarded(&config));
        let (mut a, mut b) = (config.clone(), config.clone());
        let (mut ra, mut rb) = (RngStream::new(seed), RngStream::new(seed));
        for _ in 0..20 {
            let x = step(&mut a, &mut ra, &params).unwrap();
            let y = step(&mut b, &mut rb, &params).unwrap();
            prop_assert_eq!(x, y);
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn occupancy_and_population_survive_steps(config in config_strategy(), params in params_strategy(), seed in any::<u64>()) {
        prop_assume!(guarded(&config));
        let mut c = config.clone();
        let mut rng = RngStream::new(seed);
        for _ in 0..30 {
            step(&mut c, &mut rng, &params).unwrap();
            prop_assert_eq!(c.m(), config.m());
            let mut cells: Vec<Coord> = c.positions().to_vec();
            cells.sort();
            cells.dedup();
            prop_assert_eq!(cells.len(), c.m());
            if params.guard_min_two_per_track {
                prop_assert!(guarded(&c));
            }
        }
    }

    #[test]
    fn traces_replay_to_the_final_grid(config in config_strategy(), seed in any::<u64>()) {
        prop_assume!(guarded(&config));
        let params = ModelParams::default();
        let run = run_until_stable(config.clone(), &mut RngStream::new(seed), &params, Mode::Local, 10_000, true).unwrap();
        let reports = run.reports.unwrap();
        prop_assert_eq!(&replay(&config, &reports).unwrap(), &run.final_config);
        let mut frames = vec![config.clone()];
        let mut c = config.clone();
        let mut rng = RngStream::new(seed);
        for _ in 0..reports.len() {
            step(&mut c, &mut rng, &params).unwrap();
            frames.push(c.clone());
        }
        let parsed = parse_trace(&render_trace(&frames)).unwrap();
        prop_assert_eq!(parsed.len(), frames.len());
        prop_assert_eq!(parsed.last().unwrap(), &run.final_config.canonical());
    }
}
