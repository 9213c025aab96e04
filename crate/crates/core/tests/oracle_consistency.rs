use ring_march::engine::Mode;
use ring_march::experiments::{monte_carlo_with_workers, worker_count, ExperimentSpec, InitSpec};
use ring_march::oracle::exact_expected_stabilization;
use ring_march::verify::oracle_consistency;
use ring_march::{parse_grid, ModelParams};

fn simulate(track: &str, trials: usize, seed: u64) -> (f64, f64) {
    let start = parse_grid(track).unwrap();
    let spec = ExperimentSpec::new(start.n(), 1, InitSpec::Explicit(start), ModelParams::default(), Mode::Local, trials, seed);
    let r = monte_carlo_with_workers(&spec, worker_count()).unwrap();
    assert_eq!(r.timeouts, 0);
    (r.mean_t_stable.unwrap(), r.stderr.unwrap())
}

#[test]
fn pinned_oracle_values_match_a_million_runs() {
    for (track, pinned, seed) in [(">><<..", 4.0, 1), ("><.><.", 3.5, 2), (">.<.>.<.", 4.625, 3)] {
        let start = parse_grid(track).unwrap();
        let exact = exact_expected_stabilization(start.n(), start.m(), &start).unwrap();
        assert!((exact.expected_t_stable - pinned).abs() < 1e-9, "{track}: {}", exact.expected_t_stable);
        let (mean, se) = simulate(track, 1_000_000, seed);
        assert!((mean - pinned).abs() <= 4.0 * se, "{track}: {mean} ± {se} vs {pinned}");
    }
}

#[test]
fn single_step_distributions_match_the_engine() {
    for (n, m, seed) in [(4, 2, 11), (5, 3, 12), (6, 4, 13)] {
        let report = oracle_consistency(n, m, 100_000, seed, 0.001, worker_count()).unwrap();
        assert!(report.misclassified.is_empty(), "{:?}", report.misclassified);
        for s in &report.states {
            assert!(s.passed(), "({n}, {m}) {}: chi2 {} > {} unexpected {:?}", s.state, s.statistic, s.critical, s.unexpected);
        }
    }
}
