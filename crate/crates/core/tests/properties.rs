use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bsccs::bootstrap::quantile;
use bsccs::eras::{build_eras, EventRecord, ExposureInterval, ObservationPeriod};
use bsccs::longformat::DrugDictionary;
use bsccs::sim::{oracle_gradient, oracle_hessian, small_instance, small_instance_config};
use bsccs::solver::{log_posterior, Solver};
use bsccs::{
    build_dataset, fit, kfold_split, run_bootstrap, simulate, BootstrapConfig, Dataset, EngineState,
    PriorSpec, SolverConfig,
};

fn random_beta(ds: &Dataset, seed: u64, spread: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ds.num_drugs()).map(|_| rng.random_range(-spread..spread)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

prop_compose! {
    fn raw_subject()(
        start in -40i64..40,
        span in 1i64..90,
    )(
        start in Just(start),
        end in Just(start + span),
        intervals in prop::collection::vec((0u32..4, start - 20..start + span + 20, 1i64..30), 0..8),
        events in prop::collection::vec(start..start + span, 0..6),
    ) -> (i64, i64, Vec<(u32, i64, i64)>, Vec<i64>) {
        let intervals = intervals.into_iter().map(|(d, a, len)| (d, a, a + len)).collect();
        (start, end, intervals, events)
    }
}

fn eras_of(subject: &(i64, i64, Vec<(u32, i64, i64)>, Vec<i64>)) -> Vec<bsccs::eras::DatedEra> {
    let (start, end, intervals, events) = subject;
    let labels: Vec<String> = (0..4).map(|d| format!("D{d}")).collect();
    let dict = DrugDictionary::fixed(labels.clone()).unwrap();
    let obs = ObservationPeriod {
        subject_id: "p".into(),
        start_day: *start,
        end_day: *end,
    };
    let ivs: Vec<ExposureInterval> = intervals
        .iter()
        .map(|&(d, a, b)| ExposureInterval {
            subject_id: "p".into(),
            drug_id: labels[d as usize].clone(),
            start_day: a,
            end_day: b,
        })
        .collect();
    let evs: Vec<EventRecord> = events
        .iter()
        .map(|&day| EventRecord {
            subject_id: "p".into(),
            day,
        })
        .collect();
    build_eras(&obs, &ivs, &evs, &dict).unwrap().eras
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eras_partition_the_observation_period(s in raw_subject()) {
        let eras = eras_of(&s);
        prop_assert_eq!(eras.first().unwrap().start_day, s.0);
        prop_assert_eq!(eras.last().unwrap().end_day, s.1);
        for pair in eras.windows(2) {
            prop_assert_eq!(pair[0].end_day, pair[1].start_day);
        }
        let total: i64 = eras.iter().map(|e| e.end_day - e.start_day).sum();
        prop_assert_eq!(total, s.1 - s.0);
    }

    #[test]
    fn adjacent_eras_differ_in_exposure(s in raw_subject()) {
        for pair in eras_of(&s).windows(2) {
            prop_assert_ne!(&pair[0].exposures, &pair[1].exposures);
        }
    }

    #[test]
    fn era_events_are_conserved(s in raw_subject()) {
        let counted: u32 = eras_of(&s).iter().map(|e| e.event_count).sum();
        prop_assert_eq!(counted as usize, s.3.len());
    }

    #[test]
    fn era_exposures_match_any_covering_interval(s in raw_subject()) {
        for e in eras_of(&s) {
            let covering: BTreeSet<u32> = s.2
                .iter()
                .filter(|&&(_, a, b)| a <= e.start_day && e.start_day < b)
                .map(|&(d, _, _)| d)
                .collect();
            prop_assert_eq!(e.exposures.iter().copied().collect::<BTreeSet<_>>(), covering);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_invariants_hold(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        prop_assert_eq!(*ds.subject_offsets().last().unwrap(), ds.num_rows());
        for j in 0..ds.num_drugs() {
            let rebuilt: u64 = ds.column(j).rows.iter().map(|&k| u64::from(ds.events()[k as usize])).sum();
            prop_assert_eq!(rebuilt, ds.y_dot_x()[j]);
        }
        let identity: Vec<usize> = (0..ds.num_subjects()).collect();
        prop_assert_eq!(&ds.subset(&identity).unwrap(), &ds);
        prop_assert_eq!(&build_dataset(&ds.to_records(), ds.num_drugs()).unwrap().to_records(), &ds.to_records());
    }

    #[test]
    fn hessian_is_never_positive(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let state = EngineState::<f64>::new(&ds, &random_beta(&ds, seed, 3.0)).unwrap();
        for j in 0..ds.num_drugs() {
            prop_assert!(state.fused_grad_hess(&ds, j).unwrap().h <= 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let beta = random_beta(&ds, seed + 1, 1.0);
        let state = EngineState::<f64>::new(&ds, &beta).unwrap();
        for j in 0..ds.num_drugs() {
            let gh = state.fused_grad_hess(&ds, j).unwrap();
            prop_assert!(rel(gh.g, oracle_gradient(&ds, &beta, j, 1e-5)) <= 1e-5);
            prop_assert!(rel(gh.h, oracle_hessian(&ds, &beta, j, 1e-3)) <= 1e-4);
        }
    }

    #[test]
    fn finite_difference_steps_agree(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let beta = random_beta(&ds, seed + 2, 1.0);
        for j in 0..ds.num_drugs() {
            let coarse = oracle_gradient(&ds, &beta, j, 1e-4);
            let fine = oracle_gradient(&ds, &beta, j, 1e-5);
            prop_assert!(rel(coarse, fine) <= 1e-3);
        }
    }

    #[test]
    fn single_precision_derivatives_track_double(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let beta = random_beta(&ds, seed + 3, 1.0);
        let double = EngineState::<f64>::new(&ds, &beta).unwrap();
        let single = EngineState::<f32>::new(&ds, &beta).unwrap();
        for j in 0..ds.num_drugs() {
            let (d, s) = (double.fused_grad_hess(&ds, j).unwrap(), single.fused_grad_hess(&ds, j).unwrap());
            prop_assert!(rel(s.g, d.g) <= 1e-4, "g {} vs {}", s.g, d.g);
            prop_assert!(rel(s.h, d.h) <= 1e-4, "h {} vs {}", s.h, d.h);
        }
    }

    #[test]
    fn incremental_updates_do_not_drift(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = EngineState::<f64>::new(&ds, &vec![0.0; ds.num_drugs()]).unwrap();
        for _ in 0..1000 {
            let j = rng.random_range(0..ds.num_drugs());
            // keep coefficients bounded so the walk stays far from overflow
            let delta = -0.2 * state.beta()[j] + rng.random_range(-0.3..0.3);
            state.sparse_delta_update(&ds, j, delta).unwrap();
        }
        prop_assert!(state.drift(&ds).unwrap() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn laplace_moves_from_zero_only_uphill(
        g in -5.0f64..5.0,
        h in -5.0f64..-1e-3,
        variance in 0.01f64..10.0,
    ) {
        let prior = PriorSpec::laplace(variance);
        let delta = prior.penalized_step(0.0, g, h).unwrap();
        let slope = 1.0 / prior.laplace_scale();
        // one-sided derivatives of the penalized local model at zero
        let right = g - slope;
        let left = -g - slope;
        if delta > 0.0 {
            prop_assert!(right > 0.0);
        } else if delta < 0.0 {
            prop_assert!(left > 0.0);
        } else {
            prop_assert!(right <= 0.0 && left <= 0.0);
        }
    }

    #[test]
    fn laplace_never_crosses_zero(
        beta in prop_oneof![-3.0f64..-1e-6, 1e-6f64..3.0],
        g in -5.0f64..5.0,
        h in -5.0f64..0.0,
        variance in 0.01f64..10.0,
    ) {
        let prior = PriorSpec::laplace(variance);
        let next = beta + prior.penalized_step(beta, g, h).unwrap();
        prop_assert!(next == 0.0 || next.signum() == beta.signum(), "{beta} -> {next}");
    }

    #[test]
    fn normal_step_solves_local_quadratic(
        beta in -3.0f64..3.0,
        g in -5.0f64..5.0,
        h in -5.0f64..0.0,
        variance in 0.01f64..10.0,
    ) {
        let prior = PriorSpec::normal(variance);
        let delta = prior.penalized_step(beta, g, h).unwrap();
        let residual = g + h * delta - (beta + delta) / variance;
        prop_assert!(residual.abs() <= 1e-9 * (1.0 + g.abs() + beta.abs() / variance));
    }
}

fn priors() -> [PriorSpec; 2] {
    [PriorSpec::normal(1.0), PriorSpec::laplace(1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn each_cycle_raises_the_posterior(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        for prior in priors() {
            let mut solver = Solver::<f64>::new(&ds, &prior, &SolverConfig::default(), None).unwrap();
            let mut last = solver.log_posterior();
            for _ in 0..30 {
                let criterion = solver.run_cycle().unwrap();
                let now = solver.log_posterior();
                prop_assert!(now >= last - 1e-8 * (1.0 + last.abs()), "{last} -> {now}");
                last = now;
                if criterion <= SolverConfig::default().epsilon {
                    break;
                }
            }
        }
    }

    #[test]
    fn fit_never_loses_posterior(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let init = random_beta(&ds, seed + 4, 1.0);
        for prior in priors() {
            let r = fit(&ds, &prior, &SolverConfig::default(), Some(&init)).unwrap();
            prop_assert!(r.log_posterior >= log_posterior(&ds, &prior, &init).unwrap() - 1e-10);
        }
    }

    #[test]
    fn laplace_zeros_are_exact(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let r = fit(&ds, &PriorSpec::laplace(0.05), &SolverConfig::default(), None).unwrap();
        for b in r.beta {
            prop_assert!(b != 0.0 || b.to_bits() == 0, "negative zero");
            prop_assert!(b == 0.0 || b.abs() > 1e-12, "residue {b:e}");
        }
    }

    #[test]
    fn warm_start_from_solution_is_immediate(seed in 0u64..10_000) {
        // at the default tolerance the cold fit stops short by more than 1e-8
        let cfg = SolverConfig { epsilon: 1e-10, max_cycles: 10_000, ..Default::default() };
        let ds = small_instance(seed);
        for prior in priors() {
            let cold = fit(&ds, &prior, &cfg, None).unwrap();
            let warm = fit(&ds, &prior, &cfg, Some(&cold.beta)).unwrap();
            prop_assert!(warm.cycles_run <= 2, "{} cycles", warm.cycles_run);
            for (a, b) in warm.beta.iter().zip(&cold.beta) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn folds_partition_subjects(n in 1usize..400, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn intervals_bracket_the_median(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let mut cfg = BootstrapConfig::new(PriorSpec::laplace(0.5));
        cfg.replicates = 40;
        cfg.seed = seed;
        let r = run_bootstrap(&ds, &cfg).unwrap();
        for (j, d) in r.drugs.iter().enumerate() {
            let mut values: Vec<f64> = r.replicates.iter().filter(|x| x.converged).map(|x| x.beta[j]).collect();
            values.sort_by(f64::total_cmp);
            let median = quantile(&values, 0.5);
            prop_assert!(d.lower <= median && median <= d.upper);
        }
    }

    #[test]
    fn more_replicates_keep_earlier_ones(seed in 0u64..10_000) {
        let ds = small_instance(seed);
        let mut cfg = BootstrapConfig::new(PriorSpec::normal(1.0));
        cfg.seed = seed;
        cfg.replicates = 10;
        let short = run_bootstrap(&ds, &cfg).unwrap();
        cfg.replicates = 25;
        let long = run_bootstrap(&ds, &cfg).unwrap();
        prop_assert_eq!(&short.replicates[..], &long.replicates[..10]);
    }
}

#[test]
fn estimates_approach_truth_as_subjects_grow() {
    let mut errors = Vec::new();
    for n in [500, 2000, 8000] {
        let mut cfg = small_instance_config(3);
        cfg.subjects = n;
        cfg.seed = 77;
        let (ds, truth) = simulate(&cfg).unwrap();
        let r = fit(&ds, &PriorSpec::normal(100.0), &SolverConfig::default(), None).unwrap();
        let err = r.beta.iter().zip(&truth.true_beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    assert!(errors.windows(2).all(|w| w[1] <= w[0]), "{errors:?}");
}
