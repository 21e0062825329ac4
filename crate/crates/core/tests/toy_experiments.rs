use prefopt::experiments::{
    generate_toy_task, generate_toy_task_with_mode, run_sweep, train_toy, verify_theorem2, SweepParam, TaskMode,
    Trainer, TrainingConfig,
};
use prefopt::losses::{LossKind, LossSpec};
use proptest::prelude::*;

const GOLDEN_SEED: u64 = 7;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_prompt_is_partitioned(seed in any::<u64>()) {
        for mode in [TaskMode::MainText, TaskMode::AppendixB1] {
            let task = generate_toy_task_with_mode(seed, mode);
            prop_assert_eq!(&task, &generate_toy_task_with_mode(seed, mode));
            for prompt in 0..task.num_prompts {
                let mut all = task.ood_indices[prompt].clone();
                for pair in task.pairs_for(prompt) {
                    prop_assert_ne!(pair.chosen, pair.rejected);
                    all.extend([pair.chosen, pair.rejected]);
                }
                all.sort_unstable();
                prop_assert_eq!(all, vec![0, 1, 2, 3]);
            }
        }
    }
}

#[test]
fn probability_mass_is_conserved_at_every_step() {
    let task = generate_toy_task(3);
    for kind in LossKind::ALL {
        let config = TrainingConfig { steps: 200, trace_every: 1, ..TrainingConfig::figure(LossSpec::new(kind), 3) };
        let mut trainer = Trainer::new(&task, config).unwrap();
        while trainer.step_index() < config.steps {
            trainer.step().unwrap();
            for pair in &task.pairs {
                let p = trainer.policy().forward(pair.prompt).unwrap();
                let ood: f64 = task.ood_indices[pair.prompt].iter().map(|&j| p[j]).sum();
                assert!((p[pair.chosen] + p[pair.rejected] + ood - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn all_losses_share_step_zero() {
    let task = generate_toy_task(GOLDEN_SEED);
    let step0: Vec<Vec<(f64, f64, f64)>> = LossKind::ALL
        .into_iter()
        .map(|kind| {
            let config = TrainingConfig { steps: 5, trace_every: 5, ..TrainingConfig::figure(LossSpec::new(kind), GOLDEN_SEED) };
            let trace = train_toy(&task, &config).unwrap();
            trace.rows_at(0).map(|r| (r.p_chosen, r.p_rejected, r.kl_to_ref)).collect()
        })
        .collect();
    assert!(step0.windows(2).all(|w| w[0] == w[1]));
    assert!(step0[0].iter().all(|r| r.2 == 0.0));
}

#[test]
fn golden_seed_dpo_loses_in_distribution_mass() {
    let task = generate_toy_task(GOLDEN_SEED);
    let trace = train_toy(&task, &TrainingConfig::figure(LossSpec::dpo(0.1), GOLDEN_SEED)).unwrap();
    let start: Vec<f64> = trace.rows_at(0).map(|r| r.in_dist_log_mass).collect();
    let end: Vec<f64> = trace.rows_at(trace.last_step()).map(|r| r.in_dist_log_mass).collect();
    assert!(start.iter().zip(&end).any(|(s, e)| e < s));
    let golden = [-2.355364416178211, -1.2212453270876796e-14, -8.821116943773703, -28.922659327046876];
    for (got, want) in end.iter().zip(golden) {
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-6), "{got} vs {want}");
    }
}

#[test]
fn golden_seed_bdpo_never_lowers_chosen() {
    let task = generate_toy_task(GOLDEN_SEED);
    let trace = train_toy(&task, &TrainingConfig::figure(LossSpec::bdpo(0.1, 0.5), GOLDEN_SEED)).unwrap();
    let start: Vec<f64> = trace.rows_at(0).map(|r| r.p_chosen).collect();
    for row in &trace.rows {
        assert!(row.p_chosen >= start[row.prompt], "step {} prompt {}", row.step, row.prompt);
    }
    let golden = [0.9999527626635977, 0.9998657216434014, 0.9999869751669634, 0.9999610279116801];
    for (row, want) in trace.rows_at(trace.last_step()).zip(golden) {
        assert!(close(row.p_chosen, want), "{} vs {want}", row.p_chosen);
    }
}

#[test]
fn theorem2_bound_over_seeds() {
    for mixture in [0.25, 0.5, 0.75] {
        for seed in 0..5 {
            let task = generate_toy_task(seed);
            let config = TrainingConfig { steps: 100, ..TrainingConfig::theorem(LossSpec::bdpo(0.1, mixture), seed) };
            let report = verify_theorem2(&task, &config).unwrap();
            assert!(report.pass, "λ={mixture} seed={seed}");
        }
    }
}

#[test]
fn mixture_sweep_approaches_dpo() {
    let task = generate_toy_task(GOLDEN_SEED);
    let base = TrainingConfig::figure(LossSpec::bdpo(0.1, 0.5), GOLDEN_SEED);
    let result = run_sweep(&task, &base, SweepParam::Mixture, &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
    let d: Vec<f64> = result.distances().into_iter().map(Option::unwrap).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn metadata_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let task = generate_toy_task(1);
    let config = TrainingConfig { steps: 20, trace_every: 10, ..TrainingConfig::figure(LossSpec::dpop(0.1, 5.0), 1) };
    let trace = train_toy(&task, &config).unwrap();
    let paths = trace.save(dir.path(), "dpop").unwrap();
    let meta: prefopt::experiments::TrainingMetadata =
        serde_json::from_str(&std::fs::read_to_string(&paths[1]).unwrap()).unwrap();
    assert_eq!(meta, trace.metadata);
    assert_eq!(std::fs::read_to_string(&paths[0]).unwrap(), trace.csv_string());
}
