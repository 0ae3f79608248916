mod common;

use common::{least_squares, max_abs_diff, vector};
use poisonlab::aggregators::AggregatorConfig;
use poisonlab::attacks::{AttackSpec, PoisonStyle};
use poisonlab::data::{sample_dataset, TaskKind, TaskSpec};
use poisonlab::models::{statistical_error_linear, ModelParams};
use poisonlab::rng::SeededRng;
use poisonlab::training::{empirical_loss, train, Termination, TrainConfig};

fn noisy_task(dim: usize, rng: &mut SeededRng) -> TaskSpec {
    TaskSpec::new(TaskKind::Linear, vector(&rng.normal_vec(dim)), 0.3).unwrap()
}

#[test]
fn mean_descent_reaches_least_squares() {
    let mut rng = SeededRng::new(31);
    for _ in 0..5 {
        let dim = 2 + rng.below(6);
        let task = noisy_task(dim, &mut rng);
        let data = sample_dataset(&task, 200, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = data.examples().iter().map(|e| e.features().to_vec()).collect();
        let ys: Vec<f64> = data.examples().iter().map(|e| e.label()).collect();
        let oracle = least_squares(&rows, &ys);
        let cfg = TrainConfig {
            initial_lr: 0.5,
            max_iters: 20_000,
            ..TrainConfig::default()
        };
        let trace = train(&task, &data, &AggregatorConfig::mean(), &AttackSpec::none(), &cfg, &mut rng).unwrap();
        assert!(max_abs_diff(&trace.alpha, &oracle) <= 1e-3);
    }
}

#[test]
fn interpolation_regime_recovers_truth() {
    let mut rng = SeededRng::new(32);
    let task = TaskSpec::new(TaskKind::Linear, vector(&rng.normal_vec(10)), 0.0).unwrap();
    let data = sample_dataset(&task, 100, &mut rng).unwrap();
    let cfg = TrainConfig {
        initial_lr: 0.5,
        max_iters: 20_000,
        ..TrainConfig::default()
    };
    let trace = train(&task, &data, &AggregatorConfig::mean(), &AttackSpec::none(), &cfg, &mut rng).unwrap();
    assert!(statistical_error_linear(&task, &trace.alpha, 10).unwrap().value <= 1e-4);
}

#[test]
fn shuffled_data_gives_same_trace() {
    let mut rng = SeededRng::new(33);
    let task = noisy_task(6, &mut rng);
    let data = sample_dataset(&task, 60, &mut rng).unwrap();
    let mut order: Vec<usize> = (0..60).rev().collect();
    order.rotate_left(17);
    let shuffled = data.permuted(&order);
    let cfg = TrainConfig {
        max_iters: 300,
        ..TrainConfig::default()
    };
    for agg in [AggregatorConfig::mean(), AggregatorConfig::cwtm(5), AggregatorConfig::cwmed(), AggregatorConfig::geomed()] {
        for attack in [AttackSpec::none(), AttackSpec::antimodel(5, 1e3)] {
            let a = train(&task, &data, &agg, &attack, &cfg, &mut SeededRng::new(1)).unwrap();
            let b = train(&task, &shuffled, &agg, &attack, &cfg, &mut SeededRng::new(1)).unwrap();
            assert!(max_abs_diff(&a.alpha, &b.alpha) <= 1e-9);
            assert_eq!(a.iterations(), b.iterations());
        }
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let mut rng = SeededRng::new(34);
    let task = TaskSpec::new(TaskKind::Logistic, vector(&rng.normal_vec(8)), 0.0).unwrap();
    let data = sample_dataset(&task, 300, &mut rng).unwrap();
    let cfg = TrainConfig {
        max_iters: 200,
        batch_size: Some(50),
        ..TrainConfig::default()
    };
    let agg = AggregatorConfig::cwtm(2);
    let attack = AttackSpec::batch_ascent(30, 1e3);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&task, &data, &agg, &attack, &cfg, &mut SeededRng::new(9)).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.alpha, three.alpha);
    assert_eq!(one.records, three.records);
}

#[test]
fn descent_sanity_over_windows() {
    let mut ok_runs = 0;
    for seed in 0..20 {
        let mut rng = SeededRng::new(100 + seed);
        let dim = 5 + rng.below(96);
        let task = noisy_task(dim, &mut rng);
        let data = sample_dataset(&task, 2 * dim, &mut rng).unwrap();
        let mut alpha = vec![0.0; dim];
        let mut monotone = true;
        let mut prev = empirical_loss(TaskKind::Linear, &alpha, &data).unwrap();
        for window in 1..=10 {
            let cfg = TrainConfig {
                max_iters: 10 * window,
                ..TrainConfig::default()
            };
            let trace = train(&task, &data, &AggregatorConfig::mean(), &AttackSpec::none(), &cfg, &mut rng).unwrap();
            let loss = empirical_loss(TaskKind::Linear, &trace.alpha, &data).unwrap();
            monotone &= loss <= prev + 1e-12;
            prev = loss;
            alpha = trace.alpha.to_vec();
        }
        assert_eq!(alpha.len(), dim);
        ok_runs += monotone as usize;
    }
    assert!(ok_runs >= 19);
}

#[test]
fn stationary_attack_freezes_training() {
    let mut rng = SeededRng::new(35);
    let task = TaskSpec::new(TaskKind::Linear, vector(&rng.normal_vec(400)), 0.0).unwrap();
    let data = sample_dataset(&task, 10, &mut rng).unwrap();
    let target = vector(&rng.normal_vec(400));
    let attack = AttackSpec::geomed_stationary(ModelParams::new(target.clone()), 6, PoisonStyle::Indistinguishable);
    let cfg = TrainConfig {
        init_alpha: Some(target.clone()),
        stationarity_tol: 1e-6,
        ..TrainConfig::default()
    };
    let trace = train(&task, &data, &AggregatorConfig::geomed(), &attack, &cfg, &mut rng).unwrap();
    assert_eq!(trace.termination, Termination::Stationary);
    assert_eq!(trace.iterations(), 1);
    assert_eq!(trace.alpha, target);
}
