mod common;

use common::{fd_gradient, logistic_root_exists, max_abs_diff};
use poisonlab::data::{LabeledExample, TaskKind, TaskSpec};
use poisonlab::models::{
    gradient, invert_gradient, logistic_inversion_threshold, statistical_error_linear,
    statistical_error_logistic_mc,
};
use poisonlab::rng::SeededRng;
use poisonlab::vector::{dot, Vector};
use poisonlab::Error;

fn random_example(kind: TaskKind, dim: usize, rng: &mut SeededRng) -> LabeledExample {
    let x = Vector::new(rng.normal_vec(dim)).unwrap();
    let y = match kind {
        TaskKind::Linear => rng.standard_normal(),
        TaskKind::Logistic => rng.bernoulli(0.5) as u8 as f64,
    };
    LabeledExample::honest(x, y).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = SeededRng::new(11);
    for kind in [TaskKind::Linear, TaskKind::Logistic] {
        for _ in 0..100 {
            let dim = 1 + rng.below(20);
            let alpha = rng.normal_vec(dim);
            let ex = random_example(kind, dim, &mut rng);
            let g = gradient(kind, &alpha, &ex).unwrap();
            assert!(max_abs_diff(&g, &fd_gradient(kind, &alpha, &ex, 1e-6)) < 1e-5);
        }
    }
}

#[test]
fn linear_inversion_is_exact() {
    let mut rng = SeededRng::new(12);
    for _ in 0..1000 {
        let dim = 1 + rng.below(30);
        let alpha = rng.normal_vec(dim);
        let g = rng.normal_vec(dim);
        let ex = invert_gradient(TaskKind::Linear, &alpha, &g).unwrap();
        let back = gradient(TaskKind::Linear, &alpha, &ex).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs_diff(&back, &g) <= 1e-12 * scale);
    }
}

#[test]
fn logistic_inversion_agrees_with_dense_scan() {
    let mut rng = SeededRng::new(13);
    let mut feasible = 0;
    for _ in 0..1000 {
        let dim = 1 + rng.below(10);
        let alpha: Vec<f64> = rng.normal_vec(dim).iter().map(|v| v * 0.3).collect();
        let g: Vec<f64> = rng.normal_vec(dim).iter().map(|v| v * 0.5).collect();
        let t = dot(&alpha, &g);
        let oracle = logistic_root_exists(t, 10_000);
        match invert_gradient(TaskKind::Logistic, &alpha, &g) {
            Ok(ex) => {
                assert!(oracle, "inverted at t = {t} but the scan finds no root");
                assert_eq!(ex.label(), 0.0);
                let back = gradient(TaskKind::Logistic, &alpha, &ex).unwrap();
                let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(max_abs_diff(&back, &g) <= 1e-8 * scale);
                feasible += 1;
            }
            Err(Error::InfeasibleInversion { .. }) => assert!(!oracle, "refused at t = {t}"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(feasible > 100 && feasible < 1000);
}

#[test]
fn inversion_threshold_matches_scan() {
    let t0 = logistic_inversion_threshold();
    assert!(logistic_root_exists(t0 + 1e-6, 100_000));
    assert!(!logistic_root_exists(t0 - 1e-6, 100_000));
    assert!(matches!(
        invert_gradient(TaskKind::Logistic, &[1.0], &[-5.0]),
        Err(Error::InfeasibleInversion { .. })
    ));
}

#[test]
fn linear_error_matches_monte_carlo() {
    let mut rng = SeededRng::new(14);
    for _ in 0..20 {
        let big = 2 + rng.below(12);
        let d = 1 + rng.below(big);
        let sigma = if rng.bernoulli(0.5) { 0.0 } else { 0.5 };
        let task = TaskSpec::new(TaskKind::Linear, Vector::new(rng.normal_vec(big)).unwrap(), sigma).unwrap();
        let alpha = rng.normal_vec(d);
        let closed = statistical_error_linear(&task, &alpha, d).unwrap().value;
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        let mut x = vec![0.0; big];
        for _ in 0..n {
            rng.fill_standard_normal(&mut x);
            let y = task.draw_label(&x, &mut rng);
            let r = dot(&alpha, &x[..d]) - y;
            sum += r * r;
            sq += r.powi(4);
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - closed).abs() <= 3.0 * se, "closed {closed} vs mc {mean} ± {se}");
    }
}

#[test]
fn logistic_error_examples() {
    let mut rng = SeededRng::new(15);
    let beta = Vector::new(rng.normal_vec(8)).unwrap();
    let task = TaskSpec::new(TaskKind::Logistic, beta, 0.0).unwrap();
    let est = statistical_error_logistic_mc(&task, &[0.0; 4], 4, 20_000, &mut rng).unwrap();
    assert!((est.value - 2f64.ln()).abs() <= 3.0 * est.std_error + 1e-12);

    let mut e1 = vec![0.0; 8];
    e1[0] = 10.0;
    let sharp = TaskSpec::new(TaskKind::Logistic, Vector::new(e1.clone()).unwrap(), 0.0).unwrap();
    let est = statistical_error_logistic_mc(&sharp, &e1[..3], 3, 20_000, &mut rng).unwrap();
    assert!(est.value < 2f64.ln());
}
