use ctxlqr::benchmark::{build_theta_star, context_for_mass, Benchmark, BenchmarkConfig};
use ctxlqr::decoder::Decoder;
use ctxlqr::env::run_episode;
use ctxlqr::learner::{
    beta, choose_optimistic, in_confidence_set, output_policy_map, sample_ellipsoid,
    select_optimistic_with, Hyperparams, LearnerState,
};
use ctxlqr::lqr::{solve_riccati, Dimensions};
use ctxlqr::par::Exec;
use ctxlqr::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bench_dims() -> Dimensions {
    Dimensions::new(5, 2, 5, 2).unwrap()
}

/// Learner fed `n` noisy transitions of `Θ_*` from random features.
fn trained_state(seed: u64, n: usize, noise: f64) -> LearnerState {
    let theta = build_theta_star(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LearnerState::new(bench_dims());
    for _ in 0..n {
        let z = DVector::from_fn(7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DVector::from_fn(5, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
        state.record_transition(&z, &(theta.matrix() * &z + w)).unwrap();
    }
    state.end_episode().unwrap();
    state
}

#[test]
fn theoretical_beta_matches_an_independent_evaluation() {
    let hp = Hyperparams {
        beta_override: None,
        c_theta: 3.0,
        c_w: 0.01,
        c_x: 10.0,
        delta: 0.1,
        ..Default::default()
    };
    let mut state = LearnerState::new(bench_dims());
    for _ in 0..3 {
        state.end_episode().unwrap();
    }
    // d = 5, p̃ = 7, k = 3, H = 20: log det term = (7/2)·log(1 + 3·20·100/7).
    let log_det = 3.5 * (1.0f64 + 6000.0 / 7.0).ln();
    let inner = 5.0f64.ln() + log_det + 10.0f64.ln();
    let expected = (3.0 + 0.01 * (10.0 * inner).sqrt()).powi(2);
    let got = beta(&state, &hp, 20);
    assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");

    let fixed = Hyperparams { beta_override: Some(42.0), ..hp };
    assert_eq!(beta(&state, &fixed, 20), 42.0);
}

#[test]
fn beta_grows_with_episodes() {
    let hp = Hyperparams { beta_override: None, ..Default::default() };
    let mut state = LearnerState::new(bench_dims());
    let mut last = beta(&state, &hp, 20);
    for _ in 0..5 {
        state.end_episode().unwrap();
        let b = beta(&state, &hp, 20);
        assert!(b > last);
        last = b;
    }
}

#[test]
fn optimism_never_exceeds_the_true_optimum() {
    let bench = Benchmark::new(BenchmarkConfig::default(), 20).unwrap();
    let hp = Hyperparams::default();
    for seed in 0..50 {
        let state = trained_state(seed, 40, 0.01);
        let beta_val = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let m = rng.gen_range(0.1..10.0);
        let ctx = context_for_mass(m).unwrap();
        assert!(in_confidence_set(&bench.theta_star, &state, beta_val, &hp, &ctx, &bench.costs));
        let mut pool = sample_ellipsoid(&state, beta_val, 20, &mut rng);
        pool.push(bench.theta_star.clone());
        let x1 = bench.costs.x_init();
        let sel = choose_optimistic(&state, &pool, &ctx, &bench.costs, x1, &hp, beta_val, Exec::Sequential)
            .unwrap();
        let (a, b) = bench.theta_star.dynamics(&ctx).unwrap();
        let truth = solve_riccati(&a, &b, &bench.costs).unwrap().optimal_value(1, x1).unwrap();
        assert!(sel.value <= truth + 1e-9 * (1.0 + truth), "seed {seed}: {} > {truth}", sel.value);
    }
}

#[test]
fn selection_is_identical_in_both_execution_modes() {
    let bench = Benchmark::new(BenchmarkConfig::default(), 20).unwrap();
    let ctx = context_for_mass(2.5).unwrap();
    let hp = Hyperparams::default();
    let x1 = bench.costs.x_init().clone();
    let picks: Vec<_> = [Exec::Sequential, Exec::Parallel]
        .into_iter()
        .map(|exec| {
            let mut state = trained_state(4, 30, 0.01);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            select_optimistic_with(&mut state, &ctx, &bench.costs, &x1, &hp, 0.5, exec, &mut rng).unwrap()
        })
        .collect();
    assert_eq!(picks[0].theta, picks[1].theta);
    assert_eq!(picks[0].index, picks[1].index);
    assert_eq!(picks[0].feasible, picks[1].feasible);
}

#[test]
fn selection_falls_back_to_the_estimate_when_nothing_is_feasible() {
    let bench = Benchmark::new(BenchmarkConfig::default(), 20).unwrap();
    let ctx = context_for_mass(1.0).unwrap();
    let hp = Hyperparams { c_q: 1e-6, ..Default::default() };
    let mut state = trained_state(1, 30, 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x1 = bench.costs.x_init().clone();
    let sel = select_optimistic_with(&mut state, &ctx, &bench.costs, &x1, &hp, 1.0, Exec::Sequential, &mut rng)
        .unwrap();
    assert!(sel.fallback);
    assert_eq!(&sel.theta, state.theta_hat());
    assert_eq!(state.optimist_history().len(), 1);
}

#[test]
fn policy_map_draws_are_uniform() {
    let bench = Benchmark::new(BenchmarkConfig::default(), 20).unwrap();
    let ctx = context_for_mass(1.0).unwrap();
    let hp = Hyperparams::default();
    let mut state = trained_state(2, 30, 0.01);
    let x1 = bench.costs.x_init().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let slots = 5;
    for _ in 0..slots {
        select_optimistic_with(&mut state, &ctx, &bench.costs, &x1, &hp, 1.0, Exec::Sequential, &mut rng)
            .unwrap();
    }
    let history = state.optimist_history().to_vec();
    let n = 10_000;
    let mut counts = vec![0usize; slots];
    for _ in 0..n {
        let pick = output_policy_map(&state, &mut rng).unwrap();
        counts[history.iter().position(|h| *h == pick).unwrap()] += 1;
    }
    let expected = n as f64 / slots as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 4 degrees of freedom; 18.47 is the 0.999 quantile.
    assert!(chi2 < 18.47, "chi² = {chi2}, counts {counts:?}");
}

#[test]
fn learning_from_varied_policies_converges_to_the_truth() {
    let bench = Benchmark::new(BenchmarkConfig::default(), 20).unwrap();
    let mut state = LearnerState::new(bench_dims());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // A fixed linear policy keeps u in the span of x; a different perturbed
    // decoder per episode supplies the excitation optimism normally provides.
    for _ in 0..30 {
        let delta = DMatrix::from_fn(5, 7, |_, _| rng.gen_range(-0.3..0.3));
        let policy = Decoder::new(bench.theta_star.matrix() + delta).unwrap();
        let ctx = context_for_mass(rng.gen_range(0.1..10.0)).unwrap();
        let Ok(rec) = run_episode(&bench.theta_star, &policy, &ctx, &bench.costs, &bench.noise, &mut rng) else {
            continue;
        };
        for (z, next) in rec.features.iter().zip(&rec.states[1..]) {
            state.record_transition(z, next).unwrap();
        }
        state.end_episode().unwrap();
    }
    let err = (state.theta_hat().matrix() - bench.theta_star.matrix()).norm();
    assert!(err < 0.05, "‖Θ̂ − Θ*‖ = {err}");
}
