mod common;

use ctxlqr::env::{run_episode, NoiseModel};
use ctxlqr::lqr::{bellman_residual, expected_policy_cost, solve_riccati, LqrTask, TaskCosts};
use ctxlqr::decoder::{Context, Decoder};
use ctxlqr::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn optimal_value_matches_grid_dp_on_fresh_instances() {
    for seed in 100..115 {
        let inst = common::random_instance(seed);
        let sol = solve_riccati(&inst.a, &inst.b, &inst.costs).unwrap();
        let x = inst.costs.x_init();
        let dp = common::grid_dp(&inst, x);
        assert!(dp.max_action < common::U_MAX - 0.01, "seed {seed}: grid boundary reached");
        let got = sol.optimal_value(1, x).unwrap();
        assert!((got - dp.value).abs() <= 1e-4, "seed {seed}: {got} vs {}", dp.value);
    }
}

#[test]
fn bellman_residual_is_small_on_a_fine_grid() {
    let grid: Vec<DVector<f64>> = (0..=10_000)
        .map(|i| DVector::from_element(1, -5.0 + 1e-3 * i as f64))
        .collect();
    for seed in 0..8 {
        let inst = common::random_instance(seed);
        let costs = inst.costs.clone().with_noise_cov(DMatrix::identity(inst.a.nrows(), inst.a.nrows()) * 0.3).unwrap();
        let task = LqrTask::new(inst.a.clone(), inst.b.clone(), costs).unwrap();
        let sol = solve_riccati(&task.a, &task.b, &task.costs).unwrap();
        for h in 1..task.horizon() {
            let res = bellman_residual(&task, &sol, h, task.costs.x_init(), &grid).unwrap();
            assert!(res <= 1e-5, "seed {seed}, h {h}: residual {res}");
        }
    }
}

#[test]
fn perturbing_any_gain_raises_the_expected_cost() {
    for seed in 0..10 {
        let inst = common::random_instance(seed);
        let sol = solve_riccati(&inst.a, &inst.b, &inst.costs).unwrap();
        let x1 = inst.costs.x_init();
        let best = expected_policy_cost(&inst.a, &inst.b, &inst.costs, sol.gains(), x1).unwrap();
        for h in 0..sol.gains().len() {
            for col in 0..inst.a.ncols() {
                for eps in [-1e-2, 1e-2] {
                    let mut gains = sol.gains().to_vec();
                    gains[h][(0, col)] += eps;
                    let cost = expected_policy_cost(&inst.a, &inst.b, &inst.costs, &gains, x1).unwrap();
                    assert!(cost >= best - 1e-12, "seed {seed}: {cost} < {best}");
                }
            }
        }
    }
}

#[test]
fn monte_carlo_cost_agrees_with_the_closed_form() {
    // 2-d state, 1 action; identity contexts so the decoder is [A, B].
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let theta = Decoder::new(DMatrix::from_fn(2, 3, |i, j| if j < 2 { a[(i, j)] } else { b[(i, 0)] })).unwrap();
    let ctx = Context::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
    let cov = DMatrix::identity(2, 2) * 0.25;
    let costs = TaskCosts::new(
        vec![DMatrix::identity(2, 2); 6],
        vec![DMatrix::identity(1, 1) * 0.5; 5],
        DVector::from_vec(vec![1.0, -0.5]),
        cov.clone(),
    )
    .unwrap();
    let noise = NoiseModel::gaussian(cov).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4000;
    let mut total = 0.0;
    let mut expected = 0.0;
    for _ in 0..n {
        let rec = run_episode(&theta, &theta, &ctx, &costs, &noise, &mut rng).unwrap();
        total += rec.realized_cost;
        expected = rec.policy_cost;
    }
    let mean = total / n as f64;
    assert!((mean - expected).abs() <= 0.05 * expected, "{mean} vs {expected}");
}
