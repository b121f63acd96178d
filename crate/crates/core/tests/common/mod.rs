//! Helpers shared by the integration tests: random small LQR instances and a
//! brute-force dynamic-programming oracle that knows nothing about Riccati.

#![allow(dead_code)]

use ctxlqr::lqr::TaskCosts;
use ctxlqr::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const U_MIN: f64 = -5.0;
pub const U_MAX: f64 = 5.0;
pub const U_STEP: f64 = 1e-3;

pub struct Instance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub costs: TaskCosts,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |_, _| uniform(rng, -1.0, 1.0));
    &l * l.transpose() + DMatrix::identity(d, d) * 0.1
}

/// Noise-free instance with `d ∈ {1, 2}`, one action, `H ∈ {2, 3, 4}`.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1 + (seed % 2) as usize;
    let horizon = 2 + (seed % 3) as usize;
    let a = DMatrix::from_fn(d, d, |_, _| uniform(&mut rng, -1.0, 1.0));
    let b = DMatrix::from_fn(d, 1, |_, _| {
        let mag = uniform(&mut rng, 0.5, 1.5);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    let q = (0..horizon).map(|_| random_psd(&mut rng, d)).collect();
    let r = (0..horizon - 1)
        .map(|_| DMatrix::from_element(1, 1, uniform(&mut rng, 0.5, 2.0)))
        .collect();
    let x_init = DVector::from_fn(d, |_, _| uniform(&mut rng, -0.5, 0.5));
    let costs = TaskCosts::new(q, r, x_init, DMatrix::zeros(d, d)).unwrap();
    Instance { a, b, costs }
}

/// Quadratic (with linear and constant terms) on `R^d`, `d ≤ 2`, stored as
/// coefficients of the monomials returned by [`monomials`].
#[derive(Clone, Debug)]
struct Quadratic(Vec<f64>);

fn monomials(x: &[f64]) -> Vec<f64> {
    match *x {
        [a] => vec![a * a, a, 1.0],
        [a, b] => vec![a * a, a * b, b * b, a, b, 1.0],
        _ => panic!("oracle supports d <= 2"),
    }
}

impl Quadratic {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        match m.nrows() {
            1 => Quadratic(vec![m[(0, 0)], 0.0, 0.0]),
            2 => Quadratic(vec![
                m[(0, 0)],
                m[(0, 1)] + m[(1, 0)],
                m[(1, 1)],
                0.0,
                0.0,
                0.0,
            ]),
            _ => panic!("oracle supports d <= 2"),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        monomials(x).iter().zip(&self.0).map(|(m, c)| m * c).sum()
    }

    /// Least-squares fit through `(point, value)` samples.
    fn fit(points: &[Vec<f64>], values: &[f64]) -> Self {
        let n = monomials(&points[0]).len();
        let design = DMatrix::from_fn(points.len(), n, |i, j| monomials(&points[i])[j]);
        let rhs = DVector::from_column_slice(values);
        let coeffs = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
        Quadratic(coeffs.iter().copied().collect())
    }
}

pub struct DpResult {
    pub value: f64,
    /// Largest `|u|` picked anywhere; must stay off the grid boundary.
    pub max_action: f64,
}

/// Minimizes `xᵀQx + uᵀRu + V_next(Ax + Bu)` over the action grid.
fn grid_min(inst: &Instance, h: usize, x: &[f64], next: &Quadratic) -> (f64, f64) {
    let d = x.len();
    let q = inst.costs.q(h);
    let r = inst.costs.r(h)[(0, 0)];
    let mut state_cost = 0.0;
    for i in 0..d {
        for j in 0..d {
            state_cost += x[i] * q[(i, j)] * x[j];
        }
    }
    let ax: Vec<f64> = (0..d).map(|i| (0..d).map(|j| inst.a[(i, j)] * x[j]).sum()).collect();
    let steps = ((U_MAX - U_MIN) / U_STEP).round() as usize;
    let mut best = (f64::INFINITY, 0.0);
    let mut y = vec![0.0; d];
    for s in 0..=steps {
        let u = U_MIN + s as f64 * U_STEP;
        for i in 0..d {
            y[i] = ax[i] + inst.b[(i, 0)] * u;
        }
        let v = r * u * u + next.eval(&y);
        if v < best.0 {
            best = (v, u);
        }
    }
    (state_cost + best.0, best.1)
}

/// Backward DP over the action grid. Each stage's value function is fitted
/// as a quadratic through grid minima at sample states in `[-0.5, 0.5]^d`.
pub fn grid_dp(inst: &Instance, x: &DVector<f64>) -> DpResult {
    let d = x.len();
    let horizon = inst.costs.horizon();
    let grid: Vec<f64> = (0..5).map(|i| -0.5 + 0.25 * i as f64).collect();
    let points: Vec<Vec<f64>> = if d == 1 {
        grid.iter().map(|&a| vec![a]).collect()
    } else {
        grid.iter().flat_map(|&a| grid.iter().map(move |&b| vec![a, b])).collect()
    };

    let mut next = Quadratic::from_matrix(inst.costs.q(horizon));
    let mut max_action: f64 = 0.0;
    for h in (2..horizon).rev() {
        let mut values = Vec::with_capacity(points.len());
        for p in &points {
            let (v, u) = grid_min(inst, h, p, &next);
            max_action = max_action.max(u.abs());
            values.push(v);
        }
        next = Quadratic::fit(&points, &values);
    }
    let (value, u) = grid_min(inst, 1, x.as_slice(), &next);
    DpResult {
        value,
        max_action: max_action.max(u.abs()),
    }
}
