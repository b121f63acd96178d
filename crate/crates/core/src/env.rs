//! Ground-truth simulation: noisy linear dynamics, episode rollouts and regret.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::{context_features, Context, Decoder};
use crate::lqr::{expected_policy_cost, is_symmetric, shape, solve_riccati, TaskCosts, PSD_TOL};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Zero,
}

/// Additive process noise `w ~ N(0, cov)`, or none.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    cov: DMatrix<f64>,
    /// `L` with `L Lᵀ = cov`.
    factor: DMatrix<f64>,
}

impl NoiseModel {
    pub fn zero(d: usize) -> Self {
        Self {
            kind: NoiseKind::Zero,
            cov: DMatrix::zeros(d, d),
            factor: DMatrix::zeros(d, d),
        }
    }

    pub fn gaussian(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.iter().all(|v| v.is_finite()) || !is_symmetric(&cov) {
            return Err(Error::Invalid {
                what: "noise covariance",
                reason: "must be finite and symmetric".into(),
            });
        }
        let eig = SymmetricEigen::new(cov.clone());
        let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if eig.eigenvalues.iter().any(|&l| l < -PSD_TOL * (1.0 + scale)) {
            return Err(Error::Invalid {
                what: "noise covariance",
                reason: "not positive semi-definite".into(),
            });
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            kind: NoiseKind::Gaussian,
            cov,
            factor,
        })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self.kind {
            NoiseKind::Zero => DVector::zeros(self.dim()),
            NoiseKind::Gaussian => {
                let g = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
                &self.factor * g
            }
        }
    }
}

/// `A x + B u + w`.
pub fn step<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let d = x.len();
    if a.shape() != (d, d) {
        return Err(Error::dims("A", format!("{d}x{d}"), shape(a)));
    }
    if b.nrows() != d || b.ncols() != u.len() {
        return Err(Error::dims("B", format!("{d}x{}", u.len()), shape(b)));
    }
    if noise.dim() != d {
        return Err(Error::dims("noise", d, noise.dim()));
    }
    Ok(a * x + b * u + noise.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// `x_1..x_H`.
    pub states: Vec<DVector<f64>>,
    /// `u_1..u_{H-1}`.
    pub actions: Vec<DVector<f64>>,
    /// `z_1..z_{H-1}`.
    pub features: Vec<DVector<f64>>,
    pub realized_cost: f64,
    /// `J*_1(M_*, x_1)` in expectation.
    pub optimal_cost: f64,
    /// Expected cost of the played linear policy under the true dynamics.
    pub policy_cost: f64,
    pub context: Context,
}

/// Plays one episode: gains come from the Riccati solution of
/// `M_{theta_policy, ctx}`, states evolve under `M_{theta_true, ctx}`.
///
/// Expected costs in the record use the covariance of `noise`.
pub fn run_episode<R: Rng + ?Sized>(
    theta_true: &Decoder,
    theta_policy: &Decoder,
    ctx: &Context,
    costs: &TaskCosts,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let (a, b) = theta_true.dynamics(ctx)?;
    let (a_pol, b_pol) = theta_policy.dynamics(ctx)?;
    let costs = costs.clone().with_noise_cov(noise.cov().clone())?;
    let plan = solve_riccati(&a_pol, &b_pol, &costs)?;
    let truth = solve_riccati(&a, &b, &costs)?;
    let x1 = costs.x_init();
    let horizon = costs.horizon();

    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon - 1);
    let mut features = Vec::with_capacity(horizon - 1);
    let mut realized = 0.0;
    let mut x = x1.clone();
    for h in 1..horizon {
        let u = plan.gain_action(h, &x)?;
        realized += x.dot(&(costs.q(h) * &x)) + u.dot(&(costs.r(h) * &u));
        features.push(context_features(ctx, &x, &u)?);
        let next = step(&a, &b, &x, &u, noise, rng)?;
        states.push(std::mem::replace(&mut x, next));
        actions.push(u);
    }
    realized += x.dot(&(costs.q(horizon) * &x));
    states.push(x);

    Ok(EpisodeRecord {
        states,
        actions,
        features,
        realized_cost: realized,
        optimal_cost: truth.optimal_value(1, x1)?,
        policy_cost: expected_policy_cost(&a, &b, &costs, plan.gains(), x1)?,
        context: ctx.clone(),
    })
}

/// `J^π_1(M_*, x_1) − J*_1(M_*, x_1)` for the episode's policy.
pub fn episode_regret(record: &EpisodeRecord) -> f64 {
    record.policy_cost - record.optimal_cost
}

/// Expected suboptimality of the certainty-equivalent policy of `theta_policy`
/// on context `ctx` whose true decoder is `theta_true`. Noise covariance is
/// taken from `costs`.
pub fn expected_regret(
    theta_true: &Decoder,
    theta_policy: &Decoder,
    ctx: &Context,
    costs: &TaskCosts,
) -> Result<f64> {
    let (a, b) = theta_true.dynamics(ctx)?;
    let (a_pol, b_pol) = theta_policy.dynamics(ctx)?;
    let plan = solve_riccati(&a_pol, &b_pol, costs)?;
    let truth = solve_riccati(&a, &b, costs)?;
    let x1 = costs.x_init();
    Ok(expected_policy_cost(&a, &b, costs, plan.gains(), x1)? - truth.optimal_value(1, x1)?)
}
