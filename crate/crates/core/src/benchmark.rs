//! Point-mass path-following benchmark.
//!
//! The state is `x = [1; z; v]` (a constant coordinate, planar position and
//! velocity) and the action is a planar force. With context `C = I₅`,
//! `D = I₂/m`, the true decoder reproduces
//! `z' = z + v`, `v' = k·v + u/m`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Context, Decoder};
use crate::env::{expected_regret, NoiseModel};
use crate::lqr::TaskCosts;
use crate::par::{self, Exec};
use crate::{Error, Result};

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Circle,
    Parabola,
    Lemniscate,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "circle" => Ok(Self::Circle),
            "parabola" => Ok(Self::Parabola),
            "lemniscate" => Ok(Self::Lemniscate),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Circle => "circle",
            Self::Parabola => "parabola",
            Self::Lemniscate => "lemniscate",
        })
    }
}

impl TrajectoryKind {
    /// Point on the curve at parameter `t ∈ [0, 1]`.
    pub fn point(self, t: f64) -> [f64; 2] {
        match self {
            Self::Circle => {
                let th = 2.0 * PI * t;
                [th.cos(), th.sin()]
            }
            Self::Parabola => [t, t * t],
            Self::Lemniscate => {
                let th = 2.0 * PI * t;
                let (s, c) = th.sin_cos();
                let den = 1.0 + s * s;
                [c / den, s * c / den]
            }
        }
    }
}

/// Targets `z*_1..z*_H` sampled at `t_h = h/H`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub targets: Vec<[f64; 2]>,
}

impl TrajectorySpec {
    pub fn horizon(&self) -> usize {
        self.targets.len()
    }
}

pub fn make_trajectory(kind: TrajectoryKind, horizon: usize) -> Result<TrajectorySpec> {
    if horizon < 2 {
        return Err(Error::Invalid {
            what: "horizon",
            reason: format!("need at least 2 stages, got {horizon}"),
        });
    }
    let targets = (1..=horizon)
        .map(|h| kind.point(h as f64 / horizon as f64))
        .collect();
    Ok(TrajectorySpec { kind, targets })
}

/// [`make_trajectory`] from a kind name.
pub fn make_trajectory_named(kind: &str, horizon: usize) -> Result<TrajectorySpec> {
    make_trajectory(kind.parse()?, horizon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Velocity decay `k` in `(0, 1]`.
    pub k_decay: f64,
    pub mass_range: [f64; 2],
    pub n_train_masses: usize,
    pub n_test_masses: usize,
    pub trajectory: TrajectoryKind,
    /// Per-coordinate noise variance on position and velocity.
    pub noise_sigma2: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            k_decay: 1.0,
            mass_range: [0.1, 10.0],
            n_train_masses: 100,
            n_test_masses: 100,
            trajectory: TrajectoryKind::Circle,
            noise_sigma2: 1e-4,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Invalid {
                what: "benchmark config",
                reason,
            })
        };
        if !(self.k_decay > 0.0 && self.k_decay <= 1.0) {
            return bad(format!("k_decay must lie in (0,1], got {}", self.k_decay));
        }
        let [lo, hi] = self.mass_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("invalid mass range [{lo}, {hi}]"));
        }
        if self.n_train_masses == 0 || self.n_test_masses == 0 {
            return bad("mass sets must be nonempty".into());
        }
        if !(self.noise_sigma2 >= 0.0 && self.noise_sigma2.is_finite()) {
            return bad(format!("noise_sigma2 must be >= 0, got {}", self.noise_sigma2));
        }
        Ok(())
    }
}

/// The true 5×7 decoder for velocity decay `k`.
pub fn build_theta_star(k_decay: f64) -> Decoder {
    #[rustfmt::skip]
    let rows = [
        1.0, 0.0, 0.0, 0.0,     0.0,     0.0, 0.0,
        0.0, 1.0, 0.0, 1.0,     0.0,     0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,     1.0,     0.0, 0.0,
        0.0, 0.0, 0.0, k_decay, 0.0,     1.0, 0.0,
        0.0, 0.0, 0.0, 0.0,     k_decay, 0.0, 1.0,
    ];
    Decoder::new(DMatrix::from_row_slice(STATE_DIM, STATE_DIM + ACTION_DIM, &rows))
        .expect("finite decoder")
}

/// Tracking cost `xᵀQ_h x = ‖z − z*_h‖²` and `R_h = I₂`.
pub fn build_cost_matrices(traj: &TrajectorySpec) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let q = traj
        .targets
        .iter()
        .map(|&[tx, ty]| {
            let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
            q[(0, 0)] = tx * tx + ty * ty;
            q[(0, 1)] = -tx;
            q[(1, 0)] = -tx;
            q[(0, 2)] = -ty;
            q[(2, 0)] = -ty;
            q[(1, 1)] = 1.0;
            q[(2, 2)] = 1.0;
            q
        })
        .collect();
    let r = vec![DMatrix::identity(ACTION_DIM, ACTION_DIM); traj.horizon() - 1];
    (q, r)
}

/// Starts on the first target, at rest: `[1; z*_1; 0; 0]`.
pub fn initial_state(traj: &TrajectorySpec) -> DVector<f64> {
    let [tx, ty] = traj.targets[0];
    DVector::from_vec(vec![1.0, tx, ty, 0.0, 0.0])
}

/// Noise covariance `σ²·diag(0, 1, 1, 1, 1)`; the constant coordinate stays 1.
pub fn noise_cov(sigma2: f64) -> DMatrix<f64> {
    let mut diag = DVector::from_element(STATE_DIM, sigma2);
    diag[0] = 0.0;
    DMatrix::from_diagonal(&diag)
}

pub fn noise_model(sigma2: f64) -> NoiseModel {
    if sigma2 == 0.0 {
        NoiseModel::zero(STATE_DIM)
    } else {
        NoiseModel::gaussian(noise_cov(sigma2)).expect("diagonal covariance")
    }
}

pub fn context_for_mass(m: f64) -> Result<Context> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::NonpositiveMass(m));
    }
    Context::new(
        DMatrix::identity(STATE_DIM, STATE_DIM),
        DMatrix::identity(ACTION_DIM, ACTION_DIM) / m,
    )
}

pub fn sample_mass<R: Rng + ?Sized>(bench: &BenchmarkConfig, rng: &mut R) -> f64 {
    let [lo, hi] = bench.mass_range;
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// A benchmark config resolved for a given horizon.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub theta_star: Decoder,
    pub trajectory: TrajectorySpec,
    pub costs: TaskCosts,
    pub noise: NoiseModel,
}

impl Benchmark {
    pub fn new(config: BenchmarkConfig, horizon: usize) -> Result<Self> {
        config.validate()?;
        let trajectory = make_trajectory(config.trajectory, horizon)?;
        let (q, r) = build_cost_matrices(&trajectory);
        let costs = TaskCosts::new(
            q,
            r,
            initial_state(&trajectory),
            noise_cov(config.noise_sigma2),
        )?;
        Ok(Self {
            theta_star: build_theta_star(config.k_decay),
            noise: noise_model(config.noise_sigma2),
            config,
            trajectory,
            costs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.trajectory.horizon()
    }

    /// Mean over `test_masses` of the expected cost gap between the policy
    /// induced by `theta` and the optimal policy, both under true dynamics.
    pub fn mean_control_error(&self, theta: &Decoder, test_masses: &[f64], exec: Exec) -> Result<f64> {
        if test_masses.is_empty() {
            return Err(Error::Invalid {
                what: "test masses",
                reason: "empty".into(),
            });
        }
        let gaps = par::map(exec, test_masses, |&m| {
            let ctx = context_for_mass(m)?;
            expected_regret(&self.theta_star, theta, &ctx, &self.costs)
        });
        let mut total = 0.0;
        for gap in gaps {
            total += gap?;
        }
        Ok(total / test_masses.len() as f64)
    }
}

/// Free-function form of [`Benchmark::mean_control_error`].
pub fn mean_control_error(
    theta: &Decoder,
    test_masses: &[f64],
    bench: &BenchmarkConfig,
    horizon: usize,
) -> Result<f64> {
    Benchmark::new(bench.clone(), horizon)?.mean_control_error(theta, test_masses, Exec::default())
}
