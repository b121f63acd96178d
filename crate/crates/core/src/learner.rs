//! Optimistic online learner for the context-to-dynamics decoder.
//!
//! The learner accumulates `V = I + Σ z zᵀ` and `W = Σ z x'ᵀ` over observed
//! transitions, fits `Θ̂ᵀ = V⁻¹ W` by ridge regression, and before each episode
//! picks the decoder inside the confidence ellipsoid
//! `tr[(Θ − Θ̂) V (Θ − Θ̂)ᵀ] ≤ β` whose induced optimal cost is lowest.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::{Context, Decoder};
use crate::lqr::{solve_riccati, Dimensions, TaskCosts};
use crate::par::{self, Exec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Cap on `‖P_h‖₂` for admissible decoders.
    pub c_q: f64,
    /// Bound on `‖Θ_*‖_F`.
    pub c_theta: f64,
    /// Sub-Gaussian scale of the noise.
    pub c_w: f64,
    /// Bound on the feature norm `‖z‖`.
    pub c_x: f64,
    pub delta: f64,
    pub n_candidates: usize,
    /// Constant β used instead of the theoretical schedule when set.
    /// Written as a number, or `"theory"` for the schedule.
    #[serde(with = "beta_repr")]
    pub beta_override: Option<f64>,
}

mod beta_repr {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    const THEORY: &str = "theory";

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Fixed(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => Repr::Fixed(*b),
            None => Repr::Named(THEORY.into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Fixed(b) => Ok(Some(b)),
            Repr::Named(name) if name == THEORY => Ok(None),
            Repr::Named(other) => Err(de::Error::custom(format!(
                "beta_override must be a number or \"{THEORY}\", got \"{other}\""
            ))),
        }
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            c_q: 1e5,
            c_theta: 3.0,
            c_w: 1e-2,
            c_x: 10.0,
            delta: 0.1,
            n_candidates: 100,
            beta_override: Some(1e4),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Invalid {
                what: "hyperparams",
                reason,
            })
        };
        if !(self.c_q > 0.0 && self.c_theta > 0.0 && self.c_x > 0.0) {
            return bad("c_q, c_theta and c_x must be positive".into());
        }
        if self.c_w.is_nan() || self.c_w < 0.0 {
            return bad(format!("c_w must be nonnegative, got {}", self.c_w));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0,1), got {}", self.delta));
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be >= 1".into());
        }
        if let Some(b) = self.beta_override {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("beta_override must be finite and >= 0, got {b}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LearnerState {
    dims: Dimensions,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    /// Upper-triangular square root of the information matrix: `RᵀR = V`.
    r: DMatrix<f64>,
    /// `RᵀS = W`.
    s: DMatrix<f64>,
    theta_hat: Decoder,
    episodes: usize,
    transitions: usize,
    max_feature_sq: f64,
    optimist_history: Vec<Decoder>,
}

/// Fresh learner: `V = I`, `W = 0`, `Θ̂ = 0`.
pub fn init_learner(dims: Dimensions) -> LearnerState {
    LearnerState::new(dims)
}

impl LearnerState {
    pub fn new(dims: Dimensions) -> Self {
        let n = dims.features();
        Self {
            dims,
            v: DMatrix::identity(n, n),
            w: DMatrix::zeros(n, dims.d),
            r: DMatrix::identity(n, n),
            s: DMatrix::zeros(n, dims.d),
            theta_hat: Decoder::zeros(dims),
            episodes: 0,
            transitions: 0,
            max_feature_sq: 0.0,
            optimist_history: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Current regression estimate `Θ̂`.
    pub fn theta_hat(&self) -> &Decoder {
        &self.theta_hat
    }

    /// Completed episodes `k`.
    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    /// Largest `‖z‖²` recorded so far.
    pub fn max_feature_sq(&self) -> f64 {
        self.max_feature_sq
    }

    pub fn optimist_history(&self) -> &[Decoder] {
        &self.optimist_history
    }

    /// `V ← V + z zᵀ`, `W ← W + z x'ᵀ`.
    ///
    /// The square-root factors are updated by re-triangularizing
    /// `[R S; zᵀ x'ᵀ]`, so solves never form the squared condition number of
    /// `V` after explosive episodes.
    pub fn record_transition(&mut self, z: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        let n = self.dims.features();
        let d = self.dims.d;
        if z.len() != n {
            return Err(Error::dims("feature", n, z.len()));
        }
        if x_next.len() != d {
            return Err(Error::dims("next state", d, x_next.len()));
        }
        if !z.iter().chain(x_next.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite transition".into()));
        }
        self.v.ger(1.0, z, z, 1.0);
        self.w.ger(1.0, z, x_next, 1.0);

        let mut stack = DMatrix::<f64>::zeros(n + 1, n + d);
        stack.view_mut((0, 0), (n, n)).copy_from(&self.r);
        stack.view_mut((0, n), (n, d)).copy_from(&self.s);
        stack.view_mut((n, 0), (1, n)).copy_from(&z.transpose());
        stack.view_mut((n, n), (1, d)).copy_from(&x_next.transpose());
        let tri = stack.qr().r();
        self.r = tri.view((0, 0), (n, n)).upper_triangle();
        self.s = tri.view((0, n), (n, d)).into_owned();

        self.transitions += 1;
        self.max_feature_sq = self.max_feature_sq.max(z.norm_squared());
        Ok(())
    }

    /// Ridge estimate with `Θᵀ = V⁻¹ W`, solved as `Θᵀ = R⁻¹ S`.
    pub fn regress(&self) -> Result<Decoder> {
        let sol = self
            .r
            .solve_upper_triangular(&self.s)
            .ok_or_else(|| Error::NumericalFailure("information factor is singular".into()))?;
        Decoder::new(sol.transpose())
            .map_err(|_| Error::NumericalFailure("ridge solution is not finite".into()))
    }

    /// Closes an episode: bumps `k` and refits `Θ̂`.
    pub fn end_episode(&mut self) -> Result<()> {
        self.theta_hat = self.regress()?;
        self.episodes += 1;
        Ok(())
    }

    /// `det(V) = Π R_ii²`.
    pub fn det_v(&self) -> Result<f64> {
        Ok(self.r.diagonal().iter().map(|l| l * l).product())
    }

    /// `(1 + n·c_x²/p̃)^p̃` with `n` the number of recorded transitions. After
    /// `k` episodes of `H−1` transitions, `n = k(H−1)`.
    pub fn det_bound(&self, c_x_sq: f64) -> f64 {
        let pt = self.dims.features() as f64;
        (1.0 + self.transitions as f64 * c_x_sq / pt).powf(pt)
    }

    /// `tr[(Θ − Θ̂) V (Θ − Θ̂)ᵀ]`.
    pub fn ellipsoid_distance(&self, theta: &Decoder) -> Result<f64> {
        let m = theta.matrix();
        if m.shape() != self.theta_hat.matrix().shape() {
            return Err(Error::dims(
                "decoder",
                format!("{}x{}", self.dims.d, self.dims.features()),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let delta = m - self.theta_hat.matrix();
        Ok((&self.r * delta.transpose()).norm_squared())
    }

    /// `G ↦ G R⁻ᵀ`, which maps the Frobenius ball onto the `V`-weighted
    /// ellipsoid.
    fn whiten(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        self.r
            .solve_upper_triangular(&g.transpose())
            .expect("R has a positive diagonal bound")
            .transpose()
    }
}

/// Free-function form of [`LearnerState::record_transition`].
pub fn record_transition(
    state: &mut LearnerState,
    z: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<()> {
    state.record_transition(z, x_next)
}

/// Free-function form of [`LearnerState::regress`].
pub fn regress(state: &LearnerState) -> Result<Decoder> {
    state.regress()
}

/// Confidence radius for episode `k`:
/// `(c_Θ + c_w·√(2d(log d + p̃·log(1 + kHc_x²/p̃)/2 + log δ⁻¹)))²`,
/// or the override when one is set.
pub fn beta(state: &LearnerState, hp: &Hyperparams, horizon: usize) -> f64 {
    if let Some(b) = hp.beta_override {
        return b;
    }
    let d = state.dims.d as f64;
    let pt = state.dims.features() as f64;
    let k = state.episodes as f64;
    let growth = pt * (1.0 + k * horizon as f64 * hp.c_x * hp.c_x / pt).ln() / 2.0;
    let radius = hp.c_theta + hp.c_w * (2.0 * d * (d.ln() + growth - hp.delta.ln())).sqrt();
    radius * radius
}

/// Optimal cost `J*_1(M_{Θ,ctx}, x1)` when `Θ` passes the `‖P_h‖₂ ≤ c_q` cap.
fn capped_value(
    theta: &Decoder,
    ctx: &Context,
    costs: &TaskCosts,
    x1: &DVector<f64>,
    c_q: f64,
) -> Option<f64> {
    let (a, b) = theta.dynamics(ctx).ok()?;
    let sol = solve_riccati(&a, &b, costs).ok()?;
    if sol.max_p_norm() > c_q {
        return None;
    }
    sol.optimal_value(1, x1).ok().filter(|v| v.is_finite())
}

/// Membership in the confidence set, with the Riccati cap checked on `ctx`.
pub fn in_confidence_set(
    theta: &Decoder,
    state: &LearnerState,
    beta_val: f64,
    hp: &Hyperparams,
    ctx: &Context,
    costs: &TaskCosts,
) -> bool {
    match state.ellipsoid_distance(theta) {
        Ok(dist) if dist <= beta_val => {}
        _ => return false,
    }
    capped_value(theta, ctx, costs, costs.x_init(), hp.c_q).is_some()
}

/// Draws `n` decoders uniformly from the ellipsoid
/// `tr[(Θ − Θ̂) V (Θ − Θ̂)ᵀ] ≤ β`.
pub fn sample_ellipsoid<R: Rng + ?Sized>(
    state: &LearnerState,
    beta_val: f64,
    n: usize,
    rng: &mut R,
) -> Vec<Decoder> {
    let d = state.dims.d;
    let pt = state.dims.features();
    let dof = (d * pt) as f64;
    (0..n)
        .map(|_| {
            let g = DMatrix::<f64>::from_fn(d, pt, |_, _| rng.sample(StandardNormal));
            let u: f64 = 1.0 - rng.gen::<f64>();
            let radius = u.powf(1.0 / dof) * beta_val.max(0.0).sqrt();
            let norm = g.norm();
            let scale = if norm > 0.0 { radius / norm } else { 0.0 };
            let delta = state.whiten(&g) * scale;
            Decoder::new(state.theta_hat.matrix() + delta).expect("finite sample")
        })
        .collect()
}

/// Outcome of an optimistic selection.
#[derive(Clone, Debug)]
pub struct Selection {
    pub theta: Decoder,
    /// `J*_1` of the chosen decoder.
    pub value: f64,
    /// Position of the chosen decoder in the candidate list.
    pub index: usize,
    pub feasible: usize,
    /// Set when no sample was feasible and `Θ̂` was played instead.
    pub fallback: bool,
}

/// Picks the candidate with the lowest `J*_1(M_{Θ,ctx}, x1)` among those that
/// lie in the ellipsoid and pass the Riccati cap. Ties go to the earliest
/// candidate. Does not touch the optimist history.
#[allow(clippy::too_many_arguments)]
pub fn choose_optimistic(
    state: &LearnerState,
    candidates: &[Decoder],
    ctx: &Context,
    costs: &TaskCosts,
    x1: &DVector<f64>,
    hp: &Hyperparams,
    beta_val: f64,
    exec: Exec,
) -> Result<Selection> {
    // Ellipsoid samples sit on or inside the boundary up to round-off.
    let slack = 1e-9 * (1.0 + beta_val);
    let values = par::map(exec, candidates, |theta| {
        let inside = state
            .ellipsoid_distance(theta)
            .is_ok_and(|dist| dist <= beta_val + slack);
        if inside {
            capped_value(theta, ctx, costs, x1, hp.c_q)
        } else {
            None
        }
    });
    let feasible = values.iter().filter(|v| v.is_some()).count();
    let (index, value) = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((i, v)),
        })
        .ok_or(Error::NoFeasibleCandidate)?;
    Ok(Selection {
        theta: candidates[index].clone(),
        value,
        index,
        feasible,
        fallback: false,
    })
}

/// Optimistic decoder for the coming episode, using the β schedule.
pub fn select_optimistic<R: Rng + ?Sized>(
    state: &mut LearnerState,
    ctx: &Context,
    costs: &TaskCosts,
    x1: &DVector<f64>,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<Decoder> {
    let beta_val = beta(state, hp, costs.horizon());
    select_optimistic_with(state, ctx, costs, x1, hp, beta_val, Exec::default(), rng)
        .map(|s| s.theta)
}

/// [`select_optimistic`] with an explicit β and execution mode.
///
/// Draws `n_candidates` decoders from the ellipsoid and keeps the feasible
/// one with the lowest `J*_1`. `Θ̂` is played, cap or no cap, only when no
/// sample is feasible; [`Error::NoFeasibleCandidate`] then means its Riccati
/// recursion itself broke down.
/// The winner is appended to the optimist history.
#[allow(clippy::too_many_arguments)]
pub fn select_optimistic_with<R: Rng + ?Sized>(
    state: &mut LearnerState,
    ctx: &Context,
    costs: &TaskCosts,
    x1: &DVector<f64>,
    hp: &Hyperparams,
    beta_val: f64,
    exec: Exec,
    rng: &mut R,
) -> Result<Selection> {
    let pool = sample_ellipsoid(state, beta_val, hp.n_candidates, rng);
    let sel = match choose_optimistic(state, &pool, ctx, costs, x1, hp, beta_val, exec) {
        Err(Error::NoFeasibleCandidate) => {
            // Certainty equivalence, without the cap: an uncapped plan still
            // collects data, whereas refusing to act would end the run.
            let theta = state.theta_hat.clone();
            let value = capped_value(&theta, ctx, costs, x1, f64::INFINITY)
                .ok_or(Error::NoFeasibleCandidate)?;
            Selection {
                theta,
                value,
                index: 0,
                feasible: 0,
                fallback: true,
            }
        }
        other => other?,
    };
    state.optimist_history.push(sel.theta.clone());
    Ok(sel)
}

/// Uniform draw from the optimist history.
pub fn output_policy_map<R: Rng + ?Sized>(state: &LearnerState, rng: &mut R) -> Result<Decoder> {
    if state.optimist_history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let i = rng.gen_range(0..state.optimist_history.len());
    Ok(state.optimist_history[i].clone())
}
