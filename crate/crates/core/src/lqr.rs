//! Finite-horizon LQR: backward Riccati recursion, optimal values and gains.
//!
//! Stages are 1-based throughout, matching the usual `h = 1..=H` indexing:
//! `P_h` exists for `h = 1..=H`, gains `K_h` for `h = 1..=H-1`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative symmetry tolerance: `|M - Mᵀ| ≤ SYM_TOL · (1 + ‖M‖)`.
pub const SYM_TOL: f64 = 1e-9;
/// Relative PSD tolerance: `λ_min ≥ -PSD_TOL · (1 + ‖M‖)`.
pub const PSD_TOL: f64 = 1e-8;

/// Problem sizes: state `d`, action `d_u`, and the row counts `p`, `p_u` of
/// the two context blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dimensions {
    pub d: usize,
    pub d_u: usize,
    pub p: usize,
    pub p_u: usize,
}

impl Dimensions {
    pub fn new(d: usize, d_u: usize, p: usize, p_u: usize) -> Result<Self> {
        if d == 0 || d_u == 0 || p == 0 || p_u == 0 {
            return Err(Error::Invalid {
                what: "dimensions",
                reason: format!("all sizes must be >= 1, got d={d} d_u={d_u} p={p} p_u={p_u}"),
            });
        }
        Ok(Self { d, d_u, p, p_u })
    }

    /// Length of a regression feature `[Cx; Du]`.
    pub fn features(&self) -> usize {
        self.p + self.p_u
    }
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let tol = SYM_TOL * (1.0 + max_abs(m));
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub(crate) fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn check_psd(m: &DMatrix<f64>, what: &'static str, strict: bool) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Invalid {
            what,
            reason: "non-finite entry".into(),
        });
    }
    if !is_symmetric(m) {
        return Err(Error::Invalid {
            what,
            reason: "not symmetric".into(),
        });
    }
    let (lo, _) = eigen_range(m);
    let ok = if strict {
        lo > 0.0
    } else {
        lo >= -PSD_TOL * (1.0 + max_abs(m))
    };
    if !ok {
        return Err(Error::Invalid {
            what,
            reason: format!("minimum eigenvalue {lo:e} violates definiteness"),
        });
    }
    Ok(())
}

/// Stage costs, horizon, initial state and noise covariance of an LQR task.
///
/// Everything except the dynamics. The learner evaluates many candidate
/// dynamics against one fixed set of costs.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskCosts {
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    x_init: DVector<f64>,
    noise_cov: DMatrix<f64>,
}

impl TaskCosts {
    /// `q` holds `Q_1..Q_H` (the last is terminal), `r` holds `R_1..R_{H-1}`.
    pub fn new(
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        x_init: DVector<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let horizon = q.len();
        if horizon < 2 {
            return Err(Error::Invalid {
                what: "horizon",
                reason: format!("need at least 2 stages, got {horizon}"),
            });
        }
        if r.len() != horizon - 1 {
            return Err(Error::dims("R sequence length", horizon - 1, r.len()));
        }
        let d = x_init.len();
        let d_u = r[0].nrows();
        for qh in &q {
            if qh.shape() != (d, d) {
                return Err(Error::dims("Q_h", format!("{d}x{d}"), shape(qh)));
            }
            check_psd(qh, "Q_h", false)?;
        }
        for rh in &r {
            if rh.shape() != (d_u, d_u) {
                return Err(Error::dims("R_h", format!("{d_u}x{d_u}"), shape(rh)));
            }
            check_psd(rh, "R_h", true)?;
        }
        if noise_cov.shape() != (d, d) {
            return Err(Error::dims("noise_cov", format!("{d}x{d}"), shape(&noise_cov)));
        }
        check_psd(&noise_cov, "noise_cov", false)?;
        Ok(Self {
            q,
            r,
            x_init,
            noise_cov,
        })
    }

    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x_init.len()
    }

    pub fn action_dim(&self) -> usize {
        self.r[0].nrows()
    }

    /// `Q_h` for `h` in `1..=H`.
    pub fn q(&self, h: usize) -> &DMatrix<f64> {
        &self.q[h - 1]
    }

    /// `R_h` for `h` in `1..=H-1`.
    pub fn r(&self, h: usize) -> &DMatrix<f64> {
        &self.r[h - 1]
    }

    pub fn x_init(&self) -> &DVector<f64> {
        &self.x_init
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn with_noise_cov(mut self, noise_cov: DMatrix<f64>) -> Result<Self> {
        let d = self.state_dim();
        if noise_cov.shape() != (d, d) {
            return Err(Error::dims("noise_cov", format!("{d}x{d}"), shape(&noise_cov)));
        }
        check_psd(&noise_cov, "noise_cov", false)?;
        self.noise_cov = noise_cov;
        Ok(self)
    }

    pub fn with_x_init(mut self, x_init: DVector<f64>) -> Result<Self> {
        if x_init.len() != self.state_dim() {
            return Err(Error::dims("x_init", self.state_dim(), x_init.len()));
        }
        self.x_init = x_init;
        Ok(self)
    }
}

pub(crate) fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// One finite-horizon LQR instance.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrTask {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub costs: TaskCosts,
}

impl LqrTask {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, costs: TaskCosts) -> Result<Self> {
        check_dynamics(&a, &b, &costs)?;
        Ok(Self { a, b, costs })
    }

    pub fn horizon(&self) -> usize {
        self.costs.horizon()
    }
}

fn check_dynamics(a: &DMatrix<f64>, b: &DMatrix<f64>, costs: &TaskCosts) -> Result<()> {
    let d = costs.state_dim();
    let d_u = costs.action_dim();
    if a.shape() != (d, d) {
        return Err(Error::dims("A", format!("{d}x{d}"), shape(a)));
    }
    if b.shape() != (d, d_u) {
        return Err(Error::dims("B", format!("{d}x{d_u}"), shape(b)));
    }
    Ok(())
}

/// Value matrices `P_h`, gains `K_h` and noise offsets `C_h` of a task.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    p: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    offset: Vec<f64>,
    p_norm: Vec<f64>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.p.len()
    }

    /// `P_h` for `h` in `1..=H`.
    pub fn p(&self, h: usize) -> Result<&DMatrix<f64>> {
        self.stage(h, self.horizon()).map(|i| &self.p[i])
    }

    /// `K_h` for `h` in `1..=H-1`.
    pub fn gain(&self, h: usize) -> Result<&DMatrix<f64>> {
        self.stage(h, self.horizon() - 1).map(|i| &self.k[i])
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.k
    }

    /// `C_h` for `h` in `1..=H`.
    pub fn offset(&self, h: usize) -> Result<f64> {
        self.stage(h, self.horizon()).map(|i| self.offset[i])
    }

    /// `‖P_h‖₂` for `h` in `1..=H`.
    pub fn p_norm(&self, h: usize) -> Result<f64> {
        self.stage(h, self.horizon()).map(|i| self.p_norm[i])
    }

    /// `max_h ‖P_h‖₂`.
    pub fn max_p_norm(&self) -> f64 {
        self.p_norm.iter().copied().fold(0.0, f64::max)
    }

    fn stage(&self, h: usize, max: usize) -> Result<usize> {
        if h == 0 || h > max {
            return Err(Error::StageOutOfRange { stage: h, max });
        }
        Ok(h - 1)
    }

    /// `J*_h(x) = xᵀ P_h x + C_h`.
    pub fn optimal_value(&self, h: usize, x: &DVector<f64>) -> Result<f64> {
        let p = self.p(h)?;
        if x.len() != p.nrows() {
            return Err(Error::dims("state", p.nrows(), x.len()));
        }
        Ok(p.dot(&(x * x.transpose())) + self.offset[h - 1])
    }

    /// Optimal action `K_h x`.
    pub fn gain_action(&self, h: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.gain(h)?;
        if x.len() != k.ncols() {
            return Err(Error::dims("state", k.ncols(), x.len()));
        }
        Ok(k * x)
    }
}

/// Backward Riccati recursion for `task`.
pub fn riccati_backward(task: &LqrTask) -> Result<RiccatiSolution> {
    solve_riccati(&task.a, &task.b, &task.costs)
}

/// Backward Riccati recursion for dynamics `(a, b)` under `costs`.
///
/// `P_H = Q_H`, and for `h < H`
/// `K_h = -(R_h + BᵀP_{h+1}B)⁻¹ BᵀP_{h+1}A`,
/// `P_h = Q_h + AᵀP_{h+1}A + AᵀP_{h+1}B K_h`,
/// `C_h = C_{h+1} + tr(Σ P_{h+1})`.
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    costs: &TaskCosts,
) -> Result<RiccatiSolution> {
    check_dynamics(a, b, costs)?;
    let horizon = costs.horizon();
    let mut p = vec![DMatrix::zeros(0, 0); horizon];
    let mut k = vec![DMatrix::zeros(0, 0); horizon - 1];
    let mut offset = vec![0.0; horizon];
    let mut p_norm = vec![0.0; horizon];

    p[horizon - 1] = costs.q(horizon).clone();
    p_norm[horizon - 1] = psd_norm(&p[horizon - 1], horizon)?;

    let bt = b.transpose();
    let at = a.transpose();
    for h in (1..horizon).rev() {
        let next = &p[h];
        let pb = next * b;
        let pa = next * a;
        let s = costs.r(h) + &bt * &pb;
        let chol = Cholesky::new(s).ok_or_else(|| {
            Error::NumericalFailure(format!("R_{h} + BᵀP_{}B is not positive definite", h + 1))
        })?;
        let gain = -chol.solve(&(&bt * &pa));
        let mut ph = costs.q(h) + &at * &pa + (&at * &pb) * &gain;
        symmetrize(&mut ph);
        p_norm[h - 1] = psd_norm(&ph, h)?;
        offset[h - 1] = offset[h] + costs.noise_cov().dot(next);
        p[h - 1] = ph;
        k[h - 1] = gain;
    }
    Ok(RiccatiSolution {
        p,
        k,
        offset,
        p_norm,
    })
}

/// Checks `P` is finite and PSD within tolerance and returns `‖P‖₂`.
fn psd_norm(p: &DMatrix<f64>, h: usize) -> Result<f64> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure(format!("P_{h} has non-finite entries")));
    }
    let (lo, hi) = eigen_range(p);
    if lo < -PSD_TOL * (1.0 + hi.abs()) {
        return Err(Error::NumericalFailure(format!(
            "P_{h} lost positive semi-definiteness (λ_min = {lo:e})"
        )));
    }
    Ok(hi.max(-lo))
}

/// Free-function form of [`RiccatiSolution::optimal_value`].
pub fn optimal_value(sol: &RiccatiSolution, h: usize, x: &DVector<f64>) -> Result<f64> {
    sol.optimal_value(h, x)
}

/// Free-function form of [`RiccatiSolution::gain_action`].
pub fn gain_action(sol: &RiccatiSolution, h: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    sol.gain_action(h, x)
}

/// One-step Bellman residual at `(h, x)`, minimizing over `u_grid`.
///
/// The expectation over the noise is taken in closed form:
/// `E J*_{h+1}(y + w) = yᵀP_{h+1}y + tr(Σ P_{h+1}) + C_{h+1}`.
pub fn bellman_residual(
    task: &LqrTask,
    sol: &RiccatiSolution,
    h: usize,
    x: &DVector<f64>,
    u_grid: &[DVector<f64>],
) -> Result<f64> {
    let horizon = task.horizon();
    if h == 0 || h >= horizon {
        return Err(Error::StageOutOfRange {
            stage: h,
            max: horizon - 1,
        });
    }
    if u_grid.is_empty() {
        return Err(Error::Invalid {
            what: "action grid",
            reason: "empty".into(),
        });
    }
    let costs = &task.costs;
    let next = sol.p(h + 1)?;
    let noise_term = costs.noise_cov().dot(next) + sol.offset(h + 1)?;
    let ax = &task.a * x;
    let state_cost = x.dot(&(costs.q(h) * x));
    let mut best = f64::INFINITY;
    for u in u_grid {
        if u.len() != costs.action_dim() {
            return Err(Error::dims("action", costs.action_dim(), u.len()));
        }
        let y = &ax + &task.b * u;
        let v = u.dot(&(costs.r(h) * u)) + y.dot(&(next * &y));
        best = best.min(v);
    }
    let rhs = state_cost + best + noise_term;
    Ok((sol.optimal_value(h, x)? - rhs).abs())
}

/// Expected cost `J^π_1(x_1)` of the time-varying linear policy `u_h = K_h x_h`
/// under dynamics `(a, b)` and additive noise of covariance `costs.noise_cov()`.
///
/// Propagates the state mean and covariance forward; exact, no sampling.
pub fn expected_policy_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    costs: &TaskCosts,
    gains: &[DMatrix<f64>],
    x1: &DVector<f64>,
) -> Result<f64> {
    check_dynamics(a, b, costs)?;
    let horizon = costs.horizon();
    if gains.len() != horizon - 1 {
        return Err(Error::dims("gain sequence length", horizon - 1, gains.len()));
    }
    let d = costs.state_dim();
    if x1.len() != d {
        return Err(Error::dims("x_1", d, x1.len()));
    }
    let mut mean = x1.clone();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut total = 0.0;
    for (i, k) in gains.iter().enumerate() {
        let h = i + 1;
        if k.shape() != (costs.action_dim(), d) {
            return Err(Error::dims(
                "K_h",
                format!("{}x{d}", costs.action_dim()),
                shape(k),
            ));
        }
        let stage = costs.q(h) + k.transpose() * costs.r(h) * k;
        total += mean.dot(&(&stage * &mean)) + stage.dot(&cov);
        let closed = a + b * k;
        mean = &closed * &mean;
        cov = &closed * &cov * closed.transpose() + costs.noise_cov();
    }
    let terminal = costs.q(horizon);
    total += mean.dot(&(terminal * &mean)) + terminal.dot(&cov);
    Ok(total)
}
