//! Contexts, decoders and context-regularized observations.

use nalgebra::{DMatrix, DVector};

use crate::lqr::{shape, Dimensions};
use crate::{Error, Result};

/// Observable environment context: `C` (`p×d`) acts on states, `D`
/// (`p_u×d_u`) on actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Context {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if !c.iter().chain(d.iter()).all(|v| v.is_finite()) {
            return Err(Error::Invalid {
                what: "context",
                reason: "non-finite entry".into(),
            });
        }
        if c.is_empty() || d.is_empty() {
            return Err(Error::Invalid {
                what: "context",
                reason: "empty block".into(),
            });
        }
        Ok(Self { c, d })
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            d: self.c.ncols(),
            d_u: self.d.ncols(),
            p: self.c.nrows(),
            p_u: self.d.nrows(),
        }
    }
}

/// Decoding matrix `Θ` (`d×(p+p_u)`), mapping contexts to dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder(DMatrix<f64>);

impl Decoder {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid {
                what: "decoder",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self(theta))
    }

    pub fn zeros(dims: Dimensions) -> Self {
        Self(DMatrix::zeros(dims.d, dims.features()))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Row-major entries, for serialization.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.0
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    fn check(&self, ctx: &Context) -> Result<()> {
        let dims = ctx.dims();
        if self.0.ncols() != dims.features() {
            return Err(Error::dims(
                "decoder columns",
                dims.features(),
                self.0.ncols(),
            ));
        }
        Ok(())
    }

    /// `[A, B] = Θ · blockdiag(C, D)`.
    pub fn dynamics(&self, ctx: &Context) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check(ctx)?;
        let p = ctx.c.nrows();
        let a = self.0.columns(0, p) * &ctx.c;
        let b = self.0.columns(p, ctx.d.nrows()) * &ctx.d;
        if a.nrows() != a.ncols() {
            return Err(Error::dims(
                "A = Θ_C·C",
                format!("{0}x{0}", a.nrows()),
                shape(&a),
            ));
        }
        Ok((a, b))
    }
}

/// Free-function form of [`Decoder::dynamics`].
pub fn assemble_dynamics(theta: &Decoder, ctx: &Context) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    theta.dynamics(ctx)
}

/// The regression feature `z = [Cx; Du]`.
pub fn context_features(ctx: &Context, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != ctx.c.ncols() {
        return Err(Error::dims("state", ctx.c.ncols(), x.len()));
    }
    if u.len() != ctx.d.ncols() {
        return Err(Error::dims("action", ctx.d.ncols(), u.len()));
    }
    let cx = &ctx.c * x;
    let du = &ctx.d * u;
    Ok(DVector::from_iterator(
        cx.len() + du.len(),
        cx.iter().chain(du.iter()).copied(),
    ))
}

/// `‖Θ − Θ'‖_F`.
pub fn decoder_error(theta: &Decoder, other: &Decoder) -> Result<f64> {
    if theta.0.shape() != other.0.shape() {
        return Err(Error::dims("decoder", shape(&theta.0), shape(&other.0)));
    }
    Ok((&theta.0 - &other.0).norm())
}
