//! Simple rotations in the plane spanned by two vectors.
//!
//! `M(u, v)` rotates by twice the angle between `u` and `v`, carrying the
//! direction of `u` toward `v`, and fixes the orthogonal complement of
//! `span{u, v}`. Matrices act on row vectors from the right: `x -> x M`.
//!
//! With orthonormal `w1 = u/|u|` and `w2` from Gram-Schmidt on `v`,
//!
//! ```text
//! M = I + (cos a - 1)(w1ᵀw1 + w2ᵀw2) + sin a (w1ᵀw2 - w2ᵀw1),   a = 2θ
//! ```
//!
//! The double-angle terms come straight from the parallel and orthogonal
//! components of `v`, so no trigonometric primitive is needed on the tape.

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Norm below which `u` or `v` is rejected.
pub const NORM_TOL: f64 = 1e-8;
/// Floor used when normalizing the orthogonal component of `v`.
pub const PARALLEL_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanePair {
    u: Array,
    v: Array,
}

impl PlanePair {
    pub fn new(u: Array, v: Array) -> Result<Self> {
        if u.rows() != 1 || v.rows() != 1 || u.cols() != v.cols() {
            return Err(Error::Shape(format!(
                "plane vectors must be equal-length rows, got {:?} and {:?}",
                u.shape(),
                v.shape()
            )));
        }
        if u.cols() < 2 {
            return Err(Error::Contract("rotation needs dimension >= 2".into()));
        }
        if u.norm() <= NORM_TOL || v.norm() <= NORM_TOL {
            return Err(Error::Contract("plane vectors must be non-zero".into()));
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &Array {
        &self.u
    }

    pub fn v(&self) -> &Array {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.u.cols()
    }
}

/// An `n x n` rotation acting on row vectors by right multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix(Array);

impl RotationMatrix {
    pub fn identity(n: usize) -> Self {
        Self(Array::identity(n))
    }

    pub fn matrix(&self) -> &Array {
        &self.0
    }

    pub fn into_inner(self) -> Array {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    /// `x M` for a single row or a batch of rows.
    pub fn rotate(&self, x: &Array) -> Result<Array> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "cannot rotate {}-dimensional rows with a {}x{} rotation",
                x.cols(),
                self.dim(),
                self.dim()
            )));
        }
        x.matmul(&self.0)
    }
}

/// Builds `M(u, v)` on the tape so gradients reach `u` and `v`.
pub fn rotation_matrix_var<'t>(u: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    let (ur, n) = u.shape();
    if ur != 1 || v.shape() != (1, n) {
        return Err(Error::Shape(format!(
            "rotation plane vectors must be 1xn rows, got {:?} and {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let tape = u.tape();
    let w1 = u.div_scalar(u.norm())?;
    let along = v.mul(w1)?.sum();
    let perp = v.sub(w1.mul_scalar(along)?)?;
    let perp_norm = perp.norm();
    let w2 = perp.div_scalar(perp_norm.clamp_min(PARALLEL_GUARD))?;

    let along2 = along.square();
    let perp2 = perp_norm.square();
    let r2 = along2.add(perp2)?;
    let cos_a = along2.sub(perp2)?.div(r2)?;
    let sin_a = along.mul(perp_norm)?.scale(2.0).div(r2)?;

    let w1t = w1.t();
    let w2t = w2.t();
    let projector = w1t.matmul(w1)?.add(w2t.matmul(w2)?)?;
    let generator = w1t.matmul(w2)?.sub(w2t.matmul(w1)?)?;
    let eye = tape.constant(Array::identity(n));
    eye.add(projector.mul_scalar(cos_a.offset(-1.0))?)?
        .add(generator.mul_scalar(sin_a)?)
}

pub fn rotation_matrix(pair: &PlanePair) -> Result<RotationMatrix> {
    let tape = Tape::new();
    let m = rotation_matrix_var(tape.leaf(pair.u.clone()), tape.leaf(pair.v.clone()))?;
    Ok(RotationMatrix(m.value()))
}

pub fn rotate(m: &RotationMatrix, x: &Array) -> Result<Array> {
    m.rotate(x)
}

/// Angle in `[0, π]` between two rows, via `atan2(|b⊥a|, b·â)`.
pub fn angle_between(a: &Array, b: &Array) -> f64 {
    let an = a.norm();
    if an == 0.0 || b.norm() == 0.0 {
        return 0.0;
    }
    let a_hat = a.scale(1.0 / an);
    let along = b.dot(&a_hat).expect("same shape");
    let perp = b.sub(&a_hat.scale(along)).expect("same shape").norm();
    perp.atan2(along)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationDiagnostics {
    /// `max |MᵀM - I|`.
    pub orthogonality_residual: f64,
    /// `|det M - 1|`.
    pub det_residual: f64,
    /// Measured angle between `u` and `u M`.
    pub angle: f64,
    /// `max |x M - x|` over the orthogonal complement of `span{u, v}`.
    pub complement_residual: f64,
}

pub fn rotation_diagnostics(pair: &PlanePair) -> Result<RotationDiagnostics> {
    let m = rotation_matrix(pair)?;
    let n = pair.dim();
    let mat = m.matrix();
    let gram = mat.transpose().matmul(mat)?;
    let orthogonality_residual = gram.sub(&Array::identity(n))?.max_abs();
    let det_residual = (mat.determinant()? - 1.0).abs();
    let angle = angle_between(&pair.u, &m.rotate(&pair.u)?);

    let basis = plane_basis(pair);
    let mut complement_residual: f64 = 0.0;
    for k in 0..n {
        let mut x = Array::zeros(1, n);
        x.data_mut()[k] = 1.0;
        for w in &basis {
            let c = x.dot(w)?;
            x = x.sub(&w.scale(c))?;
        }
        let moved = m.rotate(&x)?.sub(&x)?.max_abs();
        complement_residual = complement_residual.max(moved);
    }

    Ok(RotationDiagnostics {
        orthogonality_residual,
        det_residual,
        angle,
        complement_residual,
    })
}

/// Orthonormal basis of `span{u, v}`; one vector when they are parallel.
fn plane_basis(pair: &PlanePair) -> Vec<Array> {
    let w1 = pair.u.scale(1.0 / pair.u.norm());
    let along = pair.v.dot(&w1).expect("same shape");
    let perp = pair.v.sub(&w1.scale(along)).expect("same shape");
    let pn = perp.norm();
    if pn <= PARALLEL_GUARD * pair.v.norm() {
        vec![w1]
    } else {
        vec![w1, perp.scale(1.0 / pn)]
    }
}
