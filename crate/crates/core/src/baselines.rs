//! Reference controllers: feedback linearization with an LQR gain, and
//! constant-alpha SLS.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::plant::TrueDynamics;
use crate::scalar::Scalar;

pub const DARE_MAX_ITERS: usize = 1_000_000;

/// Solution of `P = Q + AᵀPA - AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution<S: Scalar> {
    pub p: DMatrix<S>,
    pub k: DMatrix<S>,
    /// Max-abs entry of `P - Ric(P)`.
    pub residual: S,
    pub iterations: usize,
}

fn riccati_map<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>, q: &DMatrix<S>, r: &DMatrix<S>, p: &DMatrix<S>) -> Result<(DMatrix<S>, DMatrix<S>)> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let chol = s.cholesky().ok_or(Error::Singular("R + BᵀPB is not positive definite"))?;
    let k = chol.solve(&(&bt_p * a));
    let at_p = a.transpose() * p;
    let next = q + &at_p * a - (&at_p * b) * &k;
    // keep P symmetric against round-off drift
    let next = (&next + next.transpose()) * S::lit(0.5);
    Ok((next, k))
}

/// Fixed-point iteration from `P = Q` until the residual is at most `tol`.
pub fn dare_solve<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>, q: &DMatrix<S>, r: &DMatrix<S>, tol: S) -> Result<RiccatiSolution<S>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::InvalidArgument("inconsistent A, B, Q, R shapes".into()));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    let mut p = q.clone();
    let mut residual = S::zero();
    for it in 1..=DARE_MAX_ITERS {
        let (next, _) = riccati_map(a, b, q, r, &p)?;
        residual = (&next - &p).amax();
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            let (check, k) = riccati_map(a, b, q, r, &p)?;
            let residual = (&check - &p).amax();
            return Ok(RiccatiSolution { p, k, residual, iterations: it });
        }
    }
    Err(Error::RiccatiDivergence { iters: DARE_MAX_ITERS, residual: residual.to_f64_lossy() })
}

/// Feedback linearization: cancels the part of `f` beyond its Jacobian at the
/// origin and applies the LQR gain to the linear remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct FblController<S: Scalar> {
    pub a1: DMatrix<S>,
    pub k: DMatrix<S>,
}

impl<S: Scalar> FblController<S> {
    /// Linearizes `plant` at the origin and solves the DARE with `B = I`.
    pub fn design(plant: &dyn TrueDynamics<S>, q: &DMatrix<S>, r: &DMatrix<S>) -> Result<(Self, RiccatiSolution<S>)> {
        let n = plant.n();
        let a1 = plant.jacobian(&vec![S::zero(); n]);
        let sol = dare_solve(&a1, &DMatrix::identity(n, n), q, r, S::lit(1e-10))?;
        Ok((Self { a1, k: sol.k.clone() }, sol))
    }

    pub fn control(&self, plant: &dyn TrueDynamics<S>, x: &[S]) -> Vec<S> {
        fbl_control(plant, &self.a1, &self.k, x)
    }
}

/// `u = -(f(x) - A1·x) - K·x`.
pub fn fbl_control<S: Scalar>(plant: &dyn TrueDynamics<S>, a1: &DMatrix<S>, k: &DMatrix<S>, x: &[S]) -> Vec<S> {
    let fx = plant.eval(x);
    let xv = DMatrix::from_column_slice(x.len(), 1, x);
    let lin = a1 * &xv;
    let fb = k * &xv;
    (0..x.len()).map(|i| -(fx[i] - lin[i]) - fb[i]).collect()
}

/// Alpha vector with every entry equal to `value`, for constant-alpha SLS.
pub fn const_alpha<S: Scalar>(num_alphas: usize, value: S) -> Result<Vec<S>> {
    if !(value > S::zero() && value <= S::one()) {
        return Err(Error::AlphaRange { id: 0, value: value.to_f64_lossy() });
    }
    Ok(vec![value; num_alphas])
}
