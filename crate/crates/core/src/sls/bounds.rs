//! Stability certificate and control-cost bounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::controller::SlsController;
use crate::error::{Error, Result};
use crate::scalar::{factorial, Scalar};

/// `l` bounds every gated term linearly on the `W`-box: `|G| ≤ l ‖w‖∞`.
/// `c` is the largest gated level count.
pub fn compute_l_c<S: Scalar>(ctl: &SlsController<S>, w: S) -> (S, usize) {
    let l = ctl
        .terms()
        .iter()
        .filter(|t| t.alpha_id.is_some())
        .map(|t| t.monomial.coeff.abs() * w.powi(t.monomial.degree() as i32 - 1))
        .fold(S::zero(), |a, b| a.max(b));
    (l, ctl.c())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCert {
    pub m: f64,
    pub w: f64,
    pub k: usize,
    pub l: f64,
    pub c: usize,
    pub alpha_min: f64,
    /// Per-step growth factor of the state bound recursion.
    pub b: f64,
    pub satisfied: bool,
    /// `W / (1 - b)` when satisfied.
    pub state_bound: Option<f64>,
}

/// `b = M W^k / (k+1)! + l c (1 - α_min)`; the loop is ISS when `b < 1`,
/// with `sup ‖x_t‖ ≤ W / (1 - b)` (limit of `W (b^t - 1)/(b - 1)`).
pub fn check_iss<S: Scalar>(m: S, w: S, k: usize, l: S, c: usize, alpha_min: S) -> Result<StabilityCert> {
    if !(m >= S::zero() && w > S::zero() && l >= S::zero()) {
        return Err(Error::InvalidArgument("M, l must be non-negative and W positive".into()));
    }
    if !(alpha_min > S::zero() && alpha_min <= S::one()) {
        return Err(Error::InvalidArgument("alpha_min must lie in (0, 1]".into()));
    }
    let b = m * w.powi(k as i32) / factorial::<S>(k + 1) + l * S::from_usize_lossy(c) * (S::one() - alpha_min);
    let satisfied = b < S::one();
    Ok(StabilityCert {
        m: m.to_f64_lossy(),
        w: w.to_f64_lossy(),
        k,
        l: l.to_f64_lossy(),
        c,
        alpha_min: alpha_min.to_f64_lossy(),
        b: b.to_f64_lossy(),
        satisfied,
        state_bound: satisfied.then(|| (w / (S::one() - b)).to_f64_lossy()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBound {
    pub m: f64,
    pub w: f64,
    pub k: usize,
    pub n: usize,
    pub h: f64,
    /// Taylor error magnitude `M (nh)^(k+1) / (k+1)!` used for `d`.
    pub e_x: f64,
    /// The same expression with exponent `k`, reported alongside.
    pub e_x_exponent_k: f64,
    pub d: f64,
    /// Per-step bound on `‖u_t‖₂` with all alphas at 1 (series form).
    pub u1: f64,
    /// Closed form of the same sum; `None` where it has a removable pole.
    pub u1_closed: Option<f64>,
    pub r: f64,
    pub t_steps: usize,
    pub total: f64,
}

/// Per-step input bound for the all-ones controller,
/// `U¹ = Σ_{j=1..k} M W^j (d^j - 1)` with `d = e_x / W + 1`.
pub fn cost_bound_u1<S: Scalar>(m: S, w: S, k: usize, n: usize, h: S) -> Result<CostBound> {
    if !(m >= S::zero() && w > S::zero() && h > S::zero()) || k == 0 || n == 0 {
        return Err(Error::InvalidArgument("cost bound needs M ≥ 0, W > 0, h > 0, k ≥ 1, n ≥ 1".into()));
    }
    if h < w {
        return Err(Error::InvalidArgument("stability radius h must be at least W".into()));
    }
    let nh = S::from_usize_lossy(n) * h;
    let e_x = m * nh.powi(k as i32 + 1) / factorial::<S>(k + 1);
    let e_x_k = m * nh.powi(k as i32) / factorial::<S>(k + 1);
    Ok(u1_from_error(m, w, k, e_x, n, h, e_x_k))
}

/// [`cost_bound_u1`] with an externally supplied error magnitude `e_x`.
pub fn cost_bound_with_error<S: Scalar>(m: S, w: S, k: usize, e_x: S) -> CostBound {
    u1_from_error(m, w, k, e_x, 1, w, e_x)
}

fn u1_from_error<S: Scalar>(m: S, w: S, k: usize, e_x: S, n: usize, h: S, e_x_k: S) -> CostBound {
    let d = e_x / w + S::one();
    let mut u1 = S::zero();
    for j in 1..=k {
        let j = j as i32;
        u1 += m * w.powi(j) * (d.powi(j) - S::one());
    }
    let wd = w * d;
    let eps = S::lit(1e-9);
    let closed = if (wd - S::one()).abs() < eps || (w - S::one()).abs() < eps {
        None
    } else {
        let ki = k as i32;
        Some(m * (wd * (w.powi(ki) * d.powi(ki) - S::one()) / (wd - S::one()) + w * (S::one() - w.powi(ki)) / (w - S::one())))
    };
    CostBound {
        m: m.to_f64_lossy(),
        w: w.to_f64_lossy(),
        k,
        n,
        h: h.to_f64_lossy(),
        e_x: e_x.to_f64_lossy(),
        e_x_exponent_k: e_x_k.to_f64_lossy(),
        d: d.to_f64_lossy(),
        u1: u1.to_f64_lossy(),
        u1_closed: closed.map(|v| v.to_f64_lossy()),
        r: 0.0,
        t_steps: 0,
        total: 0.0,
    }
}

impl CostBound {
    /// Cost bound over `t_steps` steps for input weight `R`: `σ_max(R) · T · U¹`.
    pub fn with_horizon<S: Scalar>(mut self, r_matrix: &DMatrix<S>, t_steps: usize) -> Result<Self> {
        if !r_matrix.is_square() {
            return Err(Error::InvalidArgument("R must be square".into()));
        }
        let sym = (r_matrix + r_matrix.transpose()) * S::lit(0.5);
        let r = sym.symmetric_eigenvalues().iter().fold(S::zero(), |a, b| a.max(b.abs()));
        self.r = r.to_f64_lossy();
        self.t_steps = t_steps;
        self.total = self.r * t_steps as f64 * self.u1;
        Ok(self)
    }
}
