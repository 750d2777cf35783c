//! Taylor models of black-box smooth dynamics and their remainder bounds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::poly::{kron_index, FitDiagnostics, PolyDynamics};
use crate::scalar::{factorial, Scalar};

pub const MAX_ORDER: usize = 6;
/// Multiplier applied to sampled derivative maxima.
pub const SAFETY_FACTOR: f64 = 1.5;
/// Stencil step for first derivatives; higher orders use `BASE_STEP · 1.5^(p-1)`.
pub const BASE_STEP: f64 = 1e-2;
const EQUILIBRIUM_TOL: f64 = 1e-10;
const SAMPLE_SEED: u64 = 0x5eed;

type DriftFn<S> = dyn Fn(&[S]) -> Vec<S> + Send + Sync;

/// Smooth drift `f` of `x⁺ = f(x) + u + w` with an equilibrium `f(x*) = x*`.
#[derive(Clone)]
pub struct SmoothDynamics<S: Scalar> {
    n: usize,
    x_star: Vec<S>,
    eval: Arc<DriftFn<S>>,
}

impl<S: Scalar> std::fmt::Debug for SmoothDynamics<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothDynamics").field("n", &self.n).field("x_star", &self.x_star).finish()
    }
}

impl<S: Scalar> SmoothDynamics<S> {
    pub fn new(x_star: Vec<S>, eval: impl Fn(&[S]) -> Vec<S> + Send + Sync + 'static) -> Result<Self> {
        let n = x_star.len();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        let out = Self { n, x_star, eval: Arc::new(eval) };
        let fx = out.eval_checked(&out.x_star)?;
        let resid = fx
            .iter()
            .zip(&out.x_star)
            .fold(0.0f64, |m, (a, b)| m.max((*a - *b).abs().to_f64_lossy()));
        if resid > EQUILIBRIUM_TOL {
            return Err(Error::NotEquilibrium(resid));
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_star(&self) -> &[S] {
        &self.x_star
    }

    /// `f` in original coordinates.
    pub fn eval(&self, x: &[S]) -> Vec<S> {
        (self.eval)(x)
    }

    fn eval_checked(&self, x: &[S]) -> Result<Vec<S>> {
        let y = (self.eval)(x);
        if y.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("f evaluated at {x:?}")));
        }
        Ok(y)
    }

    /// `f(x* + y) - x*`, the drift in coordinates centred at the equilibrium.
    pub fn shifted(&self, y: &[S]) -> Result<Vec<S>> {
        let x: Vec<S> = y.iter().zip(&self.x_star).map(|(a, b)| *a + *b).collect();
        let mut fx = self.eval_checked(&x)?;
        for (v, s) in fx.iter_mut().zip(&self.x_star) {
            *v -= *s;
        }
        Ok(fx)
    }
}

/// Derivative bound and the radius of the 1-norm ball it is claimed on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemainderModel<S> {
    pub m: S,
    pub k: usize,
    pub radius: S,
}

/// `M ρ^(k+1) / (k+1)!`.
pub fn lagrange_remainder<S: Scalar>(rm: &RemainderModel<S>) -> S {
    rm.m * rm.radius.powi(rm.k as i32 + 1) / factorial::<S>(rm.k + 1)
}

/// Sampled derivative maximum before and after the safety factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivBound<S> {
    pub raw_max: S,
    pub m: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// 1-norm radius (shifted coordinates) on which the stored bound `M` is sampled.
    pub bound_radius: f64,
    pub bound_samples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { bound_radius: 1.0, bound_samples: 200 }
    }
}

fn step_for_order(p: usize) -> f64 {
    BASE_STEP * 1.5f64.powi(p.saturating_sub(1) as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Tensor-product central difference for `∂^β f` at `point` with step `h`.
fn central_mixed<S: Scalar>(f: &SmoothDynamics<S>, point: &[S], beta: &[usize], h: f64) -> Result<Vec<S>> {
    let n = point.len();
    let axes: Vec<usize> = (0..n).filter(|&i| beta[i] > 0).collect();
    let mut out = vec![S::zero(); f.n];
    let mut counters = vec![0usize; axes.len()];
    loop {
        let mut weight = 1.0;
        let mut x = point.to_vec();
        for (slot, &ax) in axes.iter().enumerate() {
            let p = beta[ax];
            let kk = counters[slot];
            weight *= if kk % 2 == 0 { 1.0 } else { -1.0 } * binomial(p, kk);
            x[ax] += S::lit((p as f64 / 2.0 - kk as f64) * h);
        }
        let fx = f.shifted(&x)?;
        for (o, v) in out.iter_mut().zip(fx) {
            *o += S::lit(weight) * v;
        }
        // odometer over the stencil points
        let mut slot = 0;
        loop {
            if slot == axes.len() {
                let order: usize = beta.iter().sum();
                let scale = S::lit(h).powi(order as i32);
                return Ok(out.into_iter().map(|v| v / scale).collect());
            }
            counters[slot] += 1;
            if counters[slot] <= beta[axes[slot]] {
                break;
            }
            counters[slot] = 0;
            slot += 1;
        }
    }
}

/// `∂^β f(point)` for every output component, with one level of Richardson extrapolation.
pub fn mixed_partial<S: Scalar>(f: &SmoothDynamics<S>, point: &[S], beta: &[usize]) -> Result<Vec<S>> {
    let order: usize = beta.iter().sum();
    if order == 0 {
        return f.shifted(point);
    }
    let h = step_for_order(order);
    let coarse = central_mixed(f, point, beta, h)?;
    let fine = central_mixed(f, point, beta, h / 2.0)?;
    let out: Vec<S> = fine
        .iter()
        .zip(&coarse)
        .map(|(a, b)| (S::lit(4.0) * *a - *b) / S::lit(3.0))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("derivative estimate for multi-index {beta:?}")));
    }
    Ok(out)
}

/// All multi-indices over `n` variables with total order `p`.
pub fn multi_indices(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(n, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, p, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Order-`k` Taylor model around the equilibrium with the default bound options.
pub fn taylor_expand<S: Scalar>(f: &SmoothDynamics<S>, k: usize) -> Result<PolyDynamics<S>> {
    taylor_expand_with(f, k, &FitOptions::default())
}

/// Order-`k` Taylor model. `H_j[r, (i1..ij)] = ∂^j f_r / (∂x_i1 … ∂x_ij) / j!`, so the
/// Kronecker form reproduces `Σ_β ∂^β f / β! · x^β`.
///
/// The stored `M` bounds every derivative of order `1..=k+1` on the
/// `opts.bound_radius` 1-norm ball.
pub fn taylor_expand_with<S: Scalar>(f: &SmoothDynamics<S>, k: usize, opts: &FitOptions) -> Result<PolyDynamics<S>> {
    if k == 0 {
        return Err(Error::InvalidArgument("Taylor order must be at least 1".into()));
    }
    if k > MAX_ORDER {
        return Err(Error::OrderTooHigh(k));
    }
    let n = f.n;
    let origin = vec![S::zero(); n];
    let mut h = Vec::with_capacity(k);
    for j in 1..=k {
        let jf = factorial::<S>(j);
        let mut cache: std::collections::HashMap<Vec<usize>, Vec<S>> = std::collections::HashMap::new();
        let mut hj = DMatrix::zeros(n, n.pow(j as u32));
        for col in 0..hj.ncols() {
            let mut beta = vec![0usize; n];
            for i in kron_index(col, n, j) {
                beta[i] += 1;
            }
            let d = match cache.get(&beta) {
                Some(d) => d.clone(),
                None => {
                    let d = mixed_partial(f, &origin, &beta)?;
                    cache.insert(beta, d.clone());
                    d
                }
            };
            for r in 0..n {
                hj[(r, col)] = d[r] / jf;
            }
        }
        h.push(hj);
    }
    let radius = S::lit(opts.bound_radius);
    let bound = estimate_deriv_bound_through(f, radius, k, opts.bound_samples)?;
    let eq = f.shifted(&origin)?;
    let diag = FitDiagnostics {
        base_step: BASE_STEP,
        richardson_levels: 1,
        equilibrium_residual: crate::scalar::norm_inf(&eq).to_f64_lossy(),
        bound_radius: opts.bound_radius,
        bound_samples: opts.bound_samples,
        raw_derivative_max: bound.raw_max.to_f64_lossy(),
        safety_factor: SAFETY_FACTOR,
    };
    Ok(PolyDynamics::new(h, f.x_star.clone(), bound.m)?.with_diagnostics(diag))
}

/// Deterministic sample set in the 1-norm ball: centre, the 2n vertices, then random interior points.
pub fn sample_l1_ball<S: Scalar>(n: usize, radius: S, samples: usize, seed: u64) -> Vec<Vec<S>> {
    let mut pts = Vec::with_capacity(samples.max(2 * n + 1));
    pts.push(vec![S::zero(); n]);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut p = vec![S::zero(); n];
            p[i] = radius * S::lit(sign);
            pts.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = radius.to_f64_lossy();
    while pts.len() < samples {
        let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = e.iter().sum();
        let scale = r * rng.gen::<f64>().powf(1.0 / n as f64) / total;
        pts.push(
            e.iter()
                .map(|v| {
                    let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    S::lit(s * v * scale)
                })
                .collect(),
        );
    }
    pts
}

fn sampled_max<S: Scalar>(f: &SmoothDynamics<S>, radius: S, orders: std::ops::RangeInclusive<usize>, samples: usize) -> Result<S> {
    if !(radius > S::zero()) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    if samples < 100 {
        return Err(Error::InvalidArgument(format!("at least 100 samples required, got {samples}")));
    }
    let betas: Vec<Vec<usize>> = orders.flat_map(|p| multi_indices(f.n, p)).collect();
    let pts = sample_l1_ball(f.n, radius, samples, SAMPLE_SEED);
    let maxima = pts
        .par_iter()
        .map(|p| {
            let mut m = S::zero();
            for b in &betas {
                for v in mixed_partial(f, p, b)? {
                    m = m.max(v.abs());
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<S>>>()?;
    Ok(maxima.into_iter().fold(S::zero(), |a, b| a.max(b)))
}

/// Bound on the order-`k+1` partial derivatives over the 1-norm ball of `radius`,
/// inflated by [`SAFETY_FACTOR`]. This is the `M` of the Lagrange remainder.
pub fn estimate_deriv_bound<S: Scalar>(f: &SmoothDynamics<S>, radius: S, k: usize, samples: usize) -> Result<DerivBound<S>> {
    if k > MAX_ORDER {
        return Err(Error::OrderTooHigh(k));
    }
    let raw = sampled_max(f, radius, k + 1..=k + 1, samples)?;
    Ok(DerivBound { raw_max: raw, m: raw * S::lit(SAFETY_FACTOR) })
}

/// Like [`estimate_deriv_bound`] but over every order `1..=k+1`; the constant the
/// stability and cost certificates need.
pub fn estimate_deriv_bound_through<S: Scalar>(f: &SmoothDynamics<S>, radius: S, k: usize, samples: usize) -> Result<DerivBound<S>> {
    if k > MAX_ORDER {
        return Err(Error::OrderTooHigh(k));
    }
    let raw = sampled_max(f, radius, 1..=k + 1, samples)?;
    Ok(DerivBound { raw_max: raw, m: raw * S::lit(SAFETY_FACTOR) })
}
