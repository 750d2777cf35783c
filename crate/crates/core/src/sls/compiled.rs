//! Flat, index-based form of a term table for fast numeric evaluation and
//! reverse-mode derivatives.

use crate::poly::{FactorKind, Monomial};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub(crate) struct FlatTerm<S> {
    pub comp: usize,
    pub coeff: S,
    /// `(age * n + comp, power)`
    pub vars: Vec<(usize, i32)>,
    /// `(lag, id, kind)`
    pub factors: Vec<(usize, usize, FactorKind)>,
    /// Gate alpha id, applied at lag 0.
    pub gate: Option<usize>,
}

impl<S: Scalar> FlatTerm<S> {
    pub fn from_monomial(comp: usize, n: usize, m: &Monomial<S>, gate: Option<usize>) -> Self {
        Self {
            comp,
            coeff: m.coeff,
            vars: m.exponents().iter().map(|(v, p)| (v.age * n + v.comp, *p as i32)).collect(),
            factors: m.alpha_factors().iter().map(|f| (f.lag, f.id.index(), f.kind)).collect(),
            gate,
        }
    }
}

#[inline]
fn factor_value<S: Scalar>(kind: FactorKind, a: S) -> S {
    match kind {
        FactorKind::Alpha => a,
        FactorKind::OneMinusAlpha => S::one() - a,
    }
}

#[inline]
fn factor_slope<S: Scalar>(kind: FactorKind) -> S {
    match kind {
        FactorKind::Alpha => S::one(),
        FactorKind::OneMinusAlpha => -S::one(),
    }
}

/// Accumulates `Σ_terms value(term)` into `out[term.comp]`.
///
/// `alpha(lag, id)` resolves alpha values.
pub(crate) fn eval_terms<S: Scalar>(
    terms: &[FlatTerm<S>],
    w: &[S],
    alpha: &impl Fn(usize, usize) -> S,
    out: &mut [S],
) {
    for t in terms {
        let mut v = t.coeff;
        for &(i, p) in &t.vars {
            v *= w[i].powi(p);
        }
        if v == S::zero() {
            continue;
        }
        for &(lag, id, kind) in &t.factors {
            v *= factor_value(kind, alpha(lag, id));
        }
        if let Some(g) = t.gate {
            v *= alpha(0, g);
        }
        out[t.comp] += v;
    }
}

/// Reverse-mode pass for [`eval_terms`]: given `out_adj = ∂L/∂out`, adds
/// `∂L/∂w` into `w_adj` and reports `∂L/∂alpha(lag, id)` through `alpha_adj`.
pub(crate) fn vjp_terms<S: Scalar>(
    terms: &[FlatTerm<S>],
    w: &[S],
    alpha: &impl Fn(usize, usize) -> S,
    out_adj: &[S],
    w_adj: &mut [S],
    alpha_adj: &mut impl FnMut(usize, usize, S),
) {
    for t in terms {
        let g_out = out_adj[t.comp];
        if g_out == S::zero() {
            continue;
        }
        let var_vals: Vec<S> = t.vars.iter().map(|&(i, p)| w[i].powi(p)).collect();
        let mut fac_vals: Vec<S> = t.factors.iter().map(|&(lag, id, kind)| factor_value(kind, alpha(lag, id))).collect();
        if let Some(g) = t.gate {
            fac_vals.push(alpha(0, g));
        }
        let var_prod = var_vals.iter().fold(S::one(), |a, b| a * *b);
        let fac_prod = fac_vals.iter().fold(S::one(), |a, b| a * *b);
        let scale = t.coeff * g_out;

        // d/dw_i
        for (slot, &(i, p)) in t.vars.iter().enumerate() {
            let others = var_vals
                .iter()
                .enumerate()
                .filter(|(s, _)| *s != slot)
                .fold(S::one(), |a, (_, b)| a * *b);
            let d = S::from_usize_lossy(p as usize) * w[i].powi(p - 1);
            w_adj[i] += scale * fac_prod * others * d;
        }
        if var_prod == S::zero() {
            continue;
        }
        // d/dalpha
        let nf = t.factors.len();
        for slot in 0..fac_vals.len() {
            let others = fac_vals
                .iter()
                .enumerate()
                .filter(|(s, _)| *s != slot)
                .fold(S::one(), |a, (_, b)| a * *b);
            let base = scale * var_prod * others;
            if slot < nf {
                let (lag, id, kind) = t.factors[slot];
                alpha_adj(lag, id, base * factor_slope::<S>(kind));
            } else {
                alpha_adj(0, t.gate.expect("gate slot"), base);
            }
        }
    }
}
