//! Level-split SLS controller evaluated numerically.
//!
//! Exact unrolling produces a number of monomials that grows like `k^T`, so
//! it stops being practical beyond small systems. The same closed loop can be
//! realized without expanding anything: let `X_m` be the state response with
//! every disturbance older than `m` steps zeroed. The part of a dynamics
//! monomial `c·x^β` whose oldest disturbance has age exactly `m` is
//! `c·(X_m^β - X_{m-1}^β)`, and these pieces telescope back to `c·x^β`.
//! Gating each piece with its own alpha gives a controller with one alpha per
//! (level, dynamics monomial) group that still cancels every disturbance
//! after `T` steps.

use serde::{Deserialize, Serialize};

use super::law::{FeedbackLaw, StepGrad, StepOut};
use crate::error::{Error, Result};
use crate::poly::PolyDynamics;
use crate::scalar::Scalar;

/// One monomial `coeff · Π x[var]^pow` of component `comp` of the dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DynTerm<S: Scalar> {
    pub comp: usize,
    pub coeff: S,
    /// `(state component, power)`
    pub vars: Vec<(usize, u32)>,
}

impl<S: Scalar> DynTerm<S> {
    fn degree(&self) -> u32 {
        self.vars.iter().map(|v| v.1).sum()
    }

    fn value(&self, x: &[S]) -> S {
        self.vars.iter().fold(S::one(), |a, &(i, p)| a * x[i].powi(p as i32))
    }

    /// Adds `scale · ∇(x^β)` into `adj`.
    fn grad_into(&self, x: &[S], scale: S, adj: &mut [S]) {
        for (slot, &(i, p)) in self.vars.iter().enumerate() {
            let mut d = S::from_usize_lossy(p as usize) * x[i].powi(p as i32 - 1);
            for (s2, &(j, q)) in self.vars.iter().enumerate() {
                if s2 != slot {
                    d *= x[j].powi(q as i32);
                }
            }
            adj[i] += scale * d;
        }
    }
}

/// Controller with alpha id `m · D + d` gating the level-`m` part of dynamics
/// term `d` (`D` = number of dynamics terms, `m < T`).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedController<S: Scalar> {
    n: usize,
    k: usize,
    horizon: usize,
    terms: Vec<DynTerm<S>>,
}

impl<S: Scalar> GroupedController<S> {
    pub fn new(n: usize, k: usize, horizon: usize, terms: Vec<DynTerm<S>>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("FIR horizon must be at least 1".into()));
        }
        for t in &terms {
            if t.comp >= n {
                return Err(Error::Dimension { expected: n, got: t.comp + 1 });
            }
            if let Some(&(i, _)) = t.vars.iter().find(|v| v.0 >= n) {
                return Err(Error::Dimension { expected: n, got: i + 1 });
            }
            if t.vars.is_empty() {
                return Err(Error::InvalidArgument("constant dynamics term; expand about an equilibrium".into()));
            }
        }
        Ok(Self { n, k, horizon, terms })
    }

    /// Groups built from the nonzero monomials of `dyn_`.
    pub fn from_dynamics(dyn_: &PolyDynamics<S>, horizon: usize) -> Result<Self> {
        let mut terms = Vec::new();
        for (comp, p) in dyn_.symbolic().iter().enumerate() {
            for m in p.terms() {
                terms.push(DynTerm {
                    comp,
                    coeff: m.coeff,
                    vars: m.exponents().iter().map(|(v, e)| (v.comp, *e)).collect(),
                });
            }
        }
        Self::new(dyn_.n(), dyn_.k(), horizon, terms)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dyn_terms(&self) -> &[DynTerm<S>] {
        &self.terms
    }

    /// Groups per gated level.
    pub fn c(&self) -> usize {
        self.terms.len()
    }

    /// Level-wise truncated state responses `X_0..=X_T` from `ŵ` and the
    /// gated residuals `r_m = Σ (1-α) L` carried over from the previous step.
    fn responses(&self, w_hat: &[S], r: &[Vec<S>]) -> Vec<Vec<S>> {
        let mut xs = Vec::with_capacity(self.horizon + 1);
        let mut cur = w_hat.to_vec();
        xs.push(cur.clone());
        for rm in r {
            for (a, b) in cur.iter_mut().zip(rm) {
                *a += *b;
            }
            xs.push(cur.clone());
        }
        xs
    }

    fn residuals(&self, mem: &[S]) -> Vec<Vec<S>> {
        let g = self.num_groups();
        let d = self.terms.len();
        let (l_old, a_old) = mem.split_at(g);
        (0..self.horizon)
            .map(|m| {
                let mut r = vec![S::zero(); self.n];
                for (j, t) in self.terms.iter().enumerate() {
                    let id = m * d + j;
                    r[t.comp] += (S::one() - a_old[id]) * l_old[id];
                }
                r
            })
            .collect()
    }

    fn num_groups(&self) -> usize {
        self.horizon * self.terms.len()
    }

    /// Level pieces `L[m][d]` for `m = 0..=T`.
    fn pieces(&self, xs: &[Vec<S>]) -> Vec<Vec<S>> {
        let mut prev: Vec<S> = vec![S::zero(); self.terms.len()];
        xs.iter()
            .map(|x| {
                let cur: Vec<S> = self.terms.iter().map(|t| t.value(x)).collect();
                let out = self.terms.iter().enumerate().map(|(j, t)| t.coeff * (cur[j] - prev[j])).collect();
                prev = cur;
                out
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GroupedDoc {
            kind: "grouped".into(),
            n: self.n,
            k: self.k,
            t: self.horizon,
            terms: self.terms.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GroupedDoc<S> = serde_json::from_str(s)?;
        if doc.kind != "grouped" {
            return Err(Error::Format(format!("expected a grouped controller, found kind {:?}", doc.kind)));
        }
        Self::new(doc.n, doc.k, doc.t, doc.terms)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct GroupedDoc<S: Scalar> {
    kind: String,
    n: usize,
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    terms: Vec<DynTerm<S>>,
}

/// Memory layout: `[L_{t-1} for every gated group, α_{t-1}]`.
impl<S: Scalar> FeedbackLaw<S> for GroupedController<S> {
    fn n(&self) -> usize {
        self.n
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn num_alphas(&self) -> usize {
        self.num_groups()
    }

    fn alpha_levels(&self) -> Vec<usize> {
        (0..self.num_groups()).map(|id| id / self.terms.len().max(1)).collect()
    }

    fn memory_len(&self) -> usize {
        2 * self.num_groups()
    }

    fn step(&self, x: &[S], mem: &[S], alpha: &[S]) -> StepOut<S> {
        let d = self.terms.len();
        let r = self.residuals(mem);
        let mut w_hat = x.to_vec();
        for rm in &r {
            for (a, b) in w_hat.iter_mut().zip(rm) {
                *a -= *b;
            }
        }
        let xs = self.responses(&w_hat, &r);
        let l = self.pieces(&xs);
        let mut u = vec![S::zero(); self.n];
        for (m, lm) in l.iter().enumerate() {
            for (j, t) in self.terms.iter().enumerate() {
                let gate = if m < self.horizon { alpha[m * d + j] } else { S::one() };
                u[t.comp] -= gate * lm[j];
            }
        }
        let mut next: Vec<S> = l[..self.horizon].concat();
        next.extend_from_slice(alpha);
        StepOut { w_hat, u, mem: next }
    }

    fn step_vjp(&self, x: &[S], mem: &[S], alpha: &[S], adj_w_hat: &[S], adj_u: &[S], adj_mem_next: &[S]) -> StepGrad<S> {
        let (n, d, t_h) = (self.n, self.terms.len(), self.horizon);
        let g = self.num_groups();
        let (l_old, a_old) = mem.split_at(g);
        let r = self.residuals(mem);
        let mut w_hat = x.to_vec();
        for rm in &r {
            for (a, b) in w_hat.iter_mut().zip(rm) {
                *a -= *b;
            }
        }
        let xs = self.responses(&w_hat, &r);
        let l = self.pieces(&xs);

        let (adj_l_next, adj_a_next) = adj_mem_next.split_at(g);
        let mut adj_alpha = adj_a_next.to_vec();
        // adjoint of every piece L[m][j]
        let mut adj_l = vec![vec![S::zero(); d]; t_h + 1];
        for m in 0..=t_h {
            for (j, t) in self.terms.iter().enumerate() {
                let au = adj_u[t.comp];
                if m < t_h {
                    let id = m * d + j;
                    adj_l[m][j] = adj_l_next[id] - alpha[id] * au;
                    adj_alpha[id] -= l[m][j] * au;
                } else {
                    adj_l[m][j] = -au;
                }
            }
        }
        // L[m][j] = c (X_m^β - X_{m-1}^β)
        let mut adj_xs = vec![vec![S::zero(); n]; t_h + 1];
        for m in 0..=t_h {
            for (j, t) in self.terms.iter().enumerate() {
                let s = t.coeff * adj_l[m][j];
                if s == S::zero() {
                    continue;
                }
                t.grad_into(&xs[m], s, &mut adj_xs[m]);
                if m > 0 {
                    t.grad_into(&xs[m - 1], -s, &mut adj_xs[m - 1]);
                }
            }
        }
        // X_m = ŵ + Σ_{m'<m} r_{m'};  ŵ = x - Σ_{m'<T} r_{m'}
        let mut adj_wh = adj_w_hat.to_vec();
        for ax in &adj_xs {
            for (a, b) in adj_wh.iter_mut().zip(ax) {
                *a += *b;
            }
        }
        let mut adj_r = vec![vec![S::zero(); n]; t_h];
        let mut tail = vec![S::zero(); n];
        for m in (0..t_h).rev() {
            for i in 0..n {
                tail[i] += adj_xs[m + 1][i];
                adj_r[m][i] = tail[i] - adj_wh[i];
            }
        }
        // r_m = Σ_j (1 - α_old) L_old
        let mut adj_mem = vec![S::zero(); 2 * g];
        for (m, ar) in adj_r.iter().enumerate() {
            for (j, t) in self.terms.iter().enumerate() {
                let id = m * d + j;
                adj_mem[id] += (S::one() - a_old[id]) * ar[t.comp];
                adj_mem[g + id] -= l_old[id] * ar[t.comp];
            }
        }
        StepGrad { x: adj_wh, mem: adj_mem, alpha: adj_alpha }
    }
}

/// Level-wise gain and group count for the grouped controller:
/// `l = max |c|·deg·W^(deg-1)` over dynamics terms, `c` = groups per level.
pub fn grouped_l_c<S: Scalar>(ctl: &GroupedController<S>, w: S) -> (S, usize) {
    let mut l = S::zero();
    for t in ctl.dyn_terms() {
        let deg = t.degree();
        let v = t.coeff.abs() * S::from_usize_lossy(deg as usize) * w.powi(deg as i32 - 1);
        if v > l {
            l = v;
        }
    }
    (l, ctl.c())
}
