use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::alpha::AlphaTrace;
use super::compiled::{eval_terms, FlatTerm};
use crate::error::{Error, Result};
use crate::poly::{AlphaFactor, AlphaId, Monomial, PolyDynamics, Polynomial, VarId};
use crate::poly::polynomial_wire::TermWire;
use crate::scalar::Scalar;

/// Default cap on the total number of controller terms.
pub const DEFAULT_TERM_CAP: usize = 100_000;

/// One monomial `G_j^(m)` of the controller, acting on state component `comp`.
#[derive(Clone, Debug, PartialEq)]
pub struct GTerm<S> {
    /// Age of the oldest disturbance in the monomial.
    pub m: usize,
    /// Index within level `m`.
    pub j: usize,
    pub comp: usize,
    pub monomial: Monomial<S>,
    /// Present iff `m < T`; level-`T` terms are cancelled outright.
    pub alpha_id: Option<AlphaId>,
}

/// Nonlinear SLS disturbance-feedback controller with FIR horizon `T`.
#[derive(Clone, Debug)]
pub struct SlsController<S: Scalar> {
    n: usize,
    k: usize,
    horizon: usize,
    terms: Vec<GTerm<S>>,
    c_m: Vec<usize>,
    c: usize,
    num_alphas: usize,
    state_rest: Vec<Polynomial<S>>,
    flat_terms: Vec<FlatTerm<S>>,
    flat_rest: Vec<FlatTerm<S>>,
}

impl<S: Scalar> PartialEq for SlsController<S> {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.k == other.k && self.horizon == other.horizon && self.terms == other.terms
    }
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub term_cap: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { term_cap: DEFAULT_TERM_CAP }
    }
}

/// Unrolls the closed loop of `dyn_` under the SLS controller for horizon `t_horizon`.
pub fn synthesize<S: Scalar>(dyn_: &PolyDynamics<S>, t_horizon: usize) -> Result<SlsController<S>> {
    synthesize_with(dyn_, t_horizon, &SynthOptions::default())
}

/// Level-by-level fixed point: with state response `x = w₀ + R`, the level-`m`
/// terms are the monomials of `p(x)` whose oldest disturbance has age `m`.
/// Gated terms leave a residual `(1-α)G`, one step older, in `R`. Terms of
/// level `m` only depend on residuals of lower levels, so one pass suffices.
pub fn synthesize_with<S: Scalar>(dyn_: &PolyDynamics<S>, t_horizon: usize, opts: &SynthOptions) -> Result<SlsController<S>> {
    if t_horizon == 0 {
        return Err(Error::InvalidArgument("FIR horizon must be at least 1".into()));
    }
    let n = dyn_.n();
    let p = dyn_.symbolic();
    let mut rest: Vec<Polynomial<S>> = vec![Polynomial::zero(); n];
    let mut terms: Vec<GTerm<S>> = Vec::new();
    let mut c_m = Vec::with_capacity(t_horizon + 1);
    let mut next_id = 0u32;

    for m in 0..=t_horizon {
        let assignment: HashMap<VarId, Polynomial<S>> = (0..n)
            .map(|c| (VarId::new(0, c), Polynomial::var(VarId::new(0, c)).add(&rest[c])))
            .collect();
        let mut level_count = 0;
        let mut new_rest: Vec<Polynomial<S>> = vec![Polynomial::zero(); n];
        for (comp, pc) in p.iter().enumerate() {
            let image = pc.substitute_capped(&assignment, opts.term_cap).map_err(|e| match e {
                Error::TermExplosion { .. } => {
                    let mut counts = c_m.clone();
                    counts.push(level_count);
                    Error::TermExplosion { cap: opts.term_cap, counts }
                }
                other => other,
            })?;
            let mut residual = Vec::new();
            for mono in image.at_age(m).into_terms() {
                let alpha_id = (m < t_horizon).then(|| {
                    let id = AlphaId(next_id);
                    next_id += 1;
                    id
                });
                if let Some(id) = alpha_id {
                    let mut exps: Vec<(VarId, u32)> = mono.exponents().to_vec();
                    for (v, _) in exps.iter_mut() {
                        v.age += 1;
                    }
                    let mut factors: Vec<AlphaFactor> =
                        mono.alpha_factors().iter().map(|f| AlphaFactor { lag: f.lag + 1, ..*f }).collect();
                    factors.push(AlphaFactor::one_minus(id, 1));
                    residual.push(Monomial::new(mono.coeff, exps, factors));
                }
                terms.push(GTerm { m, j: level_count, comp, monomial: mono, alpha_id });
                level_count += 1;
            }
            new_rest[comp] = Polynomial::from_terms(residual);
            if terms.len() > opts.term_cap {
                c_m.push(level_count);
                return Err(Error::TermExplosion { cap: opts.term_cap, counts: c_m });
            }
        }
        c_m.push(level_count);
        for (r, add) in rest.iter_mut().zip(new_rest) {
            *r = r.add(&add);
        }
    }
    SlsController::from_terms(n, dyn_.k(), t_horizon, terms)
}

impl<S: Scalar> SlsController<S> {
    /// Rebuilds the derived tables (counts, state response, flat forms) from a term list.
    pub fn from_terms(n: usize, k: usize, horizon: usize, terms: Vec<GTerm<S>>) -> Result<Self> {
        let mut c_m = vec![0usize; horizon + 1];
        let mut num_alphas = 0usize;
        let mut rest: Vec<Vec<Monomial<S>>> = vec![Vec::new(); n];
        for t in &terms {
            if t.m > horizon || t.comp >= n {
                return Err(Error::Format(format!("term (m={}, comp={}) out of range", t.m, t.comp)));
            }
            if t.monomial.max_age() != Some(t.m) {
                return Err(Error::Format(format!("term {} at level {} has oldest age {:?}", t.j, t.m, t.monomial.max_age())));
            }
            if t.alpha_id.is_some() != (t.m < horizon) {
                return Err(Error::Format(format!("gating of term {} at level {} is inconsistent", t.j, t.m)));
            }
            c_m[t.m] += 1;
            if let Some(id) = t.alpha_id {
                num_alphas = num_alphas.max(id.index() + 1);
                let exps = t.monomial.exponents().iter().map(|(v, p)| (VarId::new(v.age + 1, v.comp), *p)).collect();
                let mut factors: Vec<AlphaFactor> =
                    t.monomial.alpha_factors().iter().map(|f| AlphaFactor { lag: f.lag + 1, ..*f }).collect();
                factors.push(AlphaFactor::one_minus(id, 1));
                rest[t.comp].push(Monomial::new(t.monomial.coeff, exps, factors));
            }
        }
        let gated = terms.iter().filter(|t| t.alpha_id.is_some()).count();
        if gated != num_alphas {
            return Err(Error::Format("alpha ids must be unique and dense".into()));
        }
        let c = c_m[..horizon].iter().copied().max().unwrap_or(0);
        let state_rest: Vec<Polynomial<S>> = rest.into_iter().map(Polynomial::from_terms).collect();
        let flat_terms = terms
            .iter()
            .map(|t| FlatTerm::from_monomial(t.comp, n, &t.monomial, t.alpha_id.map(AlphaId::index)))
            .collect();
        let flat_rest = state_rest
            .iter()
            .enumerate()
            .flat_map(|(comp, p)| p.terms().iter().map(move |m| FlatTerm::from_monomial(comp, n, m, None)))
            .collect();
        Ok(Self { n, k, horizon, terms, c_m, c, num_alphas, state_rest, flat_terms, flat_rest })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// FIR horizon `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn terms(&self) -> &[GTerm<S>] {
        &self.terms
    }

    pub fn c_m(&self) -> &[usize] {
        &self.c_m
    }

    /// `max c_m` over the gated levels `0..T`.
    pub fn c(&self) -> usize {
        self.c
    }

    /// Number of gated terms, i.e. alpha coefficients.
    pub fn num_alphas(&self) -> usize {
        self.num_alphas
    }

    /// Level of every alpha id.
    pub fn alpha_levels(&self) -> Vec<usize> {
        let mut lv = vec![0; self.num_alphas];
        for t in &self.terms {
            if let Some(id) = t.alpha_id {
                lv[id.index()] = t.m;
            }
        }
        lv
    }

    /// State response `x_t = w_t + R(w_{t-1..t-T})` per component.
    pub fn state_response(&self) -> Vec<Polynomial<S>> {
        self.state_rest
            .iter()
            .enumerate()
            .map(|(c, r)| Polynomial::var(VarId::new(0, c)).add(r))
            .collect()
    }

    pub(crate) fn flat_terms(&self) -> &[FlatTerm<S>] {
        &self.flat_terms
    }

    pub(crate) fn flat_rest(&self) -> &[FlatTerm<S>] {
        &self.flat_rest
    }

    /// Flattens `w_hist` (newest first) into `age * n + comp` layout.
    pub(crate) fn flatten_history(&self, w_hist: &[Vec<S>]) -> Result<Vec<S>> {
        let need = self.horizon + 1;
        if w_hist.len() < need {
            return Err(Error::ShortHistory { need, got: w_hist.len() });
        }
        let mut flat = Vec::with_capacity(need * self.n);
        for w in &w_hist[..need] {
            if w.len() != self.n {
                return Err(Error::Dimension { expected: self.n, got: w.len() });
            }
            flat.extend_from_slice(w);
        }
        Ok(flat)
    }

    fn check_alphas(&self, alphas: &AlphaTrace<S>, lags: usize) -> Result<()> {
        if self.num_alphas == 0 {
            return Ok(());
        }
        if alphas.num_ids() < self.num_alphas {
            return Err(Error::MissingAlpha(alphas.num_ids() as u32));
        }
        if alphas.len() < lags {
            return Err(Error::MissingAlpha(0));
        }
        Ok(())
    }

    /// `u_t = -Σ α G - Σ G^(T)` for a history `w_hist[age]`, `age = 0..=T`.
    pub fn control_input(&self, w_hist: &[Vec<S>], alphas: &AlphaTrace<S>) -> Result<Vec<S>> {
        self.check_alphas(alphas, self.horizon + 1)?;
        let w = self.flatten_history(w_hist)?;
        let mut u = vec![S::zero(); self.n];
        let lookup = |lag: usize, id: usize| alphas.get(lag, id).unwrap_or(S::one());
        eval_terms(&self.flat_terms, &w, &lookup, &mut u);
        for v in u.iter_mut() {
            *v = -*v;
        }
        Ok(u)
    }

    /// `x_t = w_t + Σ (1-α) G(w_{t-1..})`.
    pub fn predict_state(&self, w_hist: &[Vec<S>], alphas: &AlphaTrace<S>) -> Result<Vec<S>> {
        self.check_alphas(alphas, self.horizon + 1)?;
        let w = self.flatten_history(w_hist)?;
        let mut x = w[..self.n].to_vec();
        let lookup = |lag: usize, id: usize| alphas.get(lag, id).unwrap_or(S::one());
        eval_terms(&self.flat_rest, &w, &lookup, &mut x);
        Ok(x)
    }

    /// Newest disturbance consistent with the observed state:
    /// `x_observed - R(w_older)`. `w_older[0]` is one step old.
    pub fn reconstruct_disturbance(&self, x_observed: &[S], w_older: &[Vec<S>], alphas: &AlphaTrace<S>) -> Result<Vec<S>> {
        if x_observed.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x_observed.len() });
        }
        let mut hist = Vec::with_capacity(self.horizon + 1);
        hist.push(vec![S::zero(); self.n]);
        hist.extend(w_older.iter().take(self.horizon).cloned());
        let predicted = self.predict_state(&hist, alphas)?;
        Ok(x_observed.iter().zip(predicted).map(|(x, p)| *x - p).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ControllerDoc {
            n: self.n,
            k: self.k,
            t: self.horizon,
            terms: self
                .terms
                .iter()
                .map(|t| TermDoc { m: t.m, j: t.j, comp: t.comp, alpha_id: t.alpha_id, monomial: TermWire::from(&t.monomial) })
                .collect(),
            c_m: self.c_m.clone(),
            c: self.c,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ControllerDoc<S> = serde_json::from_str(s)?;
        let terms = doc
            .terms
            .into_iter()
            .map(|t| {
                Ok(GTerm { m: t.m, j: t.j, comp: t.comp, alpha_id: t.alpha_id, monomial: Monomial::try_from(t.monomial)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Self::from_terms(doc.n, doc.k, doc.t, terms)?;
        if out.c_m != doc.c_m || out.c != doc.c {
            return Err(Error::Format("stored term counts disagree with the term list".into()));
        }
        Ok(out)
    }
}

/// Pads a newest-first history with zeros up to `len` entries (cold start).
pub fn pad_cold_start<S: Scalar>(w_hist: &[Vec<S>], len: usize, n: usize) -> Vec<Vec<S>> {
    let mut out: Vec<Vec<S>> = w_hist.iter().take(len).cloned().collect();
    out.resize(len, vec![S::zero(); n]);
    out
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct TermDoc<S: Scalar> {
    m: usize,
    j: usize,
    comp: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_id: Option<AlphaId>,
    monomial: TermWire<S>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct ControllerDoc<S: Scalar> {
    n: usize,
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    terms: Vec<TermDoc<S>>,
    c_m: Vec<usize>,
    c: usize,
}
