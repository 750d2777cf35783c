use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::kron::{kron_index, kron_power};
use super::monomial::{Monomial, VarId};
use super::polynomial::Polynomial;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Degree-`k` polynomial model `x⁺ = Σ_j H_j x^{⊗j}` in coordinates shifted
/// so the expansion point sits at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyDynamics<S: Scalar> {
    n: usize,
    k: usize,
    h: Vec<DMatrix<S>>,
    x_star: Vec<S>,
    m_bound: S,
    diagnostics: Option<FitDiagnostics>,
}

/// How a fitted model was obtained; carried along for reporting only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub base_step: f64,
    pub richardson_levels: usize,
    pub equilibrium_residual: f64,
    pub bound_radius: f64,
    pub bound_samples: usize,
    pub raw_derivative_max: f64,
    pub safety_factor: f64,
}

impl<S: Scalar> PolyDynamics<S> {
    /// `h[j-1]` must be `n × n^j`.
    pub fn new(h: Vec<DMatrix<S>>, x_star: Vec<S>, m_bound: S) -> Result<Self> {
        let n = x_star.len();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if h.is_empty() {
            return Err(Error::InvalidArgument("at least one coefficient matrix required".into()));
        }
        for (i, hj) in h.iter().enumerate() {
            let cols = n.pow(i as u32 + 1);
            if hj.nrows() != n || hj.ncols() != cols {
                return Err(Error::InvalidArgument(format!(
                    "H_{} has shape {}x{}, expected {}x{}",
                    i + 1,
                    hj.nrows(),
                    hj.ncols(),
                    n,
                    cols
                )));
            }
            if hj.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("H_{}", i + 1)));
            }
        }
        if !(m_bound >= S::zero()) {
            return Err(Error::InvalidArgument("derivative bound must be non-negative".into()));
        }
        Ok(Self { n, k: h.len(), h, x_star, m_bound, diagnostics: None })
    }

    /// Scalar model `x⁺ = Σ_j coeffs[j-1] x^j` around the origin.
    pub fn scalar(coeffs: &[f64], m_bound: f64) -> Result<Self> {
        let h = coeffs.iter().map(|&c| DMatrix::from_element(1, 1, S::lit(c))).collect();
        Self::new(h, vec![S::zero()], S::lit(m_bound))
    }

    pub fn with_diagnostics(mut self, d: FitDiagnostics) -> Self {
        self.diagnostics = Some(d);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h(&self) -> &[DMatrix<S>] {
        &self.h
    }

    pub fn x_star(&self) -> &[S] {
        &self.x_star
    }

    pub fn m_bound(&self) -> S {
        self.m_bound
    }

    pub fn set_m_bound(&mut self, m: S) {
        self.m_bound = m;
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// `Σ_j H_j x^{⊗j}` in shifted coordinates.
    pub fn eval(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        let mut out = vec![S::zero(); self.n];
        for (i, hj) in self.h.iter().enumerate() {
            let kx = kron_power(x, i + 1)?;
            for (r, o) in out.iter_mut().enumerate() {
                *o += hj.row(r).iter().zip(&kx).fold(S::zero(), |acc, (a, b)| acc + *a * *b);
            }
        }
        Ok(out)
    }

    /// One polynomial per output component over the variables `(age 0, comp)`.
    pub fn symbolic(&self) -> Vec<Polynomial<S>> {
        (0..self.n)
            .map(|r| {
                let mut terms = Vec::new();
                for (i, hj) in self.h.iter().enumerate() {
                    let j = i + 1;
                    for col in 0..hj.ncols() {
                        let c = hj[(r, col)];
                        if c == S::zero() {
                            continue;
                        }
                        let exps = kron_index(col, self.n, j).into_iter().map(|c| (VarId::new(0, c), 1)).collect();
                        terms.push(Monomial::new(c, exps, vec![]));
                    }
                }
                Polynomial::from_terms(terms)
            })
            .collect()
    }

    /// Jacobian `∂(Σ H_j x^{⊗j})/∂x` evaluated at `x`.
    pub fn jacobian(&self, x: &[S]) -> Result<DMatrix<S>> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        let mut jac = DMatrix::zeros(self.n, self.n);
        for (i, hj) in self.h.iter().enumerate() {
            let j = i + 1;
            for col in 0..hj.ncols() {
                let idx = kron_index(col, self.n, j);
                // d/dx_c of prod_l x_{idx_l}
                for pos in 0..j {
                    let rest = idx
                        .iter()
                        .enumerate()
                        .filter(|(l, _)| *l != pos)
                        .fold(S::one(), |acc, (_, &q)| acc * x[q]);
                    if rest == S::zero() {
                        continue;
                    }
                    for r in 0..self.n {
                        jac[(r, idx[pos])] += hj[(r, col)] * rest;
                    }
                }
            }
        }
        Ok(jac)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DynamicsDoc {
            n: self.n,
            k: self.k,
            x_star: self.x_star.clone(),
            m_bound: self.m_bound,
            h: self
                .h
                .iter()
                .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
                .collect(),
            polynomials: self.symbolic(),
            fit_diagnostics: self.diagnostics.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: DynamicsDoc<S> = serde_json::from_str(s)?;
        let h = doc
            .h
            .iter()
            .map(|rows| {
                let nr = rows.len();
                let nc = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != nc) {
                    return Err(Error::Format("ragged coefficient matrix".into()));
                }
                Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Self::new(h, doc.x_star, doc.m_bound)?;
        if out.n != doc.n || out.k != doc.k {
            return Err(Error::Format(format!(
                "header says n={}, k={} but matrices give n={}, k={}",
                doc.n, doc.k, out.n, out.k
            )));
        }
        Ok(match doc.fit_diagnostics {
            Some(d) => out.with_diagnostics(d),
            None => out,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct DynamicsDoc<S: Scalar> {
    n: usize,
    k: usize,
    x_star: Vec<S>,
    #[serde(rename = "M")]
    m_bound: S,
    #[serde(rename = "H")]
    h: Vec<Vec<Vec<S>>>,
    polynomials: Vec<Polynomial<S>>,
    #[serde(default)]
    fit_diagnostics: Option<FitDiagnostics>,
}
