use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, HashMap};

use super::monomial::{AlphaFactor, FactorKind, Monomial, Shape, VarId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Merged coefficients below this magnitude are dropped.
pub const MERGE_TOLERANCE: f64 = 1e-14;

/// Sparse multivariate polynomial over [`VarId`] variables whose coefficients
/// may carry products of symbolic alpha factors.
///
/// Terms are kept merged and in canonical (graded lexicographic) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial<S> {
    terms: Vec<Monomial<S>>,
}

impl<S: Scalar> Default for Polynomial<S> {
    fn default() -> Self {
        Self::zero()
    }
}

fn keep<S: Scalar>(c: S) -> bool {
    c.abs() >= S::lit(MERGE_TOLERANCE)
}

impl<S: Scalar> Polynomial<S> {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// The constant polynomial 1. Only used as an algebraic identity.
    pub fn one() -> Self {
        Self { terms: vec![Monomial { coeff: S::one(), shape: Shape::default() }] }
    }

    pub fn var(v: VarId) -> Self {
        Self::from_terms(vec![Monomial::new(S::one(), vec![(v, 1)], vec![])])
    }

    /// Builds a canonical polynomial, merging duplicate shapes.
    pub fn from_terms(terms: impl IntoIterator<Item = Monomial<S>>) -> Self {
        let mut acc: BTreeMap<Shape, S> = BTreeMap::new();
        for m in terms {
            *acc.entry(m.shape).or_insert_with(S::zero) += m.coeff;
        }
        Self::from_map(acc)
    }

    fn from_map(map: BTreeMap<Shape, S>) -> Self {
        let terms = map
            .into_iter()
            .filter(|(_, c)| keep(*c))
            .map(|(shape, coeff)| Monomial { coeff, shape })
            .collect();
        Self { terms }
    }

    pub fn terms(&self) -> &[Monomial<S>] {
        &self.terms
    }

    pub fn into_terms(self) -> Vec<Monomial<S>> {
        self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_age(&self) -> Option<usize> {
        self.terms.iter().filter_map(|m| m.max_age()).max()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut acc: BTreeMap<Shape, S> = BTreeMap::new();
        for m in self.terms.iter().chain(other.terms.iter()) {
            *acc.entry(m.shape.clone()).or_insert_with(S::zero) += m.coeff;
        }
        Self::from_map(acc)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-S::one()))
    }

    pub fn scale(&self, s: S) -> Self {
        Self::from_terms(self.terms.iter().map(|m| Monomial { coeff: m.coeff * s, shape: m.shape.clone() }))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut acc: BTreeMap<Shape, S> = BTreeMap::new();
        for a in &self.terms {
            for b in &other.terms {
                *acc.entry(a.shape.mul(&b.shape)).or_insert_with(S::zero) += a.coeff * b.coeff;
            }
        }
        Self::from_map(acc)
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::one();
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Multiplies every term by one more symbolic alpha factor.
    pub fn with_factor(&self, f: AlphaFactor) -> Self {
        Self::from_terms(self.terms.iter().map(|m| {
            let mut shape = m.shape.clone();
            shape.alpha_factors.push(f);
            shape.alpha_factors.sort_unstable();
            Monomial { coeff: m.coeff, shape }
        }))
    }

    /// Re-expresses the polynomial `by` steps later: every variable gets
    /// older and every alpha factor refers further back in time.
    pub fn shift_time(&self, by: usize) -> Self {
        Self::from_terms(self.terms.iter().map(|m| {
            let exponents = m
                .shape
                .exponents
                .iter()
                .map(|&(v, p)| (VarId::new(v.age + by, v.comp), p))
                .collect();
            let alpha_factors = m
                .shape
                .alpha_factors
                .iter()
                .map(|f| AlphaFactor { lag: f.lag + by, ..*f })
                .collect();
            Monomial::new(m.coeff, exponents, alpha_factors)
        }))
    }

    /// Splits into terms whose oldest variable is at most `max_age` and the rest.
    pub fn truncate_by_age(&self, max_age: usize) -> (Self, Self) {
        let (kept, dropped): (Vec<_>, Vec<_>) = self
            .terms
            .iter()
            .cloned()
            .partition(|m| m.max_age().map_or(true, |a| a <= max_age));
        (Self { terms: kept }, Self { terms: dropped })
    }

    /// Terms whose oldest variable has exactly the given age.
    pub fn at_age(&self, age: usize) -> Self {
        Self { terms: self.terms.iter().filter(|m| m.max_age() == Some(age)).cloned().collect() }
    }

    /// Partial derivative with respect to one variable.
    pub fn partial(&self, v: VarId) -> Self {
        Self::from_terms(self.terms.iter().filter_map(|m| {
            let pos = m.shape.exponents.iter().position(|(u, _)| *u == v)?;
            let mut shape = m.shape.clone();
            let p = shape.exponents[pos].1;
            if p == 1 {
                shape.exponents.remove(pos);
            } else {
                shape.exponents[pos].1 = p - 1;
            }
            Some(Monomial { coeff: m.coeff * S::from_usize_lossy(p as usize), shape })
        }))
    }

    /// Evaluates with numeric variable values and alpha values resolved per factor.
    pub fn eval(
        &self,
        value: impl Fn(VarId) -> Result<S>,
        alpha: impl Fn(&AlphaFactor) -> Result<S>,
    ) -> Result<S> {
        let mut total = S::zero();
        for m in &self.terms {
            let mut t = m.coeff;
            for &(v, p) in &m.shape.exponents {
                t *= value(v)?.powi(p as i32);
            }
            for f in &m.shape.alpha_factors {
                t *= f.apply(alpha(f)?);
            }
            total += t;
        }
        Ok(total)
    }

    /// Evaluates with every alpha set to the same constant.
    pub fn eval_const_alpha(&self, value: impl Fn(VarId) -> S, alpha: S) -> S {
        self.eval(|v| Ok(value(v)), |_| Ok(alpha)).expect("infallible closures")
    }

    /// Replaces every variable by a polynomial and expands.
    pub fn substitute(&self, assignment: &HashMap<VarId, Polynomial<S>>) -> Result<Self> {
        self.substitute_capped(assignment, usize::MAX)
    }

    /// [`substitute`](Self::substitute) that gives up once any intermediate
    /// expansion holds more than `cap` terms.
    pub fn substitute_capped(&self, assignment: &HashMap<VarId, Polynomial<S>>, cap: usize) -> Result<Self> {
        let mut powers: HashMap<(VarId, u32), Polynomial<S>> = HashMap::new();
        let mut acc: BTreeMap<Shape, S> = BTreeMap::new();
        for m in &self.terms {
            let mut prod = Polynomial {
                terms: vec![Monomial {
                    coeff: m.coeff,
                    shape: Shape { exponents: vec![], alpha_factors: m.shape.alpha_factors.clone() },
                }],
            };
            for &(v, p) in &m.shape.exponents {
                let q = assignment
                    .get(&v)
                    .ok_or(Error::MissingAssignment { age: v.age, comp: v.comp })?;
                if !powers.contains_key(&(v, p)) {
                    let mut qp = Self::one();
                    for _ in 0..p {
                        qp = qp.mul_capped(q, cap)?;
                    }
                    powers.insert((v, p), qp);
                }
                prod = prod.mul_capped(&powers[&(v, p)], cap)?;
                if prod.is_empty() {
                    break;
                }
            }
            for t in prod.terms {
                *acc.entry(t.shape).or_insert_with(S::zero) += t.coeff;
            }
            if acc.len() > cap {
                return Err(Error::TermExplosion { cap, counts: vec![acc.len()] });
            }
        }
        Ok(Self::from_map(acc))
    }

    /// Product that fails with [`Error::TermExplosion`] past `cap` terms.
    pub fn mul_capped(&self, other: &Self, cap: usize) -> Result<Self> {
        let mut acc: BTreeMap<Shape, S> = BTreeMap::new();
        for a in &self.terms {
            for b in &other.terms {
                *acc.entry(a.shape.mul(&b.shape)).or_insert_with(S::zero) += a.coeff * b.coeff;
            }
            if acc.len() > cap {
                return Err(Error::TermExplosion { cap, counts: vec![acc.len()] });
            }
        }
        Ok(Self::from_map(acc))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl<S: Scalar> std::fmt::Display for Polynomial<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, m) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}", m.coeff)?;
            for a in &m.shape.alpha_factors {
                match a.kind {
                    FactorKind::Alpha => write!(f, "*{}[-{}]", a.id, a.lag)?,
                    FactorKind::OneMinusAlpha => write!(f, "*(1-{}[-{}])", a.id, a.lag)?,
                }
            }
            for (v, p) in &m.shape.exponents {
                write!(f, "*w{}({})", v.age, v.comp)?;
                if *p > 1 {
                    write!(f, "^{p}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct TermWire<S> {
    pub coeff: S,
    pub exponents: Vec<[usize; 3]>,
    pub alpha_factors: Vec<AlphaFactor>,
}

impl<S: Scalar> From<&Monomial<S>> for TermWire<S> {
    fn from(m: &Monomial<S>) -> Self {
        TermWire {
            coeff: m.coeff,
            exponents: m.shape.exponents.iter().map(|(v, p)| [v.age, v.comp, *p as usize]).collect(),
            alpha_factors: m.shape.alpha_factors.clone(),
        }
    }
}

impl<S: Scalar> TryFrom<TermWire<S>> for Monomial<S> {
    type Error = Error;

    fn try_from(t: TermWire<S>) -> Result<Self> {
        let mut exps = Vec::with_capacity(t.exponents.len());
        for [age, comp, power] in t.exponents {
            if power == 0 {
                return Err(Error::Format("zero exponent in term".into()));
            }
            exps.push((VarId::new(age, comp), power as u32));
        }
        Ok(Monomial::new(t.coeff, exps, t.alpha_factors))
    }
}

impl<S: Scalar> Serialize for Polynomial<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        let wire: Vec<TermWire<S>> = self.terms.iter().map(TermWire::from).collect();
        wire.serialize(serializer)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Polynomial<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire: Vec<TermWire<S>> = Vec::deserialize(deserializer)?;
        let terms = wire
            .into_iter()
            .map(Monomial::try_from)
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        Ok(Polynomial::from_terms(terms))
    }
}
