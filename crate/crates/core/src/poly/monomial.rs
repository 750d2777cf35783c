use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use crate::scalar::Scalar;

/// A disturbance entry `w_{t-age}(comp)` relative to the current step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId {
    pub age: usize,
    pub comp: usize,
}

impl VarId {
    pub const fn new(age: usize, comp: usize) -> Self {
        Self { age, comp }
    }
}

/// Identifier of a gated controller term and of its alpha coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaId(pub u32);

impl AlphaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for AlphaId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Alpha,
    OneMinusAlpha,
}

/// Symbolic factor `alpha(id)` or `1 - alpha(id)` carried inside a coefficient.
///
/// `lag` is the number of steps between the step at which this alpha was
/// applied and the step the owning polynomial is expressed at. Alphas may
/// vary over time, so a residual created `lag` steps ago must be resolved
/// against the alpha values of that step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlphaFactor {
    pub id: AlphaId,
    pub kind: FactorKind,
    #[serde(default)]
    pub lag: usize,
}

impl AlphaFactor {
    pub fn one_minus(id: AlphaId, lag: usize) -> Self {
        Self { id, kind: FactorKind::OneMinusAlpha, lag }
    }

    pub fn alpha(id: AlphaId, lag: usize) -> Self {
        Self { id, kind: FactorKind::Alpha, lag }
    }

    /// Value of the factor given the alpha value it refers to.
    #[inline]
    pub fn apply<S: Scalar>(&self, alpha: S) -> S {
        match self.kind {
            FactorKind::Alpha => alpha,
            FactorKind::OneMinusAlpha => S::one() - alpha,
        }
    }
}

/// Structural part of a monomial: variable powers and alpha factors.
///
/// Ordered graded-lexicographically: total degree first, then the sorted
/// `(age, comp, power)` list, then the alpha factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub(crate) exponents: Vec<(VarId, u32)>,
    pub(crate) alpha_factors: Vec<AlphaFactor>,
}

impl Shape {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().map(|(_, p)| p).sum()
    }

    pub fn max_age(&self) -> Option<usize> {
        self.exponents.iter().map(|(v, _)| v.age).max()
    }

    /// Product of two shapes: powers add, factor multisets concatenate.
    pub(crate) fn mul(&self, other: &Shape) -> Shape {
        let mut exponents = Vec::with_capacity(self.exponents.len() + other.exponents.len());
        let (mut i, mut j) = (0, 0);
        while i < self.exponents.len() && j < other.exponents.len() {
            let (a, pa) = self.exponents[i];
            let (b, pb) = other.exponents[j];
            match a.cmp(&b) {
                Ordering::Less => {
                    exponents.push((a, pa));
                    i += 1;
                }
                Ordering::Greater => {
                    exponents.push((b, pb));
                    j += 1;
                }
                Ordering::Equal => {
                    exponents.push((a, pa + pb));
                    i += 1;
                    j += 1;
                }
            }
        }
        exponents.extend_from_slice(&self.exponents[i..]);
        exponents.extend_from_slice(&other.exponents[j..]);

        let mut alpha_factors = Vec::with_capacity(self.alpha_factors.len() + other.alpha_factors.len());
        alpha_factors.extend_from_slice(&self.alpha_factors);
        alpha_factors.extend_from_slice(&other.alpha_factors);
        alpha_factors.sort_unstable();
        Shape { exponents, alpha_factors }
    }

    pub(crate) fn normalize(&mut self) {
        self.exponents.sort_unstable_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, u32)> = Vec::with_capacity(self.exponents.len());
        for &(v, p) in &self.exponents {
            match merged.last_mut() {
                Some((last, lp)) if *last == v => *lp += p,
                _ => merged.push((v, p)),
            }
        }
        merged.retain(|(_, p)| *p > 0);
        self.exponents = merged;
        self.alpha_factors.sort_unstable();
    }
}

impl Ord for Shape {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.exponents.cmp(&other.exponents))
            .then_with(|| self.alpha_factors.cmp(&other.alpha_factors))
    }
}

impl PartialOrd for Shape {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `coeff * prod(w^power) * prod(alpha factors)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial<S> {
    pub coeff: S,
    pub(crate) shape: Shape,
}

impl<S: Scalar> Monomial<S> {
    pub fn new(coeff: S, exponents: Vec<(VarId, u32)>, alpha_factors: Vec<AlphaFactor>) -> Self {
        let mut shape = Shape { exponents, alpha_factors };
        shape.normalize();
        Self { coeff, shape }
    }

    pub fn exponents(&self) -> &[(VarId, u32)] {
        &self.shape.exponents
    }

    pub fn alpha_factors(&self) -> &[AlphaFactor] {
        &self.shape.alpha_factors
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn degree(&self) -> u32 {
        self.shape.degree()
    }

    pub fn max_age(&self) -> Option<usize> {
        self.shape.max_age()
    }

    /// Numeric value of the disturbance part only (coefficient and alpha factors excluded).
    #[inline]
    pub fn eval_vars(&self, value: impl Fn(VarId) -> S) -> S {
        self.shape
            .exponents
            .iter()
            .fold(S::one(), |acc, &(v, p)| acc * value(v).powi(p as i32))
    }
}
