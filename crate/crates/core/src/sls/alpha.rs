use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::poly::AlphaFactor;
use crate::scalar::Scalar;

/// Alpha values for the current step and the steps before it.
///
/// `get(lag, id)` is the value alpha `id` had `lag` steps ago; lag 0 is the
/// step being evaluated. Time-varying alphas make this history necessary:
/// residuals created earlier carry the alphas of the step that created them.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaTrace<S> {
    num_ids: usize,
    depth: usize,
    lags: VecDeque<Vec<S>>,
}

impl<S: Scalar> AlphaTrace<S> {
    /// Empty trace keeping at most `depth` steps.
    pub fn new(num_ids: usize, depth: usize) -> Self {
        Self { num_ids, depth: depth.max(1), lags: VecDeque::with_capacity(depth.max(1)) }
    }

    /// Every alpha fixed to `value` at every lag.
    pub fn constant(num_ids: usize, depth: usize, value: S) -> Result<Self> {
        let mut t = Self::new(num_ids, depth);
        for _ in 0..t.depth {
            t.push(vec![value; num_ids])?;
        }
        Ok(t)
    }

    /// Same per-id values at every lag.
    pub fn stationary(values: Vec<S>, depth: usize) -> Result<Self> {
        let mut t = Self::new(values.len(), depth);
        for _ in 0..t.depth {
            t.push(values.clone())?;
        }
        Ok(t)
    }

    /// Makes `current` the lag-0 entry, ageing everything else by one step.
    pub fn push(&mut self, current: Vec<S>) -> Result<()> {
        if current.len() != self.num_ids {
            return Err(Error::Dimension { expected: self.num_ids, got: current.len() });
        }
        for (id, a) in current.iter().enumerate() {
            if !(*a > S::zero() && *a <= S::one()) {
                return Err(Error::AlphaRange { id: id as u32, value: a.to_f64_lossy() });
            }
        }
        self.lags.push_front(current);
        self.lags.truncate(self.depth);
        Ok(())
    }

    pub fn num_ids(&self) -> usize {
        self.num_ids
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn lag(&self, lag: usize) -> Option<&[S]> {
        self.lags.get(lag).map(Vec::as_slice)
    }

    #[inline]
    pub fn get(&self, lag: usize, id: usize) -> Result<S> {
        self.lags
            .get(lag)
            .and_then(|v| v.get(id))
            .copied()
            .ok_or(Error::MissingAlpha(id as u32))
    }

    #[inline]
    pub fn factor(&self, f: &AlphaFactor) -> Result<S> {
        Ok(f.apply(self.get(f.lag, f.id.index())?))
    }
}
