//! One closed-loop step of a disturbance-feedback law, written as a recurrent
//! cell so that rollouts and their reverse-mode derivatives share one code path.

use super::compiled::{eval_terms, vjp_terms};
use super::bounds::compute_l_c;
use super::controller::SlsController;
use super::grouped::{grouped_l_c, GroupedController};
use crate::error::Result;
use crate::scalar::Scalar;

/// Output of [`FeedbackLaw::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOut<S> {
    /// Reconstructed newest disturbance.
    pub w_hat: Vec<S>,
    pub u: Vec<S>,
    pub mem: Vec<S>,
}

/// Adjoints of the inputs of one step.
#[derive(Clone, Debug)]
pub struct StepGrad<S> {
    pub x: Vec<S>,
    pub mem: Vec<S>,
    pub alpha: Vec<S>,
}

/// A controller that, given the observed state, its own memory, and the alpha
/// values for the current step, reconstructs the newest disturbance and
/// produces the input.
///
/// The zero memory is the cold start (no disturbance has arrived yet).
pub trait FeedbackLaw<S: Scalar>: Send + Sync {
    fn n(&self) -> usize;
    fn horizon(&self) -> usize;
    fn num_alphas(&self) -> usize;
    /// Level `m` of each alpha id.
    fn alpha_levels(&self) -> Vec<usize>;
    fn memory_len(&self) -> usize;

    fn step(&self, x: &[S], mem: &[S], alpha: &[S]) -> StepOut<S>;

    /// Pulls the adjoints of `(w_hat, u, mem_next)` back to `(x, mem, alpha)`.
    fn step_vjp(&self, x: &[S], mem: &[S], alpha: &[S], adj_w_hat: &[S], adj_u: &[S], adj_mem_next: &[S]) -> StepGrad<S>;

    fn initial_memory(&self) -> Vec<S> {
        vec![S::zero(); self.memory_len()]
    }
}

/// Memory layout: `[ŵ_{t-1}, …, ŵ_{t-T}, α_{t-1}, …, α_{t-T}]`.
impl<S: Scalar> FeedbackLaw<S> for SlsController<S> {
    fn n(&self) -> usize {
        SlsController::n(self)
    }

    fn horizon(&self) -> usize {
        SlsController::horizon(self)
    }

    fn num_alphas(&self) -> usize {
        SlsController::num_alphas(self)
    }

    fn alpha_levels(&self) -> Vec<usize> {
        SlsController::alpha_levels(self)
    }

    fn memory_len(&self) -> usize {
        let t = SlsController::horizon(self);
        t * (SlsController::n(self) + SlsController::num_alphas(self))
    }

    fn step(&self, x: &[S], mem: &[S], alpha: &[S]) -> StepOut<S> {
        let (n, t, g) = (FeedbackLaw::n(self), FeedbackLaw::horizon(self), FeedbackLaw::num_alphas(self));
        let (w_old, a_old) = mem.split_at(t * n);
        let lookup = |lag: usize, id: usize| if lag == 0 { alpha[id] } else { a_old[(lag - 1) * g + id] };

        let mut w = vec![S::zero(); (t + 1) * n];
        w[n..].copy_from_slice(w_old);
        let mut rest = vec![S::zero(); n];
        eval_terms(self.flat_rest(), &w, &lookup, &mut rest);
        let w_hat: Vec<S> = x.iter().zip(&rest).map(|(a, b)| *a - *b).collect();
        w[..n].copy_from_slice(&w_hat);

        let mut u = vec![S::zero(); n];
        eval_terms(self.flat_terms(), &w, &lookup, &mut u);
        for v in u.iter_mut() {
            *v = -*v;
        }

        let mut next = Vec::with_capacity(mem.len());
        next.extend_from_slice(&w[..t * n]);
        next.extend_from_slice(alpha);
        next.extend_from_slice(&a_old[..(t - 1) * g]);
        StepOut { w_hat, u, mem: next }
    }

    fn step_vjp(&self, x: &[S], mem: &[S], alpha: &[S], adj_w_hat: &[S], adj_u: &[S], adj_mem_next: &[S]) -> StepGrad<S> {
        let (n, t, g) = (FeedbackLaw::n(self), FeedbackLaw::horizon(self), FeedbackLaw::num_alphas(self));
        let (w_old, a_old) = mem.split_at(t * n);
        let lookup = |lag: usize, id: usize| if lag == 0 { alpha[id] } else { a_old[(lag - 1) * g + id] };

        // forward recompute
        let mut w = vec![S::zero(); (t + 1) * n];
        w[n..].copy_from_slice(w_old);
        let mut rest = vec![S::zero(); n];
        eval_terms(self.flat_rest(), &w, &lookup, &mut rest);
        for i in 0..n {
            w[i] = x[i] - rest[i];
        }

        let mut adj_w = vec![S::zero(); (t + 1) * n];
        let mut adj_alpha = vec![S::zero(); g];
        let mut adj_a_old = vec![S::zero(); t * g];

        // memory shift
        let (adj_mw, adj_ma) = adj_mem_next.split_at(t * n);
        for (a, b) in adj_w[..t * n].iter_mut().zip(adj_mw) {
            *a += *b;
        }
        for (a, b) in adj_alpha.iter_mut().zip(&adj_ma[..g]) {
            *a += *b;
        }
        for (a, b) in adj_a_old[..(t - 1) * g].iter_mut().zip(&adj_ma[g..]) {
            *a += *b;
        }

        let mut route = |lag: usize, id: usize, v: S| {
            if lag == 0 {
                adj_alpha[id] += v;
            } else {
                adj_a_old[(lag - 1) * g + id] += v;
            }
        };

        // u = -C(w, α)
        let neg_u: Vec<S> = adj_u.iter().map(|v| -*v).collect();
        vjp_terms(self.flat_terms(), &w, &lookup, &neg_u, &mut adj_w, &mut route);

        // ŵ = x - rest(w_old, α)
        let adj_wh: Vec<S> = (0..n).map(|i| adj_w[i] + adj_w_hat[i]).collect();
        let neg_wh: Vec<S> = adj_wh.iter().map(|v| -*v).collect();
        let mut adj_w_rest = vec![S::zero(); (t + 1) * n];
        vjp_terms(self.flat_rest(), &w, &lookup, &neg_wh, &mut adj_w_rest, &mut route);

        let mut adj_mem = Vec::with_capacity(mem.len());
        adj_mem.extend((0..t * n).map(|i| adj_w[n + i] + adj_w_rest[n + i]));
        adj_mem.extend(adj_a_old);
        StepGrad { x: adj_wh, mem: adj_mem, alpha: adj_alpha }
    }
}

/// Either controller realization, chosen at synthesis time.
#[derive(Clone, Debug, PartialEq)]
pub enum Controller<S: Scalar> {
    /// Expanded term table, one alpha per monomial.
    Symbolic(SlsController<S>),
    /// Numeric level split, one alpha per (level, dynamics term).
    Grouped(GroupedController<S>),
}

macro_rules! delegate {
    ($self:ident, $c:ident => $e:expr) => {
        match $self {
            Controller::Symbolic($c) => $e,
            Controller::Grouped($c) => $e,
        }
    };
}

impl<S: Scalar> Controller<S> {
    pub fn k(&self) -> usize {
        delegate!(self, c => c.k())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Controller::Symbolic(_) => "symbolic",
            Controller::Grouped(_) => "grouped",
        }
    }

    /// `(l, c)` for the stability certificate.
    pub fn l_c(&self, w: S) -> (S, usize) {
        match self {
            Controller::Symbolic(c) => compute_l_c(c, w),
            Controller::Grouped(c) => grouped_l_c(c, w),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        delegate!(self, c => c.to_json())
    }

    /// Reads either format; grouped documents carry `"kind": "grouped"`.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        if v.get("kind").and_then(|k| k.as_str()) == Some("grouped") {
            Ok(Controller::Grouped(GroupedController::from_json(s)?))
        } else {
            Ok(Controller::Symbolic(SlsController::from_json(s)?))
        }
    }
}

impl<S: Scalar> FeedbackLaw<S> for Controller<S> {
    fn n(&self) -> usize {
        delegate!(self, c => FeedbackLaw::n(c))
    }

    fn horizon(&self) -> usize {
        delegate!(self, c => FeedbackLaw::horizon(c))
    }

    fn num_alphas(&self) -> usize {
        delegate!(self, c => FeedbackLaw::num_alphas(c))
    }

    fn alpha_levels(&self) -> Vec<usize> {
        delegate!(self, c => FeedbackLaw::alpha_levels(c))
    }

    fn memory_len(&self) -> usize {
        delegate!(self, c => c.memory_len())
    }

    fn step(&self, x: &[S], mem: &[S], alpha: &[S]) -> StepOut<S> {
        delegate!(self, c => c.step(x, mem, alpha))
    }

    fn step_vjp(&self, x: &[S], mem: &[S], alpha: &[S], adj_w_hat: &[S], adj_u: &[S], adj_mem_next: &[S]) -> StepGrad<S> {
        delegate!(self, c => c.step_vjp(x, mem, alpha, adj_w_hat, adj_u, adj_mem_next))
    }
}
