//! Nonlinear SLS controller synthesis, evaluation, and certificates.

mod alpha;
mod bounds;
pub(crate) mod compiled;
mod controller;
mod grouped;
mod law;

pub use alpha::AlphaTrace;
pub use bounds::{check_iss, compute_l_c, cost_bound_u1, cost_bound_with_error, CostBound, StabilityCert};
pub use grouped::{grouped_l_c, DynTerm, GroupedController};
pub use law::{Controller, FeedbackLaw, StepGrad, StepOut};
pub use controller::{pad_cold_start, synthesize, synthesize_with, GTerm, SlsController, SynthOptions, DEFAULT_TERM_CAP};

#[cfg(test)]
mod tests;
