//! Nonlinear system level synthesis for fully actuated polynomial
//! approximations of smooth discrete-time dynamics.
//!
//! Everything numeric is generic over [`Scalar`] (`f64` or `f32`); the aliases
//! below fix the common choices.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod net;
pub mod plant;
pub mod poly;
pub mod rollout;
pub mod scalar;
pub mod sls;
pub mod taylor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Polynomial64 = poly::Polynomial<f64>;
pub type Polynomial32 = poly::Polynomial<f32>;
pub type PolyDynamics64 = poly::PolyDynamics<f64>;
pub type PolyDynamics32 = poly::PolyDynamics<f32>;
pub type SlsController64 = sls::SlsController<f64>;
pub type SlsController32 = sls::SlsController<f32>;
pub type GroupedController64 = sls::GroupedController<f64>;
pub type Controller64 = sls::Controller<f64>;
pub type AlphaNet64 = net::AlphaNet<f64>;
pub type AlphaNet32 = net::AlphaNet<f32>;
pub type RolloutResult64 = rollout::RolloutResult<f64>;
