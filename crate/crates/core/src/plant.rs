//! Plants the closed loop is simulated on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PolyDynamics;
use crate::scalar::Scalar;
use crate::taylor::SmoothDynamics;

/// Autonomous part `f` of `x⁺ = f(x) + u + w`, in coordinates where `f(0) = 0`.
pub trait TrueDynamics<S: Scalar>: Send + Sync {
    fn n(&self) -> usize;
    fn eval(&self, x: &[S]) -> Vec<S>;
    fn jacobian(&self, x: &[S]) -> DMatrix<S>;
}

impl<S: Scalar> TrueDynamics<S> for PolyDynamics<S> {
    fn n(&self) -> usize {
        PolyDynamics::n(self)
    }

    fn eval(&self, x: &[S]) -> Vec<S> {
        PolyDynamics::eval(self, x).expect("state dimension matches the dynamics")
    }

    fn jacobian(&self, x: &[S]) -> DMatrix<S> {
        PolyDynamics::jacobian(self, x).expect("state dimension matches the dynamics")
    }
}

/// Point mass `z̈ = -g + f_a(z, ż)/m + u + w`, forward Euler with step `dt`,
/// actuated in both the position and velocity channel, shifted about the
/// hover state so that the origin is an equilibrium.
///
/// `f_a(z, ż) = a1·tanh(ż) + a2·z·ż + a3·z²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassConfig {
    pub g: f64,
    pub mass: f64,
    pub dt: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self { g: 9.81, mass: 1.0, dt: 0.1, a1: -0.8, a2: 0.3, a3: -0.2 }
    }
}

impl PointMassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidArgument("mass must be positive".into()));
        }
        Ok(())
    }

    /// Hover feedforward `u_star = [0, dt·g]`: cancels gravity at the origin
    /// (`f_a(0, 0) = 0`). The shifted dynamics leave it out.
    pub fn u_star(&self) -> [f64; 2] {
        [0.0, self.dt * self.g]
    }

    fn f_a(&self, z: f64, zd: f64) -> (f64, f64, f64) {
        let th = zd.tanh();
        let v = self.a1 * th + self.a2 * z * zd + self.a3 * z * z;
        let dz = self.a2 * zd + 2.0 * self.a3 * z;
        let dzd = self.a1 * (1.0 - th * th) + self.a2 * z;
        (v, dz, dzd)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub cfg: PointMassConfig,
}

impl PointMass {
    pub fn new(cfg: PointMassConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    /// As a [`SmoothDynamics`] for Taylor fitting.
    pub fn smooth(&self) -> Result<SmoothDynamics<f64>> {
        let me = self.clone();
        SmoothDynamics::new(vec![0.0, 0.0], move |x: &[f64]| me.eval_f64(x))
    }

    fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        let c = &self.cfg;
        let (fa, _, _) = c.f_a(x[0], x[1]);
        vec![x[0] + c.dt * x[1], x[1] + c.dt * fa / c.mass]
    }
}

impl<S: Scalar> TrueDynamics<S> for PointMass {
    fn n(&self) -> usize {
        2
    }

    fn eval(&self, x: &[S]) -> Vec<S> {
        let xf = [x[0].to_f64_lossy(), x[1].to_f64_lossy()];
        self.eval_f64(&xf).into_iter().map(S::lit).collect()
    }

    fn jacobian(&self, x: &[S]) -> DMatrix<S> {
        let c = &self.cfg;
        let (_, dz, dzd) = c.f_a(x[0].to_f64_lossy(), x[1].to_f64_lossy());
        DMatrix::from_row_slice(2, 2, &[1.0, c.dt, c.dt * dz / c.mass, 1.0 + c.dt * dzd / c.mass]).map(S::lit)
    }
}

/// Built-in plants addressable by name.
#[derive(Clone, Debug)]
pub enum Plant {
    PointMass(PointMass),
    Poly(PolyDynamics<f64>),
}

impl Plant {
    /// `point_mass` (default parameters) or a path to a dynamics JSON file
    /// (treated as the exact plant).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point_mass" | "point-mass" => Ok(Plant::PointMass(PointMass::new(PointMassConfig::default())?)),
            path => {
                let text = std::fs::read_to_string(path)?;
                Ok(Plant::Poly(PolyDynamics::from_json(&text)?))
            }
        }
    }
}

impl TrueDynamics<f64> for Plant {
    fn n(&self) -> usize {
        match self {
            Plant::PointMass(p) => TrueDynamics::<f64>::n(p),
            Plant::Poly(p) => TrueDynamics::<f64>::n(p),
        }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Plant::PointMass(p) => TrueDynamics::eval(p, x),
            Plant::Poly(p) => TrueDynamics::eval(p, x),
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Plant::PointMass(p) => TrueDynamics::jacobian(p, x),
            Plant::Poly(p) => TrueDynamics::jacobian(p, x),
        }
    }
}
