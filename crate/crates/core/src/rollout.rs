//! Disturbance generation, closed-loop simulation, and cost accounting.
//!
//! Time convention: `x_0 = 0` and `x_{t+1} = f(x_t) + u_t + d[t]`, so the
//! disturbance `d[t]` first shows up in `x_{t+1}`. A rollout of length `N`
//! records `t = 1..=N`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::FblController;
use crate::error::{Error, Result};
use crate::net::{alphas_for_time, AlphaNet};
use crate::plant::TrueDynamics;
use crate::scalar::{norm_inf, Scalar};
use crate::sls::FeedbackLaw;

/// States beyond `DIVERGENCE_FACTOR · W` count as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// Entries uniform in `[-W, W]`.
    Uniform,
    /// `W` in every entry at index 0, zero afterwards.
    Impulse,
    /// Entries `±W` with equal probability.
    SignRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub w: f64,
    pub n_t: usize,
    pub n: usize,
    pub seed: u64,
}

pub fn gen_disturbances<S: Scalar>(spec: &DisturbanceSpec) -> Result<Vec<Vec<S>>> {
    if !(spec.w >= 0.0 && spec.w.is_finite()) {
        return Err(Error::InvalidArgument("disturbance bound must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = spec.w;
    Ok((0..spec.n_t)
        .map(|t| {
            (0..spec.n)
                .map(|_| {
                    S::lit(match spec.kind {
                        DisturbanceKind::Uniform => {
                            if w == 0.0 {
                                0.0
                            } else {
                                rng.gen_range(-w..=w)
                            }
                        }
                        DisturbanceKind::Impulse => {
                            if t == 0 {
                                w
                            } else {
                                0.0
                            }
                        }
                        DisturbanceKind::SignRandom => {
                            if rng.gen::<bool>() {
                                w
                            } else {
                                -w
                            }
                        }
                    })
                })
                .collect()
        })
        .collect())
}

/// Where an SLS controller gets its alpha values from.
#[derive(Clone, Copy, Debug)]
pub enum AlphaSource<'a, S: Scalar> {
    /// Every alpha fixed to one value.
    Constant(S),
    /// Per-id constants.
    Fixed(&'a [S]),
    /// Network evaluated on the reconstructed-disturbance window (eval mode).
    Net(&'a AlphaNet<S>),
}

#[derive(Clone, Copy)]
pub enum Policy<'a, S: Scalar> {
    Sls { law: &'a dyn FeedbackLaw<S>, alphas: AlphaSource<'a, S> },
    Fbl(&'a FblController<S>),
}

impl<'a, S: Scalar> Policy<'a, S> {
    /// SLS with every alpha equal to `value`.
    pub fn const_alpha(law: &'a dyn FeedbackLaw<S>, value: S) -> Result<Self> {
        if !(value > S::zero() && value <= S::one()) {
            return Err(Error::AlphaRange { id: 0, value: value.to_f64_lossy() });
        }
        Ok(Policy::Sls { law, alphas: AlphaSource::Constant(value) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RolloutResult<S: Scalar> {
    /// `x_1..=x_N`.
    pub states: Vec<Vec<S>>,
    /// `u_1..=u_N`.
    pub inputs: Vec<Vec<S>>,
    /// `d[0..N]`; entry `i` produced `states[i]`.
    pub disturbances: Vec<Vec<S>>,
    /// The controller's estimate of `disturbances[i]` (empty for FBL).
    pub reconstructed_disturbances: Vec<Vec<S>>,
    pub step_costs: Vec<S>,
    pub total_cost: S,
    /// `total_cost / N`.
    pub time_averaged_cost: S,
    pub diverged: bool,
}

/// Quadratic costs `xᵀQx + uᵀRu`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights<S: Scalar> {
    pub q: DMatrix<S>,
    pub r: DMatrix<S>,
}

impl<S: Scalar> CostWeights<S> {
    pub fn identity(n: usize) -> Self {
        Self { q: DMatrix::identity(n, n), r: DMatrix::identity(n, n) }
    }

    pub fn stage(&self, x: &[S], u: &[S]) -> S {
        quad_form(&self.q, x) + quad_form(&self.r, u)
    }
}

pub(crate) fn quad_form<S: Scalar>(m: &DMatrix<S>, v: &[S]) -> S {
    let mut acc = S::zero();
    for i in 0..v.len() {
        for j in 0..v.len() {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

/// Runs the closed loop from `x_0 = 0`. Stops early if `‖x‖∞` exceeds
/// `DIVERGENCE_FACTOR · w_bound` or turns non-finite.
pub fn simulate<S: Scalar>(
    plant: &dyn TrueDynamics<S>,
    policy: &Policy<S>,
    disturbances: &[Vec<S>],
    cost: &CostWeights<S>,
    w_bound: S,
) -> Result<RolloutResult<S>> {
    let n = plant.n();
    if let Some(bad) = disturbances.iter().find(|d| d.len() != n) {
        return Err(Error::Dimension { expected: n, got: bad.len() });
    }
    if let Policy::Sls { law, alphas } = policy {
        if law.n() != n {
            return Err(Error::Dimension { expected: n, got: law.n() });
        }
        match alphas {
            AlphaSource::Fixed(v) if v.len() != law.num_alphas() => {
                return Err(Error::Dimension { expected: law.num_alphas(), got: v.len() });
            }
            AlphaSource::Net(net) if net.input_dim() != law.n() * law.horizon() => {
                return Err(Error::Dimension { expected: law.n() * law.horizon(), got: net.input_dim() });
            }
            _ => {}
        }
    }
    let guard = S::lit(DIVERGENCE_FACTOR) * w_bound.max(S::lit(1e-12));
    let n_t = disturbances.len();
    let mut out = RolloutResult {
        states: Vec::with_capacity(n_t),
        inputs: Vec::with_capacity(n_t),
        disturbances: Vec::with_capacity(n_t),
        reconstructed_disturbances: Vec::new(),
        step_costs: Vec::with_capacity(n_t),
        total_cost: S::zero(),
        time_averaged_cost: S::zero(),
        diverged: false,
    };

    let mut x = vec![S::zero(); n];
    let mut sls_state = match policy {
        Policy::Sls { law, .. } => Some((law.initial_memory(), vec![S::zero(); n * law.horizon()])),
        Policy::Fbl(_) => None,
    };
    // u_0
    let mut u = control(plant, policy, &x, sls_state.as_mut())?.0;

    for d in disturbances {
        let fx = plant.eval(&x);
        x = (0..n).map(|i| fx[i] + u[i] + d[i]).collect();
        let nx = norm_inf(&x);
        if !nx.is_finite() || nx > guard {
            out.diverged = true;
            break;
        }
        let (u_next, w_hat) = control(plant, policy, &x, sls_state.as_mut())?;
        u = u_next;
        let c = cost.stage(&x, &u);
        out.total_cost += c;
        out.step_costs.push(c);
        out.states.push(x.clone());
        out.inputs.push(u.clone());
        out.disturbances.push(d.clone());
        if let Some(w) = w_hat {
            out.reconstructed_disturbances.push(w);
        }
    }
    if n_t > 0 {
        out.time_averaged_cost = out.total_cost / S::from_usize_lossy(n_t);
    }
    Ok(out)
}

type SlsState<S> = (Vec<S>, Vec<S>);

/// Input for the current state; updates the SLS memory and ŵ window.
fn control<S: Scalar>(
    plant: &dyn TrueDynamics<S>,
    policy: &Policy<S>,
    x: &[S],
    state: Option<&mut SlsState<S>>,
) -> Result<(Vec<S>, Option<Vec<S>>)> {
    match policy {
        Policy::Fbl(c) => Ok((c.control(plant, x), None)),
        Policy::Sls { law, alphas } => {
            let (mem, window) = state.expect("SLS policy carries state");
            let alpha = match alphas {
                AlphaSource::Constant(v) => vec![*v; law.num_alphas()],
                AlphaSource::Fixed(v) => v.to_vec(),
                AlphaSource::Net(net) => alphas_for_time(net, window, *law)?,
            };
            let step = law.step(x, mem, &alpha);
            *mem = step.mem;
            let n = law.n();
            window.rotate_right(n);
            window[..n].copy_from_slice(&step.w_hat);
            Ok((step.u, Some(step.w_hat)))
        }
    }
}

/// `(total, prefix averages)` of `x_tᵀQx_t + u_tᵀRu_t` over a rollout.
pub fn quadratic_cost<S: Scalar>(result: &RolloutResult<S>, cost: &CostWeights<S>) -> (S, Vec<S>) {
    let mut total = S::zero();
    let mut avg = Vec::with_capacity(result.states.len());
    for (i, (x, u)) in result.states.iter().zip(&result.inputs).enumerate() {
        total += cost.stage(x, u);
        avg.push(total / S::from_usize_lossy(i + 1));
    }
    (total, avg)
}

/// Trajectory CSV: `t, x…, u…, w…, step_cost`.
pub fn write_trajectory_csv<S: Scalar, W: std::io::Write>(result: &RolloutResult<S>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let n = result.states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    for p in ["x", "u", "w"] {
        header.extend((0..n).map(|i| format!("{p}{i}")));
    }
    header.push("step_cost".into());
    wtr.write_record(&header)?;
    for i in 0..result.states.len() {
        let mut row = vec![(i + 1).to_string()];
        for v in result.states[i].iter().chain(&result.inputs[i]).chain(&result.disturbances[i]) {
            row.push(v.to_string());
        }
        row.push(result.step_costs[i].to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
