//! End-to-end training of the alpha network through closed-loop rollouts.
//!
//! The loss of one rollout is `Σ_{t=1}^{N} x_tᵀQx_t + u_tᵀRu_t` with the true
//! plant generating the states. Gradients are accumulated in reverse through
//! the cost, the plant Jacobians, the controller step, and the network.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{masked_windows, select_alphas, AlphaNet, ForwardCache, NetGrad};
use crate::plant::TrueDynamics;
use crate::rollout::{gen_disturbances, CostWeights, DisturbanceKind, DisturbanceSpec, DIVERGENCE_FACTOR};
use crate::scalar::{norm_inf, Scalar};
use crate::sls::FeedbackLaw;

#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrad<S: Scalar> {
    pub loss: S,
    pub grad: NetGrad<S>,
    pub diverged: bool,
}

struct StepRecord<S: Scalar> {
    x: Vec<S>,
    mem: Vec<S>,
    alpha: Vec<S>,
    u: Vec<S>,
    cache: ForwardCache<S>,
}

/// Loss of one rollout in eval mode.
pub fn rollout_loss<S: Scalar>(
    net: &AlphaNet<S>,
    law: &dyn FeedbackLaw<S>,
    plant: &dyn TrueDynamics<S>,
    disturbances: &[Vec<S>],
    cost: &CostWeights<S>,
    w_bound: S,
) -> Result<S> {
    Ok(rollout_loss_grad(net, law, plant, disturbances, cost, w_bound, None)?.loss)
}

/// Loss and `∂loss/∂θ` of one rollout. Dropout is active iff `dropout_rng`
/// is given.
///
/// A rollout whose state leaves `‖x‖∞ ≤ 10³·W` is cut there: the loss keeps
/// the steps so far plus a penalty of `(10³·W)²` per remaining step, and
/// the gradient covers the kept steps only.
pub fn rollout_loss_grad<S: Scalar>(
    net: &AlphaNet<S>,
    law: &dyn FeedbackLaw<S>,
    plant: &dyn TrueDynamics<S>,
    disturbances: &[Vec<S>],
    cost: &CostWeights<S>,
    w_bound: S,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<LossAndGrad<S>> {
    let (n, t_h) = (law.n(), law.horizon());
    if plant.n() != n {
        return Err(Error::Dimension { expected: n, got: plant.n() });
    }
    if net.input_dim() != n * t_h {
        return Err(Error::Dimension { expected: n * t_h, got: net.input_dim() });
    }
    let levels = law.alpha_levels();
    if net.output_dim() < law.num_alphas() {
        return Err(Error::Dimension { expected: law.num_alphas(), got: net.output_dim() });
    }
    let n_t = disturbances.len();
    let guard = S::lit(DIVERGENCE_FACTOR) * w_bound.max(S::lit(1e-12));

    // forward
    let mut recs: Vec<StepRecord<S>> = Vec::with_capacity(n_t + 1);
    let mut hat: Vec<Vec<S>> = Vec::with_capacity(n_t + 1);
    let mut x = vec![S::zero(); n];
    let mut mem = law.initial_memory();
    let mut loss = S::zero();
    let mut diverged = false;
    for t in 0..=n_t {
        let mut window = vec![S::zero(); n * t_h];
        for a in 0..t_h.min(t) {
            window[a * n..(a + 1) * n].copy_from_slice(&hat[t - 1 - a]);
        }
        let (out, cache) = net.forward_batch(&masked_windows(&window, n, t_h), dropout_rng.as_deref_mut())?;
        let alpha = select_alphas(&out, &levels);
        let step = law.step(&x, &mem, &alpha);
        if t > 0 {
            loss += cost.stage(&x, &step.u);
        }
        hat.push(step.w_hat);
        recs.push(StepRecord { x: x.clone(), mem, alpha, u: step.u.clone(), cache });
        mem = step.mem;
        if t == n_t {
            break;
        }
        let fx = plant.eval(&x);
        let next: Vec<S> = (0..n).map(|i| fx[i] + step.u[i] + disturbances[t][i]).collect();
        let nx = norm_inf(&next);
        if !nx.is_finite() || nx > guard {
            diverged = true;
            loss += guard * guard * S::from_usize_lossy(n_t - t);
            break;
        }
        x = next;
    }

    // reverse
    let steps = recs.len();
    let mut grad = net.zero_grad();
    let mut adj_x_next: Option<Vec<S>> = None;
    let mut adj_mem_next = vec![S::zero(); law.memory_len()];
    let mut adj_hat = vec![vec![S::zero(); n]; steps];
    for t in (0..steps).rev() {
        let rec = &recs[t];
        let mut adj_x = vec![S::zero(); n];
        let mut adj_u = vec![S::zero(); n];
        if t > 0 {
            let qx = &cost.q * DMatrix::from_column_slice(n, 1, &rec.x);
            let ru = &cost.r * DMatrix::from_column_slice(n, 1, &rec.u);
            let qt = &cost.q.transpose() * DMatrix::from_column_slice(n, 1, &rec.x);
            let rt = &cost.r.transpose() * DMatrix::from_column_slice(n, 1, &rec.u);
            for i in 0..n {
                // d(xᵀQx)/dx = (Q + Qᵀ)x
                adj_x[i] += qx[i] + qt[i];
                adj_u[i] += ru[i] + rt[i];
            }
        }
        if let Some(ax) = &adj_x_next {
            // x_{t+1} = f(x_t) + u_t + d_t
            let jt = plant.jacobian(&rec.x).transpose() * DMatrix::from_column_slice(n, 1, ax);
            for i in 0..n {
                adj_u[i] += ax[i];
                adj_x[i] += jt[i];
            }
        }
        let g = law.step_vjp(&rec.x, &rec.mem, &rec.alpha, &adj_hat[t], &adj_u, &adj_mem_next);
        for i in 0..n {
            adj_x[i] += g.x[i];
        }
        adj_mem_next = g.mem;

        // α_t = net(ŵ_{t-1..t-T})
        let mut adj_out = DMatrix::zeros(net.output_dim(), t_h);
        for (j, &m) in levels.iter().enumerate() {
            adj_out[(j, m)] = g.alpha[j];
        }
        let adj_in = net.backward(&rec.cache, &adj_out, &mut grad);
        for a in 0..t_h.min(t) {
            // column m only sees window slots a ≤ m
            for m in a..t_h {
                for i in 0..n {
                    adj_hat[t - 1 - a][i] += adj_in[(a * n + i, m)];
                }
            }
        }
        adj_x_next = Some(adj_x);
    }
    Ok(LossAndGrad { loss, grad, diverged })
}

/// Training hyperparameters. `q`/`r` default to identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_t: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Disturbance sequences per epoch.
    pub batch: usize,
    pub w: f64,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub disturbance: DisturbanceKind,
    /// Rescale the batch gradient to at most this norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_t: 100,
            epochs: 200,
            learning_rate: 1e-3,
            batch: 16,
            w: 1.0,
            q: None,
            r: None,
            seed: 0,
            disturbance: DisturbanceKind::Uniform,
            clip_norm: Some(10.0),
        }
    }
}

/// `Q`/`R` as matrices, identities when absent.
pub fn cost_weights<S: Scalar>(q: &Option<Vec<Vec<f64>>>, r: &Option<Vec<Vec<f64>>>, n: usize) -> Result<CostWeights<S>> {
    let mat = |m: &Option<Vec<Vec<f64>>>, name: &str| -> Result<DMatrix<S>> {
        match m {
            None => Ok(DMatrix::identity(n, n)),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidArgument(format!("{name} must be {n}×{n}")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| S::lit(rows[i][j])))
            }
        }
    };
    let w = CostWeights { q: mat(q, "Q")?, r: mat(r, "R")? };
    let sym = |m: &DMatrix<S>| (m + m.transpose()) * S::lit(0.5);
    if sym(&w.r).cholesky().is_none() {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    if sym(&w.q).symmetric_eigenvalues().iter().any(|e| *e < S::lit(-1e-12)) {
        return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
    }
    Ok(w)
}

impl TrainConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.n_t <= horizon {
            return Err(Error::InvalidArgument(format!("N_T = {} must exceed the FIR horizon {horizon}", self.n_t)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be finite and nonnegative".into()));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidArgument("W must be positive".into()));
        }
        Ok(())
    }

    /// Seed of sequence `i` in epoch `epoch`.
    pub fn sequence_seed(&self, epoch: usize, i: usize) -> u64 {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(((epoch as u64) << 32) | i as u64);
        r.gen()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch, before that epoch's update.
    pub loss_trace: Vec<f64>,
    /// Epochs whose update was skipped because the gradient was not finite.
    pub skipped_epochs: Vec<usize>,
    pub diverged_rollouts: usize,
}

/// SGD on fresh disturbance batches. Sequences of a batch are processed in
/// parallel and reduced in index order, so results do not depend on the
/// thread count.
pub fn train<S: Scalar>(
    net: &AlphaNet<S>,
    law: &dyn FeedbackLaw<S>,
    plant: &dyn TrueDynamics<S>,
    cfg: &TrainConfig,
) -> Result<(AlphaNet<S>, TrainReport)> {
    cfg.validate(law.horizon())?;
    let n = law.n();
    let cost = cost_weights::<S>(&cfg.q, &cfg.r, n)?;
    let w_bound = S::lit(cfg.w);
    let lr = S::lit(cfg.learning_rate);
    let mut net = net.clone();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let results: Vec<Result<LossAndGrad<S>>> = (0..cfg.batch)
            .into_par_iter()
            .map(|i| {
                let seed = cfg.sequence_seed(epoch, i);
                let spec = DisturbanceSpec { kind: cfg.disturbance, w: cfg.w, n_t: cfg.n_t, n, seed };
                let ws = gen_disturbances::<S>(&spec)?;
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd509_u64);
                rollout_loss_grad(&net, law, plant, &ws, &cost, w_bound, Some(&mut drop_rng))
            })
            .collect();
        let mut total = net.zero_grad();
        let mut loss = S::zero();
        for r in results {
            let r = r?;
            loss += r.loss;
            report.diverged_rollouts += r.diverged as usize;
            total.add_assign(&r.grad);
        }
        let inv = S::one() / S::from_usize_lossy(cfg.batch);
        loss *= inv;
        total.scale(inv);
        report.loss_trace.push(loss.to_f64_lossy());
        if !total.is_finite() || !loss.is_finite() {
            report.skipped_epochs.push(epoch);
            continue;
        }
        if let Some(c) = cfg.clip_norm {
            let norm = total.norm();
            if norm > S::lit(c) {
                total.scale(S::lit(c) / norm);
            }
        }
        net.apply_step(&total, lr);
    }
    Ok((net, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub analytic_grad: Vec<f64>,
    pub fd_grad: Vec<f64>,
    /// Indices into the flat parameter vector.
    pub coords: Vec<usize>,
    pub max_rel_err: f64,
}

/// Compares `loss_grad(net).1` against central differences of
/// `loss_grad(·).0` on up to 100 random parameter coordinates.
///
/// Relative error is `|a - f| / max(|a|, |f|, 1e-3·max|g|)`, the floor keeping
/// coordinates with vanishing gradient (pure round-off) from dominating. A
/// ReLU kink inside the stencil also shows up as error; keep `eps` small.
pub fn grad_check<S: Scalar>(
    net: &AlphaNet<S>,
    loss_grad: impl Fn(&AlphaNet<S>) -> Result<(S, NetGrad<S>)>,
    eps: f64,
    seed: u64,
) -> Result<GradReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps = {eps:e} outside [1e-7, 1e-3]")));
    }
    let (_, g) = loss_grad(net)?;
    let analytic_all = g.flat();
    let theta = net.params_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = rand::seq::index::sample(&mut rng, theta.len(), theta.len().min(100)).into_vec();
    coords.sort_unstable();
    let mut probe = net.clone();
    let mut fd = Vec::with_capacity(coords.len());
    for &c in &coords {
        let mut th = theta.clone();
        th[c] = theta[c] + S::lit(eps);
        probe.set_params_flat(&th)?;
        let lp = loss_grad(&probe)?.0;
        th[c] = theta[c] - S::lit(eps);
        probe.set_params_flat(&th)?;
        let lm = loss_grad(&probe)?.0;
        fd.push(((lp - lm) / S::lit(2.0 * eps)).to_f64_lossy());
    }
    let analytic: Vec<f64> = coords.iter().map(|&c| analytic_all[c].to_f64_lossy()).collect();
    let scale = analytic.iter().chain(&fd).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let max_rel_err = analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max);
    if analytic.iter().chain(&fd).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(GradReport { analytic_grad: analytic, fd_grad: fd, coords, max_rel_err })
}
