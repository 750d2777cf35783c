//! Multilayer perceptron producing alpha values in `(alpha_min, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sls::FeedbackLaw;

pub const DEFAULT_ALPHA_MIN: f64 = 0.5;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_HIDDEN: [usize; 4] = [256; 4];

/// ReLU MLP with dropout after every hidden layer and a logistic output
/// mapped affinely onto `(alpha_min, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaNet<S: Scalar> {
    layer_dims: Vec<usize>,
    /// `out × in` per layer.
    weights: Vec<DMatrix<S>>,
    biases: Vec<DVector<S>>,
    dropout_rate: S,
    alpha_min: S,
}

/// Parameter-shaped gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrad<S: Scalar> {
    pub weights: Vec<DMatrix<S>>,
    pub biases: Vec<DVector<S>>,
}

/// Activations saved by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<S: Scalar> {
    /// Layer inputs, `inputs[0]` is the network input.
    inputs: Vec<DMatrix<S>>,
    /// Per hidden layer: derivative of the activation+dropout (0, or 1/(1-p)).
    gates: Vec<DMatrix<S>>,
    /// Logistic output before the affine map.
    sigma: DMatrix<S>,
}

impl<S: Scalar> AlphaNet<S> {
    /// Fan-in uniform initialization `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::init_with(layer_dims, seed, S::lit(DEFAULT_DROPOUT), S::lit(DEFAULT_ALPHA_MIN))
    }

    pub fn init_with(layer_dims: &[usize], seed: u64, dropout_rate: S, alpha_min: S) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {layer_dims:?}")));
        }
        if !(dropout_rate >= S::zero() && dropout_rate < S::one()) {
            return Err(Error::InvalidArgument("dropout rate must lie in [0, 1)".into()));
        }
        if !(alpha_min >= S::zero() && alpha_min < S::one()) {
            return Err(Error::InvalidArgument("alpha_min must lie in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let a = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| S::lit(rng.gen_range(-a..a))));
            biases.push(DVector::from_fn(fan_out, |_, _| S::lit(rng.gen_range(-a..a))));
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), weights, biases, dropout_rate, alpha_min })
    }

    /// Network sized for `law`: input `n·T`, output one alpha per gated term.
    pub fn for_law<L: FeedbackLaw<S> + ?Sized>(law: &L, hidden: &[usize], seed: u64, dropout_rate: S, alpha_min: S) -> Result<Self> {
        let mut dims = vec![law.n() * law.horizon()];
        dims.extend_from_slice(hidden);
        dims.push(law.num_alphas().max(1));
        Self::init_with(&dims, seed, dropout_rate, alpha_min)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn alpha_min(&self) -> S {
        self.alpha_min
    }

    pub fn dropout_rate(&self) -> S {
        self.dropout_rate
    }

    pub fn weights(&self) -> &[DMatrix<S>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<S>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [DMatrix<S>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [DVector<S>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Forward pass on a single input vector.
    pub fn forward(&self, input: &[S], rng: Option<&mut ChaCha8Rng>) -> Result<Vec<S>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let (out, _) = self.forward_batch(&x, rng)?;
        Ok(out.column(0).iter().copied().collect())
    }

    /// Forward pass on the columns of `input`. Dropout is active iff `rng`
    /// is given (train mode).
    pub fn forward_batch(&self, input: &DMatrix<S>, mut rng: Option<&mut ChaCha8Rng>) -> Result<(DMatrix<S>, ForwardCache<S>)> {
        if input.nrows() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: input.nrows() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let layers = self.weights.len();
        let keep = S::one() - self.dropout_rate;
        let scale = S::one() / keep;
        let mut inputs = Vec::with_capacity(layers);
        let mut gates = Vec::with_capacity(layers - 1);
        let mut a = input.clone();
        for l in 0..layers {
            let mut z = &self.weights[l] * &a;
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            inputs.push(a);
            if l + 1 == layers {
                let sigma = z.map(logistic);
                let out = sigma.map(|s| self.alpha_min + (S::one() - self.alpha_min) * s);
                return Ok((out, ForwardCache { inputs, gates, sigma }));
            }
            let mut gate = z.map(|v| if v > S::zero() { S::one() } else { S::zero() });
            if let Some(r) = rng.as_deref_mut() {
                if self.dropout_rate > S::zero() {
                    let p = self.dropout_rate.to_f64_lossy();
                    for g in gate.iter_mut() {
                        *g = if r.gen::<f64>() < p { S::zero() } else { *g * scale };
                    }
                }
            }
            a = z.component_mul(&gate);
            gates.push(gate);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Backward pass: given `∂L/∂output`, accumulates parameter gradients into
    /// `grad` and returns `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache<S>, adj_out: &DMatrix<S>, grad: &mut NetGrad<S>) -> DMatrix<S> {
        let layers = self.weights.len();
        let span = S::one() - self.alpha_min;
        let mut dz = adj_out.zip_map(&cache.sigma, |g, s| g * span * s * (S::one() - s));
        for l in (0..layers).rev() {
            grad.weights[l] += &dz * cache.inputs[l].transpose();
            for col in dz.column_iter() {
                grad.biases[l] += col;
            }
            let da = self.weights[l].transpose() * &dz;
            if l == 0 {
                return da;
            }
            dz = da.component_mul(&cache.gates[l - 1]);
        }
        unreachable!("loop returns at the input layer")
    }

    pub fn zero_grad(&self) -> NetGrad<S> {
        NetGrad {
            weights: self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: self.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    /// `θ ← θ - lr·g`.
    pub fn apply_step(&mut self, grad: &NetGrad<S>, lr: S) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= g * lr;
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            *b -= g * lr;
        }
    }

    /// Parameters in layer order, each weight matrix row-major then its bias.
    pub fn params_flat(&self) -> Vec<S> {
        flatten(&self.weights, &self.biases)
    }

    pub fn set_params_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = it.next().expect("length checked");
                }
            }
            for v in b.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Output bias set so every alpha equals `target` (all other weights of
    /// the output layer zeroed). `target` must lie in `(alpha_min, 1)`.
    pub fn set_constant_output(&mut self, target: S) -> Result<()> {
        if !(target > self.alpha_min && target < S::one()) {
            return Err(Error::InvalidArgument("constant alpha outside (alpha_min, 1)".into()));
        }
        let s = (target - self.alpha_min) / (S::one() - self.alpha_min);
        let logit = (s / (S::one() - s)).ln();
        let last = self.weights.len() - 1;
        self.weights[last].fill(S::zero());
        self.biases[last].fill(logit);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetDoc {
            layer_dims: self.layer_dims.clone(),
            alpha_min: self.alpha_min,
            dropout_rate: self.dropout_rate,
            weights: self
                .weights
                .iter()
                .zip(&self.biases)
                .map(|(w, b)| LayerDoc {
                    w: (0..w.nrows()).map(|r| w.row(r).iter().copied().collect()).collect(),
                    b: b.iter().copied().collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetDoc<S> = serde_json::from_str(s)?;
        let mut net = Self::init_with(&doc.layer_dims, 0, doc.dropout_rate, doc.alpha_min)?;
        if doc.weights.len() != net.weights.len() {
            return Err(Error::Format("layer count disagrees with layer_dims".into()));
        }
        for (l, layer) in doc.weights.into_iter().enumerate() {
            let (rows, cols) = net.weights[l].shape();
            if layer.w.len() != rows || layer.w.iter().any(|r| r.len() != cols) || layer.b.len() != rows {
                return Err(Error::Format(format!("layer {l} has the wrong shape")));
            }
            net.weights[l] = DMatrix::from_fn(rows, cols, |r, c| layer.w[r][c]);
            net.biases[l] = DVector::from_vec(layer.b);
        }
        Ok(net)
    }
}

impl<S: Scalar> NetGrad<S> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: S) {
        for a in self.weights.iter_mut() {
            *a *= s;
        }
        for a in self.biases.iter_mut() {
            *a *= s;
        }
    }

    pub fn norm(&self) -> S {
        let sq = self.weights.iter().map(|w| w.norm_squared()).fold(S::zero(), |a, b| a + b)
            + self.biases.iter().map(|b| b.norm_squared()).fold(S::zero(), |a, b| a + b);
        sq.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite())) && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Same layout as [`AlphaNet::params_flat`].
    pub fn flat(&self) -> Vec<S> {
        flatten(&self.weights, &self.biases)
    }
}

fn flatten<S: Scalar>(weights: &[DMatrix<S>], biases: &[DVector<S>]) -> Vec<S> {
    let mut out = Vec::new();
    for (w, b) in weights.iter().zip(biases) {
        for r in 0..w.nrows() {
            out.extend(w.row(r).iter().copied());
        }
        out.extend(b.iter().copied());
    }
    out
}

#[inline]
fn logistic<S: Scalar>(z: S) -> S {
    // stable for large |z|
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct NetDoc<S: Scalar> {
    layer_dims: Vec<usize>,
    alpha_min: S,
    dropout_rate: S,
    weights: Vec<LayerDoc<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct LayerDoc<S: Scalar> {
    w: Vec<Vec<S>>,
    b: Vec<S>,
}

/// Level-masked network inputs for one time step.
///
/// `window` holds `ŵ_{t-1}, …, ŵ_{t-T}` (newest first, zero-padded). Column
/// `m` keeps the `m+1` newest entries and zeroes the rest, so an alpha of
/// level `m` only sees disturbances up to age `m` relative to `t-1`.
pub fn masked_windows<S: Scalar>(window: &[S], n: usize, horizon: usize) -> DMatrix<S> {
    DMatrix::from_fn(n * horizon, horizon, |r, m| if r < (m + 1) * n { window[r] } else { S::zero() })
}

/// Alpha values for one step: id `j` of level `m` is read from column `m`.
pub fn select_alphas<S: Scalar>(out: &DMatrix<S>, levels: &[usize]) -> Vec<S> {
    levels.iter().enumerate().map(|(j, &m)| out[(j, m)]).collect()
}

/// `alphas_for_time`: alpha values at time `t` from the window ending at `t-1`.
pub fn alphas_for_time<S: Scalar, L: FeedbackLaw<S> + ?Sized>(net: &AlphaNet<S>, window: &[S], law: &L) -> Result<Vec<S>> {
    let (n, t) = (law.n(), law.horizon());
    if window.len() != n * t {
        return Err(Error::Dimension { expected: n * t, got: window.len() });
    }
    let (out, _) = net.forward_batch(&masked_windows(window, n, t), None)?;
    Ok(select_alphas(&out, &law.alpha_levels()))
}
