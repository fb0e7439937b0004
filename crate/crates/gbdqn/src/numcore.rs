//! Dense feed-forward value networks over flat `f64` parameter vectors.
//!
//! Hidden layers use ReLU, the output layer is linear. Gradients are computed
//! analytically by backpropagation; the weighted-MSE training step flows
//! gradient only through each sample's taken action, clips the global
//! gradient norm, and applies one Adam update. Everything is deterministic
//! given the caller's RNG and owns no shared state.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Architecture of a Q-network: input width, hidden widths, action count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self, NumError> {
        if input_dim == 0 || output_dim == 0 {
            return Err(NumError::InvalidSpec("dims must be >= 1".into()));
        }
        if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
            return Err(NumError::InvalidSpec(
                "hidden layers must be non-empty with widths >= 1".into(),
            ));
        }
        Ok(Self { input_dim, hidden, output_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// (fan_in, fan_out) for every weight layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Flat, layer-ordered parameter vector: per layer, the row-major weight
/// matrix (out x in) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    theta: Vec<f64>,
}

impl NetParams {
    pub fn zeros(spec: NetSpec) -> Self {
        let n = spec.param_count();
        Self { spec, theta: vec![0.0; n] }
    }

    pub fn from_theta(spec: NetSpec, theta: Vec<f64>) -> Result<Self, NumError> {
        if theta.len() != spec.param_count() {
            return Err(NumError::DimMismatch(format!(
                "theta has {} entries, spec requires {}",
                theta.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, theta })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    /// FNV-1a hash of the raw parameter bits; used to certify immutability.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.theta {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// He fan-in initialization: weights ~ N(0, sqrt(2/fan_in)), biases zero.
pub fn init_params<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> NetParams {
    let mut theta = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layer_dims() {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        for _ in 0..fan_in * fan_out {
            theta.push(dist.sample(rng));
        }
        theta.extend(std::iter::repeat(0.0).take(fan_out));
    }
    NetParams { spec: spec.clone(), theta }
}

/// Batch forward pass. Returns one q-vector per input state.
pub fn forward(params: &NetParams, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NumError> {
    let acts = forward_activations(params, states)?;
    let out_dim = params.spec.output_dim;
    let last = acts.last().expect("at least one layer");
    Ok(last.chunks_exact(out_dim).map(|row| row.to_vec()).collect())
}

pub fn forward_single(params: &NetParams, state: &[f64]) -> Result<Vec<f64>, NumError> {
    let batch = [state.to_vec()];
    Ok(forward(params, &batch)?.pop().expect("one row"))
}

/// Forward pass keeping every layer's post-activation values, flattened
/// (batch x width) per layer. Index 0 is the input batch itself.
fn forward_activations(params: &NetParams, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NumError> {
    let spec = &params.spec;
    let batch = states.len();
    let mut input = Vec::with_capacity(batch * spec.input_dim);
    for s in states {
        if s.len() != spec.input_dim {
            return Err(NumError::DimMismatch(format!(
                "state has {} entries, spec expects {}",
                s.len(),
                spec.input_dim
            )));
        }
        input.extend_from_slice(s);
    }

    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    acts.push(input);

    let mut offset = 0;
    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = &params.theta[offset..offset + fan_in * fan_out];
        let b = &params.theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;

        let prev = &acts[layer];
        let hidden = layer + 1 < n_layers;
        let mut out = vec![0.0; batch * fan_out];
        for bi in 0..batch {
            let x = &prev[bi * fan_in..(bi + 1) * fan_in];
            let row_out = &mut out[bi * fan_out..(bi + 1) * fan_out];
            for (o, slot) in row_out.iter_mut().enumerate() {
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = 0.0;
                for (wi, xi) in wrow.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                acc += b[o];
                *slot = if hidden { acc.max(0.0) } else { acc };
            }
        }
        acts.push(out);
    }
    Ok(acts)
}

/// One weighted-MSE training step on the taken-action heads.
///
/// loss = 1/2 * sum_i w_i * (target_i - q(s_i)[a_i])^2, gradient clipped to
/// `clip_norm` in global 2-norm before the Adam update. Returns the
/// pre-update loss.
pub fn weighted_mse_grad_step(
    params: &mut NetParams,
    opt: &mut AdamState,
    states: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
    clip_norm: f64,
) -> Result<f64, NumError> {
    let batch = states.len();
    if actions.len() != batch || targets.len() != batch || weights.len() != batch {
        return Err(NumError::DimMismatch(format!(
            "batch lengths disagree: states {batch}, actions {}, targets {}, weights {}",
            actions.len(),
            targets.len(),
            weights.len()
        )));
    }
    let (loss, mut grad) = loss_and_grad(params, states, actions, targets, weights)?;
    if !loss.is_finite() {
        return Err(NumError::NonFinite("loss"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(NumError::NonFinite("gradient"));
    }
    clip_global_norm(&mut grad, clip_norm);
    opt.step(&mut params.theta, &grad);
    if !params.all_finite() {
        return Err(NumError::NonFinite("parameters"));
    }
    Ok(loss)
}

/// Loss and analytic gradient of the weighted taken-action MSE.
/// Exposed so tests can compare against finite differences directly.
pub fn loss_and_grad(
    params: &NetParams,
    states: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Vec<f64>), NumError> {
    let spec = &params.spec;
    let batch = states.len();
    let out_dim = spec.output_dim;
    for &a in actions {
        if a >= out_dim {
            return Err(NumError::DimMismatch(format!(
                "action {a} out of range for {out_dim} outputs"
            )));
        }
    }

    let acts = forward_activations(params, states)?;
    let dims = spec.layer_dims();
    let n_layers = dims.len();

    // Output-layer delta: dL/dq = w * (q - t) on the taken action only.
    let q_out = acts.last().expect("output layer");
    let mut loss = 0.0;
    let mut delta = vec![0.0; batch * out_dim];
    for bi in 0..batch {
        let q = q_out[bi * out_dim + actions[bi]];
        let resid = targets[bi] - q;
        loss += 0.5 * weights[bi] * resid * resid;
        delta[bi * out_dim + actions[bi]] = weights[bi] * (q - targets[bi]);
    }

    let mut grad = vec![0.0; params.theta.len()];
    let mut layer_offsets = Vec::with_capacity(n_layers);
    {
        let mut off = 0;
        for &(fan_in, fan_out) in &dims {
            layer_offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
    }

    for layer in (0..n_layers).rev() {
        let (fan_in, fan_out) = dims[layer];
        let off = layer_offsets[layer];
        let prev = &acts[layer];
        let w = &params.theta[off..off + fan_in * fan_out];
        let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);

        let mut delta_prev = if layer > 0 { vec![0.0; batch * fan_in] } else { Vec::new() };
        for bi in 0..batch {
            let x = &prev[bi * fan_in..(bi + 1) * fan_in];
            let drow = &delta[bi * fan_out..(bi + 1) * fan_out];
            for (o, &d) in drow.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let gw_row = &mut gw[o * fan_in..(o + 1) * fan_in];
                let w_row = &w[o * fan_in..(o + 1) * fan_in];
                if layer > 0 {
                    let dp = &mut delta_prev[bi * fan_in..(bi + 1) * fan_in];
                    for i in 0..fan_in {
                        gw_row[i] += d * x[i];
                        dp[i] += d * w_row[i];
                    }
                } else {
                    for i in 0..fan_in {
                        gw_row[i] += d * x[i];
                    }
                }
            }
        }
        if layer > 0 {
            // ReLU gate: post-activation zero means the unit was inactive.
            for (dp, &a) in delta_prev.iter_mut().zip(prev.iter()) {
                if a <= 0.0 {
                    *dp = 0.0;
                }
            }
            delta = delta_prev;
        }
    }
    Ok((loss, grad))
}

/// Scales `grad` in place so its global 2-norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// target <- (1 - tau) * target + tau * online, elementwise.
pub fn polyak_update(target: &mut NetParams, online: &NetParams, tau: f64) -> Result<(), NumError> {
    if target.spec != online.spec {
        return Err(NumError::DimMismatch("polyak shapes differ".into()));
    }
    for (t, &o) in target.theta.iter_mut().zip(online.theta.iter()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), grad.len());
        debug_assert_eq!(theta.len(), self.m.len());
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
