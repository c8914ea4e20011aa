//! Architecture width calculators and a small multi-head surrogate policy.
//!
//! The full model is a strided CNN feeding a ConvLSTM and then an MLP with one
//! un-shared head per action. Here the CNN/ConvLSTM stack is represented only
//! by its width rules; the trainable part is a dense `tanh` trunk over a
//! feature vector plus seven heads: sigmoid for buttons, identity for the two
//! mouse axes.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionValues};
use crate::loss::{batch_combined_loss, warmup_lr, LossConfig, LossError};

pub mod demo;

pub const CNN_DEPTH: u32 = 5;
pub const CONVLSTM_DEPTH: u32 = 4;
pub const MLP_DEPTH: u32 = 5;

const CHECKPOINT_MAGIC: [u8; 4] = *b"MPCK";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("{layer} depth {depth} outside 1..={max}")]
    Depth {
        layer: &'static str,
        depth: u32,
        max: u32,
    },
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite feature at index {0}")]
    NonFinite(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("dropout rate {0} outside [0, 1)")]
    Dropout(f64),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

fn check_depth(layer: &'static str, depth: u32, max: u32) -> Result<(), PolicyError> {
    if (1..=max).contains(&depth) {
        Ok(())
    } else {
        Err(PolicyError::Depth { layer, depth, max })
    }
}

/// Filters in CNN layer `depth`: `74 * 2^(depth-1)`.
pub fn cnn_width(depth: u32) -> Result<u32, PolicyError> {
    check_depth("cnn", depth, CNN_DEPTH)?;
    Ok(74 << (depth - 1))
}

/// Hidden channels in ConvLSTM layer `depth`: `9 + 2 * depth`.
pub fn convlstm_width(depth: u32) -> Result<u32, PolicyError> {
    check_depth("convlstm", depth, CONVLSTM_DEPTH)?;
    Ok(9 + 2 * depth)
}

/// Units in MLP layer `depth`: `1984 / 2^(depth-1)`.
pub fn mlp_width(depth: u32) -> Result<u32, PolicyError> {
    check_depth("mlp", depth, MLP_DEPTH)?;
    Ok(1984 >> (depth - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub cnn_depth: u32,
    pub convlstm_depth: u32,
    pub mlp_depth: u32,
    pub input_channels: u32,
    pub kernel_size: u32,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            cnn_depth: CNN_DEPTH,
            convlstm_depth: CONVLSTM_DEPTH,
            mlp_depth: MLP_DEPTH,
            input_channels: 5,
            kernel_size: 3,
        }
    }
}

impl ArchitectureSpec {
    pub fn cnn_widths(&self) -> Result<Vec<u32>, PolicyError> {
        (1..=self.cnn_depth).map(cnn_width).collect()
    }

    pub fn convlstm_widths(&self) -> Result<Vec<u32>, PolicyError> {
        (1..=self.convlstm_depth).map(convlstm_width).collect()
    }

    pub fn mlp_widths(&self) -> Result<Vec<u32>, PolicyError> {
        (1..=self.mlp_depth).map(mlp_width).collect()
    }

    /// Weights + biases of the convolution stack.
    pub fn cnn_parameter_count(&self) -> Result<u64, PolicyError> {
        let k2 = u64::from(self.kernel_size).pow(2);
        let mut c_in = u64::from(self.input_channels);
        let mut total = 0;
        for w in self.cnn_widths()? {
            let w = u64::from(w);
            total += k2 * c_in * w + w;
            c_in = w;
        }
        Ok(total)
    }

    /// Four gates per ConvLSTM layer, each convolving `[input, hidden]`.
    pub fn convlstm_parameter_count(&self) -> Result<u64, PolicyError> {
        let k2 = u64::from(self.kernel_size).pow(2);
        let mut c_in = u64::from(*self.cnn_widths()?.last().unwrap_or(&self.input_channels));
        let mut total = 0;
        for h in self.convlstm_widths()? {
            let h = u64::from(h);
            total += 4 * (k2 * (c_in + h) * h + h);
            c_in = h;
        }
        Ok(total)
    }

    /// Dense layers from a flattened input of `input_dim`, plus seven
    /// scalar heads on the last layer.
    pub fn mlp_parameter_count(&self, input_dim: u64) -> Result<u64, PolicyError> {
        let mut fan_in = input_dim;
        let mut total = 0;
        for w in self.mlp_widths()? {
            let w = u64::from(w);
            total += fan_in * w + w;
            fan_in = w;
        }
        Ok(total + Action::ALL.len() as u64 * (fan_in + 1))
    }
}

/// One supervised example: a feature vector and its (averaged) target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub target: ActionValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePolicy {
    input_dim: usize,
    hidden: Vec<usize>,
    params: Vec<f64>,
}

struct Trace {
    /// activations[0] is the input; the last entry feeds the heads.
    activations: Vec<Vec<f64>>,
    /// Per-head dropout multipliers over the trunk output.
    masks: Option<Vec<Vec<f64>>>,
    outputs: ActionValues,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl SurrogatePolicy {
    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut policy = Self::zeros(input_dim, hidden);
        let mut params = Vec::with_capacity(policy.params.len());
        for (fan_in, fan_out) in policy.layer_shapes() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..fan_out * (fan_in + 1)).map(|_| dist.sample(rng)));
        }
        policy.params = params;
        policy
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        let mut policy = Self {
            input_dim,
            hidden: hidden.to_vec(),
            params: Vec::new(),
        };
        let n = policy.layer_shapes().map(|(i, o)| o * (i + 1)).sum();
        policy.params = vec![0.0; n];
        policy
    }

    /// `(fan_in, fan_out)` of every trunk layer, then the seven heads.
    fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let dims: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .collect();
        let trunk_out = *dims.last().unwrap();
        dims.windows(2)
            .map(|w| (w[0], w[1]))
            .collect::<Vec<_>>()
            .into_iter()
            .chain(std::iter::repeat_n((trunk_out, 1), Action::ALL.len()))
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn trunk_output_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&self.input_dim)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn head_offset(&self) -> usize {
        self.params.len() - Action::ALL.len() * (self.trunk_output_dim() + 1)
    }

    fn check_features(&self, features: &[f64]) -> Result<(), PolicyError> {
        if features.len() != self.input_dim {
            return Err(PolicyError::Dimension {
                expected: self.input_dim,
                got: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(PolicyError::NonFinite(i));
        }
        Ok(())
    }

    fn trace(&self, features: &[f64], masks: Option<Vec<Vec<f64>>>) -> Trace {
        let mut activations = vec![features.to_vec()];
        let mut at = 0;
        for &width in &self.hidden {
            let input = activations.last().unwrap();
            let fan_in = input.len();
            let (weights, rest) = self.params[at..].split_at(width * fan_in);
            let bias = &rest[..width];
            let out = (0..width)
                .map(|j| {
                    let row = &weights[j * fan_in..(j + 1) * fan_in];
                    let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias[j];
                    z.tanh()
                })
                .collect();
            at += width * (fan_in + 1);
            activations.push(out);
        }

        let trunk = activations.last().unwrap();
        let d = trunk.len();
        let mut outputs = ActionValues::default();
        for (h, action) in Action::ALL.into_iter().enumerate() {
            let head = &self.params[at + h * (d + 1)..at + (h + 1) * (d + 1)];
            let mut z = head[d];
            for k in 0..d {
                let m = masks.as_ref().map_or(1.0, |m| m[h][k]);
                z += head[k] * trunk[k] * m;
            }
            outputs.set(action, if action.is_binary() { sigmoid(z) } else { z });
        }
        Trace {
            activations,
            masks,
            outputs,
        }
    }

    pub fn forward(&self, features: &[f64]) -> Result<ActionValues, PolicyError> {
        self.check_features(features)?;
        Ok(self.trace(features, None).outputs)
    }

    /// Mean combined loss over `batch` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_gradient(
        &self,
        batch: &[Example],
        cfg: &LossConfig,
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        self.loss_and_gradient_inner(batch, cfg, None)
    }

    fn loss_and_gradient_inner(
        &self,
        batch: &[Example],
        cfg: &LossConfig,
        mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        let d = self.trunk_output_dim();
        let traces = batch
            .iter()
            .map(|ex| {
                self.check_features(&ex.features)?;
                let masks = dropout.as_mut().map(|(rate, rng)| {
                    let keep = 1.0 / (1.0 - *rate);
                    (0..Action::ALL.len())
                        .map(|_| {
                            (0..d)
                                .map(|_| {
                                    if rng.random::<f64>() < *rate {
                                        0.0
                                    } else {
                                        keep
                                    }
                                })
                                .collect()
                        })
                        .collect()
                });
                Ok(self.trace(&ex.features, masks))
            })
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let predictions: Vec<ActionValues> = traces.iter().map(|t| t.outputs).collect();
        let targets: Vec<ActionValues> = batch.iter().map(|ex| ex.target).collect();
        let loss = batch_combined_loss(&predictions, &targets, cfg)?;

        let mut grad = vec![0.0; self.params.len()];
        for (trace, dl_dy) in traces.iter().zip(&loss.gradients) {
            self.backward(trace, dl_dy, &mut grad);
        }
        Ok((loss.total, grad))
    }

    fn backward(&self, trace: &Trace, dl_dy: &ActionValues, grad: &mut [f64]) {
        let head_at = self.head_offset();
        let trunk = trace.activations.last().unwrap();
        let d = trunk.len();
        let mut d_act = vec![0.0; d];
        for (h, action) in Action::ALL.into_iter().enumerate() {
            let y = trace.outputs.get(action);
            let dz = if action.is_binary() {
                dl_dy.get(action) * y * (1.0 - y)
            } else {
                dl_dy.get(action)
            };
            let base = head_at + h * (d + 1);
            for k in 0..d {
                let m = trace.masks.as_ref().map_or(1.0, |m| m[h][k]);
                grad[base + k] += dz * trunk[k] * m;
                d_act[k] += dz * self.params[base + k] * m;
            }
            grad[base + d] += dz;
        }

        // walk the trunk backwards; `at` tracks each layer's parameter offset
        let mut offsets = Vec::with_capacity(self.hidden.len());
        let mut at = 0;
        for (l, &width) in self.hidden.iter().enumerate() {
            offsets.push(at);
            at += width * (trace.activations[l].len() + 1);
        }
        for (l, &width) in self.hidden.iter().enumerate().rev() {
            let input = &trace.activations[l];
            let output = &trace.activations[l + 1];
            let fan_in = input.len();
            let base = offsets[l];
            let delta: Vec<f64> = (0..width)
                .map(|j| d_act[j] * (1.0 - output[j] * output[j]))
                .collect();
            let mut d_in = vec![0.0; fan_in];
            for j in 0..width {
                let row = base + j * fan_in;
                for i in 0..fan_in {
                    grad[row + i] += delta[j] * input[i];
                    d_in[i] += delta[j] * self.params[row + i];
                }
                grad[base + width * fan_in + j] += delta[j];
            }
            d_act = d_in;
        }
    }

    /// One gradient-descent step at the warm-up learning rate for `epoch`.
    /// Returns the loss before the step.
    pub fn train_step(
        &mut self,
        batch: &[Example],
        cfg: &LossConfig,
        epoch: u64,
    ) -> Result<f64, PolicyError> {
        let (loss, grad) = self.loss_and_gradient_inner(batch, cfg, None)?;
        self.apply(&grad, warmup_lr(epoch, cfg));
        Ok(loss)
    }

    /// [`train_step`](Self::train_step) with inverted dropout on every head
    /// input, masks drawn from `rng`.
    pub fn train_step_with_dropout<R: Rng>(
        &mut self,
        batch: &[Example],
        cfg: &LossConfig,
        epoch: u64,
        rate: f64,
        rng: &mut R,
    ) -> Result<f64, PolicyError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(PolicyError::Dropout(rate));
        }
        let (loss, grad) = self.loss_and_gradient_inner(batch, cfg, Some((rate, rng)))?;
        self.apply(&grad, warmup_lr(epoch, cfg));
        Ok(loss)
    }

    fn apply(&mut self, grad: &[f64], lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }

    /// Versioned little-endian checkpoint: dims header followed by the
    /// parameters as `f32`.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(18 + 4 * (self.hidden.len() + self.params.len()));
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.hidden.len() as u32).to_le_bytes());
        for &h in &self.hidden {
            buf.extend_from_slice(&(h as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for &p in &self.params {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, PolicyError> {
        let bad = |msg: &str| PolicyError::Checkpoint(msg.to_string());
        let mut words = bytes
            .get(6..)
            .ok_or_else(|| bad("truncated header"))?
            .chunks(4);
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes([bytes[4], bytes[5]]) != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut next = || -> Result<[u8; 4], PolicyError> {
            words
                .next()
                .and_then(|w| w.try_into().ok())
                .ok_or_else(|| bad("truncated"))
        };
        let input_dim = u32::from_le_bytes(next()?) as usize;
        let n_hidden = u32::from_le_bytes(next()?) as usize;
        if n_hidden > 64 {
            return Err(bad("too many hidden layers"));
        }
        let hidden = (0..n_hidden)
            .map(|_| Ok(u32::from_le_bytes(next()?) as usize))
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let count = u32::from_le_bytes(next()?) as usize;
        let mut policy = Self::zeros(input_dim, &hidden);
        if count != policy.params.len() {
            return Err(bad("parameter count does not match dims"));
        }
        for p in policy.params.iter_mut() {
            *p = f64::from(f32::from_le_bytes(next()?));
        }
        if next().is_ok() {
            return Err(bad("trailing bytes"));
        }
        Ok(policy)
    }
}
