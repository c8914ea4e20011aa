//! Loss kernels with closed-form gradients, and the learning-rate warm-up.
//!
//! Mouse axes use a signed squared error: the squared error is divided by a
//! mask that is 1 when prediction and label share a sign and 1/3 otherwise,
//! so a wrong-direction prediction costs three times as much. Buttons use
//! binary cross-entropy on (possibly fractional) averaged labels. Every
//! per-action loss is multiplied by its penalising weight before summing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKeyError, ActionValues};

pub const BCE_EPSILON: f64 = 1e-7;
pub const WRONG_SIGN_MASK: f64 = (0.0 + 0.5) / 1.5;
pub const RIGHT_SIGN_MASK: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("non-finite input ({prediction}, {label})")]
    NonFinite { prediction: f64, label: f64 },
    #[error("label {0} outside [0, 1]")]
    LabelRange(f64),
    #[error(transparent)]
    Key(#[from] ActionKeyError),
    #[error("predictions and targets differ in length ({0} vs {1})")]
    BatchShape(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid loss config: {0}")]
    Config(String),
}

/// A scalar loss and its derivative with respect to the prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub action_weights: ActionValues,
    pub wrong_sign_mask: f64,
    pub right_sign_mask: f64,
    /// When false the mouse loss is plain squared error (mask fixed at 1).
    pub signed_mouse: bool,
    pub warmup_epochs: u64,
    pub base_lr: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            action_weights: ActionValues {
                mouse_x: 0.45,
                mouse_y: 0.45,
                attack: 1.25,
                move_forward: 0.54,
                move_backward: 1.94,
                move_left: 1.73,
                move_right: 1.73,
            },
            wrong_sign_mask: WRONG_SIGN_MASK,
            right_sign_mask: RIGHT_SIGN_MASK,
            signed_mouse: true,
            warmup_epochs: 500,
            base_lr: 0.0002,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |msg: String| Err(LossError::Config(msg));
        for (a, w) in self.action_weights.iter() {
            if !(w > 0.0 && w <= 2.0) {
                return bad(format!("weight for {a} is {w}, expected (0, 2]"));
            }
        }
        if !(self.wrong_sign_mask > 0.0 && self.wrong_sign_mask < self.right_sign_mask) {
            return bad(format!(
                "sign masks must satisfy 0 < wrong ({}) < right ({})",
                self.wrong_sign_mask, self.right_sign_mask
            ));
        }
        if !self.right_sign_mask.is_finite() {
            return bad("right_sign_mask must be finite".into());
        }
        if self.warmup_epochs == 0 {
            return bad("warmup_epochs must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, LossError> {
        let cfg: Self = toml::from_str(s).map_err(|e| LossError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finite(prediction: f64, label: f64) -> Result<(), LossError> {
    if prediction.is_finite() && label.is_finite() {
        Ok(())
    } else {
        Err(LossError::NonFinite { prediction, label })
    }
}

fn same_sign(prediction: f64, label: f64) -> bool {
    prediction * label > 0.0
}

/// 1.0 when prediction and label have the same strict sign, 1/3 otherwise
/// (including when either is exactly zero).
pub fn sign_mask(prediction: f64, label: f64) -> Result<f64, LossError> {
    finite(prediction, label)?;
    let agree = if same_sign(prediction, label) {
        1.0
    } else {
        0.0
    };
    Ok((agree + 0.5) / 1.5)
}

/// Signed squared error. The mask is piecewise constant, so the gradient is
/// that of the active branch.
pub fn mouse_loss(prediction: f64, label: f64) -> Result<LossValue, LossError> {
    finite(prediction, label)?;
    let agree = if same_sign(prediction, label) {
        1.0
    } else {
        0.0
    };
    // (d^2) / ((b + 0.5) / 1.5) rearranged so the penalty is exactly 1 or 3
    let penalty = 1.5 / (agree + 0.5);
    let d = prediction - label;
    Ok(LossValue {
        loss: d * d * penalty,
        grad: 2.0 * d * penalty,
    })
}

/// Signed squared error with explicit mask values.
pub fn masked_mouse_loss(
    prediction: f64,
    label: f64,
    wrong_mask: f64,
    right_mask: f64,
) -> Result<LossValue, LossError> {
    finite(prediction, label)?;
    let mask = if same_sign(prediction, label) {
        right_mask
    } else {
        wrong_mask
    };
    let d = prediction - label;
    Ok(LossValue {
        loss: d * d / mask,
        grad: 2.0 * d / mask,
    })
}

/// Binary cross-entropy with the prediction clamped to `[eps, 1 - eps]`.
/// Labels may be fractional.
pub fn bce_loss(prediction: f64, label: f64) -> Result<LossValue, LossError> {
    finite(prediction, label)?;
    if !(0.0..=1.0).contains(&label) {
        return Err(LossError::LabelRange(label));
    }
    let p = prediction.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let grad = if p == prediction {
        -label / p + (1.0 - label) / (1.0 - p)
    } else {
        0.0
    };
    Ok(LossValue { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    /// Weighted per-action losses; they sum to `total`.
    pub components: ActionValues,
    /// d total / d prediction, per action.
    pub gradients: ActionValues,
}

pub fn action_loss(
    action: Action,
    prediction: f64,
    target: f64,
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    if action.is_binary() {
        bce_loss(prediction, target)
    } else if cfg.signed_mouse {
        masked_mouse_loss(prediction, target, cfg.wrong_sign_mask, cfg.right_sign_mask)
    } else {
        masked_mouse_loss(prediction, target, 1.0, 1.0)
    }
}

pub fn combined_loss(
    predictions: &ActionValues,
    targets: &ActionValues,
    cfg: &LossConfig,
) -> Result<CombinedLoss, LossError> {
    let mut components = ActionValues::default();
    let mut gradients = ActionValues::default();
    for action in Action::ALL {
        let w = cfg.action_weights.get(action);
        let v = action_loss(action, predictions.get(action), targets.get(action), cfg)?;
        components.set(action, w * v.loss);
        gradients.set(action, w * v.grad);
    }
    Ok(CombinedLoss {
        total: components.sum(),
        components,
        gradients,
    })
}

/// [`combined_loss`] over name-keyed maps, failing on any missing action.
pub fn combined_loss_map(
    predictions: &HashMap<String, f64>,
    targets: &HashMap<String, f64>,
    cfg: &LossConfig,
) -> Result<CombinedLoss, LossError> {
    combined_loss(
        &ActionValues::from_map(predictions)?,
        &ActionValues::from_map(targets)?,
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub components: ActionValues,
    /// Per-element gradients of the batch mean.
    pub gradients: Vec<ActionValues>,
}

/// Mean of [`combined_loss`] over a batch.
pub fn batch_combined_loss(
    predictions: &[ActionValues],
    targets: &[ActionValues],
    cfg: &LossConfig,
) -> Result<BatchLoss, LossError> {
    if predictions.len() != targets.len() {
        return Err(LossError::BatchShape(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let scale = 1.0 / predictions.len() as f64;
    let mut components = ActionValues::default();
    let mut gradients = Vec::with_capacity(predictions.len());
    for (p, t) in predictions.iter().zip(targets) {
        let c = combined_loss(p, t, cfg)?;
        for a in Action::ALL {
            *components.get_mut(a) += c.components.get(a) * scale;
        }
        gradients.push(ActionValues::from_fn(|a| c.gradients.get(a) * scale));
    }
    Ok(BatchLoss {
        total: components.sum(),
        components,
        gradients,
    })
}

/// Linear warm-up: `base_lr * min(epoch / warmup_epochs, 1)`.
pub fn warmup_lr(epoch: u64, cfg: &LossConfig) -> f64 {
    if epoch >= cfg.warmup_epochs {
        cfg.base_lr
    } else {
        cfg.base_lr * (epoch as f64 / cfg.warmup_epochs as f64)
    }
}
