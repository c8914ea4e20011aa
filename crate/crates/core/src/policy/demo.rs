//! Desk-scale training run on a synthetic task.
//!
//! Features are standard normal. Each button is pressed when a fixed linear
//! projection of the features is positive, so the button heads face a
//! linearly separable problem. The turn axis has a sign given by another
//! linear projection and a magnitude that is usually tiny but occasionally
//! large, the regime where plain squared error tolerates wrong-direction
//! predictions near zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{Example, PolicyError, SurrogatePolicy};
use crate::action::{Action, ActionValues};
use crate::loss::LossConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub steps: u64,
    pub seed: u64,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub train_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            seed: 7,
            input_dim: 8,
            hidden: vec![32],
            train_size: 512,
            test_size: 2048,
            batch_size: 64,
            loss: LossConfig {
                base_lr: 0.3,
                warmup_epochs: 25,
                ..LossConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    /// Pre-step minibatch loss at every step.
    pub step_losses: Vec<f64>,
    /// Full training-set loss before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Fraction of held-out samples whose predicted turn has the label's sign.
    pub sign_agreement: f64,
    pub signed_mouse: bool,
}

/// Hidden linear rules shared by the train and test splits.
#[derive(Debug, Clone)]
pub struct Teacher {
    directions: Vec<Vec<f64>>,
}

const TURN_SIGN: usize = 5;
const TURN_SIZE: usize = 6;
const LOOK: usize = 7;

impl Teacher {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        let directions = (0..8)
            .map(|_| {
                let v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Self { directions }
    }

    fn project(&self, k: usize, x: &[f64]) -> f64 {
        self.directions[k].iter().zip(x).map(|(d, v)| d * v).sum()
    }

    pub fn label(&self, x: &[f64]) -> ActionValues {
        let mut t = ActionValues::default();
        for (k, action) in Action::BUTTONS.into_iter().enumerate() {
            t.set(action, if self.project(k, x) > 0.0 { 1.0 } else { 0.0 });
        }
        let magnitude = if self.project(TURN_SIZE, x) > 0.7 {
            1.0
        } else {
            0.05
        };
        t.mouse_x = self.project(TURN_SIGN, x).signum() * magnitude;
        t.mouse_y = 0.5 * self.project(LOOK, x);
        t
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Example> {
        let dim = self.directions[0].len();
        (0..n)
            .map(|_| {
                let features: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let target = self.label(&features);
                Example { features, target }
            })
            .collect()
    }
}

pub fn sign_agreement(policy: &SurrogatePolicy, data: &[Example]) -> Result<f64, PolicyError> {
    let mut agree = 0usize;
    for ex in data {
        let pred = policy.forward(&ex.features)?;
        if pred.mouse_x * ex.target.mouse_x > 0.0 {
            agree += 1;
        }
    }
    Ok(agree as f64 / data.len().max(1) as f64)
}

/// Trains a fresh policy; all randomness derives from `cfg.seed`, so the
/// signed and plain runs see identical data and initial weights.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let teacher = Teacher::new(cfg.input_dim, &mut rng);
    let train = teacher.sample(cfg.train_size, &mut rng);
    let test = teacher.sample(cfg.test_size, &mut rng);
    let mut policy = SurrogatePolicy::new(cfg.input_dim, &cfg.hidden, &mut rng);

    let initial_loss = policy.loss_and_gradient(&train, &cfg.loss)?.0;
    let batch_size = cfg.batch_size.clamp(1, train.len().max(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut step_losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        if cursor + batch_size > order.len() {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            cursor = 0;
        }
        let batch: Vec<Example> = order[cursor..cursor + batch_size]
            .iter()
            .map(|&i| train[i].clone())
            .collect();
        cursor += batch_size;
        // epoch counts from 1 so the first step already moves
        step_losses.push(policy.train_step(&batch, &cfg.loss, step + 1)?);
    }
    let final_loss = policy.loss_and_gradient(&train, &cfg.loss)?.0;
    Ok(DemoReport {
        step_losses,
        initial_loss,
        final_loss,
        sign_agreement: sign_agreement(&policy, &test)?,
        signed_mouse: cfg.loss.signed_mouse,
    })
}
