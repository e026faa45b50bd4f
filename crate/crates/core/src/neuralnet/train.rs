use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpArchitecture, MlpParameters};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 200,
            optimizer: Optimizer::Adam,
            patience: 20,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("learning rate and gradient clip must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epochs and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurves {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

impl LearningCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.validation_loss).enumerate() {
            out.push_str(&format!("{},{t:.11e},{v:.11e}\n", i + 1));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: MlpParameters,
    pub curves: LearningCurves,
    /// One-based epoch of `params`; 0 if no epoch finished.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Set when training stopped on a non-finite loss.
    pub divergence: Option<(usize, f64)>,
}

impl TrainOutcome {
    pub fn check(&self) -> Result<()> {
        match self.divergence {
            Some((epoch, loss)) => Err(Error::Divergence { epoch, loss }),
            None => Ok(()),
        }
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn update(&mut self, params: &mut MlpParameters, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for j in 0..params.weights.len() {
            ndarray::Zip::from(&mut params.weights[j])
                .and(&grads.weights[j])
                .and(&mut self.m.weights[j])
                .and(&mut self.v.weights[j])
                .for_each(|p, g, m, v| apply(p, *g, m, v));
            ndarray::Zip::from(&mut params.biases[j])
                .and(&grads.biases[j])
                .and(&mut self.m.biases[j])
                .and(&mut self.v.biases[j])
                .for_each(|p, g, m, v| apply(p, *g, m, v));
        }
    }
}

fn sgd_update(params: &mut MlpParameters, grads: &Gradients, lr: f64) {
    for (w, g) in params.weights.iter_mut().zip(&grads.weights) {
        w.scaled_add(-lr, g);
    }
    for (b, g) in params.biases.iter_mut().zip(&grads.biases) {
        b.scaled_add(-lr, g);
    }
}

/// Minibatch training on the mean squared error. Validation data is only
/// used to pick the returned parameters and to stop early.
pub fn train(
    train_set: &Dataset,
    validation: &Dataset,
    architecture: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = MlpParameters::random(architecture.clone(), &mut stream_rng(config.seed, Substream::Train, 0));
    let (x, y) = params.batch_arrays(&train_set.points)?;
    let (val_x, val_y) = params.batch_arrays(&validation.points)?;
    let val_loss = |p: &MlpParameters| -> f64 {
        match p.forward_batch(val_x.view()) {
            Ok(out) => (&out - &val_y).iter().map(|d| d * d).sum::<f64>() / val_y.nrows() as f64,
            Err(_) => f64::NAN,
        }
    };

    let mut adam = Adam {
        m: Gradients::zeros_like(&params),
        v: Gradients::zeros_like(&params),
        step: 0,
    };
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut outcome = TrainOutcome {
        params: params.clone(),
        curves: LearningCurves::default(),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        divergence: None,
    };
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut stream_rng(config.seed, Substream::Train, epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by = y.select(Axis(0), batch);
            let (loss, mut grads) = params.mean_loss_gradient(bx.view(), by.view());
            total += loss * batch.len() as f64;
            let norm = grads.norm();
            if !norm.is_finite() {
                break;
            }
            if norm > config.grad_clip {
                grads.scale(config.grad_clip / norm);
            }
            match config.optimizer {
                Optimizer::Adam => adam.update(&mut params, &grads, config.learning_rate),
                Optimizer::Sgd => sgd_update(&mut params, &grads, config.learning_rate),
            }
        }
        let train_loss = total / x.nrows() as f64;
        let v = val_loss(&params);
        outcome.curves.train_loss.push(train_loss);
        outcome.curves.validation_loss.push(v);
        log::debug!("epoch {epoch}: train {train_loss:.6e} validation {v:.6e}");
        if !v.is_finite() || !train_loss.is_finite() {
            log::error!("training diverged at epoch {epoch}");
            outcome.divergence = Some((epoch, if v.is_finite() { train_loss } else { v }));
            return Ok(outcome);
        }
        if v < outcome.best_validation_loss {
            outcome.best_validation_loss = v;
            outcome.best_epoch = epoch;
            outcome.params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", outcome.best_epoch);
                break;
            }
        }
    }
    Ok(outcome)
}
