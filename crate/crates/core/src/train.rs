//! Conditional flow-matching training.
//!
//! Each record contributes one regression pair per epoch: a prior draw
//! `a0 ~ N(0, I)` and `t ~ U(0, 1)` give `a_t = (1 - t) a0 + t a1` with
//! target `u = a1 - a0`. The record's condition is swapped for the null
//! condition with probability `p_drop` so the same network also learns the
//! unconditional field used by guidance.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::model::{Condition, ModelConfig, ModelParams, Site, TrainSample};
use crate::numerics::{check_dim, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// `None` warms up over 5% of all steps.
    pub warmup_steps: Option<usize>,
    pub p_drop: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            peak_lr: 4e-5,
            warmup_steps: None,
            p_drop: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr must be > 0, got {}", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop must be in [0, 1], got {}", self.p_drop)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        Ok(())
    }

    pub fn resolved_warmup(&self, total_steps: usize) -> usize {
        self.warmup_steps.unwrap_or(total_steps / 20)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Learning rate of the last step in each epoch.
    pub epoch_lrs: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
    pub wall_time_secs: f64,
}

/// `(1 - t) a0 + t a1`
pub fn interpolate(a0: &[f64], a1: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim("interpolation endpoint", a0.len(), a1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(a0.iter().zip(a1).map(|(x0, x1)| (1.0 - t) * x0 + t * x1).collect())
}

/// Velocity of the straight path from `a0` to `a1`; constant in `t`.
pub fn target_velocity(a0: &[f64], a1: &[f64]) -> Result<Vec<f64>> {
    check_dim("velocity endpoint", a0.len(), a1)?;
    Ok(a1.iter().zip(a0).map(|(x1, x0)| x1 - x0).collect())
}

/// Linear warmup from 0 to `peak_lr` over the warmup steps, then cosine decay
/// to 0 at `total_steps`.
pub fn lr_at(step: usize, config: &TrainConfig, total_steps: usize) -> Result<f64> {
    let warmup = config.resolved_warmup(total_steps);
    if total_steps < warmup {
        return Err(Error::Config(format!(
            "total_steps {total_steps} is shorter than warmup {warmup}"
        )));
    }
    if step > total_steps {
        return Err(Error::Argument(format!("step {step} beyond total_steps {total_steps}")));
    }
    let peak = config.peak_lr;
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if total_steps == warmup {
        return Ok(peak);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// First and second moment estimates for AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay
/// (`p -= lr * weight_decay * p`).
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, config: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adamw gradient", params.len(), grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite gradient", i));
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + config.adam_eps) + config.weight_decay * *p);
    }
    Ok(())
}

/// A record prepared for training: standardized activation and site.
struct Prepared {
    activation: Vec<f64>,
    site: Site,
    condition: usize,
}

/// Trains a fresh model on `corpus`. Deterministic given `train.seed`.
pub fn train(corpus: &Corpus, model: &ModelConfig, train: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    model.validate()?;
    let mut init_rng = Rng::substream(train.seed, 0);
    let params = ModelParams::init(model.clone(), &mut init_rng)?;
    train_from(params, corpus, train)
}

/// Continues training `params` on `corpus`.
pub fn train_from(mut params: ModelParams, corpus: &Corpus, train: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    train.validate()?;
    let model = params.config().clone();
    if corpus.records().is_empty() {
        return Err(Error::Argument("cannot train on an empty corpus".into()));
    }
    if corpus.activation_dim() != model.activation_dim {
        return Err(Error::shape("corpus activation_dim", model.activation_dim, corpus.activation_dim()));
    }
    if corpus.condition_dim() != model.condition_dim {
        return Err(Error::shape("corpus condition_dim", model.condition_dim, corpus.condition_dim()));
    }
    let conditions: Vec<Vec<f64>> = corpus.conditions().iter().map(|c| c.embedding_f64()).collect();
    let prepared = corpus
        .records()
        .iter()
        .map(|r| {
            if r.layer as usize >= model.max_layers {
                return Err(Error::Config(format!(
                    "corpus layer {} exceeds model max_layers {}",
                    r.layer, model.max_layers
                )));
            }
            let mut activation = r.activation_f64();
            if let Some(norm) = corpus.normalization() {
                norm.standardize(r.layer, &mut activation)?;
            }
            Ok(Prepared {
                activation,
                site: Site::new(r.layer, r.position),
                condition: r.condition_id as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let started = Instant::now();
    let n = prepared.len();
    let steps_per_epoch = n.div_ceil(train.batch_size);
    let total_steps = steps_per_epoch * train.epochs;
    let mut rng = Rng::substream(train.seed, 1);
    let mut adam = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut epoch_lrs = Vec::with_capacity(train.epochs);
    let d = model.activation_dim;
    let mut step = 0usize;

    for _ in 0..train.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| {
                    let rec = &prepared[i];
                    let a0: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
                    let t = rng.uniform();
                    // Always draw, so the stream does not depend on p_drop.
                    let dropped = rng.uniform() < train.p_drop;
                    let cond = if dropped {
                        Condition::Null
                    } else {
                        Condition::Embedding(&conditions[rec.condition])
                    };
                    TrainSample {
                        a_t: interpolate(&a0, &rec.activation, t).expect("dims checked"),
                        t,
                        cond,
                        site: rec.site,
                        target: target_velocity(&a0, &rec.activation).expect("dims checked"),
                    }
                })
                .collect();
            let (loss, grad) = params.loss_and_grad(&batch).map_err(|e| at_step(e, step))?;
            lr = lr_at(step, train, total_steps)?;
            adamw_step(params.values_mut(), &grad, &mut adam, lr, train).map_err(|e| at_step(e, step))?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(loss_sum / n as f64);
        epoch_lrs.push(lr);
    }
    let final_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok((
        params,
        TrainReport {
            epoch_losses,
            epoch_lrs,
            final_loss,
            steps: step,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

fn at_step(err: Error, step: usize) -> Error {
    match err {
        Error::Numeric { context, index } => Error::Numeric {
            context: format!("training step {step}: {context} (item {index})"),
            index: step,
        },
        other => other,
    }
}
