//! Meta-training: Adam with cosine annealing and gradient-norm clipping, deterministic batch
//! streams, reward dropout for the bandit tasks, and resumable state.

use rand::Rng;

use crate::error::{Result, TnpError};
use crate::model::{Model, Objective};
use crate::rng::{self, purpose};
use crate::tasks::{sample_gp_batch, sample_wheel_batch, GpTaskConfig, TaskBatch, WheelTaskConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub objective: Objective,
    /// Probability of hiding each context label entry (bandit training).
    pub reward_drop: f64,
    pub log_interval: usize,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr_max: 5e-4,
            lr_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            seed: 0,
            objective: Objective::Meta,
            reward_drop: 0.0,
            log_interval: 100,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_max >= self.lr_min
            && self.lr_min >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.clip_norm > 0.0
            && (0.0..=1.0).contains(&self.reward_drop);
        if ok {
            Ok(())
        } else {
            Err(TnpError::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let t = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Hides each context label entry independently with probability `rate`. Hidden entries are
/// fed to the model as unobserved and become regression targets.
pub fn reward_dropout_mask(rng: &mut impl Rng, batch: &TaskBatch, rate: f64) -> Result<TaskBatch> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(TnpError::Config(format!("drop rate {rate} outside [0, 1]")));
    }
    let mut out = batch.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    let n = batch.batch_size * batch.n_context * batch.dim_y;
    out.hidden = Some((0..n).map(|_| rng.random::<f64>() < rate).collect());
    Ok(out)
}

/// Where training batches come from.
#[derive(Clone, Debug)]
pub enum TaskSource {
    Gp(GpTaskConfig),
    Wheel(WheelTaskConfig),
    /// The same batch every step.
    Fixed(TaskBatch),
}

impl TaskSource {
    /// Batch for step `k`; a pure function of `(seed, k)`.
    pub fn batch(&self, seed: u64, k: usize, reward_drop: f64) -> Result<TaskBatch> {
        let mut r = rng::stream(seed, purpose::TRAIN_BATCH + k as u64);
        let batch = match self {
            Self::Gp(cfg) => sample_gp_batch(&mut r, cfg)?,
            Self::Wheel(cfg) => sample_wheel_batch(&mut r, cfg)?,
            Self::Fixed(b) => b.clone(),
        };
        reward_dropout_mask(&mut r, &batch, reward_drop)
    }
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn clip(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean loss over the steps since the previous record.
    pub loss: f64,
    pub lr: f64,
}

/// Optimizer state of a run; together with the model this is a complete checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub adam: Adam,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        Self {
            step: 0,
            adam: Adam::new(model.store().tensors()),
        }
    }
}

/// Negative mean log-likelihood of `batch` under `model`.
pub fn training_loss(model: &Model, batch: &TaskBatch, objective: Objective) -> Result<f64> {
    match model.loss(batch, objective) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(TnpError::NonFinite(_)) => Err(non_finite(model, batch, objective, None)),
        Err(e) => Err(e),
    }
}

fn non_finite(model: &Model, batch: &TaskBatch, objective: Objective, step: Option<usize>) -> TnpError {
    let culprit = (0..batch.batch_size).find(|&b| {
        !matches!(model.loss(&batch.select(b), objective), Ok(v) if v.is_finite())
    });
    let at = step.map(|s| format!(" at step {s}")).unwrap_or_default();
    match culprit {
        Some(b) => TnpError::NonFinite(format!("loss{at}, batch element {b}")),
        None => TnpError::NonFinite(format!("loss{at}")),
    }
}

/// Continues training from `state` until `cfg.steps`. `on_record` receives log records;
/// `on_checkpoint` is called every `checkpoint_interval` steps with the current model and
/// state.
pub fn train_resume(
    model: &mut Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    source: &TaskSource,
    mut on_record: impl FnMut(&TrainRecord),
    mut on_checkpoint: impl FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<Vec<TrainRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut acc = 0.0;
    let mut acc_n = 0usize;
    while state.step < cfg.steps {
        let k = state.step;
        let batch = source.batch(cfg.seed, k, cfg.reward_drop)?;
        let mut drop_rng = rng::stream(cfg.seed, purpose::DROPOUT + k as u64);
        let (loss, mut grads) = match model.loss_and_grad(&batch, cfg.objective, Some(&mut drop_rng)) {
            Ok((l, g)) if l.is_finite() => (l, g),
            Ok(_) | Err(TnpError::NonFinite(_)) => {
                return Err(non_finite(model, &batch, cfg.objective, Some(k)))
            }
            Err(e) => return Err(e),
        };
        clip(&mut grads, cfg.clip_norm);
        let lr = cosine_lr(k, cfg.steps, cfg.lr_max, cfg.lr_min);
        state.adam.step(model.store_mut().tensors_mut(), &grads, lr, cfg);
        state.step += 1;
        acc += loss;
        acc_n += 1;
        if cfg.log_interval > 0 && (state.step % cfg.log_interval == 0 || state.step == cfg.steps) {
            let rec = TrainRecord {
                step: state.step,
                loss: acc / acc_n as f64,
                lr,
            };
            on_record(&rec);
            records.push(rec);
            acc = 0.0;
            acc_n = 0;
        }
        if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 {
            on_checkpoint(model, state)?;
        }
    }
    Ok(records)
}

/// Trains `model` from scratch for `cfg.steps` steps.
pub fn train_run(model: &mut Model, cfg: &TrainConfig, source: &TaskSource) -> Result<Vec<TrainRecord>> {
    let mut state = TrainState::new(model);
    train_resume(model, &mut state, cfg, source, |_| {}, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5) - 0.000505).abs() < 1e-15);
    }

    #[test]
    fn reward_drop_rates() {
        let b = TaskBatch::new(vec![0.0; 2000], vec![1.0; 5000], 1, 1000, 999, 2, 5).unwrap();
        let mut r = rng::stream(0, 0);
        assert_eq!(reward_dropout_mask(&mut r, &b, 0.0).unwrap(), b);
        let all = reward_dropout_mask(&mut r, &b, 1.0).unwrap();
        assert!(all.hidden.unwrap().iter().all(|&h| h));
        assert!(reward_dropout_mask(&mut r, &b, 1.5).is_err());
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::matrix(1, 2, vec![30.0, 40.0])];
        assert_eq!(clip(&mut g, 10.0), 50.0);
        assert!((g[0].data()[0] - 6.0).abs() < 1e-12 && (g[0].data()[1] - 8.0).abs() < 1e-12);
    }
}
