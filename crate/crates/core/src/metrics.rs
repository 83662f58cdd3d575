//! Meta-regression metrics and the invariance / mask-soundness harnesses.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, TnpError};
use crate::model::{embed_sequence, log_likelihood_diag, log_likelihood_joint, DiagonalPrediction, Model, Variant};
use crate::rng::{self, purpose};
use crate::tasks::{sample_gp_batch, GpTaskConfig, TaskBatch};

/// One metric over an evaluation set: per-task values and their mean and sample std.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub per_task: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
}

impl MetricReport {
    pub fn from_values(metric: impl Into<String>, per_task: Vec<f64>, seed: u64) -> Self {
        let n = per_task.len() as f64;
        let mean = per_task.iter().sum::<f64>() / n;
        let std = if per_task.len() > 1 {
            (per_task.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            metric: metric.into(),
            per_task,
            mean,
            std,
            seed,
        }
    }

    pub fn count(&self) -> usize {
        self.per_task.len()
    }
}

/// How target log-likelihood is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Independent Gaussians (diagonal decoder, CNP).
    Diag,
    /// Joint Gaussian (non-diagonal decoder).
    Joint,
    /// Teacher-forced autoregressive conditionals in the given target order.
    Autoregressive,
    /// Autoregressive with the context encoded causally, as in sequence pretraining.
    Causal,
    /// Autoregressive averaged over target orderings.
    Symmetrized(usize),
}

impl EvalMode {
    /// The natural mode for a model.
    pub fn default_for(model: &Model) -> Self {
        match model.variant() {
            Some(Variant::Autoregressive) => Self::Autoregressive,
            Some(Variant::NonDiagonal) => Self::Joint,
            _ => Self::Diag,
        }
    }
}

/// A deterministic evaluation set of `n_tasks` functions in batches of `cfg.batch_size`.
pub fn eval_tasks(cfg: &GpTaskConfig, n_tasks: usize, seed: u64) -> Result<Vec<TaskBatch>> {
    let mut out = Vec::new();
    let mut left = n_tasks;
    let mut k = 0u64;
    while left > 0 {
        let mut c = cfg.clone();
        c.batch_size = cfg.batch_size.min(left);
        out.push(sample_gp_batch(&mut rng::stream(seed, purpose::EVAL + k), &c)?);
        left -= c.batch_size;
        k += 1;
    }
    Ok(out)
}

/// Mean per-target log-density, per task.
pub fn eval_log_likelihood(model: &Model, tasks: &[TaskBatch], mode: EvalMode, seed: u64) -> Result<MetricReport> {
    let variant = model.variant();
    let ok = match mode {
        EvalMode::Diag => matches!(variant, None | Some(Variant::Diagonal)),
        EvalMode::Joint => variant == Some(Variant::NonDiagonal),
        EvalMode::Autoregressive | EvalMode::Causal | EvalMode::Symmetrized(_) => {
            variant == Some(Variant::Autoregressive)
        }
    };
    if !ok {
        return Err(TnpError::Config(format!("mode {mode:?} does not apply to {}", model.name())));
    }
    let mut values = Vec::new();
    for (k, batch) in tasks.iter().enumerate() {
        match (mode, model) {
            (EvalMode::Joint, Model::Tnp(t)) => {
                for (b, pred) in t.predict_joint(batch)?.iter().enumerate() {
                    values.push(log_likelihood_joint(pred, batch.target_y(b))?);
                }
            }
            (EvalMode::Symmetrized(n), Model::Tnp(t)) => {
                values.extend(t.symmetrized_log_likelihood(batch, n, seed.wrapping_add(k as u64))?);
            }
            (EvalMode::Causal, Model::Tnp(t)) => {
                let pred = t.predict_autoregressive_causal(batch)?;
                for b in 0..batch.batch_size {
                    values.push(log_likelihood_diag(&pred.task(b), batch.target_y(b))?);
                }
            }
            _ => {
                let pred = model.predict_marginals(batch)?;
                for b in 0..batch.batch_size {
                    values.push(log_likelihood_diag(&pred.task(b), batch.target_y(b))?);
                }
            }
        }
    }
    Ok(MetricReport::from_values("log_likelihood", values, seed))
}

/// Root-mean-square error of the predictive means over each task's targets.
pub fn rmse(mu: &[f64], y: &[f64]) -> f64 {
    (mu.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

pub fn eval_rmse(model: &Model, tasks: &[TaskBatch], seed: u64) -> Result<MetricReport> {
    let mut values = Vec::new();
    for batch in tasks {
        let pred = model.predict_marginals(batch)?;
        for b in 0..batch.batch_size {
            values.push(rmse(&pred.task(b).mu, batch.target_y(b)));
        }
    }
    Ok(MetricReport::from_values("rmse", values, seed))
}

/// Quantile levels 0.05, 0.10, ..., 0.95.
pub fn calibration_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Mean over the 19 levels `q` of `|fraction of y below the predicted q-quantile - q|`.
pub fn calibration_error(pred: &DiagonalPrediction, y: &[f64]) -> Result<f64> {
    if y.len() != pred.mu.len() || y.is_empty() {
        return Err(TnpError::Dimension("calibration sizes".into()));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let levels = calibration_levels();
    let mut gap = 0.0;
    for &q in &levels {
        let z = std_normal.inverse_cdf(q);
        let below = y
            .iter()
            .zip(pred.mu.iter().zip(&pred.sigma))
            .filter(|(yi, (m, s))| **yi < *m + *s * z)
            .count();
        gap += (below as f64 / y.len() as f64 - q).abs();
    }
    Ok(gap / levels.len() as f64)
}

pub fn eval_calibration_error(model: &Model, tasks: &[TaskBatch], seed: u64) -> Result<MetricReport> {
    let mut values = Vec::new();
    for batch in tasks {
        let pred = model.predict_marginals(batch)?;
        for b in 0..batch.batch_size {
            values.push(calibration_error(&pred.task(b), batch.target_y(b))?);
        }
    }
    Ok(MetricReport::from_values("calibration_error", values, seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCheck {
    pub passed: bool,
    pub max_deviation: f64,
    pub probes: usize,
    pub violations: usize,
}

impl PropertyCheck {
    fn from_deviations(devs: &[f64], tol: f64) -> Self {
        let violations = devs.iter().filter(|&&d| !(d <= tol)).count();
        Self {
            passed: violations == 0,
            max_deviation: devs.iter().copied().fold(0.0, f64::max),
            probes: devs.len(),
            violations,
        }
    }
}

/// Every predictive quantity of the model as one flat vector: `(mu, sigma)` for diagonal
/// outputs, `(mu, Sigma)` for the joint head.
fn outputs(model: &Model, task: &TaskBatch) -> Result<Vec<f64>> {
    match model {
        Model::Tnp(t) if t.variant() == Variant::NonDiagonal => {
            let mut v = Vec::new();
            for j in t.predict_joint(task)? {
                v.extend_from_slice(&j.mu);
                v.extend(j.covariance());
            }
            Ok(v)
        }
        _ => {
            let p = model.predict_marginals(task)?;
            Ok(p.mu.into_iter().chain(p.sigma).collect())
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Applies `n_perms` random context permutations and compares all predictive outputs.
pub fn check_context_invariance(
    model: &Model,
    task: &TaskBatch,
    n_perms: usize,
    tol: f64,
    seed: u64,
) -> Result<PropertyCheck> {
    let base = outputs(model, task)?;
    let mut r = rng::stream(seed, purpose::PROPS);
    let mut devs = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        let mut perm: Vec<usize> = (0..task.n_context).collect();
        perm.shuffle(&mut r);
        devs.push(max_diff(&base, &outputs(model, &task.permute_context(&perm)?)?));
    }
    Ok(PropertyCheck::from_deviations(&devs, tol))
}

/// Largest target count for which the autoregressive check enumerates every ordering.
pub const MAX_EXACT_GROUP_TARGETS: usize = 4;

/// Permutes the targets and checks that predictions move with them. The autoregressive
/// decoder is checked through its fully symmetrized likelihood, which must be unchanged.
pub fn check_target_equivariance(model: &Model, task: &TaskBatch, tol: f64, seed: u64) -> Result<PropertyCheck> {
    let nt = task.n_target();
    let mut perm: Vec<usize> = (0..nt).collect();
    perm.shuffle(&mut rng::stream(seed, purpose::PROPS + 1));
    let moved = task.permute_targets(&perm)?;
    let dev = match model {
        Model::Tnp(t) if t.variant() == Variant::Autoregressive => {
            if nt > MAX_EXACT_GROUP_TARGETS {
                return Err(TnpError::Config(format!("intractable group: {nt} targets")));
            }
            let group = (1..=nt).product();
            let a = t.symmetrized_log_likelihood(task, group, seed)?;
            let b = t.symmetrized_log_likelihood(&moved, group, seed)?;
            max_diff(&a, &b)
        }
        Model::Tnp(t) if t.variant() == Variant::NonDiagonal => {
            let a = t.predict_joint(task)?;
            let b = t.predict_joint(&moved)?;
            let mut dev = 0.0f64;
            for (ja, jb) in a.iter().zip(&b) {
                let (sa, sb) = (ja.covariance(), jb.covariance());
                for i in 0..nt {
                    dev = dev.max((jb.mu[i] - ja.mu[perm[i]]).abs());
                    for j in 0..nt {
                        dev = dev.max((sb[i * nt + j] - sa[perm[i] * nt + perm[j]]).abs());
                    }
                }
            }
            dev
        }
        _ => {
            let a = model.predict_marginals(task)?;
            let b = model.predict_marginals(&moved)?;
            let dy = task.dim_y;
            let mut dev = 0.0f64;
            for bi in 0..task.batch_size {
                for i in 0..nt {
                    for k in 0..dy {
                        let new = (bi * nt + i) * dy + k;
                        let old = (bi * nt + perm[i]) * dy + k;
                        dev = dev
                            .max((b.mu[new] - a.mu[old]).abs())
                            .max((b.sigma[new] - a.sigma[old]).abs());
                    }
                }
            }
            dev
        }
    };
    Ok(PropertyCheck::from_deviations(&[dev], tol))
}

/// Target equivariance of the predictive means alone.
pub fn check_mean_equivariance(model: &Model, task: &TaskBatch, tol: f64, seed: u64) -> Result<PropertyCheck> {
    let nt = task.n_target();
    let mut perm: Vec<usize> = (0..nt).collect();
    perm.shuffle(&mut rng::stream(seed, purpose::PROPS + 1));
    let a = model.predict_marginals(task)?;
    let b = model.predict_marginals(&task.permute_targets(&perm)?)?;
    let dy = task.dim_y;
    let mut dev = 0.0f64;
    for bi in 0..task.batch_size {
        for i in 0..nt {
            for k in 0..dy {
                dev = dev.max((b.mu[(bi * nt + i) * dy + k] - a.mu[(bi * nt + perm[i]) * dy + k]).abs());
            }
        }
    }
    Ok(PropertyCheck::from_deviations(&[dev], tol))
}

/// Tokens each row can depend on: itself (residual path) and everything reachable through
/// allowed attention edges across layers.
fn dependency_sets(mask: &crate::mask::MaskSpec) -> Vec<Vec<bool>> {
    let n = mask.len();
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || mask.allows(i, j)).collect()).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for k in 0..n {
                if reach[i][k] && k != i {
                    for j in 0..n {
                        if reach[k][j] && !reach[i][j] {
                            reach[i][j] = true;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return reach;
        }
    }
}

/// Randomizes tokens outside a row's dependency set and checks that row's final
/// representation is unchanged.
pub fn check_mask_dependency(model: &Model, task: &TaskBatch, n_probes: usize, tol: f64, seed: u64) -> Result<PropertyCheck> {
    let Model::Tnp(t) = model else {
        return Err(TnpError::Config("mask probes need a transformer model".into()));
    };
    let task = task.select(0);
    let seq = embed_sequence(&task, t.variant())?;
    let base = t.encode_tokens(&seq)?;
    let n = seq.seq_len();
    let reach = dependency_sets(&seq.mask);
    let rows: Vec<usize> = (0..n).filter(|&i| reach[i].iter().any(|&r| !r)).collect();
    if rows.is_empty() {
        return Ok(PropertyCheck::from_deviations(&[], tol));
    }
    let mut r = rng::stream(seed, purpose::PROPS + 2);
    let mut devs = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let i = rows[r.random_range(0..rows.len())];
        let denied: Vec<usize> = (0..n).filter(|&j| !reach[i][j]).collect();
        let j = denied[r.random_range(0..denied.len())];
        let mut probe = seq.clone();
        let w = probe.tokens.cols();
        for v in probe.tokens.data_mut()[j * w..(j + 1) * w].iter_mut() {
            *v = 3.0 * r.sample::<f64, _>(StandardNormal);
        }
        let out = t.encode_tokens(&probe)?;
        devs.push(max_diff(base.row(i), out.row(i)));
    }
    Ok(PropertyCheck::from_deviations(&devs, tol))
}
