//! The transformer neural process: embedding MLP, masked transformer stack, and the
//! diagonal / autoregressive / joint heads.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{lowrank_cov, tril_factor, AttentionLayout, Graph, Var, WeightedSegments};
use crate::error::{Result, TnpError};
use crate::linalg;
use crate::mask::MaskSpec;
use crate::model::embed::{embed_sequence, embed_with_context, TokenSequence};
use crate::model::predict::{DiagonalPrediction, JointGaussianPrediction};
use crate::model::{CovarianceHead, ModelConfig, Objective, Variant, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::nn::{Activation, Bound, Dropout, LayerNorm, Mlp, ParamStore, TransformerLayer};
use crate::rng;
use crate::tasks::TaskBatch;
use crate::tensor::Tensor;

/// Diagonal added to `lower(H H^T)`; escalated x10 up to `MAX_JITTER` when predicting.
pub const CHOLESKY_EPS: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;
const LOGD_MIN: f64 = -12.0;
const LOGD_MAX: f64 = 6.0;
/// Largest number of targets put in one diagonal forward pass.
const TARGET_CHUNK: usize = 128;

#[derive(Clone, Debug)]
struct CovarianceStack {
    layers: Vec<TransformerLayer>,
    proj: Mlp,
    diag: Option<Mlp>,
}

#[derive(Clone, Debug)]
pub struct Tnp {
    config: ModelConfig,
    store: ParamStore,
    embed: Mlp,
    layers: Vec<TransformerLayer>,
    norm: LayerNorm,
    head: Mlp,
    cov: Option<CovarianceStack>,
}

/// Graph nodes of a joint head evaluation.
struct JointNodes {
    mu: Var,
    h: Var,
    logd: Option<Var>,
}

impl Tnp {
    /// Freshly initialized model; parameters depend only on `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, rng::purpose::INIT);
        let mut store = ParamStore::new();
        let c = &config;
        let (d, ff) = (c.d_model, c.ff_width);
        let mut widths = vec![c.token_width()];
        widths.extend(std::iter::repeat_n(d, c.n_embed_layers));
        let embed = Mlp::new(&mut store, &mut r, "embed", &widths, Activation::Relu)?;
        let layers = (0..c.n_layers)
            .map(|i| TransformerLayer::new(&mut store, &mut r, &format!("encoder.{i}"), d, c.n_heads, ff))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(&mut store, "encoder.norm", d);
        let head_out = match c.variant {
            Variant::NonDiagonal => c.dim_y,
            _ => 2 * c.dim_y,
        };
        let head = Mlp::new(&mut store, &mut r, "head", &[d, ff, head_out], Activation::Relu)?;
        let cov = if c.variant == Variant::NonDiagonal {
            let layers = (0..c.nd_extra_layers)
                .map(|i| TransformerLayer::new(&mut store, &mut r, &format!("cov.{i}"), d, c.n_heads, ff))
                .collect::<Result<Vec<_>>>()?;
            let out = match c.nd_covariance {
                CovarianceHead::Cholesky => c.nd_proj_dim,
                CovarianceHead::LowRank => c.lowrank_rank,
            };
            let mut widths = vec![d];
            widths.extend(std::iter::repeat_n(ff, c.nd_proj_layers - 1));
            widths.push(out);
            let proj = Mlp::new(&mut store, &mut r, "cov.proj", &widths, Activation::Relu)?;
            let diag = match c.nd_covariance {
                CovarianceHead::LowRank => Some(Mlp::new(&mut store, &mut r, "cov.diag", &[d, ff, 1], Activation::Relu)?),
                CovarianceHead::Cholesky => None,
            };
            Some(CovarianceStack { layers, proj, diag })
        } else {
            None
        };
        Ok(Self {
            config,
            store,
            embed,
            layers,
            norm,
            head,
            cov,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_batch(&self, batch: &TaskBatch) -> Result<()> {
        if batch.dim_x != self.config.dim_x || batch.dim_y != self.config.dim_y {
            return Err(TnpError::Dimension(format!(
                "batch dims ({}, {}) vs model ({}, {})",
                batch.dim_x, batch.dim_y, self.config.dim_x, self.config.dim_y
            )));
        }
        Ok(())
    }

    fn require(&self, variant: Variant, op: &str) -> Result<()> {
        if self.config.variant != variant {
            return Err(TnpError::Config(format!(
                "{op} needs variant {variant}, model is {}",
                self.config.variant
            )));
        }
        Ok(())
    }

    /// Final-layer representation of every token of `seq`.
    pub fn encode_tokens(&self, seq: &TokenSequence) -> Result<Tensor> {
        if seq.tokens.cols() != self.config.token_width() {
            return Err(TnpError::Dimension(format!(
                "token width {} vs model {}",
                seq.tokens.cols(),
                self.config.token_width()
            )));
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let z = self.backbone(&mut g, &p, seq, &mut None)?;
        Ok(g.value(z).clone())
    }

    /// Embedding, transformer stack and final norm; one output row per token.
    fn backbone(
        &self,
        g: &mut Graph,
        p: &Bound,
        seq: &TokenSequence,
        drop: &mut Option<Dropout>,
    ) -> Result<Var> {
        let mut layout = AttentionLayout::new();
        for b in 0..seq.batch_size {
            layout.push(b * seq.seq_len(), seq.mask.clone());
        }
        let layout = Rc::new(layout);
        let x = g.constant(seq.tokens.clone());
        let mut h = self.embed.forward(g, p, x)?;
        for layer in &self.layers {
            h = layer.forward(g, p, h, &layout, drop)?;
        }
        self.norm.forward(g, p, h)
    }

    fn joint_nodes(
        &self,
        g: &mut Graph,
        p: &Bound,
        zt: Var,
        batch_size: usize,
        n_target: usize,
        drop: &mut Option<Dropout>,
    ) -> Result<JointNodes> {
        let cov = self.cov.as_ref().expect("joint head");
        let mu = self.head.forward(g, p, zt)?;
        let mut layout = AttentionLayout::new();
        for b in 0..batch_size {
            layout.push(b * n_target, MaskSpec::full(n_target));
        }
        let layout = Rc::new(layout);
        let mut c = zt;
        for layer in &cov.layers {
            c = layer.forward(g, p, c, &layout, drop)?;
        }
        let h = cov.proj.forward(g, p, c)?;
        let logd = match &cov.diag {
            Some(mlp) => {
                let d = mlp.forward(g, p, c)?;
                Some(g.clamp(d, LOGD_MIN, LOGD_MAX))
            }
            None => None,
        };
        Ok(JointNodes { mu, h, logd })
    }

    /// Builds the training objective on `g`: the per-task mean negative log-likelihood of the
    /// targets (and of hidden context labels), averaged over tasks.
    fn objective_node(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &TaskBatch,
        objective: Objective,
        drop: &mut Option<Dropout>,
    ) -> Result<Var> {
        self.check_batch(batch)?;
        let (bsz, dy) = (batch.batch_size, batch.dim_y);
        if objective == Objective::Pretrain {
            self.require(Variant::Autoregressive, "pretraining")?;
            batch.validate_shapes()?;
            let seq = embed_with_context(batch, Variant::Autoregressive, 0)?;
            let z = self.backbone(g, p, &seq, drop)?;
            let zt = g.gather_rows(z, Rc::new(seq.padded_rows()))?;
            let out = self.head.forward(g, p, zt)?;
            let w = 1.0 / (bsz * batch.n_points * dy) as f64;
            let weight = vec![w; batch.y.len()];
            return g.gaussian_nll(out, Rc::new(batch.y.clone()), Rc::new(weight), LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        }
        let seq = embed_sequence(batch, self.config.variant)?;
        let z = self.backbone(g, p, &seq, drop)?;
        let nt = batch.n_target();
        if self.config.variant == Variant::NonDiagonal {
            let zt = g.gather_rows(z, Rc::new(seq.padded_rows()))?;
            let nodes = self.joint_nodes(g, p, zt, bsz, nt, drop)?;
            let y: Vec<f64> = (0..bsz).flat_map(|b| batch.target_y(b).to_vec()).collect();
            let segs = Rc::new(WeightedSegments {
                ranges: (0..bsz).map(|b| (b * nt, nt)).collect(),
                weights: vec![1.0 / (bsz * nt) as f64; bsz],
            });
            return match nodes.logd {
                Some(logd) => g.lowrank_nll(nodes.mu, logd, nodes.h, Rc::new(y), segs),
                None => g.tril_nll(nodes.mu, nodes.h, Rc::new(y), segs, CHOLESKY_EPS),
            };
        }
        let s = seq.seq_len();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut weight = Vec::new();
        for b in 0..bsz {
            let hidden_rows: Vec<usize> = (0..batch.n_context)
                .filter(|&i| (0..dy).any(|k| batch.is_hidden(b, i, k)))
                .collect();
            let n_hidden: usize = hidden_rows
                .iter()
                .map(|&i| (0..dy).filter(|&k| batch.is_hidden(b, i, k)).count())
                .sum();
            let w = 1.0 / (bsz * (nt * dy + n_hidden)) as f64;
            for (t, &pos) in seq.padded.iter().enumerate() {
                rows.push(b * s + pos);
                y.extend_from_slice(batch.y_of(b, batch.n_context + t));
                weight.extend(std::iter::repeat_n(w, dy));
            }
            for &i in &hidden_rows {
                rows.push(b * s + i);
                y.extend_from_slice(batch.y_of(b, i));
                weight.extend((0..dy).map(|k| if batch.is_hidden(b, i, k) { w } else { 0.0 }));
            }
        }
        let zt = g.gather_rows(z, Rc::new(rows))?;
        let out = self.head.forward(g, p, zt)?;
        g.gaussian_nll(out, Rc::new(y), Rc::new(weight), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    }

    /// Value of the training objective.
    pub fn loss(&self, batch: &TaskBatch, objective: Objective) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let l = self.objective_node(&mut g, &p, batch, objective, &mut None)?;
        Ok(g.value(l).data()[0])
    }

    /// Objective value and its gradient for every parameter, in store order. Dropout is active
    /// iff the configured rate is positive and `dropout_rng` is given.
    pub fn loss_and_grad(
        &self,
        batch: &TaskBatch,
        objective: Objective,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, true);
        let mut drop = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => Some(Dropout {
                rate: self.config.dropout,
                rng,
            }),
            _ => None,
        };
        let l = self.objective_node(&mut g, &p, batch, objective, &mut drop)?;
        let value = g.value(l).data()[0];
        let grads = g.backward(l)?;
        Ok((value, p.vars().iter().map(|&v| grads.get(v)).collect()))
    }

    fn diagonal_from_rows(&self, batch: &TaskBatch, seq: &TokenSequence) -> Result<DiagonalPrediction> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let z = self.backbone(&mut g, &p, seq, &mut None)?;
        let zt = g.gather_rows(z, Rc::new(seq.padded_rows()))?;
        let out = self.head.forward(&mut g, &p, zt)?;
        let dy = batch.dim_y;
        let o = g.value(out);
        let mut mu = Vec::with_capacity(o.rows() * dy);
        let mut sigma = Vec::with_capacity(o.rows() * dy);
        for r in 0..o.rows() {
            let row = o.row(r);
            mu.extend_from_slice(&row[..dy]);
            sigma.extend(row[dy..].iter().map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp()));
        }
        DiagonalPrediction::new(mu, sigma, batch.batch_size, o.rows() / batch.batch_size, dy)
    }

    /// Independent per-target Gaussians; targets are processed in chunks, which cannot change
    /// the result because no target attends another.
    pub fn predict_diagonal(&self, batch: &TaskBatch) -> Result<DiagonalPrediction> {
        self.require(Variant::Diagonal, "diagonal prediction")?;
        self.check_batch(batch)?;
        let (m, nt) = (batch.n_context, batch.n_target());
        if nt <= TARGET_CHUNK {
            return self.diagonal_from_rows(batch, &embed_sequence(batch, Variant::Diagonal)?);
        }
        let dy = batch.dim_y;
        let mut mu = vec![0.0; batch.batch_size * nt * dy];
        let mut sigma = mu.clone();
        let mut start = 0;
        while start < nt {
            let len = TARGET_CHUNK.min(nt - start);
            let order: Vec<usize> = (0..m).chain(m + start..m + start + len).collect();
            let chunk = subset_points(batch, &order, m)?;
            let pred = self.diagonal_from_rows(&chunk, &embed_sequence(&chunk, Variant::Diagonal)?)?;
            for b in 0..batch.batch_size {
                for t in 0..len {
                    for k in 0..dy {
                        let src = (b * len + t) * dy + k;
                        let dst = (b * nt + start + t) * dy + k;
                        mu[dst] = pred.mu[src];
                        sigma[dst] = pred.sigma[src];
                    }
                }
            }
            start += len;
        }
        DiagonalPrediction::new(mu, sigma, batch.batch_size, nt, dy)
    }

    /// Per-target conditionals `p(y_i | context, y_{m+1..i-1})` from one teacher-forced pass.
    pub fn predict_autoregressive_teacher_forced(&self, batch: &TaskBatch) -> Result<DiagonalPrediction> {
        self.require(Variant::Autoregressive, "teacher-forced prediction")?;
        self.check_batch(batch)?;
        self.diagonal_from_rows(batch, &embed_sequence(batch, Variant::Autoregressive)?)
    }

    /// Conditionals of the targets when the context is encoded causally, as during sequence
    /// pretraining: target `i` conditions on all points before it through the causal stack.
    pub fn predict_autoregressive_causal(&self, batch: &TaskBatch) -> Result<DiagonalPrediction> {
        self.require(Variant::Autoregressive, "causal prediction")?;
        self.check_batch(batch)?;
        batch.validate()?;
        let seq = embed_with_context(batch, Variant::Autoregressive, 0)?;
        let all = self.diagonal_from_rows(batch, &seq)?;
        let (n, m, dy) = (batch.n_points, batch.n_context, batch.dim_y);
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        for b in 0..batch.batch_size {
            mu.extend_from_slice(&all.mu[(b * n + m) * dy..(b + 1) * n * dy]);
            sigma.extend_from_slice(&all.sigma[(b * n + m) * dy..(b + 1) * n * dy]);
        }
        DiagonalPrediction::new(mu, sigma, batch.batch_size, n - m, dy)
    }

    /// Joint Gaussian over the targets of every task.
    pub fn predict_joint(&self, batch: &TaskBatch) -> Result<Vec<JointGaussianPrediction>> {
        self.require(Variant::NonDiagonal, "joint prediction")?;
        self.check_batch(batch)?;
        let seq = embed_sequence(batch, Variant::NonDiagonal)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let z = self.backbone(&mut g, &p, &seq, &mut None)?;
        let zt = g.gather_rows(z, Rc::new(seq.padded_rows()))?;
        let (bsz, nt) = (batch.batch_size, batch.n_target());
        let nodes = self.joint_nodes(&mut g, &p, zt, bsz, nt, &mut None)?;
        let mu = g.value(nodes.mu).data();
        let h = g.value(nodes.h);
        let pdim = h.cols();
        (0..bsz)
            .map(|b| {
                let hb = &h.data()[b * nt * pdim..(b + 1) * nt * pdim];
                let l = match nodes.logd {
                    None => cholesky_head_factor(hb, nt, pdim)?,
                    Some(d) => {
                        let dv = &g.value(d).data()[b * nt..(b + 1) * nt];
                        let sigma = lowrank_cov(dv, hb, nt, pdim);
                        match linalg::cholesky(&sigma, nt) {
                            Some(l) => l,
                            None => {
                                linalg::cholesky_jittered(&sigma, nt, CHOLESKY_EPS, MAX_JITTER)
                                    .ok_or_else(|| TnpError::Factorization("low-rank covariance".into()))?
                                    .0
                            }
                        }
                    }
                };
                JointGaussianPrediction::new(mu[b * nt..(b + 1) * nt].to_vec(), l)
            })
            .collect()
    }

    /// Marginal predictive Gaussians for any variant (teacher-forced for the autoregressive
    /// decoder, so target labels must be present).
    pub fn predict_marginals(&self, batch: &TaskBatch) -> Result<DiagonalPrediction> {
        match self.config.variant {
            Variant::Diagonal => self.predict_diagonal(batch),
            Variant::Autoregressive => self.predict_autoregressive_teacher_forced(batch),
            Variant::NonDiagonal => {
                let joint = self.predict_joint(batch)?;
                let mut mu = Vec::new();
                let mut sigma = Vec::new();
                for j in &joint {
                    mu.extend_from_slice(&j.mu);
                    sigma.extend(j.marginal_sigma());
                }
                DiagonalPrediction::new(mu, sigma, batch.batch_size, batch.n_target(), 1)
            }
        }
    }

    /// Draws target labels one at a time, feeding each draw back as a real target pair.
    /// With `greedy` the conditional mean is used instead of a draw.
    pub fn sample_targets_autoregressive(
        &self,
        context_x: &[f64],
        context_y: &[f64],
        target_x: &[f64],
        rng: &mut impl Rng,
        greedy: bool,
    ) -> Result<Vec<f64>> {
        self.require(Variant::Autoregressive, "autoregressive sampling")?;
        let (dx, dy) = (self.config.dim_x, self.config.dim_y);
        let nt = target_x.len() / dx;
        let mut ys = vec![0.0; nt * dy];
        for i in 0..nt {
            let task = TaskBatch::from_sets(context_x, context_y, target_x, Some(&ys), dx, dy)?;
            let pred = self.predict_autoregressive_teacher_forced(&task)?;
            for k in 0..dy {
                let (mu, s) = (pred.mu[i * dy + k], pred.sigma[i * dy + k]);
                ys[i * dy + k] = if greedy {
                    mu
                } else {
                    mu + s * rng.sample::<f64, _>(StandardNormal)
                };
            }
        }
        Ok(ys)
    }

    /// Joint autoregressive log-density of each task's targets in the given order (summed over
    /// targets, not normalized).
    pub fn autoregressive_joint_log_likelihood(&self, batch: &TaskBatch) -> Result<Vec<f64>> {
        let pred = self.predict_autoregressive_teacher_forced(batch)?;
        let w = batch.n_target() * batch.dim_y;
        (0..batch.batch_size)
            .map(|b| {
                let ll = crate::model::log_likelihood_diag(&pred.task(b), batch.target_y(b))?;
                Ok(ll * w as f64)
            })
            .collect()
    }

    /// Log of the average, over target orderings, of the joint autoregressive density, divided
    /// by the number of target entries. Uses every ordering when `n_perms` is at least the group
    /// size; otherwise `n_perms` random orderings drawn from `seed`.
    pub fn symmetrized_log_likelihood(&self, batch: &TaskBatch, n_perms: usize, seed: u64) -> Result<Vec<f64>> {
        self.require(Variant::Autoregressive, "symmetrized likelihood")?;
        if n_perms == 0 {
            return Err(TnpError::Config("n_perms must be at least 1".into()));
        }
        let nt = batch.n_target();
        let perms = permutation_set(nt, n_perms, seed);
        let mut per_perm = Vec::with_capacity(perms.len());
        for perm in &perms {
            per_perm.push(self.autoregressive_joint_log_likelihood(&batch.permute_targets(perm)?)?);
        }
        let denom = (nt * batch.dim_y) as f64;
        Ok((0..batch.batch_size)
            .map(|b| {
                let vals: Vec<f64> = per_perm.iter().map(|v| v[b]).collect();
                (log_sum_exp(&vals) - (vals.len() as f64).ln()) / denom
            })
            .collect())
    }
}

/// `lower(H H^T) + eps I`, escalating `eps` x10 up to [`MAX_JITTER`] until the diagonal is
/// positive and finite.
fn cholesky_head_factor(h: &[f64], n: usize, p: usize) -> Result<Vec<f64>> {
    let mut eps = CHOLESKY_EPS;
    loop {
        let l = tril_factor(h, n, p, eps);
        if (0..n).all(|i| l[i * n + i] > 0.0 && l[i * n + i].is_finite()) {
            return Ok(l);
        }
        if eps * 10.0 > MAX_JITTER * (1.0 + 1e-12) {
            return Err(TnpError::Factorization("joint head diagonal".into()));
        }
        eps *= 10.0;
    }
}

/// The points `order` of every task, the first `m` of which are context.
fn subset_points(batch: &TaskBatch, order: &[usize], m: usize) -> Result<TaskBatch> {
    let (dx, dy) = (batch.dim_x, batch.dim_y);
    let mut x = Vec::with_capacity(batch.batch_size * order.len() * dx);
    let mut y = Vec::with_capacity(batch.batch_size * order.len() * dy);
    for b in 0..batch.batch_size {
        for &i in order {
            x.extend_from_slice(batch.x_of(b, i));
            y.extend_from_slice(batch.y_of(b, i));
        }
    }
    let mut out = TaskBatch::new(x, y, batch.batch_size, order.len(), m, dx, dy)?;
    if let Some(h) = &batch.hidden {
        let w = batch.n_context * dy;
        out.hidden = Some((0..batch.batch_size).flat_map(|b| h[b * w..b * w + m * dy].to_vec()).collect());
    }
    Ok(out)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// All permutations of `0..n` (lexicographic) if there are at most `count`, otherwise `count`
/// random ones.
pub(crate) fn permutation_set(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let group: Option<usize> = (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k));
    if matches!(group, Some(size) if size <= count) {
        let mut out = Vec::new();
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            out.push(perm.clone());
            if !next_permutation(&mut perm) {
                return out;
            }
        }
    }
    let mut r = rng::stream(seed, rng::purpose::SAMPLING);
    (0..count)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut r);
            p
        })
        .collect()
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).expect("successor");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}
