//! Conditional neural process: per-pair encoder, mean pooling, per-target decoder.

use std::rc::Rc;

use crate::autodiff::{Graph, Var};
use crate::error::{Result, TnpError};
use crate::model::{CnpConfig, DiagonalPrediction, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::nn::{Activation, Bound, Mlp, ParamStore};
use crate::rng;
use crate::tasks::TaskBatch;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Cnp {
    config: CnpConfig,
    store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
}

impl Cnp {
    pub fn new(config: CnpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, rng::purpose::INIT);
        let mut store = ParamStore::new();
        let w = config.width;
        let mut enc = vec![config.dim_x + config.dim_y];
        enc.extend(std::iter::repeat_n(w, config.encoder_layers));
        let encoder = Mlp::new(&mut store, &mut r, "encoder", &enc, Activation::Relu)?;
        let mut dec = vec![config.dim_x + w];
        dec.extend(std::iter::repeat_n(w, config.decoder_layers - 1));
        dec.push(2 * config.dim_y);
        let decoder = Mlp::new(&mut store, &mut r, "decoder", &dec, Activation::Relu)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &CnpConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `[mu | raw log sigma]` for every target of every task.
    fn forward(&self, g: &mut Graph, p: &Bound, batch: &TaskBatch) -> Result<Var> {
        batch.validate()?;
        let (dx, dy) = (self.config.dim_x, self.config.dim_y);
        if batch.dim_x != dx || batch.dim_y != dy {
            return Err(TnpError::Dimension("batch dims differ from the model".into()));
        }
        let (bsz, m, nt) = (batch.batch_size, batch.n_context, batch.n_target());
        let mut pairs = Vec::with_capacity(bsz * m * (dx + dy));
        let mut xt = Vec::with_capacity(bsz * nt * dx);
        for b in 0..bsz {
            for i in 0..m {
                pairs.extend_from_slice(batch.x_of(b, i));
                pairs.extend_from_slice(batch.y_of(b, i));
            }
            for i in m..batch.n_points {
                xt.extend_from_slice(batch.x_of(b, i));
            }
        }
        let pairs = g.constant(Tensor::matrix(bsz * m, dx + dy, pairs));
        let enc = self.encoder.forward(g, p, pairs)?;
        let segs = (0..bsz).map(|b| (b * m, m)).collect();
        let r = g.segment_mean(enc, Rc::new(segs))?;
        let owner = (0..bsz).flat_map(|b| std::iter::repeat_n(b, nt)).collect();
        let r = g.gather_rows(r, Rc::new(owner))?;
        let xt = g.constant(Tensor::matrix(bsz * nt, dx, xt));
        let input = g.concat_cols(xt, r)?;
        self.decoder.forward(g, p, input)
    }

    fn nll(&self, g: &mut Graph, p: &Bound, batch: &TaskBatch) -> Result<Var> {
        let out = self.forward(g, p, batch)?;
        let y: Vec<f64> = (0..batch.batch_size).flat_map(|b| batch.target_y(b).to_vec()).collect();
        let w = 1.0 / y.len() as f64;
        let weight = vec![w; y.len()];
        g.gaussian_nll(out, Rc::new(y), Rc::new(weight), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    }

    pub fn loss(&self, batch: &TaskBatch) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let l = self.nll(&mut g, &p, batch)?;
        Ok(g.value(l).data()[0])
    }

    pub fn loss_and_grad(&self, batch: &TaskBatch) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, true);
        let l = self.nll(&mut g, &p, batch)?;
        let grads = g.backward(l)?;
        Ok((g.value(l).data()[0], p.vars().iter().map(|&v| grads.get(v)).collect()))
    }

    pub fn predict(&self, batch: &TaskBatch) -> Result<DiagonalPrediction> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let out = self.forward(&mut g, &p, batch)?;
        let dy = self.config.dim_y;
        let o = g.value(out);
        let mut mu = Vec::with_capacity(o.rows() * dy);
        let mut sigma = Vec::with_capacity(o.rows() * dy);
        for r in 0..o.rows() {
            mu.extend_from_slice(&o.row(r)[..dy]);
            sigma.extend(o.row(r)[dy..].iter().map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp()));
        }
        DiagonalPrediction::new(mu, sigma, batch.batch_size, batch.n_target(), dy)
    }
}
