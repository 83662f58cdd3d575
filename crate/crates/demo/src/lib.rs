//! Browser bindings: attention masks, GP draws and model predictions on a 1-D input grid.

use tnp_core::io::model_file::model_from_bytes;
use tnp_core::mask::build_mask;
use tnp_core::model::{Model, ModelConfig, Tnp, Variant};
use tnp_core::rng;
use tnp_core::tasks::{sample_gp_values, KernelFamily, KernelSpec, TaskBatch};
use tnp_core::Result;
use wasm_bindgen::prelude::*;

/// Mask for `m` context and `nt` target points, flattened row-major as 0/1.
pub fn mask_cells(variant: &str, m: usize, nt: usize) -> Result<Vec<u8>> {
    let mask = build_mask(m + nt, m, variant.parse()?)?;
    let n = mask.len();
    Ok((0..n * n).map(|k| mask.allows(k / n, k % n) as u8).collect())
}

/// `n` evenly spaced inputs on `[-2, 2]`.
pub fn input_grid(n: usize) -> Vec<f64> {
    let step = if n > 1 { 4.0 / (n - 1) as f64 } else { 0.0 };
    (0..n).map(|i| -2.0 + step * i as f64).collect()
}

/// One GP function evaluated on `input_grid(n)`.
pub fn gp_values(kernel: &str, lengthscale: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let family: KernelFamily = kernel.parse()?;
    let spec = KernelSpec::new(family, lengthscale, 1.0);
    sample_gp_values(&mut rng::stream(seed, 0), &spec, &input_grid(n), 1)
}

#[wasm_bindgen]
pub struct Predictor {
    model: Model,
}

impl Predictor {
    pub fn untrained(variant: &str, seed: u64) -> Result<Self> {
        let variant: Variant = variant.parse()?;
        Ok(Self {
            model: Model::Tnp(Tnp::new(ModelConfig::miniature(variant), seed)?),
        })
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self {
            model: model_from_bytes(bytes)?,
        })
    }

    /// Means followed by standard deviations at `tx`.
    pub fn marginals(&self, cx: &[f64], cy: &[f64], tx: &[f64]) -> Result<Vec<f64>> {
        let task = TaskBatch::from_sets(cx, cy, tx, None, 1, 1)?;
        let pred = self.model.predict_marginals(&task)?;
        Ok([pred.mu, pred.sigma].concat())
    }
}

fn js(e: tnp_core::TnpError) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
impl Predictor {
    #[wasm_bindgen(js_name = newUntrained)]
    pub fn new_untrained(variant: &str, seed: u32) -> std::result::Result<Predictor, JsValue> {
        Self::untrained(variant, seed as u64).map_err(js)
    }

    #[wasm_bindgen(js_name = fromBytes)]
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Predictor, JsValue> {
        Self::from_file_bytes(bytes).map_err(js)
    }

    pub fn name(&self) -> String {
        self.model.name()
    }

    pub fn predict(&self, cx: &[f64], cy: &[f64], tx: &[f64]) -> std::result::Result<Vec<f64>, JsValue> {
        self.marginals(cx, cy, tx).map_err(js)
    }
}

#[wasm_bindgen(js_name = maskGrid)]
pub fn mask_grid(variant: &str, m: usize, nt: usize) -> std::result::Result<Vec<u8>, JsValue> {
    mask_cells(variant, m, nt).map_err(js)
}

#[wasm_bindgen(js_name = gpSample)]
pub fn gp_sample(kernel: &str, lengthscale: f64, n: usize, seed: u32) -> std::result::Result<Vec<f64>, JsValue> {
    gp_values(kernel, lengthscale, n, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = inputGrid)]
pub fn input_grid_js(n: usize) -> Vec<f64> {
    input_grid(n)
}
