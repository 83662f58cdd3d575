//! Named parameter storage and the layers built on the tape: affine maps, MLPs, layer norm,
//! multi-head masked self-attention and pre-norm transformer blocks.

use std::ops::Index;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AttentionLayout, Graph, Var};
use crate::error::{Result, TnpError};
use crate::mask::MaskSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter arrays. Order is the registration order and is stable for a given
/// architecture, which the optimizer and the model file format rely on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor by the same-named entry of `other`, checking shapes.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.len() {
            return Err(TnpError::Format(format!(
                "expected {} arrays, found {}",
                self.len(),
                other.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = other
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| TnpError::Format(format!("missing array {name}")))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(TnpError::Format(format!(
                    "array {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Puts every parameter on the tape; differentiable iff `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| {
                    if trainable {
                        g.param(t.clone())
                    } else {
                        g.constant(t.clone())
                    }
                })
                .collect(),
        )
    }
}

/// Parameter handles on one graph.
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Keep-masks for dropout during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        g.dropout(x, Rc::new(mask))
    }
}

pub(crate) fn apply_dropout(drop: &mut Option<Dropout>, g: &mut Graph, x: Var) -> Result<Var> {
    match drop {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.weight])?;
        g.add_bias(y, p[self.bias])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            other => Err(TnpError::Config(format!("unknown activation '{other}'"))),
        }
    }

    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Self::Relu => g.relu(x),
            Self::Softplus => g.softplus(x),
        }
    }
}

/// Affine layers with an activation between consecutive layers; the last layer is affine.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(TnpError::Config(format!("bad MLP widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i < last {
                x = self.activation.apply(g, x);
            }
        }
        Ok(x)
    }
}

/// Evaluates an MLP with the given parameters on a row-major input matrix.
pub fn mlp_forward(mlp: &Mlp, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
    if input.cols() != mlp.in_width() {
        return Err(TnpError::Dimension(format!(
            "MLP expects width {}, input has {}",
            mlp.in_width(),
            input.cols()
        )));
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(input.clone());
    let y = mlp.forward(&mut g, &p, x)?;
    Ok(g.value(y).clone())
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(
            format!("{name}.gain"),
            Tensor::new(vec![width], vec![1.0; width]).expect("shape"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[width]));
        Self { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gain], p[self.bias])
    }
}

/// Multi-head self-attention: fused query/key/value projection, masked attention, output
/// projection.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl AttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(TnpError::Config(format!(
                "d_model {d_model} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), d_model, 3 * d_model),
            out: Linear::new(store, rng, &format!("{name}.out"), d_model, d_model),
            heads,
            d_model,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        layout: &Rc<AttentionLayout>,
    ) -> Result<Var> {
        let qkv = self.qkv.forward(g, p, x)?;
        let att = g.attention(qkv, layout.clone(), self.heads)?;
        self.out.forward(g, p, att)
    }
}

/// Applies one attention layer to a token matrix under `mask`.
pub fn scaled_dot_attention(
    layer: &AttentionLayer,
    store: &ParamStore,
    tokens: &Tensor,
    mask: &MaskSpec,
) -> Result<Tensor> {
    if tokens.cols() != layer.d_model || tokens.rows() != mask.len() {
        return Err(TnpError::Dimension(format!(
            "tokens {:?} vs d_model {} and mask of {}",
            tokens.shape(),
            layer.d_model,
            mask.len()
        )));
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(tokens.clone());
    let layout = Rc::new(AttentionLayout::single(mask.clone()));
    let y = layer.forward(&mut g, &p, x, &layout)?;
    Ok(g.value(y).clone())
}

/// Pre-norm block: `x + Attn(LN(x))`, then `x + FF(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: AttentionLayer,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        heads: usize,
        ff_width: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            attn: AttentionLayer::new(store, rng, &format!("{name}.attn"), d_model, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d_model, ff_width),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), ff_width, d_model),
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        layout: &Rc<AttentionLayout>,
        drop: &mut Option<Dropout>,
    ) -> Result<Var> {
        let h = self.norm1.forward(g, p, x)?;
        let h = self.attn.forward(g, p, h, layout)?;
        let h = apply_dropout(drop, g, h)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, p, x)?;
        let h = self.ff1.forward(g, p, h)?;
        let h = g.relu(h);
        let h = self.ff2.forward(g, p, h)?;
        let h = apply_dropout(drop, g, h)?;
        g.add(x, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn activation_names() {
        assert_eq!(Activation::parse("relu").unwrap(), Activation::Relu);
        assert!(matches!(Activation::parse("swish"), Err(TnpError::Config(_))));
    }

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, &mut rng, "l", 10, 6);
        let a = (6.0f64 / 16.0).sqrt();
        assert!(store.get(lin.weight).data().iter().all(|w| w.abs() <= a));
        assert!(store.get(lin.bias).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AttentionLayer::new(&mut store, &mut rng, "a", 10, 3).is_err());
    }
}
