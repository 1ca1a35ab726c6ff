use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParameterSet};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserDims {
    /// Embedding dimension `m`.
    pub dim: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for DenoiserDims {
    fn default() -> Self {
        Self { dim: 16, cond_dim: 8, time_dim: 8, hidden: vec![64, 64] }
    }
}

impl DenoiserDims {
    pub fn input_len(&self) -> usize {
        self.dim + self.time_dim + self.cond_dim
    }

    /// `(rows, cols)` of every affine weight, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_len()];
        widths.extend(&self.hidden);
        widths.push(self.dim);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.cond_dim == 0 || self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config("denoiser dims must be positive and time_dim even".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("net.{layer}.w")
}

pub fn bias_name(layer: usize) -> String {
    format!("net.{layer}.b")
}

/// Sinusoidal embedding of an integer timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// MLP noise predictor `eps(x_t, t, cond)` over `[x_t, temb(t), cond]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet {
    pub dims: DenoiserDims,
    pub params: ParameterSet,
}

/// Graph handles of one low-rank adapter: `(A, B, scale)`.
pub type AdapterNodes = (NodeId, NodeId, f64);

/// Graph handles of the net's weights, shared across timesteps.
#[derive(Debug, Clone)]
pub struct NetNodes {
    layers: Vec<(NodeId, NodeId, Option<AdapterNodes>)>,
}

impl DenoiserNet {
    /// Uniform init in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn new(dims: DenoiserDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = ParameterSet::new();
        for (l, (p, q)) in dims.layer_shapes().into_iter().enumerate() {
            let bound = 1.0 / (q as f64).sqrt();
            let w: Vec<f64> = (0..p * q).map(|_| rng.random_range(-bound..bound)).collect();
            let b: Vec<f64> = (0..p).map(|_| rng.random_range(-bound..bound)).collect();
            params.insert(weight_name(l), Tensor::matrix(p, q, w)?, true)?;
            params.insert(bias_name(l), Tensor::vector(b), true)?;
        }
        Ok(Self { dims, params })
    }

    pub fn layers(&self) -> usize {
        self.dims.hidden.len() + 1
    }

    /// Checks that `params` has every weight at the expected shape.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for (l, (p, q)) in self.dims.layer_shapes().into_iter().enumerate() {
            if self.params.by_name(&weight_name(l))?.shape() != [p, q]
                || self.params.by_name(&bias_name(l))?.shape() != [p]
            {
                return Err(Error::Shape(format!("denoiser layer {l} has the wrong shape")));
            }
        }
        Ok(())
    }

    /// Adds this net's weights (and any adapters) to `g`. `params` must hold
    /// the net's tensors under their usual names; `adapters[l]` names the
    /// `(A, B)` parameters and scale of layer `l`, if adapted.
    pub fn param_nodes(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        adapters: &[Option<(String, String, f64)>],
    ) -> Result<NetNodes> {
        let mut layers = Vec::with_capacity(self.layers());
        for l in 0..self.layers() {
            let w = g.param(params, &weight_name(l))?;
            let b = g.param(params, &bias_name(l))?;
            let lora = match adapters.get(l) {
                Some(Some((a, bb, s))) => Some((g.param(params, a)?, g.param(params, bb)?, *s)),
                _ => None,
            };
            layers.push((w, b, lora));
        }
        Ok(NetNodes { layers })
    }

    /// Coefficient of the skip path: the noise prediction is
    /// `sqrt(1 - abar_t) x_t + mlp(x_t, temb, cond)`, which is exact for
    /// unit-variance data with the MLP at zero.
    pub fn skip_coefficient(alpha_bar: f64) -> f64 {
        (1.0 - alpha_bar).sqrt()
    }

    /// Appends the noise prediction for `x`, time embedding `temb` and
    /// condition `cond`. `skip` must hold `skip_coefficient(abar_t) * x`.
    pub fn eps(&self, g: &mut Graph, nodes: &NetNodes, x: NodeId, temb: NodeId, cond: NodeId, skip: NodeId) -> Result<NodeId> {
        let mut h = g.concat(&[x, temb, cond])?;
        let last = nodes.layers.len() - 1;
        for (l, (w, b, lora)) in nodes.layers.iter().enumerate() {
            let mut y = g.affine(*w, h, *b)?;
            if let Some((a, bb, s)) = lora {
                let ah = g.matvec(*a, h)?;
                let bah = g.matvec(*bb, ah)?;
                let delta = g.scale(bah, *s)?;
                y = g.add(y, delta)?;
            }
            h = if l == last { y } else { g.silu(y)? };
        }
        g.add(h, skip)
    }
}
