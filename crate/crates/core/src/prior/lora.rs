use rand::Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::DenoiserDims;
use crate::autodiff::ParameterSet;
use crate::error::{Error, Result};
use crate::rng::{noise_from_seed, rng_from_seed, substream, streams};
use crate::tensor::Tensor;

pub const TOKEN_PARAM: &str = "space.token";

pub fn adapter_names(layer: usize) -> (String, String) {
    (format!("space.lora.{layer}.a"), format!("space.lora.{layer}.b"))
}

/// Learned condition vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedding {
    pub values: Vec<f64>,
    /// Name of the base concept vector this was copied from.
    pub source: String,
}

impl TokenEmbedding {
    /// Base vector of a concept: standard-normal entries seeded by the id.
    pub fn from_concept(id: &str, dim: usize) -> Self {
        let seed = substream(0, &format!("{}:{id}", streams::CONCEPT));
        Self { values: noise_from_seed(seed, dim), source: id.to_string() }
    }
}

/// Low-rank update `s * B A` of one `p x q` weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub layer: usize,
    pub rank: usize,
    pub scale: f64,
    /// `rank x q`.
    pub a: Tensor,
    /// `p x rank`.
    pub b: Tensor,
}

impl LoraAdapter {
    /// `A` uniform in `+-1/sqrt(q)`, `B` exactly zero.
    pub fn init(layer: usize, p: usize, q: usize, rank: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("adapter rank must be positive".into()));
        }
        let bound = 1.0 / (q as f64).sqrt();
        let a: Vec<f64> = (0..rank * q).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self {
            layer,
            rank,
            scale,
            a: Tensor::matrix(rank, q, a)?,
            b: Tensor::zeros(vec![p, rank]),
        })
    }
}

/// `W + s * B A`.
pub fn apply_lora(w: &Tensor, adapter: &LoraAdapter) -> Result<Tensor> {
    let (p, q) = match w.shape() {
        [p, q] => (*p, *q),
        s => return Err(Error::Shape(format!("weight has shape {s:?}"))),
    };
    let r = adapter.rank;
    if adapter.a.shape() != [r, q] || adapter.b.shape() != [p, r] {
        return Err(Error::Shape(format!(
            "adapter A {:?} / B {:?} incompatible with {p}x{q} weight at rank {r}",
            adapter.a.shape(),
            adapter.b.shape()
        )));
    }
    let wm = w.to_dmatrix()?;
    let delta = adapter.b.to_dmatrix()? * adapter.a.to_dmatrix()?;
    Ok(Tensor::from_dmatrix(&(wm + delta * adapter.scale)))
}

/// Which parts of the conceptual space are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceSelection {
    Token,
    Adapters,
    #[default]
    Both,
}

impl SpaceSelection {
    pub fn token(self) -> bool {
        matches!(self, Self::Token | Self::Both)
    }

    pub fn adapters(self) -> bool {
        matches!(self, Self::Adapters | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub rank: usize,
    pub scale: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { rank: 10, scale: 1.0 }
    }
}

/// Token embedding plus optional adapters on every denoiser weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptualSpace {
    pub token: TokenEmbedding,
    pub adapters: Vec<LoraAdapter>,
    pub selection: SpaceSelection,
}

impl ConceptualSpace {
    /// Adapters are created only when the selection optimizes them; rank is
    /// capped at each weight's smaller side.
    pub fn new(token: TokenEmbedding, dims: &DenoiserDims, selection: SpaceSelection, cfg: AdapterConfig, seed: u64) -> Result<Self> {
        if token.values.len() != dims.cond_dim {
            return Err(Error::DimensionMismatch { expected: dims.cond_dim, got: token.values.len() });
        }
        let mut adapters = Vec::new();
        if selection.adapters() {
            let mut rng = rng_from_seed(substream(seed, streams::ADAPTER_INIT));
            for (l, (p, q)) in dims.layer_shapes().into_iter().enumerate() {
                adapters.push(LoraAdapter::init(l, p, q, cfg.rank.min(p).min(q), cfg.scale, &mut rng)?);
            }
        }
        Ok(Self { token, adapters, selection })
    }

    pub fn token_only(token: TokenEmbedding) -> Self {
        Self { token, adapters: Vec::new(), selection: SpaceSelection::Token }
    }

    /// Adapter parameter names and scales by layer, for graph construction.
    pub fn adapter_slots(&self, layers: usize) -> Vec<Option<(String, String, f64)>> {
        let mut slots = vec![None; layers];
        for ad in &self.adapters {
            let (a, b) = adapter_names(ad.layer);
            slots[ad.layer] = Some((a, b, ad.scale));
        }
        slots
    }

    /// Adds the space's tensors to `set`, trainable per the selection.
    pub fn insert_into(&self, set: &mut ParameterSet) -> Result<()> {
        set.insert(TOKEN_PARAM, Tensor::vector(self.token.values.clone()), self.selection.token())?;
        for ad in &self.adapters {
            let (a, b) = adapter_names(ad.layer);
            set.insert(a, ad.a.clone(), self.selection.adapters())?;
            set.insert(b, ad.b.clone(), self.selection.adapters())?;
        }
        Ok(())
    }

    /// Overwrites `set` with this space's current values.
    pub fn write_into(&self, set: &mut ParameterSet) -> Result<()> {
        let id = set.id(TOKEN_PARAM)?;
        set.set(id, Tensor::vector(self.token.values.clone()))?;
        for ad in &self.adapters {
            let (a, b) = adapter_names(ad.layer);
            let (ia, ib) = (set.id(&a)?, set.id(&b)?);
            set.set(ia, ad.a.clone())?;
            set.set(ib, ad.b.clone())?;
        }
        Ok(())
    }

    /// Reads the space's values back from `set`.
    pub fn read_from(&mut self, set: &ParameterSet) -> Result<()> {
        self.token.values = set.by_name(TOKEN_PARAM)?.data().to_vec();
        for ad in &mut self.adapters {
            let (a, b) = adapter_names(ad.layer);
            ad.a = set.by_name(&a)?.clone();
            ad.b = set.by_name(&b)?.clone();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.token.values.iter().all(|v| v.is_finite()) && self.adapters.iter().all(|a| a.a.is_finite() && a.b.is_finite())
    }
}
