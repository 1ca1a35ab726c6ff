use rayon::prelude::*;

use super::denoiser::{time_embedding, DenoiserNet};
use super::lora::{ConceptualSpace, TOKEN_PARAM};
use super::schedule::NoiseSchedule;
use crate::autodiff::{Graph, NodeId, ParameterSet};
use crate::density::EmbeddingSample;
use crate::error::Result;
use crate::rng::{derive_seed, noise_from_seed};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_STEPS: usize = 5;

/// The full deterministic reverse pass recorded as one graph.
///
/// Input slot 0 is the starting noise. The net's weights are frozen; the
/// conceptual space is trainable per its selection. Callers may append
/// loss nodes to `graph` after `output`.
#[derive(Debug, Clone)]
pub struct SamplerGraph {
    pub graph: Graph,
    pub params: ParameterSet,
    pub noise: NodeId,
    pub output: NodeId,
    dim: usize,
}

impl SamplerGraph {
    pub fn new(net: &DenoiserNet, schedule: &NoiseSchedule, space: &ConceptualSpace, steps: usize) -> Result<Self> {
        net.validate()?;
        let timesteps = schedule.sampling_timesteps(steps)?;
        let mut params = ParameterSet::new();
        for (_, p) in net.params.iter() {
            params.insert(p.name.clone(), p.tensor.clone(), false)?;
        }
        space.insert_into(&mut params)?;

        let mut g = Graph::new();
        let dim = net.dims.dim;
        let noise = g.input(dim);
        let nodes = net.param_nodes(&mut g, &params, &space.adapter_slots(net.layers()))?;
        let cond = g.param(&params, TOKEN_PARAM)?;
        let output = reverse_pass(&mut g, schedule, &timesteps, noise, |g, x, t| {
            let temb = g.constant(Tensor::vector(time_embedding(t, net.dims.time_dim)));
            let skip = g.scale(x, DenoiserNet::skip_coefficient(schedule.alpha_bar(t)))?;
            net.eps(g, &nodes, x, temb, cond, skip)
        })?;
        Ok(Self { graph: g, params, noise, output, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Forward pass from the noise of `noise_seed`; returns the sample.
    pub fn run(&mut self, noise_seed: u64) -> Result<Vec<f64>> {
        let z = noise_from_seed(noise_seed, self.dim);
        self.graph.forward(&[&z], &self.params)?;
        Ok(self.graph.value(self.output)?.to_vec())
    }

    pub fn load_space(&mut self, space: &ConceptualSpace) -> Result<()> {
        space.write_into(&mut self.params)
    }
}

/// Appends deterministic DDIM updates over `timesteps` (noisiest first),
/// starting from `start`. `eps` appends the noise prediction at `(x, t)`.
/// The final step returns the clean estimate `x0` directly.
pub fn reverse_pass<F>(g: &mut Graph, schedule: &NoiseSchedule, timesteps: &[usize], start: NodeId, mut eps: F) -> Result<NodeId>
where
    F: FnMut(&mut Graph, NodeId, usize) -> Result<NodeId>,
{
    let mut x = start;
    for (i, &t) in timesteps.iter().enumerate() {
        let e = eps(g, x, t)?;
        let ab = schedule.alpha_bar(t);
        let noisy = g.scale(e, (1.0 - ab).sqrt())?;
        let diff = g.sub(x, noisy)?;
        let x0 = g.scale(diff, 1.0 / ab.sqrt())?;
        match timesteps.get(i + 1) {
            Some(&prev) => {
                let abp = schedule.alpha_bar(prev);
                let signal = g.scale(x0, abp.sqrt())?;
                let noise_part = g.scale(e, (1.0 - abp).sqrt())?;
                x = g.add(signal, noise_part)?;
            }
            None => return Ok(x0),
        }
    }
    Ok(x)
}

/// One sample from the noise of `noise_seed`.
pub fn sample_prior(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    space: &ConceptualSpace,
    steps: usize,
    noise_seed: u64,
) -> Result<EmbeddingSample> {
    let mut s = SamplerGraph::new(net, schedule, space, steps)?;
    EmbeddingSample::new(s.run(noise_seed)?)
}

/// `n` samples with seeds `derive_seed(base_seed, i)`. Forward passes only;
/// the result does not depend on how the work is split across threads.
pub fn sample_prior_batch(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    space: &ConceptualSpace,
    steps: usize,
    n: usize,
    base_seed: u64,
) -> Result<Vec<EmbeddingSample>> {
    let template = SamplerGraph::new(net, schedule, space, steps)?;
    (0..n as u64)
        .into_par_iter()
        .map_init(
            || template.clone(),
            |s, i| EmbeddingSample::new(s.run(derive_seed(base_seed, i))?),
        )
        .collect()
}
