use serde::{Deserialize, Serialize};

use super::concept::ConceptDataset;
use super::denoiser::{time_embedding, DenoiserNet};
use super::lora::TokenEmbedding;
use super::schedule::NoiseSchedule;
use crate::autodiff::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::rng::{rng_from_seed, standard_normal_vec};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub grad_clip_norm: f64,
    /// Cosine-anneal the learning rate to zero over `steps`.
    #[serde(default)]
    pub cosine_decay: bool,
    /// Linear learning-rate warmup length.
    #[serde(default)]
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            optimizer: AdamWConfig { lr: 5e-3, weight_decay: 0.0, ..AdamWConfig::default() },
            grad_clip_norm: 1.0,
            cosine_decay: true,
            warmup_steps: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DenoiserNet,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Minimises `E ||eps - eps_theta(e_t, t, cond)||^2 / m` over draws of the
/// concept, uniform timesteps and standard-normal noise.
pub fn train_prior(
    net: &DenoiserNet,
    data: &ConceptDataset,
    schedule: &NoiseSchedule,
    condition: &TokenEmbedding,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    net.validate()?;
    let m = net.dims.dim;
    if data.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, got: data.dim() });
    }
    if condition.values.len() != net.dims.cond_dim {
        return Err(Error::DimensionMismatch { expected: net.dims.cond_dim, got: condition.values.len() });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut net = net.clone();
    for id in net.params.iter().map(|(id, _)| id).collect::<Vec<_>>() {
        net.params.set_trainable(id, true);
    }
    let mut g = Graph::new();
    let x = g.input(m);
    let temb = g.input(net.dims.time_dim);
    let target = g.input(m);
    let skip = g.input(m);
    if data.variation_dim().is_some_and(|d| d != net.dims.cond_dim) {
        return Err(Error::Config("concept variation width does not match the condition dimension".into()));
    }
    let cond = g.input(net.dims.cond_dim);
    let nodes = net.param_nodes(&mut g, &net.params, &[])?;
    let pred = net.eps(&mut g, &nodes, x, temb, cond, skip)?;
    let diff = g.sub(pred, target)?;
    let sq = g.dot(diff, diff)?;
    let loss = g.scale(sq, 1.0 / m as f64)?;

    let ids = net.params.trainable_ids();
    let mut rng = rng_from_seed(seed);
    let mut state = AdamWState::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let weight = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        let mut grads = Gradients::zeros_like(&net.params);
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let (z, e) = data.draw_varied(&mut rng);
            let mut c0 = condition.values.clone();
            for (c, dz) in c0.iter_mut().zip(&z) {
                *c += dz;
            }
            let t = rng.random_range(0..schedule.train_steps());
            let eps = standard_normal_vec(&mut rng, m);
            let xt = schedule.noise(&e, &eps, t);
            let te = time_embedding(t, net.dims.time_dim);
            let c = DenoiserNet::skip_coefficient(schedule.alpha_bar(t));
            let sk: Vec<f64> = xt.iter().map(|v| c * v).collect();
            g.forward(&[&xt, &te, &eps, &sk, &c0], &net.params).map_err(|_| Error::Diverged { step })?;
            total += g.scalar(loss)?;
            grads.accumulate(&g.backward_scalar(loss, &net.params)?, weight);
        }
        let mean = total * weight;
        if !mean.is_finite() || !grads.is_finite(&ids) {
            return Err(Error::Diverged { step });
        }
        grads.clip_norm(&ids, cfg.grad_clip_norm);
        let mut opt = cfg.optimizer;
        if step < cfg.warmup_steps {
            opt.lr *= (step + 1) as f64 / cfg.warmup_steps as f64;
        }
        if cfg.cosine_decay {
            opt.lr *= 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        }
        adamw_step(&mut net.params, &grads, &mut state, &opt).map_err(|_| Error::Diverged { step })?;
        losses.push(mean);
    }
    Ok(TrainOutcome { net, losses })
}
