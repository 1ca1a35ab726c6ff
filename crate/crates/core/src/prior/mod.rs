//! Toy conditional diffusion prior and its optimizable conceptual space.

mod concept;
mod denoiser;
mod lora;
mod sampler;
mod schedule;
mod train;

pub use concept::{make_concept, ComponentSpec, ConceptDataset, ConceptSpec, ConceptVariation};
pub use denoiser::{bias_name, time_embedding, weight_name, DenoiserDims, DenoiserNet, NetNodes};
pub use lora::{
    adapter_names, apply_lora, AdapterConfig, ConceptualSpace, LoraAdapter, SpaceSelection, TokenEmbedding,
    TOKEN_PARAM,
};
pub use sampler::{reverse_pass, sample_prior, sample_prior_batch, SamplerGraph, DEFAULT_SAMPLE_STEPS};
pub use schedule::{NoiseSchedule, ScheduleSpec};
pub use train::{train_prior, TrainConfig, TrainOutcome};
