use rand::seq::index::sample;

use super::params::{Gradients, ParamId, ParameterSet};
use crate::error::Result;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so that coordinates with
    /// near-zero gradient are judged on absolute error.
    pub floor: f64,
    /// Above this many trainable scalars only `sampled_coords` are checked.
    pub exhaustive_limit: usize,
    pub sampled_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            exhaustive_limit: 1000,
            sampled_coords: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(param, flat index)` of the worst coordinate.
    pub worst: Option<(ParamId, usize)>,
}

/// Compares `analytic` against central finite differences of `f` around
/// `params`, coordinate by coordinate over the trainable parameters.
pub fn grad_check<F>(
    mut f: F,
    params: &ParameterSet,
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    let coords: Vec<(ParamId, usize)> = params
        .trainable_ids()
        .into_iter()
        .flat_map(|id| (0..params.tensor(id).len()).map(move |j| (id, j)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = if coords.len() > opts.exhaustive_limit {
        let mut rng = rng_from_seed(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), opts.sampled_coords.min(coords.len())).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: chosen.len(),
        worst: None,
    };
    for (id, j) in chosen {
        let x0 = params.tensor(id).data()[j];
        probe.values_mut(id)[j] = x0 + opts.step;
        let plus = f(&probe)?;
        probe.values_mut(id)[j] = x0 - opts.step;
        let minus = f(&probe)?;
        probe.values_mut(id)[j] = x0;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic.param(id).data()[j];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some((id, j));
        }
    }
    Ok(report)
}
