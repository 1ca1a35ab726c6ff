use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-beta forward noising schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            train_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.13,
        }
    }
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        NoiseSchedule::linear(spec)
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        s.spec
    }
}

impl NoiseSchedule {
    pub fn linear(spec: ScheduleSpec) -> Result<Self> {
        let t = spec.train_steps;
        if t < 1 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let betas: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    spec.beta_start
                } else {
                    spec.beta_start + (spec.beta_end - spec.beta_start) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Config("betas must lie strictly inside (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(t);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { spec, betas, alpha_bars })
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `e_t = sqrt(abar_t) e + sqrt(1 - abar_t) eps`.
    pub fn noise(&self, e: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bars[t];
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        e.iter().zip(eps).map(|(x, n)| a * x + s * n).collect()
    }

    /// Evenly spaced sampling timesteps, from the noisiest down:
    /// `(i + 1) * T / steps - 1` for `i = steps - 1, ..., 0`.
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.train_steps();
        if steps == 0 || steps > t {
            return Err(Error::Config(format!("sampling steps must be in 1..={t}, got {steps}")));
        }
        Ok((0..steps).rev().map(|i| ((i + 1) * t) / steps - 1).collect())
    }
}
