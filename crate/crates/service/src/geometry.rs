use serde::{Deserialize, Serialize};

use tailseek_core::density::GaussianDensity;

/// Ellipse in the first two reduced coordinates. `axes` are semi-axis
/// lengths; `angle` rotates the first axis counter-clockwise, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle: f64,
}

impl Ellipse {
    pub fn is_valid(&self) -> bool {
        self.center.iter().chain(&self.axes).all(|v| v.is_finite())
            && self.angle.is_finite()
            && self.axes.iter().all(|a| *a > 0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.axes[0];
        let v = (-dx * s + dy * c) / self.axes[1];
        u * u + v * v <= 1.0
    }

    /// The 2-sigma ellipse of a density's marginal over the first two
    /// coordinates.
    pub fn two_sigma(g: &GaussianDensity) -> Self {
        let mean = g.mean();
        let cov = g.covariance();
        let center = [mean[0], if mean.len() > 1 { mean[1] } else { 0.0 }];
        if mean.len() < 2 {
            let s = 2.0 * cov[(0, 0)].sqrt();
            return Self { center, axes: [s, s], angle: 0.0 };
        }
        let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let (l1, l2) = (mid + rad, (mid - rad).max(0.0));
        Self { center, axes: [2.0 * l1.sqrt(), 2.0 * l2.sqrt()], angle: 0.5 * (2.0 * b).atan2(a - c) }
    }
}

/// At most `max` evenly strided points.
pub fn downsample(points: &[[f64; 2]], max: usize) -> Vec<[f64; 2]> {
    if points.len() <= max {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max);
    points.iter().step_by(stride).copied().collect()
}

pub fn first_two(row: &[f64]) -> [f64; 2] {
    [row.first().copied().unwrap_or(0.0), row.get(1).copied().unwrap_or(0.0)]
}
