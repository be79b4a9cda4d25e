use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::irt::ItemParameters;

/// Affine map `θ* = A·θ + B` between two ability metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkTransform {
    #[serde(rename = "A")]
    pub scale: f64,
    #[serde(rename = "B")]
    pub shift: f64,
}

impl LinkTransform {
    pub const IDENTITY: Self = Self { scale: 1.0, shift: 0.0 };

    pub fn new(scale: f64, shift: f64) -> Result<Self, CalibrationError> {
        if !(scale.is_finite() && scale > 0.0 && shift.is_finite()) {
            return Err(CalibrationError::DegenerateLink(format!("invalid transform A={scale}, B={shift}")));
        }
        Ok(Self { scale, shift })
    }

    pub fn apply_theta(&self, theta: f64) -> f64 {
        self.scale * theta + self.shift
    }

    pub fn inverse(&self) -> Self {
        Self { scale: 1.0 / self.scale, shift: -self.shift / self.scale }
    }
}

fn population_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean-sigma transform carrying `theta_k`'s metric onto `theta_ref`'s, using
/// the same persons in the same order on both sides.
pub fn mean_sigma_link(theta_ref: &[f64], theta_k: &[f64]) -> Result<LinkTransform, CalibrationError> {
    if theta_ref.len() != theta_k.len() {
        return Err(CalibrationError::DegenerateLink(format!(
            "{} reference abilities vs {} partition abilities",
            theta_ref.len(),
            theta_k.len()
        )));
    }
    if theta_ref.is_empty() {
        return Err(CalibrationError::DegenerateLink("no common persons".into()));
    }
    let (mean_ref, sd_ref) = population_moments(theta_ref);
    let (mean_k, sd_k) = population_moments(theta_k);
    if !(sd_k > 0.0) {
        return Err(CalibrationError::DegenerateLink("partition abilities have zero spread".into()));
    }
    let scale = sd_ref / sd_k;
    LinkTransform::new(scale, mean_ref - scale * mean_k)
}

/// Re-expresses item parameters on the target metric: `a/A`, `A·b + B`, `c`.
pub fn apply_link(params: &ItemParameters, t: &LinkTransform) -> ItemParameters {
    ItemParameters { a: params.a / t.scale, b: t.scale * params.b + t.shift, c: params.c }
}
