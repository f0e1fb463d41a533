//! Signal-dependent sensor noise model.
//!
//! A raw value at mean level `mu` (normalized so the white point is 1.0) is
//! treated as normal with variance `alpha * mu + beta`: the affine term
//! aggregates photon shot noise amplified by gain (`alpha`) and
//! signal-independent readout/quantization noise (`beta`). Both coefficients
//! are per color channel and per gain setting.
//!
//! For log-domain work the first-order (delta method) moments of `ln Y` are
//! used: mean `ln mu`, variance `(alpha*mu + beta) / mu^2`. The approximation
//! is good when `mu` is large against the noise std; callers are expected to
//! mask values near the noise floor before relying on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel noise coefficients for one gain (ISO) setting, in normalized
/// sensor units (white point = 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParameters {
    pub iso: u32,
    /// Signal-proportional variance coefficient, per channel [R, G, B].
    pub alpha: [f64; 3],
    /// Signal-independent variance floor, per channel [R, G, B].
    pub beta: [f64; 3],
}

impl NoiseParameters {
    /// Channel coefficients `(alpha, beta)`. Single-channel images use the
    /// green column, the channel with the strongest sampling on a Bayer
    /// sensor.
    pub fn channel(&self, c: usize, image_channels: usize) -> (f64, f64) {
        let idx = if image_channels == 1 { 1 } else { c };
        (self.alpha[idx], self.beta[idx])
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.alpha.iter().chain(self.beta.iter()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Domain(format!(
                    "noise coefficients must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A named set of per-ISO noise parameters for one camera.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub name: String,
    pub entries: Vec<NoiseParameters>,
}

impl NoiseProfile {
    /// Exact-ISO lookup. There is no interpolation between gain settings:
    /// the coefficients are calibrated per setting and do not vary linearly.
    pub fn lookup(&self, iso: u32) -> Result<&NoiseParameters> {
        self.entries
            .iter()
            .find(|e| e.iso == iso)
            .ok_or_else(|| Error::UnknownIso {
                iso,
                profile: self.name.clone(),
                available: self.entries.iter().map(|e| e.iso).collect(),
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Domain(format!(
                "noise profile {:?} has no entries",
                self.name
            )));
        }
        for e in &self.entries {
            e.validate()?;
        }
        Ok(())
    }
}

impl NoiseProfile {
    /// Built-in compact-camera profile (Canon PowerShot S100 class),
    /// normalized sensor range [0, 1].
    pub fn canon_s100() -> NoiseProfile {
        NoiseProfile {
            name: "canon-s100".into(),
            entries: vec![
                NoiseParameters {
                    iso: 100,
                    alpha: [2.46e-5, 1.67e-5, 7.41e-5],
                    beta: [3.58e-8, 2.13e-8, 1.28e-7],
                },
                NoiseParameters {
                    iso: 200,
                    alpha: [4.57e-5, 3.02e-5, 1.32e-4],
                    beta: [9.89e-8, 6.07e-8, 2.66e-7],
                },
                NoiseParameters {
                    iso: 400,
                    alpha: [9.12e-5, 5.95e-5, 2.59e-4],
                    beta: [2.21e-7, 1.72e-7, 5.61e-7],
                },
                NoiseParameters {
                    iso: 800,
                    alpha: [1.85e-4, 1.19e-4, 5.26e-4],
                    beta: [4.94e-7, 4.28e-7, 1.14e-6],
                },
            ],
        }
    }
}

/// Variance of a raw value with mean `mu`: `alpha * mu + beta`.
pub fn pixel_variance(mu: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Domain(format!(
            "pixel_variance needs mu >= 0, got {mu}"
        )));
    }
    Ok(alpha * mu + beta)
}

/// Delta-method moments of `ln Y` for an observed (or mean) value `y > 0`:
/// `(ln y, (alpha*y + beta) / y^2)`.
pub fn log_moments(y: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Domain(format!("log_moments needs y > 0, got {y}")));
    }
    Ok((y.ln(), (alpha * y + beta) / (y * y)))
}

/// Inverse-variance weight of a log-ratio row built from observations
/// `y_i`, `y_j`: the reciprocal of the summed log-domain variances.
pub fn row_weight_calibrated(
    y_i: f64,
    y_j: f64,
    params_i: (f64, f64),
    params_j: (f64, f64),
) -> Result<f64> {
    let (_, var_i) = log_moments(y_i, params_i.0, params_i.1)?;
    let (_, var_j) = log_moments(y_j, params_j.0, params_j.1)?;
    Ok(1.0 / (var_i + var_j))
}

/// Calibration-free weight `(1/y_i + 1/y_j)^-1`: proportional to the
/// calibrated weight when noise is purely signal-dependent (`beta = 0`) and
/// both channels share `alpha`.
pub fn row_weight_calibration_free(y_i: f64, y_j: f64) -> Result<f64> {
    if !(y_i.is_finite() && y_i > 0.0 && y_j.is_finite() && y_j > 0.0) {
        return Err(Error::Domain(format!(
            "calibration-free weight needs positive observations, got {y_i}, {y_j}"
        )));
    }
    Ok(1.0 / (1.0 / y_i + 1.0 / y_j))
}
