//! Exposure stacks and the photometric capture model.
//!
//! A raw value is modeled as the scene radiance scaled by a per-image
//! constant `d = t * g * pi * (f / (2a))^2` (exposure time, gain, focal
//! length, f-number aperture) and clipped to the sensor range. When the focal
//! length is unknown the lens term is dropped (`d = t * g`); the term is
//! shared across a stack shot with one lens, so ratios are unaffected.
//! All log-domain quantities are natural logarithms.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::io::{meta, pfm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    /// Exposure time in seconds.
    pub exposure_time: f64,
    /// Unitless gain multiplier (1.0 at base ISO).
    pub gain: f64,
    /// Aperture as an f-number.
    #[serde(rename = "aperture")]
    pub aperture_fnumber: f64,
    /// Focal length in the same length unit as the aperture diameter.
    #[serde(default)]
    pub focal_length: Option<f64>,
    /// Saturation level in raw units (before black subtraction).
    pub white_level: f64,
    /// Fixed offset present in raw values.
    pub black_level: f64,
}

impl CaptureMetadata {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidMetadata(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
            Ok(())
        };
        check("exposure_time", self.exposure_time)?;
        check("gain", self.gain)?;
        check("aperture", self.aperture_fnumber)?;
        if let Some(f) = self.focal_length {
            check("focal_length", f)?;
        }
        if !(self.black_level.is_finite() && self.black_level >= 0.0) {
            return Err(Error::InvalidMetadata(format!(
                "black_level must be non-negative, got {}",
                self.black_level
            )));
        }
        if !(self.white_level.is_finite() && self.white_level > self.black_level) {
            return Err(Error::InvalidMetadata(format!(
                "white_level ({}) must exceed black_level ({})",
                self.white_level, self.black_level
            )));
        }
        Ok(())
    }

    /// Radiance-to-raw scaling constant.
    pub fn scaling_constant(&self) -> Result<f64> {
        self.validate()?;
        let base = self.exposure_time * self.gain;
        Ok(match self.focal_length {
            Some(f) => {
                let r = f / (2.0 * self.aperture_fnumber);
                base * PI * r * r
            }
            None => base,
        })
    }

    /// Convenience constructor for normalized synthetic captures
    /// (white = 1.0, black = 0, unit gain and aperture, no lens term).
    pub fn synthetic(exposure_time: f64) -> Self {
        Self {
            exposure_time,
            gain: 1.0,
            aperture_fnumber: 1.0,
            focal_length: None,
            white_level: 1.0,
            black_level: 0.0,
        }
    }
}

/// A set of differently exposed captures of one scene, sorted by scaling
/// constant (shortest first). Values are stored black-subtracted and
/// `white_level` is rewritten to post-subtraction units (`black_level` = 0).
#[derive(Debug, Clone)]
pub struct ExposureStack {
    images: Vec<ImageBuf>,
    metadata: Vec<CaptureMetadata>,
    scaling: Vec<f64>,
}

impl ExposureStack {
    pub fn new(images: Vec<ImageBuf>, metadata: Vec<CaptureMetadata>) -> Result<Self> {
        if images.len() != metadata.len() {
            return Err(Error::MetadataCount {
                meta: metadata.len(),
                images: images.len(),
            });
        }
        if images.len() < 2 {
            return Err(Error::InvalidMetadata(format!(
                "an exposure stack needs at least 2 images, got {}",
                images.len()
            )));
        }
        for (i, m) in metadata.iter().enumerate() {
            m.validate()
                .map_err(|e| Error::InvalidMetadata(format!("image {i}: {e}")))?;
        }
        let first = &images[0];
        for (i, img) in images.iter().enumerate() {
            if !img.same_shape(first) {
                return Err(Error::ShapeMismatch(format!(
                    "image {i} is {}x{}x{}, expected {}x{}x{}",
                    img.height, img.width, img.channels, first.height, first.width, first.channels
                )));
            }
        }

        // Black subtraction; negative dark-region values are preserved so the
        // validity masks, not the loader, decide what is usable.
        let mut entries: Vec<(ImageBuf, CaptureMetadata)> =
            images.into_iter().zip(metadata).collect();
        for (img, m) in entries.iter_mut() {
            if m.black_level != 0.0 {
                let black = m.black_level as f32;
                for v in img.data.iter_mut() {
                    *v -= black;
                }
            }
            m.white_level -= m.black_level;
            m.black_level = 0.0;
        }

        // Stable sort: equal scaling constants keep their input order.
        let mut order: Vec<usize> = (0..entries.len()).collect();
        let scaling: Vec<f64> = entries
            .iter()
            .map(|(_, m)| m.scaling_constant())
            .collect::<Result<_>>()?;
        order.sort_by(|&a, &b| scaling[a].total_cmp(&scaling[b]));

        let mut images = Vec::with_capacity(entries.len());
        let mut metadata = Vec::with_capacity(entries.len());
        let mut sorted_scaling = Vec::with_capacity(entries.len());
        for &idx in &order {
            sorted_scaling.push(scaling[idx]);
            let (img, m) = std::mem::replace(
                &mut entries[idx],
                (ImageBuf::filled(0, 0, 1, 0.0), CaptureMetadata::synthetic(1.0)),
            );
            images.push(img);
            metadata.push(m);
        }
        Ok(Self {
            images,
            metadata,
            scaling: sorted_scaling,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &ImageBuf {
        &self.images[i]
    }

    pub fn images(&self) -> &[ImageBuf] {
        &self.images
    }

    pub fn metadata(&self, i: usize) -> &CaptureMetadata {
        &self.metadata[i]
    }

    pub fn metadata_all(&self) -> &[CaptureMetadata] {
        &self.metadata
    }

    /// Scaling constants, ascending by construction.
    pub fn scaling_constants(&self) -> &[f64] {
        &self.scaling
    }

    /// Natural logs of the scaling constants: the metadata-derived prior for
    /// log-domain estimation.
    pub fn log_priors(&self) -> Vec<f64> {
        self.scaling.iter().map(|d| d.ln()).collect()
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels
    }

    /// Index of the longest exposure (largest scaling constant).
    pub fn gauge_index(&self) -> usize {
        self.len() - 1
    }
}

/// Result of estimating log scaling constants for a stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureEstimate {
    /// Estimated log constants, shifted so the gauge entry equals its prior.
    pub e_hat: Vec<f64>,
    /// Metadata-derived prior log constants.
    pub e0: Vec<f64>,
    pub lambda: f64,
    /// Weighted data residual norm at the solution.
    pub residual_norm: f64,
    /// Exposure whose value is pinned to the prior after solving.
    pub gauge: usize,
    /// Constant added to the raw minimizer to pin the gauge; subtract it to
    /// recover the unshifted solution.
    pub gauge_shift: f64,
}

impl ExposureEstimate {
    pub fn new(
        e_hat: Vec<f64>,
        e0: Vec<f64>,
        lambda: f64,
        residual_norm: f64,
        gauge: usize,
        gauge_shift: f64,
    ) -> Result<Self> {
        let estimate = Self {
            e_hat,
            e0,
            lambda,
            residual_norm,
            gauge,
            gauge_shift,
        };
        estimate.validate()?;
        Ok(estimate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.e_hat.len() != self.e0.len() {
            return Err(Error::ShapeMismatch(format!(
                "estimate has {} entries, prior has {}",
                self.e_hat.len(),
                self.e0.len()
            )));
        }
        if self.gauge >= self.e_hat.len() {
            return Err(Error::ShapeMismatch(format!(
                "gauge index {} out of range for {} exposures",
                self.gauge,
                self.e_hat.len()
            )));
        }
        for v in self.e_hat.iter().chain(self.e0.iter()) {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite estimate entry {v}")));
            }
        }
        Ok(())
    }

    /// Estimated scaling constants (linear domain).
    pub fn scaling_constants(&self) -> Vec<f64> {
        self.e_hat.iter().map(|e| e.exp()).collect()
    }

    /// Per-exposure ratio of estimated to metadata constants.
    pub fn ratio_vs_prior(&self) -> Vec<f64> {
        self.e_hat
            .iter()
            .zip(&self.e0)
            .map(|(e, e0)| (e - e0).exp())
            .collect()
    }

    /// An estimate that just echoes the prior (used when estimation must
    /// fall back).
    pub fn from_prior(e0: Vec<f64>, lambda: f64, gauge: usize) -> Self {
        Self {
            e_hat: e0.clone(),
            e0,
            lambda,
            residual_norm: 0.0,
            gauge,
            gauge_shift: 0.0,
        }
    }
}

/// Divides each image by its estimated scaling constant, mapping raw values
/// back to relative radiance. Arithmetic is f64, so multiplying back by the
/// same constant reproduces the f32 input to within an ulp, and bit-exactly
/// when the constant is a power of two.
pub fn compensate(stack: &ExposureStack, estimate: &ExposureEstimate) -> Result<Vec<ImageBuf>> {
    estimate.validate()?;
    if estimate.e_hat.len() != stack.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate for {} exposures applied to a stack of {}",
            estimate.e_hat.len(),
            stack.len()
        )));
    }
    Ok(stack
        .images()
        .iter()
        .zip(&estimate.e_hat)
        .map(|(img, e)| {
            let d = e.exp();
            let mut out = img.clone();
            for v in out.data.iter_mut() {
                *v = ((*v as f64) / d) as f32;
            }
            out
        })
        .collect())
}

/// Loads a stack from PFM files plus a JSON metadata sidecar whose entries
/// follow the file order.
pub fn load_stack(image_paths: &[impl AsRef<Path>], metadata_path: &Path) -> Result<ExposureStack> {
    let metadata = meta::read_metadata(metadata_path)?;
    if metadata.len() != image_paths.len() {
        return Err(Error::MetadataCount {
            meta: metadata.len(),
            images: image_paths.len(),
        });
    }
    let images = image_paths
        .iter()
        .map(|p| pfm::read_pfm(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    ExposureStack::new(images, metadata)
}
