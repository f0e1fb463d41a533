//! HDR merging of exposure-compensated stacks, plus a banding metric for
//! monotone-gradient scenes.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::noise::NoiseParameters;
use crate::stack::{ExposureEstimate, ExposureStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    Mean,
    InverseVariance,
}

#[derive(Debug, Clone)]
pub struct MergeOutput {
    pub hdr: ImageBuf,
    /// Per-sample flag: true where no exposure was valid and the
    /// least-saturated sample was used instead.
    pub fallback_mask: Vec<bool>,
}

/// Averages compensated samples X_i = y_i / exp(ê_i) over the valid
/// exposures of each location. Inverse-variance mode weights X_i by
/// exp(ê_i)² / (α y_i + β), its reciprocal first-order variance. A location
/// valid nowhere falls back to the sample with the smallest y/white (ties to
/// the shortest exposure), so a fully saturated pixel reports the shortest
/// exposure's clipped value.
pub fn merge(
    stack: &ExposureStack,
    estimate: &ExposureEstimate,
    noise: Option<&NoiseParameters>,
    mode: MergeMode,
    lower_frac: f64,
    upper_frac: f64,
) -> Result<MergeOutput> {
    let n = stack.len();
    if estimate.e_hat.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "estimate covers {} exposures but the stack has {}",
            estimate.e_hat.len(),
            n
        )));
    }
    crate::system::check_thresholds(lower_frac, upper_frac)?;
    let channels = stack.channels();
    let ab: Option<Vec<(f64, f64)>> = match mode {
        MergeMode::Mean => None,
        MergeMode::InverseVariance => {
            let params = noise.ok_or_else(|| {
                Error::Domain("inverse-variance merging requires noise parameters".into())
            })?;
            Some(
                (0..channels)
                    .map(|c| params.channel(c, channels))
                    .collect::<Vec<_>>(),
            )
        }
    };
    let d_hat: Vec<f64> = estimate.e_hat.iter().map(|e| e.exp()).collect();
    let bounds: Vec<(f64, f64, f64)> = stack
        .metadata_all()
        .iter()
        .map(|m| {
            (
                lower_frac * m.white_level,
                upper_frac * m.white_level,
                m.white_level,
            )
        })
        .collect();
    let images = stack.images();
    let mut hdr = ImageBuf::filled(stack.height(), stack.width(), channels, 0.0);
    let mut mask = vec![false; hdr.data.len()];
    hdr.data
        .par_chunks_mut(channels)
        .zip(mask.par_chunks_mut(channels))
        .enumerate()
        .for_each(|(p, (out, flags))| {
            for c in 0..channels {
                let s = p * channels + c;
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for (i, img) in images.iter().enumerate() {
                    let y = img.data[s] as f64;
                    let (lo, hi, _) = bounds[i];
                    if lo < y && y < hi {
                        let x = y / d_hat[i];
                        let w = match &ab {
                            None => 1.0,
                            Some(ab) => {
                                let (alpha, beta) = ab[c];
                                d_hat[i] * d_hat[i] / (alpha * y + beta)
                            }
                        };
                        num += w * x;
                        den += w;
                    }
                }
                if den > 0.0 {
                    out[c] = (num / den) as f32;
                } else {
                    let least = (0..images.len())
                        .min_by(|&a, &b| {
                            let ra = images[a].data[s] as f64 / bounds[a].2;
                            let rb = images[b].data[s] as f64 / bounds[b].2;
                            ra.total_cmp(&rb)
                        })
                        .expect("stack is never empty");
                    out[c] = (images[least].data[s] as f64 / d_hat[least]) as f32;
                    flags[c] = true;
                }
            }
        });
    Ok(MergeOutput {
        hdr,
        fallback_mask: mask,
    })
}

/// Mean over rows of one channel, per column. The banding metric runs on
/// these averaged scanlines so per-pixel noise is suppressed.
pub fn column_means(image: &ImageBuf, channel: usize) -> Result<Vec<f64>> {
    if channel >= image.channels {
        return Err(Error::Domain(format!(
            "channel {channel} out of range for {}-channel image",
            image.channels
        )));
    }
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut means = vec![0.0f64; w];
    for r in 0..h {
        for col in 0..w {
            means[col] += image.data[(r * w + col) * c + channel] as f64;
        }
    }
    for m in &mut means {
        *m /= h as f64;
    }
    Ok(means)
}

/// Maximum absolute second finite difference, normalized by the scanline's
/// mean slope. Zero for a perfect linear ramp; a step of height h on slope s
/// scores h/|s|. Requires at least 3 points and a non-flat ramp.
pub fn banding_score(scanline: &[f64]) -> Result<f64> {
    if scanline.len() < 3 {
        return Err(Error::Domain(format!(
            "banding score needs at least 3 samples, got {}",
            scanline.len()
        )));
    }
    let n = scanline.len();
    let slope = (scanline[n - 1] - scanline[0]) / (n - 1) as f64;
    if slope == 0.0 || !slope.is_finite() {
        return Err(Error::Domain(
            "banding score is undefined on a flat scanline".into(),
        ));
    }
    let max_dd = scanline
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .fold(0.0f64, f64::max);
    Ok(max_dd / slope.abs())
}

/// 3-tap box filter; endpoints are kept as-is.
pub fn smooth_3tap(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = values.to_vec();
    for i in 1..n.saturating_sub(1) {
        out[i] = (values[i - 1] + values[i] + values[i + 1]) / 3.0;
    }
    out
}

pub fn is_nondecreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::CaptureMetadata;

    fn stack2(values0: Vec<f32>, values1: Vec<f32>, t0: f64, t1: f64, width: usize) -> ExposureStack {
        let images = vec![
            ImageBuf::new(values0.len() / width, width, 1, values0).unwrap(),
            ImageBuf::new(values1.len() / width, width, 1, values1).unwrap(),
        ];
        let metadata = vec![CaptureMetadata::synthetic(t0), CaptureMetadata::synthetic(t1)];
        ExposureStack::new(images, metadata).unwrap()
    }

    fn prior_estimate(stack: &ExposureStack) -> ExposureEstimate {
        ExposureEstimate::from_prior(stack.log_priors(), 10.0, stack.gauge_index())
    }

    #[test]
    fn single_valid_sample_is_that_sample_compensated() {
        // Pixel 0: valid only in exposure 0 (saturated in 1); pixel 1: valid
        // only in exposure 1 (below floor in 0).
        let stack = stack2(vec![0.5, 0.005], vec![0.96, 0.02], 1.0, 2.0, 2);
        let est = prior_estimate(&stack);
        for mode in [MergeMode::Mean, MergeMode::InverseVariance] {
            let params = crate::noise::NoiseProfile::canon_s100();
            let out = merge(&stack, &est, params.lookup(100).ok(), mode, 0.01, 0.95).unwrap();
            assert!((out.hdr.data[0] - 0.5).abs() < 1e-7);
            assert!((out.hdr.data[1] - 0.01).abs() < 1e-8);
            assert_eq!(out.fallback_mask, vec![false, false]);
        }
    }

    #[test]
    fn noiseless_aligned_stack_merges_to_truth_within_quantization() {
        let scene = crate::sim::hash_texture(16, 16, 0.05, 2.0, 9);
        let stack = crate::sim::simulate_stack(&scene, &[1.0, 4.0], None, Some(16), 0).unwrap();
        let est = prior_estimate(&stack);
        let out = merge(&stack, &est, None, MergeMode::Mean, 0.01, 0.95).unwrap();
        let step = 1.0 / (65536.0 - 1.0);
        for (got, want) in out.hdr.data.iter().zip(&scene.data) {
            assert!(
                (*got as f64 - *want as f64).abs() <= 0.51 * step,
                "got {got}, want {want}"
            );
        }
    }

    #[test]
    fn global_rescale_divides_output() {
        let scene = crate::sim::hash_texture(8, 8, 0.03, 4.0, 2);
        let stack = crate::sim::simulate_stack(&scene, &[0.5, 1.0, 2.0], None, None, 0).unwrap();
        let base = prior_estimate(&stack);
        let c = 0.8f64;
        let shifted = ExposureEstimate::new(
            base.e_hat.iter().map(|e| e + c).collect(),
            base.e0.clone(),
            base.lambda,
            base.residual_norm,
            base.gauge,
            base.gauge_shift + c,
        )
        .unwrap();
        let a = merge(&stack, &base, None, MergeMode::Mean, 0.01, 0.95).unwrap();
        let b = merge(&stack, &shifted, None, MergeMode::Mean, 0.01, 0.95).unwrap();
        let scale = c.exp();
        for (x, y) in a.hdr.data.iter().zip(&b.hdr.data) {
            let expect = *x as f64 / scale;
            assert!(
                (*y as f64 - expect).abs() <= 1e-6 * expect.abs().max(1e-12),
                "{x} vs {y}"
            );
        }
        assert_eq!(a.fallback_mask, b.fallback_mask);
    }

    #[test]
    fn inverse_variance_merge_of_duplicates_is_their_mean() {
        let stack = stack2(vec![0.3, 0.6], vec![0.3, 0.6], 2.0, 2.0, 2);
        let est = prior_estimate(&stack);
        let profile = crate::noise::NoiseProfile::canon_s100();
        let params = profile.lookup(400).unwrap();
        let out = merge(
            &stack,
            &est,
            Some(params),
            MergeMode::InverseVariance,
            0.01,
            0.95,
        )
        .unwrap();
        for (s, y) in [(0usize, 0.3f64), (1, 0.6)] {
            let want = y / 2.0;
            assert!((out.hdr.data[s] as f64 - want).abs() <= 1e-7 * want);
        }
    }

    #[test]
    fn saturated_everywhere_falls_back_to_shortest_clipped() {
        let stack = stack2(vec![1.0], vec![1.0], 1.0, 2.0, 1);
        let est = prior_estimate(&stack);
        let out = merge(&stack, &est, None, MergeMode::Mean, 0.01, 0.95).unwrap();
        // Both saturated at white; y/white ties, so the shortest exposure
        // (d = 1) supplies the clipped value.
        assert_eq!(out.hdr.data[0], 1.0);
        assert_eq!(out.fallback_mask, vec![true]);
    }

    #[test]
    fn dim_everywhere_falls_back_to_least_saturated() {
        let stack = stack2(vec![1e-4], vec![2e-4], 1.0, 2.0, 1);
        let est = prior_estimate(&stack);
        let out = merge(&stack, &est, None, MergeMode::Mean, 0.01, 0.95).unwrap();
        assert!((out.hdr.data[0] - 1e-4).abs() < 1e-10);
        assert_eq!(out.fallback_mask, vec![true]);
    }

    #[test]
    fn outputs_are_finite_and_positive_where_any_sample_is_valid() {
        let scene = crate::sim::hash_texture(32, 32, 0.005, 9.0, 4);
        let profile = crate::noise::NoiseProfile::canon_s100();
        let params = profile.lookup(800).unwrap();
        let stack =
            crate::sim::simulate_stack(&scene, &[0.25, 1.0, 4.0], Some(params), Some(14), 7)
                .unwrap();
        let est = prior_estimate(&stack);
        let out = merge(
            &stack,
            &est,
            Some(params),
            MergeMode::InverseVariance,
            0.01,
            0.95,
        )
        .unwrap();
        for (v, flagged) in out.hdr.data.iter().zip(&out.fallback_mask) {
            assert!(v.is_finite());
            if !flagged {
                assert!(*v > 0.0);
            }
        }
    }

    #[test]
    fn estimate_length_mismatch_is_rejected() {
        let stack = stack2(vec![0.3], vec![0.5], 1.0, 2.0, 1);
        let est = ExposureEstimate::from_prior(vec![0.0, 0.5, 1.0], 10.0, 2);
        assert!(merge(&stack, &est, None, MergeMode::Mean, 0.01, 0.95).is_err());
    }

    #[test]
    fn inverse_variance_without_parameters_is_an_error() {
        let stack = stack2(vec![0.3], vec![0.5], 1.0, 2.0, 1);
        let est = prior_estimate(&stack);
        assert!(merge(&stack, &est, None, MergeMode::InverseVariance, 0.01, 0.95).is_err());
    }

    #[test]
    fn banding_score_is_zero_on_linear_ramps() {
        // Accumulation roundoff keeps this near-zero rather than exact.
        let line: Vec<f64> = (0..100).map(|i| 0.3 + 0.02 * i as f64).collect();
        assert!(banding_score(&line).unwrap() < 1e-12);
    }

    #[test]
    fn banding_score_of_a_step_is_height_over_slope() {
        let h = 5.0;
        let line: Vec<f64> = (0..101)
            .map(|i| i as f64 + if i >= 50 { h } else { 0.0 })
            .collect();
        let score = banding_score(&line).unwrap();
        let slope = (line[100] - line[0]) / 100.0;
        assert!((score * slope - h).abs() < 1e-12);
    }

    #[test]
    fn banding_score_rejects_short_or_flat_scanlines() {
        assert!(banding_score(&[1.0, 2.0]).is_err());
        assert!(banding_score(&[1.0, 1.5, 1.0]).is_err());
    }

    #[test]
    fn column_means_average_over_rows() {
        let img = ImageBuf::new(2, 3, 1, vec![1.0, 2.0, 3.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(column_means(&img, 0).unwrap(), vec![2.0, 3.0, 4.0]);
        assert!(column_means(&img, 1).is_err());
    }

    #[test]
    fn smoothing_bridges_small_dips_for_the_monotonicity_check() {
        let bumpy = vec![0.0, 1.0, 0.98, 2.0, 3.0, 2.97, 4.0];
        assert!(!is_nondecreasing(&bumpy));
        assert!(is_nondecreasing(&smooth_3tap(&bumpy)));
        let broken = vec![0.0, 1.0, 2.0, -5.0, -5.5, 3.0, 4.0];
        assert!(!is_nondecreasing(&smooth_3tap(&broken)));
    }
}
