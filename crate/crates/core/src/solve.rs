//! Dense ridge-regularized weighted least squares on the reduced system, the
//! content-ratio baseline, and per-tile outlier rejection.
//!
//! The unknowns are log scaling constants, so every data row has coefficient
//! +1 on e_i and -1 on e_j. The normal matrix is N x N with N = stack size,
//! which a partial-pivot elimination solves exactly; no iterative machinery.
//! With lambda = 0 the gauge unknown is eliminated and fixed to its prior,
//! otherwise the full system is solved and the result shifted afterwards so
//! the gauge entry equals its prior (ratios are unaffected either way).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stack::{ExposureEstimate, ExposureStack};
use crate::system::{
    build_system, BuildConfig, PairEquation, ReducedSystem, Topology, WeightMode,
};

/// In-place partial-pivot Gaussian elimination on a row-major n x n matrix.
/// Returns None when a pivot falls below the singularity threshold.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    if n == 0 {
        return Some(Vec::new());
    }
    let scale = a.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    let tol = scale * 1e-13 * n as f64;
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > tol) {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        let inv = 1.0 / a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] * inv;
            if f != 0.0 {
                for c in col + 1..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
            a[r * n + col] = 0.0;
        }
    }
    let mut x = vec![0.0f64; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * x[c];
        }
        x[r] = s / a[r * n + r];
    }
    Some(x)
}

fn check_solve_inputs(n: usize, e0: &[f64], lambda: f64, gauge: usize) -> Result<()> {
    if e0.len() != n {
        return Err(Error::Domain(format!(
            "{} priors supplied for {} exposures",
            e0.len(),
            n
        )));
    }
    if !e0.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("priors must be finite".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Domain(format!(
            "regularization weight must be finite and nonnegative, got {lambda}"
        )));
    }
    if gauge >= n {
        return Err(Error::Domain(format!(
            "gauge index {gauge} out of range for {n} exposures"
        )));
    }
    Ok(())
}

fn weighted_residual_norm(equations: &[PairEquation], e: &[f64]) -> f64 {
    equations
        .iter()
        .map(|eq| {
            let r = eq.m - (e[eq.i as usize] - e[eq.j as usize]);
            eq.w * r * r
        })
        .sum::<f64>()
        .sqrt()
}

fn solve_rows(
    equations: &[PairEquation],
    n: usize,
    e0: &[f64],
    lambda: f64,
    gauge: usize,
) -> Result<ExposureEstimate> {
    check_solve_inputs(n, e0, lambda, gauge)?;
    if equations.is_empty() && lambda == 0.0 {
        return Err(Error::Unsolvable(
            "no equations and no prior weight leave the system underdetermined".into(),
        ));
    }
    let (e_hat, gauge_shift) = if lambda == 0.0 {
        // Fix the gauge unknown to its prior and solve for the rest.
        let m = n - 1;
        let col = |v: usize| if v < gauge { v } else { v - 1 };
        let mut a = vec![0.0f64; m * m];
        let mut b = vec![0.0f64; m];
        for eq in equations {
            let (i, j, w) = (eq.i as usize, eq.j as usize, eq.w);
            if i == gauge {
                let cj = col(j);
                a[cj * m + cj] += w;
                b[cj] += w * (e0[gauge] - eq.m);
            } else if j == gauge {
                let ci = col(i);
                a[ci * m + ci] += w;
                b[ci] += w * (eq.m + e0[gauge]);
            } else {
                let (ci, cj) = (col(i), col(j));
                a[ci * m + ci] += w;
                a[cj * m + cj] += w;
                a[ci * m + cj] -= w;
                a[cj * m + ci] -= w;
                b[ci] += w * eq.m;
                b[cj] -= w * eq.m;
            }
        }
        let x = solve_dense(&mut a, &mut b, m).ok_or_else(|| {
            Error::Unsolvable(
                "singular normal matrix: exposure graph disconnected with no prior weight".into(),
            )
        })?;
        let mut e_hat = vec![0.0f64; n];
        for v in 0..n {
            e_hat[v] = if v == gauge { e0[gauge] } else { x[col(v)] };
        }
        (e_hat, 0.0)
    } else {
        let mut a = vec![0.0f64; n * n];
        let mut b = vec![0.0f64; n];
        for eq in equations {
            let (i, j, w) = (eq.i as usize, eq.j as usize, eq.w);
            a[i * n + i] += w;
            a[j * n + j] += w;
            a[i * n + j] -= w;
            a[j * n + i] -= w;
            b[i] += w * eq.m;
            b[j] -= w * eq.m;
        }
        for k in 0..n {
            a[k * n + k] += lambda;
            b[k] += lambda * e0[k];
        }
        let raw = solve_dense(&mut a, &mut b, n).ok_or_else(|| {
            Error::Unsolvable("singular normal matrix despite prior weight".into())
        })?;
        let shift = e0[gauge] - raw[gauge];
        let e_hat = raw.iter().map(|v| v + shift).collect();
        (e_hat, shift)
    };
    let residual_norm = weighted_residual_norm(equations, &e_hat);
    ExposureEstimate::new(e_hat, e0.to_vec(), lambda, residual_norm, gauge, gauge_shift)
}

/// Minimizes sum w (m - (e_i - e_j))^2 + lambda * ||e - e0||^2, then shifts
/// the estimate so the gauge entry equals its prior. The unshifted minimizer
/// is `e_hat[i] - gauge_shift`.
pub fn solve_wls(
    system: &ReducedSystem,
    e0: &[f64],
    lambda: f64,
    gauge: usize,
) -> Result<ExposureEstimate> {
    solve_rows(&system.equations, system.n_exposures, e0, lambda, gauge)
}

/// Ratio baseline: the same selection machinery but saturation-only masks,
/// uniform weights, and rows d_i - (y_i/y_j) d_j = 0 posed directly in the
/// linear scaling-constant domain. Dim pixels push its ratio expectations off
/// truth, which is exactly the failure the weighted log solve avoids.
pub fn baseline_ratio(
    stack: &ExposureStack,
    tile_size: usize,
    k: usize,
    upper_frac: f64,
    lambda: f64,
) -> Result<ExposureEstimate> {
    let config = BuildConfig {
        tile_size,
        k,
        weight_mode: WeightMode::Uniform,
        topology: Topology::GreedyMst,
        lower_frac: 0.0,
        upper_frac,
    };
    let system = build_system(stack, &config, None)?;
    let e0 = stack.log_priors();
    let n = stack.len();
    let gauge = stack.gauge_index();
    check_solve_inputs(n, &e0, lambda, gauge)?;
    let d0: Vec<f64> = e0.iter().map(|e| e.exp()).collect();
    let channels = stack.channels();
    let ratio = |eq: &PairEquation| {
        let s = eq.p as usize * channels + eq.channel as usize;
        stack.image(eq.i as usize).data[s] as f64 / stack.image(eq.j as usize).data[s] as f64
    };
    let d_hat = if lambda == 0.0 {
        let m = n - 1;
        let col = |v: usize| if v < gauge { v } else { v - 1 };
        let mut a = vec![0.0f64; m * m];
        let mut b = vec![0.0f64; m];
        for eq in &system.equations {
            let (i, j) = (eq.i as usize, eq.j as usize);
            let r = ratio(eq);
            if i == gauge {
                let cj = col(j);
                a[cj * m + cj] += r * r;
                b[cj] += r * d0[gauge];
            } else if j == gauge {
                let ci = col(i);
                a[ci * m + ci] += 1.0;
                b[ci] += r * d0[gauge];
            } else {
                let (ci, cj) = (col(i), col(j));
                a[ci * m + ci] += 1.0;
                a[cj * m + cj] += r * r;
                a[ci * m + cj] -= r;
                a[cj * m + ci] -= r;
            }
        }
        let x = solve_dense(&mut a, &mut b, m).ok_or_else(|| {
            Error::Unsolvable("singular baseline system with no prior weight".into())
        })?;
        let mut d = vec![0.0f64; n];
        for v in 0..n {
            d[v] = if v == gauge { d0[gauge] } else { x[col(v)] };
        }
        d
    } else {
        let mut a = vec![0.0f64; n * n];
        let mut b = vec![0.0f64; n];
        for eq in &system.equations {
            let (i, j) = (eq.i as usize, eq.j as usize);
            let r = ratio(eq);
            a[i * n + i] += 1.0;
            a[j * n + j] += r * r;
            a[i * n + j] -= r;
            a[j * n + i] -= r;
        }
        for k in 0..n {
            a[k * n + k] += lambda;
            b[k] += lambda * d0[k];
        }
        solve_dense(&mut a, &mut b, n)
            .ok_or_else(|| Error::Unsolvable("singular baseline normal matrix".into()))?
    };
    if let Some(bad) = d_hat.iter().position(|&d| !(d.is_finite() && d > 0.0)) {
        return Err(Error::Unsolvable(format!(
            "baseline produced non-positive scaling constant {} for exposure {}",
            d_hat[bad], bad
        )));
    }
    // Residual in linear units at the unshifted minimizer.
    let residual_norm = system
        .equations
        .iter()
        .map(|eq| {
            let r = d_hat[eq.i as usize] - ratio(eq) * d_hat[eq.j as usize];
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let raw: Vec<f64> = d_hat.iter().map(|d| d.ln()).collect();
    let shift = e0[gauge] - raw[gauge];
    let e_hat = raw.iter().map(|v| v + shift).collect();
    ExposureEstimate::new(e_hat, e0, lambda, residual_norm, gauge, shift)
}

#[derive(Debug, Clone)]
pub struct OutlierSplit {
    pub kept: Vec<u32>,
    pub rejected: Vec<u32>,
    pub merged: ReducedSystem,
    /// True when every tile was rejected and estimation must fall back to
    /// the priors.
    pub fallback: bool,
}

/// Solves each tile's equations independently against the same priors and
/// drops tiles whose estimate strays more than `threshold` (natural log)
/// from the prior of any exposure. Content that merely disagrees with noisy
/// metadata moves all tiles coherently; scene motion moves only its own tile
/// and by far more, which is what the threshold separates.
pub fn reject_outlier_tiles(
    system: &ReducedSystem,
    e0: &[f64],
    lambda: f64,
    gauge: usize,
    threshold: f64,
) -> Result<OutlierSplit> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Domain(format!(
            "outlier threshold must be positive, got {threshold}"
        )));
    }
    check_solve_inputs(system.n_exposures, e0, lambda, gauge)?;
    if threshold.is_infinite() {
        return Ok(OutlierSplit {
            kept: system.tiles_used.iter().copied().collect(),
            rejected: Vec::new(),
            merged: system.clone(),
            fallback: false,
        });
    }
    let ranges = system.tile_ranges();
    let verdicts: Vec<(u32, bool)> = ranges
        .par_iter()
        .map(|(tid, range)| {
            let keep = match solve_rows(
                &system.equations[range.clone()],
                system.n_exposures,
                e0,
                lambda,
                gauge,
            ) {
                Ok(est) => est
                    .e_hat
                    .iter()
                    .zip(e0)
                    .all(|(h, p)| (h - p).abs() <= threshold),
                // A tile too sparse to assess on its own is not evidence of
                // motion; the merged solve still uses its equations.
                Err(_) => true,
            };
            (*tid, keep)
        })
        .collect();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for &(tid, keep) in &verdicts {
        if keep {
            kept.push(tid);
        } else {
            rejected.push(tid);
        }
    }
    let mut equations = Vec::new();
    for ((_, range), &(_, keep)) in ranges.iter().zip(&verdicts) {
        if keep {
            equations.extend_from_slice(&system.equations[range.clone()]);
        }
    }
    let fallback = kept.is_empty();
    Ok(OutlierSplit {
        merged: ReducedSystem {
            equations,
            n_exposures: system.n_exposures,
            tiles_used: kept.iter().copied().collect(),
        },
        kept,
        rejected,
        fallback,
    })
}

#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub build: BuildConfig,
    pub lambda: f64,
    /// Natural-log deviation bound for tile rejection; +inf disables the
    /// per-tile pass entirely.
    pub outlier_threshold_log: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            build: BuildConfig::default(),
            lambda: 10.0,
            outlier_threshold_log: 1.5f64.ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub estimate: ExposureEstimate,
    pub kept_tiles: Vec<u32>,
    pub rejected_tiles: Vec<u32>,
    pub fallback_to_prior: bool,
    pub equation_count: usize,
}

/// Full estimation pipeline: build the reduced system, filter motion tiles,
/// solve what remains. When every tile is rejected the estimate degrades to
/// the metadata priors and the outcome says so.
pub fn estimate_exposures(
    stack: &ExposureStack,
    config: &EstimateConfig,
    noise: Option<&crate::noise::NoiseParameters>,
) -> Result<EstimateOutcome> {
    let e0 = stack.log_priors();
    let gauge = stack.gauge_index();
    let system = build_system(stack, &config.build, noise)?;
    if config.outlier_threshold_log.is_infinite() && config.outlier_threshold_log > 0.0 {
        let estimate = solve_wls(&system, &e0, config.lambda, gauge)?;
        return Ok(EstimateOutcome {
            estimate,
            kept_tiles: system.tiles_used.iter().copied().collect(),
            rejected_tiles: Vec::new(),
            fallback_to_prior: false,
            equation_count: system.len(),
        });
    }
    let split = reject_outlier_tiles(&system, &e0, config.lambda, gauge, config.outlier_threshold_log)?;
    if split.fallback {
        return Ok(EstimateOutcome {
            estimate: ExposureEstimate::from_prior(e0.clone(), config.lambda, gauge),
            kept_tiles: Vec::new(),
            rejected_tiles: split.rejected,
            fallback_to_prior: true,
            equation_count: 0,
        });
    }
    let estimate = solve_wls(&split.merged, &e0, config.lambda, gauge)?;
    Ok(EstimateOutcome {
        estimate,
        kept_tiles: split.kept,
        rejected_tiles: split.rejected,
        fallback_to_prior: false,
        equation_count: split.merged.len(),
    })
}

/// Machine-readable estimation summary; `e_hat_raw` is the unshifted
/// minimizer so the effect of pinning the gauge to its prior is inspectable.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub e_hat: Vec<f64>,
    pub e_hat_raw: Vec<f64>,
    pub e0: Vec<f64>,
    pub lambda: f64,
    pub gauge: usize,
    pub gauge_shift: f64,
    pub residual_norm: f64,
    pub per_exposure_ratio_vs_exif: Vec<f64>,
    pub kept_tiles: Vec<u32>,
    pub rejected_tiles: Vec<u32>,
    pub fallback_to_prior: bool,
    pub equation_count: usize,
}

impl EstimateOutcome {
    pub fn report(&self) -> EstimateReport {
        let est = &self.estimate;
        EstimateReport {
            e_hat: est.e_hat.clone(),
            e_hat_raw: est.e_hat.iter().map(|v| v - est.gauge_shift).collect(),
            e0: est.e0.clone(),
            lambda: est.lambda,
            gauge: est.gauge,
            gauge_shift: est.gauge_shift,
            residual_norm: est.residual_norm,
            per_exposure_ratio_vs_exif: est.ratio_vs_prior(),
            kept_tiles: self.kept_tiles.clone(),
            rejected_tiles: self.rejected_tiles.clone(),
            fallback_to_prior: self.fallback_to_prior,
            equation_count: self.equation_count,
        }
    }
}
