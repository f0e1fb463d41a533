//! Synthetic evaluation: per-method relative ratio error across scenes,
//! ISO settings, and seeds, plus a gradient banding experiment.
//!
//! Every cell (scene x ISO x repetition) simulates one stack, corrupts its
//! metadata, and hands the same corrupted stack to every method, so the
//! comparison is paired. Estimator outputs are aligned to the truth at the
//! gauge before scoring; the corrupted-metadata row is scored as-is because
//! the metadata itself is the estimate under test.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::merge::{self, MergeMode};
use crate::noise::{NoiseParameters, NoiseProfile};
use crate::rng::derive_seed;
use crate::sim;
use crate::solve::{baseline_ratio, estimate_exposures, EstimateConfig};
use crate::stack::{CaptureMetadata, ExposureEstimate, ExposureStack};
use crate::system::{BuildConfig, Topology, WeightMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExifCorrupted,
    Baseline,
    BtfExternal,
    PairwiseWls,
    GreedyMstWls,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ExifCorrupted => "exif-corrupted",
            Method::Baseline => "baseline",
            Method::BtfExternal => "btf-external",
            Method::PairwiseWls => "pairwise-wls",
            Method::GreedyMstWls => "greedy-mst-wls",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::all().into_iter().find(|m| m.name() == name)
    }

    pub fn all() -> [Method; 5] {
        [
            Method::ExifCorrupted,
            Method::Baseline,
            Method::BtfExternal,
            Method::PairwiseWls,
            Method::GreedyMstWls,
        ]
    }
}

/// Shifts `e` by a constant so its gauge entry equals the reference's.
pub fn align_to_gauge(e: &[f64], reference: &[f64], gauge: usize) -> Vec<f64> {
    let shift = reference[gauge] - e[gauge];
    e.iter().map(|v| v + shift).collect()
}

/// Root-mean-square of (d̂_i/d_i - 1) over all exposures except the gauge,
/// in percent. Callers align estimates to the truth at the gauge first; the
/// corrupted-metadata line is deliberately not aligned.
pub fn relative_rmse_percent(e_hat: &[f64], e_true: &[f64], gauge: usize) -> Result<f64> {
    if e_hat.len() != e_true.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} entries, truth has {}",
            e_hat.len(),
            e_true.len()
        )));
    }
    if gauge >= e_hat.len() || e_hat.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 exposures with gauge in range, got {} with gauge {gauge}",
            e_hat.len()
        )));
    }
    let mut sum = 0.0f64;
    for (i, (h, t)) in e_hat.iter().zip(e_true).enumerate() {
        if i == gauge {
            continue;
        }
        let err = (h - t).exp() - 1.0;
        sum += err * err;
    }
    Ok(100.0 * (sum / (e_hat.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalConfig {
    pub isos: Vec<u32>,
    /// Independent repetitions per scene x ISO cell.
    pub repetitions: u32,
    pub base_seed: u64,
    pub exposure_times: Vec<f64>,
    pub bit_depth: u32,
    pub corruption_rel_std: f64,
    pub lambda: f64,
    pub tile_size: usize,
    pub k: usize,
    pub lower_frac: f64,
    pub upper_frac: f64,
    /// Weight mode used by both WLS methods.
    pub wls_weight_mode: WeightMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            isos: vec![100, 200, 400, 800],
            repetitions: 20,
            base_seed: 1,
            exposure_times: vec![1.0 / 64.0, 1.0 / 8.0, 1.0, 8.0],
            bit_depth: 14,
            corruption_rel_std: 0.15,
            lambda: 10.0,
            tile_size: 16,
            k: 50,
            lower_frac: 0.01,
            upper_frac: 0.95,
            wls_weight_mode: WeightMode::Calibrated,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.isos.is_empty() {
            return Err(Error::Domain("need at least one ISO".into()));
        }
        if self.repetitions < 1 {
            return Err(Error::Domain("need at least one repetition".into()));
        }
        if self.exposure_times.len() < 2 {
            return Err(Error::Domain("need at least two exposure times".into()));
        }
        for &t in &self.exposure_times {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Domain(format!("exposure time {t} must be positive")));
            }
        }
        if !(self.corruption_rel_std.is_finite() && self.corruption_rel_std >= 0.0) {
            return Err(Error::Domain("corruption level must be non-negative".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Domain("lambda must be non-negative".into()));
        }
        if self.tile_size < 1 || self.k < 1 {
            return Err(Error::Domain("tile size and k must be at least 1".into()));
        }
        crate::system::check_thresholds(self.lower_frac, self.upper_frac)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub method: String,
    /// None marks the all-ISO aggregate.
    pub iso: Option<u32>,
    pub n_cells: usize,
    pub mean_rmse_percent: Option<f64>,
    pub ci95_percent: Option<f64>,
    pub mean_seconds: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandingResult {
    pub exif_score: f64,
    pub aligned_score: f64,
    pub ratio: f64,
    pub aligned_monotone_after_smoothing: bool,
    pub estimate_rmse_percent: f64,
    pub fallback_to_prior: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub scenes: Vec<String>,
    pub methods: Vec<String>,
    pub per_iso: Vec<AggregateRow>,
    pub overall: Vec<AggregateRow>,
    pub failures: Vec<String>,
    pub banding: Option<BandingResult>,
    pub total_seconds: f64,
}

impl EvalReport {
    pub fn aggregate(&self, method: Method, iso: Option<u32>) -> Option<&AggregateRow> {
        let rows = if iso.is_some() { &self.per_iso } else { &self.overall };
        rows.iter()
            .find(|r| r.method == method.name() && r.iso == iso)
    }
}

struct PreparedCell {
    stack: ExposureStack,
    e_true: Vec<f64>,
}

fn prepare_cell(
    scene: &ImageBuf,
    times: &[f64],
    params: &NoiseParameters,
    config: &EvalConfig,
    cell_seed: u64,
) -> Result<PreparedCell> {
    let images = sim::simulate_images(
        scene,
        times,
        Some(params),
        Some(config.bit_depth),
        derive_seed(cell_seed, 1),
    )?;
    let meta: Vec<CaptureMetadata> = times
        .iter()
        .map(|&t| CaptureMetadata::synthetic(t))
        .collect();
    let corrupted = sim::corrupt_metadata(&meta, config.corruption_rel_std, derive_seed(cell_seed, 2))?;
    let d: Vec<f64> = corrupted
        .iter()
        .map(|m| m.scaling_constant())
        .collect::<Result<_>>()?;
    // The stack sorts by scaling constant; a draw extreme enough to swap two
    // exposures would silently mispair estimates with the truth.
    if !d.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::Domain(
            "metadata corruption reordered the exposures".into(),
        ));
    }
    let stack = ExposureStack::new(images, corrupted)?;
    let e_true = times.iter().map(|t| t.ln()).collect();
    Ok(PreparedCell { stack, e_true })
}

/// None means the method produces no number (external comparison slot).
fn evaluate_method(
    method: Method,
    cell: &PreparedCell,
    config: &EvalConfig,
    params: &NoiseParameters,
) -> Result<Option<f64>> {
    let stack = &cell.stack;
    let gauge = stack.gauge_index();
    let aligned_rmse = |e_hat: &[f64]| -> Result<f64> {
        let aligned = align_to_gauge(e_hat, &cell.e_true, gauge);
        relative_rmse_percent(&aligned, &cell.e_true, gauge)
    };
    match method {
        Method::BtfExternal => Ok(None),
        Method::ExifCorrupted => {
            relative_rmse_percent(&stack.log_priors(), &cell.e_true, gauge).map(Some)
        }
        Method::Baseline => {
            let est = baseline_ratio(
                stack,
                config.tile_size,
                config.k,
                config.upper_frac,
                config.lambda,
            )?;
            aligned_rmse(&est.e_hat).map(Some)
        }
        Method::PairwiseWls | Method::GreedyMstWls => {
            let topology = if method == Method::PairwiseWls {
                Topology::PairwiseChain
            } else {
                Topology::GreedyMst
            };
            let est_config = EstimateConfig {
                build: BuildConfig {
                    tile_size: config.tile_size,
                    k: config.k,
                    weight_mode: config.wls_weight_mode,
                    topology,
                    lower_frac: config.lower_frac,
                    upper_frac: config.upper_frac,
                },
                lambda: config.lambda,
                // The protocol is motion-free, so the per-tile filter stays
                // off here; it has its own dedicated experiment.
                outlier_threshold_log: f64::INFINITY,
            };
            let outcome = estimate_exposures(stack, &est_config, Some(params))?;
            aligned_rmse(&outcome.estimate.e_hat).map(Some)
        }
    }
}

struct MethodOutcome {
    method: Method,
    rmse: Option<f64>,
    seconds: f64,
    error: Option<String>,
}

struct CellResult {
    scene: String,
    iso: u32,
    rep: u32,
    rows: Vec<MethodOutcome>,
}

fn sample_stats(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(1.96 * (var / n).sqrt()))
}

fn aggregate_rows(
    methods: &[Method],
    results: &[CellResult],
    iso_filter: Option<u32>,
) -> Vec<AggregateRow> {
    methods
        .iter()
        .map(|&method| {
            let mut rmses = Vec::new();
            let mut seconds = Vec::new();
            for cell in results {
                if let Some(iso) = iso_filter {
                    if cell.iso != iso {
                        continue;
                    }
                }
                for row in &cell.rows {
                    if row.method == method && row.error.is_none() {
                        if let Some(r) = row.rmse {
                            rmses.push(r);
                            seconds.push(row.seconds);
                        }
                    }
                }
            }
            if method == Method::BtfExternal {
                return AggregateRow {
                    method: method.name().to_string(),
                    iso: iso_filter,
                    n_cells: 0,
                    mean_rmse_percent: None,
                    ci95_percent: None,
                    mean_seconds: None,
                    note: Some("not implemented".into()),
                };
            }
            let (mean, ci) = if rmses.is_empty() {
                (None, None)
            } else {
                let (m, c) = sample_stats(&rmses);
                (Some(m), c)
            };
            AggregateRow {
                method: method.name().to_string(),
                iso: iso_filter,
                n_cells: rmses.len(),
                mean_rmse_percent: mean,
                ci95_percent: ci,
                mean_seconds: if seconds.is_empty() {
                    None
                } else {
                    Some(seconds.iter().sum::<f64>() / seconds.len() as f64)
                },
                note: None,
            }
        })
        .collect()
}

/// Runs every method on every scene x ISO x repetition cell. Cells run in
/// parallel; aggregation order is fixed, so RMSE results are a pure function
/// of (scenes, config, methods). A failed cell is recorded per method and
/// excluded from the averages rather than aborting the run.
pub fn run_experiment(
    scenes: &[(String, ImageBuf)],
    config: &EvalConfig,
    methods: &[Method],
    profile: &NoiseProfile,
) -> Result<EvalReport> {
    let start = Instant::now();
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Domain("need at least one scene".into()));
    }
    if methods.is_empty() {
        return Err(Error::Domain("need at least one method".into()));
    }
    let params: Vec<&NoiseParameters> = config
        .isos
        .iter()
        .map(|&iso| profile.lookup(iso))
        .collect::<Result<_>>()?;
    let mut times = config.exposure_times.clone();
    times.sort_unstable_by(f64::total_cmp);

    let reps = config.repetitions as usize;
    let n_cells = scenes.len() * config.isos.len() * reps;
    let results: Vec<CellResult> = (0..n_cells)
        .into_par_iter()
        .map(|cell_index| {
            let rep = cell_index % reps;
            let iso_idx = (cell_index / reps) % config.isos.len();
            let scene_idx = cell_index / (reps * config.isos.len());
            let cell_seed = derive_seed(config.base_seed, cell_index as u64);
            let prepared = prepare_cell(&scenes[scene_idx].1, &times, params[iso_idx], config, cell_seed);
            let rows = match &prepared {
                Err(e) => methods
                    .iter()
                    .map(|&method| MethodOutcome {
                        method,
                        rmse: None,
                        seconds: 0.0,
                        error: Some(e.to_string()),
                    })
                    .collect(),
                Ok(cell) => methods
                    .iter()
                    .map(|&method| {
                        let t0 = Instant::now();
                        let outcome = evaluate_method(method, cell, config, params[iso_idx]);
                        let seconds = t0.elapsed().as_secs_f64();
                        match outcome {
                            Ok(rmse) => MethodOutcome {
                                method,
                                rmse,
                                seconds,
                                error: None,
                            },
                            Err(e) => MethodOutcome {
                                method,
                                rmse: None,
                                seconds,
                                error: Some(e.to_string()),
                            },
                        }
                    })
                    .collect(),
            };
            CellResult {
                scene: scenes[scene_idx].0.clone(),
                iso: config.isos[iso_idx],
                rep: rep as u32,
                rows,
            }
        })
        .collect();

    let mut failures = Vec::new();
    for cell in &results {
        for row in &cell.rows {
            if let Some(err) = &row.error {
                failures.push(format!(
                    "scene={} iso={} rep={} method={}: {err}",
                    cell.scene,
                    cell.iso,
                    cell.rep,
                    row.method.name()
                ));
            }
        }
    }
    let per_iso = config
        .isos
        .iter()
        .flat_map(|&iso| aggregate_rows(methods, &results, Some(iso)))
        .collect();
    let overall = aggregate_rows(methods, &results, None);
    Ok(EvalReport {
        config: config.clone(),
        scenes: scenes.iter().map(|(n, _)| n.clone()).collect(),
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        per_iso,
        overall,
        failures,
        banding: None,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Merges a noisy 13-stop gradient stack twice, once trusting the corrupted
/// metadata and once with the estimate, and scores the banding of each.
pub fn banding_experiment(
    profile: &NoiseProfile,
    iso: u32,
    height: usize,
    width: usize,
    corruption_rel_std: f64,
    seed: u64,
) -> Result<BandingResult> {
    let params = profile.lookup(iso)?;
    let row = sim::synth_gradient(13, width)?;
    let row = sim::scaled(&row, 1.0 / 8192.0);
    let scene = sim::replicate_rows(&row, height)?;
    let times = [0.5f64, 2.0, 4.0];
    let e_true: Vec<f64> = times.iter().map(|&t| t.ln()).collect();
    let images = sim::simulate_images(&scene, &times, Some(params), Some(14), derive_seed(seed, 1))?;
    let meta: Vec<CaptureMetadata> = times
        .iter()
        .map(|&t| CaptureMetadata::synthetic(t))
        .collect();
    let corrupted = sim::corrupt_metadata(&meta, corruption_rel_std, derive_seed(seed, 2))?;
    let d: Vec<f64> = corrupted
        .iter()
        .map(|m| m.scaling_constant())
        .collect::<Result<_>>()?;
    if !d.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::Domain(
            "metadata corruption reordered the exposures".into(),
        ));
    }
    let stack = ExposureStack::new(images, corrupted)?;
    let gauge = stack.gauge_index();

    let outcome = estimate_exposures(&stack, &EstimateConfig::default(), Some(params))?;
    let exif = ExposureEstimate::from_prior(stack.log_priors(), 10.0, gauge);

    let merged_exif = merge::merge(&stack, &exif, Some(params), MergeMode::InverseVariance, 0.01, 0.95)?;
    let merged_est = merge::merge(
        &stack,
        &outcome.estimate,
        Some(params),
        MergeMode::InverseVariance,
        0.01,
        0.95,
    )?;
    let line_exif = merge::column_means(&merged_exif.hdr, 0)?;
    let line_est = merge::column_means(&merged_est.hdr, 0)?;
    let exif_score = merge::banding_score(&line_exif)?;
    let aligned_score = merge::banding_score(&line_est)?;
    let aligned = align_to_gauge(&outcome.estimate.e_hat, &e_true, gauge);
    Ok(BandingResult {
        exif_score,
        aligned_score,
        ratio: exif_score / aligned_score,
        aligned_monotone_after_smoothing: merge::is_nondecreasing(&merge::smooth_3tap(&line_est)),
        estimate_rmse_percent: relative_rmse_percent(&aligned, &e_true, gauge)?,
        fallback_to_prior: outcome.fallback_to_prior,
    })
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), report).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One row per (method, ISO) plus the all-ISO aggregates with iso "all".
pub fn write_rmse_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("method,iso,mean_rmse_percent,ci95_percent,n_cells,mean_seconds,note\n");
    for row in report.per_iso.iter().chain(&report.overall) {
        let iso = row.iso.map(|i| i.to_string()).unwrap_or_else(|| "all".into());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.method,
            iso,
            fmt_opt(row.mean_rmse_percent),
            fmt_opt(row.ci95_percent),
            row.n_cells,
            fmt_opt(row.mean_seconds),
            row.note.as_deref().unwrap_or("")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Gnuplot-friendly blocks: one block per method, "iso mean ci" per line.
pub fn write_plot_data(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    for method in &report.methods {
        out.push_str(&format!("# method: {method}\n"));
        for row in &report.per_iso {
            if &row.method == method {
                if let (Some(iso), Some(mean)) = (row.iso, row.mean_rmse_percent) {
                    out.push_str(&format!(
                        "{iso} {mean:.6} {:.6}\n",
                        row.ci95_percent.unwrap_or(0.0)
                    ));
                }
            }
        }
        out.push_str("\n\n");
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
