use std::path::{Path, PathBuf};

use hdrstack::eval::{self, EvalConfig, Method};
use hdrstack::io::{meta, pfm};
use hdrstack::noise::{NoiseParameters, NoiseProfile};
use hdrstack::rng::derive_seed;
use hdrstack::sim;
use hdrstack::stack::{load_stack, CaptureMetadata};
use hdrstack::{
    estimate_exposures, merge, BuildConfig, EstimateConfig, ExposureEstimate, ImageBuf,
};

use crate::args::{
    parse_bit_depth, parse_f64_list, parse_outlier_threshold, parse_u32_list, parse_valid_range,
    EstimateArgs, EvaluateArgs, FileConfig, MergeArgs, ModeArg, SimulateArgs, TopologyArg,
    WeightsArg,
};
use crate::{CliError, EXIT_FALLBACK, EXIT_OK};

pub const BUILTIN_PROFILE: &str = "canon-s100";

const DEFAULT_TIMES: [f64; 4] = [1.0 / 64.0, 1.0 / 8.0, 1.0, 8.0];

fn load_profile(source: &str) -> Result<NoiseProfile, CliError> {
    if source == BUILTIN_PROFILE {
        Ok(NoiseProfile::canon_s100())
    } else {
        meta::read_noise_profile(Path::new(source)).map_err(CliError::from)
    }
}

/// Picks the profile entry for `iso`. Without --iso a single-entry profile
/// is unambiguous; anything else needs the flag.
fn select_params(profile: &NoiseProfile, iso: Option<u32>) -> Result<&NoiseParameters, CliError> {
    match iso {
        Some(iso) => profile.lookup(iso).map_err(CliError::from),
        None if profile.entries.len() == 1 => Ok(&profile.entries[0]),
        None => {
            let available: Vec<u32> = profile.entries.iter().map(|e| e.iso).collect();
            Err(CliError::Usage(format!(
                "profile \"{}\" has {} gain settings; pass --iso (available: {:?})",
                profile.name,
                profile.entries.len(),
                available
            )))
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("JSON value");
    std::fs::write(path, text).map_err(|e| {
        CliError::from(hdrstack::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// JSON form of the threshold: infinity has no JSON number, so the disabled
/// state round-trips as the string the flag accepts.
fn threshold_json(v: f64) -> serde_json::Value {
    if v.is_infinite() {
        serde_json::Value::String("inf".into())
    } else {
        serde_json::json!(v)
    }
}

pub fn cmd_estimate(args: EstimateArgs, cfg: &FileConfig) -> Result<i32, CliError> {
    let weights = args.weights.or(cfg.weights).unwrap_or(WeightsArg::CalibrationFree);
    let profile_src = args.noise_profile.clone().or_else(|| cfg.noise_profile.clone());
    let iso = args.iso.or(cfg.iso);
    let lambda = args.lambda.or(cfg.lambda).unwrap_or(10.0);
    let tile = args.tile.or(cfg.tile).unwrap_or(16);
    let k = args.k.or(cfg.k).unwrap_or(50);
    let (lower, upper) = match args.valid_range.as_deref().or(cfg.valid_range.as_deref()) {
        Some(s) => parse_valid_range(s)?,
        None => (0.01, 0.95),
    };
    let outlier = match args
        .outlier_threshold
        .as_deref()
        .or(cfg.outlier_threshold.as_deref())
    {
        Some(s) => parse_outlier_threshold(s)?,
        None => 1.5f64.ln(),
    };
    let topology = args.topology.or(cfg.topology).unwrap_or(TopologyArg::GreedyMst);

    if weights == WeightsArg::Calibrated && profile_src.is_none() {
        return Err(CliError::Usage(
            "--weights calibrated requires --noise-profile".into(),
        ));
    }
    let profile = profile_src.as_deref().map(load_profile).transpose()?;
    let params = profile
        .as_ref()
        .map(|p| select_params(p, iso))
        .transpose()?;

    let stack = load_stack(&args.stack, &args.meta)?;
    let config = EstimateConfig {
        build: BuildConfig {
            tile_size: tile,
            k,
            weight_mode: weights.into(),
            topology: topology.into(),
            lower_frac: lower,
            upper_frac: upper,
        },
        lambda,
        outlier_threshold_log: outlier,
    };
    let outcome = estimate_exposures(&stack, &config, params)?;
    let report = outcome.report();

    println!(
        "loaded {} exposures ({}x{}x{}), gauge exposure {}",
        stack.len(),
        stack.height(),
        stack.width(),
        stack.channels(),
        report.gauge
    );
    let d = stack.scaling_constants();
    for (i, ratio) in report.per_exposure_ratio_vs_exif.iter().enumerate() {
        let mark = if i == report.gauge { " (gauge)" } else { "" };
        println!(
            "exposure {i}: t {}s, d {:.6e}, correction x{:.6}{mark}",
            stack.metadata(i).exposure_time,
            d[i],
            ratio
        );
    }
    println!(
        "kept {} tiles, rejected {}, {} equations, residual {:.6e}",
        report.kept_tiles.len(),
        report.rejected_tiles.len(),
        report.equation_count,
        report.residual_norm
    );

    let settings = serde_json::json!({
        "stack": args.stack.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "meta": args.meta.display().to_string(),
        "weights": weights.name(),
        "noise_profile": profile_src,
        "iso": iso,
        "lambda": lambda,
        "tile": tile,
        "k": k,
        "valid_range": [lower, upper],
        "outlier_threshold": threshold_json(outlier),
        "topology": topology.name(),
    });
    let mut doc = serde_json::to_value(&report).expect("report is plain data");
    doc.as_object_mut()
        .expect("report serializes to an object")
        .insert("settings".into(), settings);
    write_json(&args.out, &doc)?;
    println!("report written to {}", args.out.display());

    if report.fallback_to_prior {
        eprintln!(
            "warning: every tile failed the outlier check; the estimate equals the metadata prior"
        );
        return Ok(EXIT_FALLBACK);
    }
    Ok(EXIT_OK)
}

fn default_mask_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "merged".into());
    out.with_file_name(format!("{stem}_mask.pgm"))
}

pub fn cmd_merge(args: MergeArgs, cfg: &FileConfig) -> Result<i32, CliError> {
    let mode = args.mode.or(cfg.mode).unwrap_or(ModeArg::Mean);
    let profile_src = args.noise_profile.clone().or_else(|| cfg.noise_profile.clone());
    let iso = args.iso.or(cfg.iso);
    let (lower, upper) = match args.valid_range.as_deref().or(cfg.valid_range.as_deref()) {
        Some(s) => parse_valid_range(s)?,
        None => (0.01, 0.95),
    };

    if args.estimate.is_none() && !args.use_exif {
        return Err(CliError::Usage(
            "provide --estimate <report> or pass --use-exif".into(),
        ));
    }
    if mode == ModeArg::InverseVariance && profile_src.is_none() {
        return Err(CliError::Usage(
            "--mode inverse-variance requires --noise-profile".into(),
        ));
    }
    let profile = profile_src.as_deref().map(load_profile).transpose()?;
    let params = profile
        .as_ref()
        .map(|p| select_params(p, iso))
        .transpose()?;

    let stack = load_stack(&args.stack, &args.meta)?;
    let estimate = match &args.estimate {
        // The report is a superset of the estimate fields; unknown keys are
        // skipped during deserialization.
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::from(hdrstack::Error::Io {
                    path: path.clone(),
                    source: e,
                })
            })?;
            let est: ExposureEstimate = serde_json::from_str(&text).map_err(|e| {
                CliError::from(hdrstack::Error::Json {
                    path: path.clone(),
                    source: e,
                })
            })?;
            est.validate()?;
            est
        }
        None => ExposureEstimate::from_prior(stack.log_priors(), 10.0, stack.gauge_index()),
    };

    let merged = merge(&stack, &estimate, params, mode.into(), lower, upper)?;
    pfm::write_pfm(&args.out, &merged.hdr)?;

    let channels = merged.hdr.channels;
    let mask_bytes: Vec<u8> = merged
        .fallback_mask
        .chunks_exact(channels)
        .map(|px| if px.iter().any(|&f| f) { 255 } else { 0 })
        .collect();
    let saturated = mask_bytes.iter().filter(|&&b| b != 0).count();
    let mask_path = args.mask.clone().unwrap_or_else(|| default_mask_path(&args.out));
    pfm::write_pgm(&mask_path, merged.hdr.width, merged.hdr.height, &mask_bytes)?;

    println!(
        "wrote {} ({}x{}x{}, {} mode) and {} ({} fully saturated pixels)",
        args.out.display(),
        merged.hdr.height,
        merged.hdr.width,
        channels,
        mode.name(),
        mask_path.display(),
        saturated
    );
    Ok(EXIT_OK)
}

fn render_scene(
    name: &str,
    size: usize,
    height: usize,
    width: usize,
) -> Result<ImageBuf, CliError> {
    match name {
        // The 13-stop banding gradient, normalized so the brightest column
        // sits at the white level of the longest practical exposure.
        "gradient13" => {
            let row = sim::synth_gradient(13, width)?;
            Ok(sim::replicate_rows(&sim::scaled(&row, 1.0 / 8192.0), height)?)
        }
        // A 4.7-decade geometric ramp; its top rows saturate every exposure.
        "log-ramp" => Ok(sim::log_ramp(height, width, 1e-3, 48.0)?),
        _ => {
            let scenes = sim::desk_scenes(size);
            scenes
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, img)| img.clone())
                .ok_or_else(|| {
                    let mut names: Vec<&str> = scenes.iter().map(|(n, _)| n.as_str()).collect();
                    names.extend(["gradient13", "log-ramp"]);
                    CliError::Usage(format!(
                        "unknown scene \"{name}\"; available: {}",
                        names.join(", ")
                    ))
                })
        }
    }
}

pub fn cmd_simulate(args: SimulateArgs, cfg: &FileConfig) -> Result<i32, CliError> {
    let mut times = match &args.times {
        Some(s) => parse_f64_list(s, "exposure time")?,
        None => DEFAULT_TIMES.to_vec(),
    };
    if times.len() < 2 {
        return Err(CliError::Usage("need at least two exposure times".into()));
    }
    times.sort_by(f64::total_cmp);

    let iso = args.iso.or(cfg.iso);
    let profile_src = args
        .noise_profile
        .clone()
        .or_else(|| cfg.noise_profile.clone())
        .unwrap_or_else(|| BUILTIN_PROFILE.into());
    let profile = iso.map(|_| load_profile(&profile_src)).transpose()?;
    let params = profile.as_ref().map(|p| select_params(p, iso)).transpose()?;
    let bit_depth = match args.bit_depth.as_deref() {
        Some(s) => parse_bit_depth(s)?,
        None => Some(14),
    };
    let corruption = args.corruption.unwrap_or(0.15);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let size = args.size.unwrap_or(512);
    let height = args.height.unwrap_or(384);
    let width = args.width.unwrap_or(2048);

    let scene = render_scene(&args.scene, size, height, width)?;
    // Image noise and metadata corruption draw from split streams, matching
    // the evaluation protocol.
    let images = sim::simulate_images(&scene, &times, params, bit_depth, derive_seed(seed, 1))?;
    let truth: Vec<CaptureMetadata> = times.iter().map(|&t| CaptureMetadata::synthetic(t)).collect();
    let corrupted = sim::corrupt_metadata(&truth, corruption, derive_seed(seed, 2))?;

    std::fs::create_dir_all(&args.out).map_err(|e| {
        CliError::from(hdrstack::Error::Io {
            path: args.out.clone(),
            source: e,
        })
    })?;
    for (i, img) in images.iter().enumerate() {
        let path = args.out.join(format!("exposure_{i:02}.pfm"));
        pfm::write_pfm(&path, img)?;
        println!("wrote {} (t {}s)", path.display(), times[i]);
    }
    let true_path = args.out.join("meta_true.json");
    let corr_path = args.out.join("meta_corrupted.json");
    meta::write_metadata(&true_path, &truth)?;
    meta::write_metadata(&corr_path, &corrupted)?;
    println!("wrote {} and {}", true_path.display(), corr_path.display());
    println!(
        "scene {} ({}x{}x{}), {}, bit depth {}, corruption {}, seed {}",
        args.scene,
        scene.height,
        scene.width,
        scene.channels,
        match iso {
            Some(iso) => format!("iso {iso}"),
            None => "noiseless".into(),
        },
        match bit_depth {
            Some(b) => b.to_string(),
            None => "none".into(),
        },
        corruption,
        seed
    );
    Ok(EXIT_OK)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

pub fn cmd_evaluate(args: EvaluateArgs, cfg: &FileConfig) -> Result<i32, CliError> {
    let isos = match &args.isos {
        Some(s) => parse_u32_list(s, "ISO")?,
        None => vec![100, 200, 400, 800],
    };
    let times = match &args.times {
        Some(s) => parse_f64_list(s, "exposure time")?,
        None => DEFAULT_TIMES.to_vec(),
    };
    let (lower, upper) = match args.valid_range.as_deref().or(cfg.valid_range.as_deref()) {
        Some(s) => parse_valid_range(s)?,
        None => (0.01, 0.95),
    };
    let weights = args.weights.or(cfg.weights).unwrap_or(WeightsArg::Calibrated);
    let config = EvalConfig {
        isos,
        repetitions: args.seeds.unwrap_or(20),
        base_seed: args.seed.or(cfg.seed).unwrap_or(1),
        exposure_times: times,
        bit_depth: args.bit_depth.unwrap_or(14),
        corruption_rel_std: args.corruption.unwrap_or(0.15),
        lambda: args.lambda.or(cfg.lambda).unwrap_or(10.0),
        tile_size: args.tile.or(cfg.tile).unwrap_or(16),
        k: args.k.or(cfg.k).unwrap_or(50),
        lower_frac: lower,
        upper_frac: upper,
        wls_weight_mode: weights.into(),
    };

    let profile_src = args
        .noise_profile
        .clone()
        .or_else(|| cfg.noise_profile.clone())
        .unwrap_or_else(|| BUILTIN_PROFILE.into());
    let profile = load_profile(&profile_src)?;

    let all_scenes = sim::desk_scenes(args.size.unwrap_or(512));
    // --scenes filters the built-ins; --scene-files alone replaces them.
    let mut scenes = match &args.scenes {
        None if args.scene_files.is_some() => Vec::new(),
        None => all_scenes,
        Some(list) => {
            let mut picked = Vec::new();
            for name in list.split(',').map(str::trim) {
                match all_scenes.iter().find(|(n, _)| n == name) {
                    Some(s) => picked.push(s.clone()),
                    None => {
                        let names: Vec<&str> =
                            all_scenes.iter().map(|(n, _)| n.as_str()).collect();
                        return Err(CliError::Usage(format!(
                            "unknown scene \"{name}\"; available: {}",
                            names.join(", ")
                        )));
                    }
                }
            }
            picked
        }
    };
    if let Some(list) = &args.scene_files {
        for path in list.split(',').map(str::trim) {
            let img = pfm::read_pfm(Path::new(path))?;
            let name = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.into());
            scenes.push((name, img));
        }
    }

    let methods = match &args.methods {
        None => Method::all().to_vec(),
        Some(list) => {
            let mut picked = Vec::new();
            for name in list.split(',').map(str::trim) {
                match Method::parse(name) {
                    Some(m) => picked.push(m),
                    None => {
                        let names: Vec<&str> =
                            Method::all().iter().map(|m| m.name()).collect();
                        return Err(CliError::Usage(format!(
                            "unknown method \"{name}\"; available: {}",
                            names.join(", ")
                        )));
                    }
                }
            }
            picked
        }
    };

    println!(
        "evaluating {} methods on {} scenes x {} ISO x {} reps ({}x{} px, weights {})",
        methods.len(),
        scenes.len(),
        config.isos.len(),
        config.repetitions,
        args.size.unwrap_or(512),
        args.size.unwrap_or(512),
        weights.name()
    );
    let mut report = eval::run_experiment(&scenes, &config, &methods, &profile)?;

    if args.banding {
        let banding = eval::banding_experiment(
            &profile,
            args.banding_iso.unwrap_or(800),
            args.banding_height.unwrap_or(8192),
            args.banding_width.unwrap_or(128),
            config.corruption_rel_std,
            args.banding_seed.unwrap_or(13),
        )?;
        println!(
            "banding: metadata merge {:.4}, aligned merge {:.4}, ratio {:.1}, monotone {}",
            banding.exif_score,
            banding.aligned_score,
            banding.ratio,
            banding.aligned_monotone_after_smoothing
        );
        report.banding = Some(banding);
    }

    println!(
        "{:<16} {:>5} {:>6} {:>11} {:>9} {:>9}  {}",
        "method", "iso", "cells", "rmse%", "ci95%", "sec/cell", "note"
    );
    for row in report.per_iso.iter().chain(&report.overall) {
        println!(
            "{:<16} {:>5} {:>6} {:>11} {:>9} {:>9}  {}",
            row.method,
            row.iso.map(|i| i.to_string()).unwrap_or_else(|| "all".into()),
            row.n_cells,
            fmt_cell(row.mean_rmse_percent),
            fmt_cell(row.ci95_percent),
            fmt_cell(row.mean_seconds),
            row.note.as_deref().unwrap_or("")
        );
    }
    if !report.failures.is_empty() {
        println!("{} cell failures:", report.failures.len());
        for f in &report.failures {
            println!("  {f}");
        }
    }
    println!("total {:.1}s", report.total_seconds);

    eval::write_report_json(&report, &args.out)?;
    println!("report written to {}", args.out.display());
    if let Some(csv) = &args.csv {
        eval::write_rmse_csv(&report, csv)?;
        println!("csv written to {}", csv.display());
    }
    if let Some(plot) = &args.plot {
        eval::write_plot_data(&report, plot)?;
        println!("plot data written to {}", plot.display());
    }
    Ok(EXIT_OK)
}
