//! Reduced-system construction: validity masks, tile decomposition, and
//! greedy extraction of k edge-disjoint spanning trees per tile over the
//! exposure multigraph.
//!
//! Each selected location (pixel, channel) shared by two exposures yields one
//! equation e_i - e_j = ln y_i - ln y_j with a weight set by `WeightMode`.
//! Within a tile, for each consecutive pair (i, i+1) the builder repeatedly
//! takes the highest-weighted jointly valid location and connects i to the
//! longest exposure still valid there, so each pass over all pairs
//! contributes one spanning tree of the exposure graph. Trees are
//! edge-disjoint because a location consumed for pair (i, i+1) is never
//! offered to that pair again. A location that saturates in every longer
//! exposure degrades to the consecutive edge, so a stack whose bright content
//! never survives two steps yields the pairwise chain.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::noise::NoiseParameters;
use crate::stack::ExposureStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Uniform,
    CalibrationFree,
    Calibrated,
}

/// Which edge the scan step emits: the greedy builder promotes each selected
/// location to the longest valid exposure; the chain variant always links
/// consecutive exposures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    GreedyMst,
    PairwiseChain,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct BuildConfig {
    pub tile_size: usize,
    pub k: usize,
    pub weight_mode: WeightMode,
    pub topology: Topology,
    pub lower_frac: f64,
    pub upper_frac: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            k: 50,
            weight_mode: WeightMode::CalibrationFree,
            topology: Topology::GreedyMst,
            lower_frac: 0.01,
            upper_frac: 0.95,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size < 1 {
            return Err(Error::Domain("tile size must be at least 1".into()));
        }
        if self.k < 1 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        check_thresholds(self.lower_frac, self.upper_frac)
    }
}

pub(crate) fn check_thresholds(lower_frac: f64, upper_frac: f64) -> Result<()> {
    let ordered = lower_frac.is_finite()
        && upper_frac.is_finite()
        && 0.0 <= lower_frac
        && lower_frac < upper_frac
        && upper_frac <= 1.0;
    if !ordered {
        return Err(Error::Domain(format!(
            "validity thresholds must satisfy 0 <= lower < upper <= 1, got {lower_frac}:{upper_frac}"
        )));
    }
    Ok(())
}

/// One selected equation: e_i - e_j = m with weight w, provenance kept for
/// diagnostics and per-tile robust filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairEquation {
    pub i: u16,
    pub j: u16,
    pub channel: u8,
    pub p: u32,
    pub tile_id: u32,
    pub m: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedSystem {
    pub equations: Vec<PairEquation>,
    pub n_exposures: usize,
    pub tiles_used: BTreeSet<u32>,
}

impl ReducedSystem {
    /// Normalizes equation order to (tile, i, j, p, channel) so the output is
    /// independent of tile scheduling, and validates every row.
    pub fn from_equations(mut equations: Vec<PairEquation>, n_exposures: usize) -> Result<Self> {
        for eq in &equations {
            let shape_ok = (eq.i as usize) < (eq.j as usize) && (eq.j as usize) < n_exposures;
            if !shape_ok {
                return Err(Error::Domain(format!(
                    "equation indices ({}, {}) invalid for {} exposures",
                    eq.i, eq.j, n_exposures
                )));
            }
            if !(eq.w.is_finite() && eq.w > 0.0 && eq.m.is_finite()) {
                return Err(Error::Domain(format!(
                    "equation at pixel {} has m={}, w={}",
                    eq.p, eq.m, eq.w
                )));
            }
        }
        equations.sort_unstable_by(|a, b| {
            (a.tile_id, a.i, a.j, a.p, a.channel).cmp(&(b.tile_id, b.i, b.j, b.p, b.channel))
        });
        let tiles_used = equations.iter().map(|eq| eq.tile_id).collect();
        Ok(Self {
            equations,
            n_exposures,
            tiles_used,
        })
    }

    pub fn empty(n_exposures: usize) -> Self {
        Self {
            equations: Vec::new(),
            n_exposures,
            tiles_used: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    /// Exposures with no equation path to `from`. Empty means connected
    /// (isolated only matters for vertices other than `from` itself).
    pub fn unreachable_from(&self, from: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n_exposures).collect();
        fn root(parent: &mut [usize], mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for eq in &self.equations {
            let a = root(&mut parent, eq.i as usize);
            let b = root(&mut parent, eq.j as usize);
            parent[a] = b;
        }
        let anchor = root(&mut parent, from);
        (0..self.n_exposures)
            .filter(|&v| root(&mut parent, v) != anchor)
            .collect()
    }

    /// Contiguous equation ranges per tile; relies on the sorted order.
    pub fn tile_ranges(&self) -> Vec<(u32, Range<usize>)> {
        let mut ranges = Vec::with_capacity(self.tiles_used.len());
        let mut start = 0;
        while start < self.equations.len() {
            let tid = self.equations[start].tile_id;
            let mut end = start + 1;
            while end < self.equations.len() && self.equations[end].tile_id == tid {
                end += 1;
            }
            ranges.push((tid, start..end));
            start = end;
        }
        ranges
    }

    /// Total selected edge weight (sum over equations).
    pub fn total_weight(&self) -> f64 {
        self.equations.iter().map(|eq| eq.w).sum()
    }

    /// Dumps equations with provenance for debugging; not a stable format.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Per-sample validity: strictly inside (lower_frac * white, upper_frac *
/// white). Saturated and noise-floor samples carry biased or unstable log
/// values and are excluded from selection and merging alike.
pub fn validity_mask(
    image: &ImageBuf,
    white_level: f64,
    lower_frac: f64,
    upper_frac: f64,
) -> Result<Vec<bool>> {
    check_thresholds(lower_frac, upper_frac)?;
    if !(white_level.is_finite() && white_level > 0.0) {
        return Err(Error::Domain(format!("white level must be positive, got {white_level}")));
    }
    let lo = lower_frac * white_level;
    let hi = upper_frac * white_level;
    Ok(image
        .data
        .iter()
        .map(|&y| {
            let y = y as f64;
            lo < y && y < hi
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Row-major cover of an H x W image by t x t tiles; edge tiles are smaller.
pub fn tile_grid(height: usize, width: usize, tile_size: usize) -> Result<Vec<TileRect>> {
    if tile_size < 1 {
        return Err(Error::Domain("tile size must be at least 1".into()));
    }
    let mut tiles = Vec::new();
    let mut row0 = 0;
    while row0 < height {
        let rows = tile_size.min(height - row0);
        let mut col0 = 0;
        while col0 < width {
            let cols = tile_size.min(width - col0);
            tiles.push(TileRect {
                row0,
                col0,
                rows,
                cols,
            });
            col0 += cols;
        }
        row0 += rows;
    }
    Ok(tiles)
}

enum ResolvedWeights {
    Uniform,
    CalibrationFree,
    /// Per-channel (alpha, beta), already mapped for mono images.
    Calibrated(Vec<(f64, f64)>),
}

impl ResolvedWeights {
    fn pair_weight(&self, y_a: f64, y_b: f64, channel: usize) -> f64 {
        match self {
            ResolvedWeights::Uniform => 1.0,
            ResolvedWeights::CalibrationFree => 1.0 / (1.0 / y_a + 1.0 / y_b),
            ResolvedWeights::Calibrated(ab) => {
                let (alpha, beta) = ab[channel];
                let va = (alpha * y_a + beta) / (y_a * y_a);
                let vb = (alpha * y_b + beta) / (y_b * y_b);
                1.0 / (va + vb)
            }
        }
    }
}

fn resolve_weights(
    mode: WeightMode,
    noise: Option<&NoiseParameters>,
    channels: usize,
) -> Result<ResolvedWeights> {
    match mode {
        WeightMode::Uniform => Ok(ResolvedWeights::Uniform),
        WeightMode::CalibrationFree => Ok(ResolvedWeights::CalibrationFree),
        WeightMode::Calibrated => {
            let params = noise.ok_or_else(|| {
                Error::Domain("calibrated weights require noise parameters".into())
            })?;
            let ab = (0..channels)
                .map(|c| params.channel(c, channels))
                .collect();
            Ok(ResolvedWeights::Calibrated(ab))
        }
    }
}

fn select_tile_equations(
    images: &[ImageBuf],
    masks: &[Vec<bool>],
    tile: &TileRect,
    tile_id: u32,
    k: usize,
    topology: Topology,
    weights: &ResolvedWeights,
) -> Vec<PairEquation> {
    let n = images.len();
    let channels = images[0].channels;
    let width = images[0].width;
    let mut out = Vec::new();
    let mut candidates: Vec<(f64, u32, u8)> = Vec::with_capacity(tile.rows * tile.cols * channels);
    for i in 0..n - 1 {
        candidates.clear();
        for r in tile.row0..tile.row0 + tile.rows {
            for c in tile.col0..tile.col0 + tile.cols {
                let p = r * width + c;
                for ch in 0..channels {
                    let s = p * channels + ch;
                    if masks[i][s] && masks[i + 1][s] {
                        let y_a = images[i].data[s] as f64;
                        let y_b = images[i + 1].data[s] as f64;
                        candidates.push((weights.pair_weight(y_a, y_b, ch), p as u32, ch as u8));
                    }
                }
            }
        }
        // Highest weight first; pixel index then channel break ties so the
        // result is identical across platforms and schedules.
        candidates.sort_unstable_by(|a, b| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        // The t-th extraction takes the t-th best location for this pair;
        // a chosen location leaves this pair's pool, so one edge each.
        for &(_, p, ch) in candidates.iter().take(k) {
            let s = p as usize * channels + ch as usize;
            let j = match topology {
                Topology::PairwiseChain => i + 1,
                // Candidate validity in i+1 guarantees the fallback edge.
                Topology::GreedyMst => {
                    (i + 2..n).rev().find(|&j| masks[j][s]).unwrap_or(i + 1)
                }
            };
            let y_i = images[i].data[s] as f64;
            let y_j = images[j].data[s] as f64;
            out.push(PairEquation {
                i: i as u16,
                j: j as u16,
                channel: ch,
                p,
                tile_id,
                m: y_i.ln() - y_j.ln(),
                w: weights.pair_weight(y_i, y_j, ch as usize),
            });
        }
    }
    out
}

/// Builds the reduced system for a whole stack. Tiles are processed in
/// parallel; the result is order-normalized and therefore deterministic.
/// Fails when the exposure graph is globally disconnected, naming the
/// exposures that share no valid content with the longest exposure.
pub fn build_system(
    stack: &ExposureStack,
    config: &BuildConfig,
    noise: Option<&NoiseParameters>,
) -> Result<ReducedSystem> {
    config.validate()?;
    let weights = resolve_weights(config.weight_mode, noise, stack.channels())?;
    let masks: Vec<Vec<bool>> = stack
        .images()
        .iter()
        .zip(stack.metadata_all())
        .map(|(img, m)| validity_mask(img, m.white_level, config.lower_frac, config.upper_frac))
        .collect::<Result<_>>()?;
    let tiles = tile_grid(stack.height(), stack.width(), config.tile_size)?;
    let per_tile: Vec<Vec<PairEquation>> = (0..tiles.len())
        .into_par_iter()
        .map(|tid| {
            select_tile_equations(
                stack.images(),
                &masks,
                &tiles[tid],
                tid as u32,
                config.k,
                config.topology,
                &weights,
            )
        })
        .collect();
    let equations: Vec<PairEquation> = per_tile.into_iter().flatten().collect();
    let system = ReducedSystem::from_equations(equations, stack.len())?;
    let unreachable = system.unreachable_from(stack.gauge_index());
    if !unreachable.is_empty() {
        return Err(Error::Disconnected { unreachable });
    }
    Ok(system)
}
