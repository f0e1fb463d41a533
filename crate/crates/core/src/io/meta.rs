//! JSON sidecar I/O: capture metadata arrays and noise profiles.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::NoiseProfile;
use crate::stack::CaptureMetadata;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a metadata sidecar: a JSON array with one entry per image, in the
/// same order as the image files it accompanies.
pub fn read_metadata(path: &Path) -> Result<Vec<CaptureMetadata>> {
    let entries: Vec<CaptureMetadata> =
        serde_json::from_reader(open(path)?).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
    for (i, m) in entries.iter().enumerate() {
        m.validate()
            .map_err(|e| Error::InvalidMetadata(format!("entry {i}: {e}")))?;
    }
    Ok(entries)
}

pub fn write_metadata(path: &Path, entries: &[CaptureMetadata]) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, entries).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_noise_profile(path: &Path) -> Result<NoiseProfile> {
    let profile: NoiseProfile =
        serde_json::from_reader(open(path)?).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
    profile.validate()?;
    Ok(profile)
}

pub fn write_noise_profile(path: &Path, profile: &NoiseProfile) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, profile).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
