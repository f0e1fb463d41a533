//! Portable FloatMap (PFM) reader/writer.
//!
//! Header is three text lines: `PF` (RGB) or `Pf` (grayscale), `width height`,
//! and a scale factor whose sign encodes endianness (negative = little-endian).
//! Sample rows follow bottom-up as raw 32-bit floats. Round-trips are
//! bit-exact; the scale magnitude is not applied to sample values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuf;

fn read_header_line<R: Read>(reader: &mut R, path: &Path) -> Result<String> {
    // Header tokens are terminated by a single whitespace byte; binary data
    // follows immediately after the third one, so read byte-wise.
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 128 {
            return Err(Error::PfmFormat {
                path: path.to_path_buf(),
                reason: "header line too long".into(),
            });
        }
    }
    String::from_utf8(line).map_err(|_| Error::PfmFormat {
        path: path.to_path_buf(),
        reason: "header is not valid UTF-8".into(),
    })
}

pub fn read_pfm(path: &Path) -> Result<ImageBuf> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);

    let magic = read_header_line(&mut reader, path)?;
    let channels = match magic.trim() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::PfmFormat {
                path: path.to_path_buf(),
                reason: format!("unknown magic {other:?}"),
            })
        }
    };

    let dims = read_header_line(&mut reader, path)?;
    let mut it = dims.split_whitespace();
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(w), Some(h), None) => {
            let w: usize = w.parse().map_err(|_| Error::PfmFormat {
                path: path.to_path_buf(),
                reason: format!("bad dimensions line {dims:?}"),
            })?;
            let h: usize = h.parse().map_err(|_| Error::PfmFormat {
                path: path.to_path_buf(),
                reason: format!("bad dimensions line {dims:?}"),
            })?;
            (w, h)
        }
        _ => {
            return Err(Error::PfmFormat {
                path: path.to_path_buf(),
                reason: format!("bad dimensions line {dims:?}"),
            })
        }
    };
    if width == 0 || height == 0 {
        return Err(Error::PfmFormat {
            path: path.to_path_buf(),
            reason: "zero-sized image".into(),
        });
    }

    let scale_line = read_header_line(&mut reader, path)?;
    let scale: f32 = scale_line.trim().parse().map_err(|_| Error::PfmFormat {
        path: path.to_path_buf(),
        reason: format!("bad scale line {scale_line:?}"),
    })?;
    let little_endian = scale < 0.0;

    let n = width * height * channels;
    let mut bytes = vec![0u8; n * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;

    // Rows are stored bottom-up; ImageBuf keeps row 0 at the top.
    let row_len = width * channels;
    let mut data = vec![0f32; n];
    for file_row in 0..height {
        let image_row = height - 1 - file_row;
        let src = &bytes[file_row * row_len * 4..(file_row + 1) * row_len * 4];
        let dst = &mut data[image_row * row_len..(image_row + 1) * row_len];
        for (d, chunk) in dst.iter_mut().zip(src.chunks_exact(4)) {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            *d = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }

    ImageBuf::new(height, width, channels, data)
}

pub fn write_pfm(path: &Path, image: &ImageBuf) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };

    let magic = if image.channels == 3 { "PF" } else { "Pf" };
    write!(writer, "{magic}\n{} {}\n-1.0\n", image.width, image.height).map_err(io_err)?;

    let row_len = image.width * image.channels;
    for image_row in (0..image.height).rev() {
        let row = &image.data[image_row * row_len..(image_row + 1) * row_len];
        let mut bytes = Vec::with_capacity(row_len * 4);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&bytes).map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

/// Binary PGM (P5) writer, used for saturation masks.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "PGM {width}x{height} needs {} bytes, got {}",
            width * height,
            pixels.len()
        )));
    }
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    write!(writer, "P5\n{width} {height}\n255\n").map_err(io_err)?;
    writer.write_all(pixels).map_err(io_err)?;
    writer.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_rgb_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.pfm");
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 * 0.25 - 1.5).collect();
        let img = ImageBuf::new(2, 3, 3, data).unwrap();
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn round_trip_gray_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gray.pfm");
        let img = ImageBuf::new(3, 2, 1, vec![0.0, -0.5, 1e-20, 3e8, 0.125, -42.0]).unwrap();
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        // 2x1 grayscale: top=1.0, bottom=2.0. The file must carry the bottom
        // row first.
        let dir = tempdir().unwrap();
        let path = dir.path().join("rows.pfm");
        let img = ImageBuf::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        write_pfm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = bytes.len() - 8;
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        let second = f32::from_le_bytes(bytes[header_len + 4..].try_into().unwrap());
        assert_eq!(first, 2.0);
        assert_eq!(second, 1.0);
    }

    #[test]
    fn reads_big_endian_scale() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        std::fs::write(&path, bytes).unwrap();
        let img = read_pfm(&path).unwrap();
        assert_eq!(img.data, vec![1.5]);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"P6\n1 1\n-1.0\n----").unwrap();
        assert!(matches!(
            read_pfm(&path),
            Err(Error::PfmFormat { .. })
        ));
    }

    #[test]
    fn rejects_truncated_data() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.pfm");
        std::fs::write(&path, b"Pf\n2 2\n-1.0\n\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_any_finite(values in prop::collection::vec(-1e30f32..1e30, 12),
                                 gray in any::<bool>()) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("prop.pfm");
            let img = if gray {
                ImageBuf::new(4, 3, 1, values).unwrap()
            } else {
                ImageBuf::new(2, 2, 3, values).unwrap()
            };
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            prop_assert_eq!(img, back);
        }
    }
}
