use crate::error::{Error, Result};

/// Row-major, channel-interleaved float image. Channels are 1 (gray) or 3 (RGB),
/// matching what the PFM container can hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("consistent dimensions")
    }

    /// Number of pixel sites (not samples; multiply by `channels` for that).
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn sample_count(&self) -> usize {
        self.data.len()
    }

    /// Value at linear pixel index `p` (row-major) and channel `c`.
    #[inline]
    pub fn value(&self, p: usize, c: usize) -> f32 {
        self.data[p * self.channels + c]
    }

    #[inline]
    pub fn set_value(&mut self, p: usize, c: usize, v: f32) {
        self.data[p * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }
}
