use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mask;

/// Dense `n1 x n2 x channels` image with values in `[0, 1]` (row-major, HWC)
/// plus an occlusion bitmap.
///
/// Occluded pixels read as 0 through [`Image::value`]; backends that
/// understand occlusion can consult [`Image::is_occluded`] instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub n1: usize,
    pub n2: usize,
    pub channels: usize,
    data: Vec<f32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    occluded: Vec<bool>,
}

impl Image {
    pub fn new(n1: usize, n2: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if n1 == 0 || n2 == 0 || channels == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if data.len() != n1 * n2 * channels {
            return Err(Error::Shape(format!(
                "expected {} values for a {n1}x{n2}x{channels} image, got {}",
                n1 * n2 * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            n1,
            n2,
            channels,
            data,
            occluded: Vec::new(),
        })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(n1: usize, n2: usize, value: f32) -> Self {
        Image {
            n1,
            n2,
            channels: 1,
            data: vec![value; n1 * n2],
            occluded: Vec::new(),
        }
    }

    #[inline]
    fn idx(&self, y: usize, x: usize) -> usize {
        y * self.n2 + x
    }

    /// Raw stored value, ignoring occlusion.
    #[inline]
    pub fn raw(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[self.idx(y, x) * self.channels + ch]
    }

    /// Value as seen by an occlusion-unaware backend: 0 when occluded.
    #[inline]
    pub fn value(&self, y: usize, x: usize, ch: usize) -> f32 {
        if self.is_occluded(y, x) {
            0.0
        } else {
            self.raw(y, x, ch)
        }
    }

    #[inline]
    pub fn is_occluded(&self, y: usize, x: usize) -> bool {
        !self.occluded.is_empty() && self.occluded[self.idx(y, x)]
    }

    pub fn any_occluded(&self) -> bool {
        self.occluded.iter().any(|&b| b)
    }

    /// Set every channel of pixel `(y, x)`.
    pub fn set_pixel(&mut self, y: usize, x: usize, value: f32) {
        let base = self.idx(y, x) * self.channels;
        self.data[base..base + self.channels].fill(value);
    }

    pub fn occlude(&mut self, mask: &Mask) {
        if self.occluded.is_empty() {
            self.occluded = vec![false; self.n1 * self.n2];
        }
        for y in mask.y0..(mask.y0 + mask.m1).min(self.n1) {
            let row = y * self.n2;
            for x in mask.x0..(mask.x0 + mask.m2).min(self.n2) {
                self.occluded[row + x] = true;
            }
        }
    }

    pub fn occluded_by(&self, masks: &[&Mask]) -> Image {
        let mut out = self.clone();
        for m in masks {
            out.occlude(m);
        }
        out
    }

    /// Pixel data with occluded pixels zeroed, row-major HWC.
    pub fn masked_data(&self) -> Vec<f32> {
        if self.occluded.is_empty() {
            return self.data.clone();
        }
        let mut out = self.data.clone();
        for (i, &occ) in self.occluded.iter().enumerate() {
            if occ {
                out[i * self.channels..(i + 1) * self.channels].fill(0.0);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occluded_pixels_read_zero() {
        let mut img = Image::filled(4, 4, 0.8);
        img.occlude(&Mask { y0: 1, x0: 1, m1: 2, m2: 2 });
        assert_eq!(img.value(1, 1, 0), 0.0);
        assert_eq!(img.raw(1, 1, 0), 0.8);
        assert_eq!(img.value(0, 0, 0), 0.8);
        assert!(img.is_occluded(2, 2));
        assert!(!img.is_occluded(3, 3));
        let d = img.masked_data();
        assert_eq!(d.iter().filter(|&&v| v == 0.0).count(), 4);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
    }
}
