use crate::error::{Error, Result};
use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Deserialize)]
struct RawImage {
    side: usize,
    pixels: Vec<f32>,
}

impl TryFrom<RawImage> for Image {
    type Error = Error;

    fn try_from(raw: RawImage) -> Result<Self> {
        Image::new(raw.side, raw.pixels)
    }
}

/// Square grayscale image, row-major, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawImage")]
pub struct Image {
    side: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(side: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "{} pixels for a {side}x{side} image",
                pixels.len()
            )));
        }
        Ok(Self { side, pixels })
    }

    pub fn filled(side: usize, value: f32) -> Self {
        Self {
            side,
            pixels: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.side + x]
    }

    pub fn mean(&self) -> f32 {
        self.pixels.iter().sum::<f32>() / self.pixels.len() as f32
    }

    /// `‖a − b‖₂ / √P`.
    pub fn rms_distance(&self, other: &Image) -> f32 {
        let ss: f32 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (ss / self.pixels.len() as f32).sqrt()
    }

    /// Block-average pooling by an integer factor.
    pub fn avg_pool(&self, factor: usize) -> Image {
        let out_side = self.side / factor;
        let mut out = vec![0.0; out_side * out_side];
        let inv = 1.0 / (factor * factor) as f32;
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += self.get(ox * factor + dx, oy * factor + dy);
                    }
                }
                out[oy * out_side + ox] = s * inv;
            }
        }
        Image {
            side: out_side,
            pixels: out,
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(1, self.pixels.len(), self.pixels.clone()).expect("row vector")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_blocks() {
        let img = Image::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.avg_pool(2).pixels(), &[0.5]);
    }

    #[test]
    fn rms_distance_extremes() {
        let a = Image::filled(4, 0.0);
        let b = Image::filled(4, 1.0);
        assert_eq!(a.rms_distance(&a), 0.0);
        assert_eq!(a.rms_distance(&b), 1.0);
    }

    #[test]
    fn wrong_pixel_count_is_rejected() {
        assert!(Image::new(3, vec![0.0; 8]).is_err());
    }
}
