use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Real;

/// A single `C×H×W` activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_image(image: &Image) -> Self {
        Tensor {
            channels: image.channels(),
            height: image.height(),
            width: image.width(),
            data: image.data().iter().map(|&v| T::from_f64_lossy(v)).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_planar(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|v| v.as_f64()).collect(),
        )
        .expect("tensor dimensions are consistent")
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, channel: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn same_spatial(&self, other: &Tensor<T>) -> bool {
        self.height == other.height && self.width == other.width
    }
}
