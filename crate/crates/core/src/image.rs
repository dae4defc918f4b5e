//! Planar floating-point images and PNG I/O.

use std::path::Path;

use ::image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit depth used when exporting PNG files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[default]
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// An `H×W×C` image with intensities nominally in `[0, 1]`.
///
/// Pixels are stored channel-planar (`C×H×W`), which is also the layout the
/// convolution engine consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Wraps planar `C×H×W` data.
    pub fn from_planar(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "empty image {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(channel, y, x)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: f64) {
        self.data[(channel * self.height + y) * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clip(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Image {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Rounds every value to the nearest level representable at `depth`.
    pub fn quantized(&self, depth: BitDepth) -> Image {
        let max = depth.max_value();
        self.map(|v| (v.clamp(0.0, 1.0) * max).round() / max)
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let decoded = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(decoded))
    }

    fn from_dynamic(img: DynamicImage) -> Image {
        let gray = matches!(
            img,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLumaA16(_)
        );
        let sixteen = matches!(
            img,
            DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
                | DynamicImage::ImageRgb16(_)
                | DynamicImage::ImageRgba16(_)
        );
        let (width, height) = (img.width() as usize, img.height() as usize);
        match (gray, sixteen) {
            (true, false) => {
                let buf = img.into_luma8();
                let data = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
                Image { height, width, channels: 1, data }
            }
            (true, true) => {
                let buf = img.into_luma16();
                let data = buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
                Image { height, width, channels: 1, data }
            }
            (false, false) => {
                let buf = img.into_rgb8();
                Image::from_fn(height, width, 3, |c, y, x| {
                    buf.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
                })
            }
            (false, true) => {
                let buf = img.into_rgb16();
                Image::from_fn(height, width, 3, |c, y, x| {
                    buf.get_pixel(x as u32, y as u32).0[c] as f64 / 65535.0
                })
            }
        }
    }

    /// Writes a PNG. Values are clamped to `[0, 1]` and rounded to `depth`.
    pub fn save_png(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let max = depth.max_value();
        let level = |v: f64| (v.clamp(0.0, 1.0) * max).round();
        let dynamic = match (self.channels, depth) {
            (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
                Luma([level(self.get(0, y as usize, x as usize)) as u8])
            })),
            (1, BitDepth::Sixteen) => {
                DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
                    Luma([level(self.get(0, y as usize, x as usize)) as u16])
                }))
            }
            (3, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
                let (y, x) = (y as usize, x as usize);
                Rgb([0, 1, 2].map(|c| level(self.get(c, y, x)) as u8))
            })),
            (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
                let (y, x) = (y as usize, x as usize);
                Rgb([0, 1, 2].map(|c| level(self.get(c, y, x)) as u16))
            })),
            (c, _) => {
                return Err(Error::Shape(format!("cannot export {c}-channel image as PNG")));
            }
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        dynamic.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Places images side by side (all must share height and channel count).
    pub fn hconcat(images: &[&Image]) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        if images
            .iter()
            .any(|i| i.height != first.height || i.channels != first.channels)
        {
            return Err(Error::Shape("montage images differ in height or channels".into()));
        }
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut out = Image::zeros(first.height, width, first.channels);
        let mut offset = 0;
        for img in images {
            for c in 0..img.channels {
                for y in 0..img.height {
                    for x in 0..img.width {
                        out.set(c, y, offset + x, img.get(c, y, x));
                    }
                }
            }
            offset += img.width;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_16_bit_is_within_half_a_level() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, 3, |c, y, x| ((c * 31 + y * 7 + x) % 17) as f64 / 16.0);
        let path = dir.path().join("a.png");
        img.save_png(&path, BitDepth::Sixteen).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.dims(), img.dims());
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 65535.0 + 1e-12);
        assert_eq!(back, img.quantized(BitDepth::Sixteen));
    }

    #[test]
    fn gray_8_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(4, 4, 1, |_, y, x| if (x + y) % 2 == 0 { 1.0 } else { 0.0 });
        let path = dir.path().join("m.png");
        img.save_png(&path, BitDepth::Eight).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), img);
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let img = Image::zeros(8, 8, 3);
        assert!(img.crop(4, 4, 5, 2).is_err());
        assert_eq!(img.crop(4, 4, 4, 2).unwrap().dims(), (4, 2, 3));
    }

    #[test]
    fn from_planar_checks_length() {
        assert!(Image::from_planar(2, 2, 3, vec![0.0; 11]).is_err());
    }
}
