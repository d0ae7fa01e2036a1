//! RGB image container: H x W x 3 values in [0, 1], stored row-major (HWC).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// All-black image.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("image dimensions must be positive"));
        }
        Ok(Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        })
    }

    /// Single uniform color.
    pub fn uniform(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut img = Image::zeros(height, width)?;
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img.validate_range()?;
        Ok(img)
    }

    /// Build from HWC data; values must already be finite and in [0, 1].
    pub fn from_pixels(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("image dimensions must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "pixel buffer has {} values, expected {}x{}x3 = {}",
                data.len(),
                height,
                width,
                height * width * 3
            )));
        }
        let img = Image {
            height,
            width,
            data,
        };
        img.validate_range()?;
        Ok(img)
    }

    fn validate_range(&self) -> Result<()> {
        for &v in &self.data {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("pixel value {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Crop a (size x size) window with top-left corner (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Result<Image> {
        if y0 + size > self.height || x0 + size > self.width {
            return Err(Error::shape(format!(
                "crop {}x{} at ({}, {}) exceeds image {}x{}",
                size, size, y0, x0, self.height, self.width
            )));
        }
        let mut out = Image::zeros(size, size)?;
        for y in 0..size {
            for x in 0..size {
                for c in 0..3 {
                    out.set(y, x, c, self.get(y0 + y, x0 + x, c));
                }
            }
        }
        Ok(out)
    }

    /// Pack into a [1, 3, H, W] tensor for the network.
    pub fn to_tensor_nchw<T: Scalar>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let mut data = vec![T::zero(); 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[(c * h + y) * w + x] = T::from_f64(self.get(y, x, c));
                }
            }
        }
        Tensor::from_vec(&[1, 3, h, w], data).expect("sized above")
    }

    /// Unpack from a [1, 3, H, W] (or [3, H, W]) tensor, clamping to [0, 1].
    pub fn from_tensor_nchw<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        let (h, w) = match t.shape()[..] {
            [1, 3, h, w] | [3, h, w] => (h, w),
            _ => {
                return Err(Error::shape(format!(
                    "expected [1,3,H,W] or [3,H,W] tensor, got {:?}",
                    t.shape()
                )))
            }
        };
        let mut img = Image::zeros(h, w)?;
        let data = t.data();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = data[(c * h + y) * w + x].as_f64().clamp(0.0, 1.0);
                    img.set(y, x, c, v);
                }
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::from_pixels(1, 1, vec![0.0, 0.5, 1.1]).is_err());
        assert!(Image::from_pixels(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn tensor_round_trip() {
        let mut img = Image::zeros(4, 5).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    img.set(y, x, c, ((y * 5 + x) * 3 + c) as f64 / 60.0);
                }
            }
        }
        let t: Tensor<f64> = img.to_tensor_nchw();
        let back = Image::from_tensor_nchw(&t).unwrap();
        assert_eq!(img, back);
    }
}
