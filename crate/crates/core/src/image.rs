use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Shape, Tensor};

/// 8-bit single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                op: "GrayImage::new",
                dim: "pixel count",
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// `1 x 1 x H x W` tensor of raw 0-255 values.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f32).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data).expect("dims match")
    }

    /// First plane of `t`, rounded and clamped to 0-255.
    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        GrayImage {
            width: s.width,
            height: s.height,
            pixels: t.plane(0, 0).iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }

    /// Half-pixel bilinear resampling to `width x height`.
    pub fn resize(&self, width: usize, height: usize) -> Result<GrayImage> {
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        Ok(GrayImage::from_tensor(&bilinear_resize(&self.to_tensor(), height, width)?))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(
                "GrayImage::crop",
                format!(
                    "window {width}x{height}@({x0},{y0}) exceeds {}x{}",
                    self.width, self.height
                ),
            ));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Mirror-extends the right and bottom edges so both sides reach at
    /// least the given minimums.
    pub fn reflect_pad_to(&self, min_width: usize, min_height: usize) -> GrayImage {
        let (w, h) = (self.width.max(min_width), self.height.max(min_height));
        if (w, h) == (self.width, self.height) || self.width == 0 || self.height == 0 {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let r = i % period;
            if r < n {
                r
            } else {
                period - r
            }
        };
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = reflect(y, self.height);
            for x in 0..w {
                pixels.push(self.pixels[sy * self.width + reflect(x, self.width)]);
            }
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width.max(1)) {
            pixels.extend(row.iter().rev());
        }
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}
