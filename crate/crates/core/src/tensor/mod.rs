//! Dense rank-4 tensors and the handful of differentiable operators the
//! network needs.
//!
//! Every operator is a pure function with an explicit backward counterpart.
//! There is no autograd tape: the model module records the intermediate
//! activations it needs and calls the backward functions in reverse order.

mod concat;
mod conv;
mod init;
mod layer;
mod loss;
mod optim;
mod pool;
mod relu;
mod resize;

use std::fmt;

use crate::error::{Error, Result};

pub use concat::{concat_channels, concat_channels_backward};
pub use conv::{conv2d_backward, conv2d_backward_params, conv2d_forward, ConvGrads};
pub use init::{init_weights, InitScheme};
pub use layer::{LayerKind, LayerSpec, Padding};
pub use loss::{l2_loss, l2_loss_with, LossNorm};
pub use optim::{sgd_update, ParamState};
pub use pool::{avg_pool, avg_pool_backward, max_pool, max_pool_backward, MaxPoolOutput};
pub use relu::{relu, relu_backward};
pub use resize::{bilinear_resize, bilinear_resize_backward};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `height x width` plane.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Row-major NCHW `f32` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                op: "Tensor::from_vec",
                dim: "data length",
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// A 1x1xHxW tensor from a single plane.
    pub fn from_plane(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::from_vec(Shape::new(1, 1, height, width), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of one batch item.
    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.shape.channels * self.shape.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.shape.channels * self.shape.plane();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.plane(b, c)[y * self.shape.width + x]
    }

    /// Sum accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Largest magnitude; NaN if any element is NaN.
    pub fn max_abs(&self) -> f32 {
        self.data
            .iter()
            .fold(0.0f32, |m, v| if m.is_nan() || v.is_nan() { f32::NAN } else { m.max(v.abs()) })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Keeps the top-left `height x width` window of every plane.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        let s = self.shape;
        if height > s.height || width > s.width {
            return Err(Error::invalid(
                "crop",
                format!("cannot crop {s} to {height}x{width}"),
            ));
        }
        let out_shape = Shape::new(s.batch, s.channels, height, width);
        let mut data = Vec::with_capacity(out_shape.len());
        for b in 0..s.batch {
            for c in 0..s.channels {
                let plane = self.plane(b, c);
                for y in 0..height {
                    data.extend_from_slice(&plane[y * s.width..y * s.width + width]);
                }
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Inverse of [`Tensor::crop`] for gradients: embeds each plane at the
    /// top-left of a zero `height x width` plane.
    pub fn zero_extend(&self, height: usize, width: usize) -> Result<Tensor> {
        let s = self.shape;
        if height < s.height || width < s.width {
            return Err(Error::invalid(
                "zero_extend",
                format!("cannot extend {s} to {height}x{width}"),
            ));
        }
        let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, height, width));
        for b in 0..s.batch {
            for c in 0..s.channels {
                let src = self.plane(b, c);
                let dst = out.plane_mut(b, c);
                for y in 0..s.height {
                    dst[y * width..y * width + s.width]
                        .copy_from_slice(&src[y * s.width..(y + 1) * s.width]);
                }
            }
        }
        Ok(out)
    }

    /// Stacks equally shaped single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or(Error::Empty { what: "stack input" })?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut batch = 0;
        for t in items {
            let ts = t.shape;
            if (ts.channels, ts.height, ts.width) != (s.channels, s.height, s.width) {
                return Err(Error::IncompatibleShapes {
                    op: "stack",
                    left: s,
                    right: ts,
                });
            }
            batch += ts.batch;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(batch, s.channels, s.height, s.width),
            data,
        })
    }
}

pub(crate) fn expect_dim(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    actual: usize,
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            op,
            dim,
            expected,
            actual,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn crop_and_zero_extend_are_adjoint_on_the_window() {
        let t = testutil::random(Shape::new(2, 3, 5, 6), 1);
        let c = t.crop(3, 4).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 3, 3, 4));
        assert_eq!(c.at(1, 2, 2, 3), t.at(1, 2, 2, 3));
        let e = c.zero_extend(5, 6).unwrap();
        assert_eq!(e.at(1, 2, 2, 3), t.at(1, 2, 2, 3));
        assert_eq!(e.at(1, 2, 4, 5), 0.0);
        assert_eq!(e.sum(), c.sum());
    }

    #[test]
    fn stack_concatenates_batches() {
        let a = Tensor::full(Shape::new(1, 2, 3, 3), 1.0);
        let b = Tensor::full(Shape::new(1, 2, 3, 3), 2.0);
        let s = Tensor::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 3, 3));
        assert_eq!(s.plane(1, 0)[0], 2.0);
        let bad = Tensor::stack(&[
            Tensor::zeros(Shape::new(1, 1, 2, 2)),
            Tensor::zeros(Shape::new(1, 1, 3, 2)),
        ]);
        assert!(bad.is_err());
    }
}
