use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    MaxPool,
    AvgPool,
    Relu,
    Concat,
    BilinearResize,
}

/// Spatial padding applied before (top/left) and after (bottom/right).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub begin: usize,
    pub end: usize,
}

impl Padding {
    pub const fn same(p: usize) -> Self {
        Padding { begin: p, end: p }
    }

    pub const fn total(&self) -> usize {
        self.begin + self.end
    }
}

/// Declarative description of one layer.
///
/// `dilation` spaces the kernel taps apart; a 3x3 kernel with dilation 2
/// covers a 5x5 window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub const fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride: 1,
            padding: Padding::same(0),
            dilation: 1,
            in_channels,
            out_channels,
        }
    }

    pub const fn max_pool(kernel: usize, stride: usize) -> Self {
        LayerSpec::pointwise_kind(LayerKind::MaxPool, kernel, stride)
    }

    pub const fn avg_pool(kernel: usize, stride: usize) -> Self {
        LayerSpec::pointwise_kind(LayerKind::AvgPool, kernel, stride)
    }

    pub const fn relu() -> Self {
        LayerSpec::pointwise_kind(LayerKind::Relu, 1, 1)
    }

    const fn pointwise_kind(kind: LayerKind, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind,
            kernel,
            stride,
            padding: Padding::same(0),
            dilation: 1,
            in_channels: 0,
            out_channels: 0,
        }
    }

    pub const fn with_padding(mut self, padding: usize) -> Self {
        self.padding = Padding::same(padding);
        self
    }

    pub const fn with_asymmetric_padding(mut self, begin: usize, end: usize) -> Self {
        self.padding = Padding { begin, end };
        self
    }

    pub const fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub const fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    /// Extent of the kernel on the input grid: `dilation * (kernel - 1) + 1`.
    pub const fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(
                "LayerSpec",
                format!(
                    "kernel ({}), stride ({}) and dilation ({}) must be at least 1",
                    self.kernel, self.stride, self.dilation
                ),
            ));
        }
        Ok(())
    }

    /// Floor-mode output length along one axis.
    pub fn output_len(&self, input: usize) -> Result<usize> {
        self.validate()?;
        let padded = input + self.padding.total();
        let extent = self.effective_kernel();
        if padded < extent {
            return Err(Error::invalid(
                "output_len",
                format!("kernel extent {extent} exceeds padded input {padded}"),
            ));
        }
        Ok((padded - extent) / self.stride + 1)
    }
}
