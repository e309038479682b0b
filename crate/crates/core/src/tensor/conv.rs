//! Dilated 2-D convolution via chunked im2col and SGEMM.
//!
//! The column buffer is built a few output rows at a time so it stays in
//! cache; weights are `(out_channels, in_channels, k, k)` which, flattened,
//! is already the `out x (in*k*k)` GEMM operand.

use super::{expect_dim, LayerKind, LayerSpec, Shape, Tensor};
use crate::error::{Error, Result};

/// Target size of one column chunk, in floats.
const COL_CHUNK: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    /// `None` when the caller asked for parameter gradients only.
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    in_ch: usize,
    out_ch: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    /// Pointwise 1x1 stride-1 unpadded convs read the input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_CHUNK / (self.col_rows() * self.out_w).max(1)).clamp(1, self.out_h)
    }
}

fn geometry(input: Shape, weights: Shape, spec: &LayerSpec) -> Result<Geometry> {
    spec.validate()?;
    if spec.kind != LayerKind::Conv {
        return Err(Error::invalid("conv2d", format!("layer kind {:?}", spec.kind)));
    }
    expect_dim("conv2d", "weight height", spec.kernel, weights.height)?;
    expect_dim("conv2d", "weight width", spec.kernel, weights.width)?;
    expect_dim("conv2d", "input channels", weights.channels, input.channels)?;
    if spec.in_channels != 0 {
        expect_dim("conv2d", "spec in_channels", spec.in_channels, input.channels)?;
    }
    if spec.out_channels != 0 {
        expect_dim("conv2d", "spec out_channels", spec.out_channels, weights.batch)?;
    }
    Ok(Geometry {
        in_ch: input.channels,
        out_ch: weights.batch,
        in_h: input.height,
        in_w: input.width,
        out_h: spec.output_len(input.height)?,
        out_w: spec.output_len(input.width)?,
        k: spec.kernel,
        stride: spec.stride,
        dilation: spec.dilation,
        pad_top: spec.padding.begin,
        pad_left: spec.padding.begin,
    })
}

/// Range of output columns `ox` for which `ox * stride + offset` lands in
/// `0..len`.
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 { ((-offset) + s - 1) / s } else { 0 };
    let room = len as isize - offset;
    let hi = if room > 0 { (room + s - 1) / s } else { 0 };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len).max(lo);
    (lo, hi)
}

/// Fills `col` (rows = in_ch*k*k, cols = (row_end-row_start)*out_w).
fn im2col(g: &Geometry, image: &[f32], row_start: usize, row_end: usize, col: &mut [f32]) {
    let ncols = (row_end - row_start) * g.out_w;
    let plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let src_plane = &image[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                let x_off = (kx * g.dilation) as isize - g.pad_left as isize;
                let (lo, hi) = valid_range(x_off, g.stride, g.in_w, g.out_w);
                for (r, oy) in (row_start..row_end).enumerate() {
                    let out_row = &mut dst[r * g.out_w..(r + 1) * g.out_w];
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize || lo == hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &src_plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    if g.stride == 1 {
                        let a = (lo as isize + x_off) as usize;
                        out_row[lo..hi].copy_from_slice(&src[a..a + (hi - lo)]);
                    } else {
                        for (i, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[(((i + lo) * g.stride) as isize + x_off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column chunk back into an image gradient.
fn col2im(g: &Geometry, col: &[f32], row_start: usize, row_end: usize, image: &mut [f32]) {
    let ncols = (row_end - row_start) * g.out_w;
    let plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let dst_plane = &mut image[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * ncols..(row + 1) * ncols];
                let x_off = (kx * g.dilation) as isize - g.pad_left as isize;
                let (lo, hi) = valid_range(x_off, g.stride, g.in_w, g.out_w);
                if lo == hi {
                    continue;
                }
                for (r, oy) in (row_start..row_end).enumerate() {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let in_row = &src[r * g.out_w + lo..r * g.out_w + hi];
                    let dst = &mut dst_plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let start = (lo as isize * g.stride as isize + x_off) as usize;
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + in_row.len()].iter_mut().zip(in_row) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(g.stride).zip(in_row) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, all operands given by
/// explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds the raw-pointer access below to the slices we were handed.
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the assertions above keep every strided access in bounds and
    // `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Convolution with bias. Output spatial size per axis is
/// `floor((H + pad_begin + pad_end - dilation*(k-1) - 1) / stride) + 1`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    spec: &LayerSpec,
) -> Result<Tensor> {
    let g = geometry(input.shape(), weights.shape(), spec)?;
    expect_dim("conv2d", "bias length", g.out_ch, bias.len())?;
    let batch = input.shape().batch;
    let out_plane = g.out_h * g.out_w;
    let mut out = Tensor::zeros(Shape::new(batch, g.out_ch, g.out_h, g.out_w));
    let kdim = g.col_rows();
    let w = weights.data();

    let rows = g.rows_per_chunk();
    let mut col = vec![0.0f32; kdim * rows * g.out_w];
    for b in 0..batch {
        let image = input.item(b);
        let dst = out.item_mut(b);
        for (oc, plane) in dst.chunks_mut(out_plane).enumerate() {
            plane.fill(bias[oc]);
        }
        if g.is_pointwise() {
            sgemm(g.out_ch, kdim, out_plane, w, (kdim, 1), image, (out_plane, 1), 1.0, dst, (out_plane, 1));
            continue;
        }
        let mut r0 = 0;
        while r0 < g.out_h {
            let r1 = (r0 + rows).min(g.out_h);
            let ncols = (r1 - r0) * g.out_w;
            let col = &mut col[..kdim * ncols];
            im2col(&g, image, r0, r1, col);
            sgemm(
                g.out_ch,
                kdim,
                ncols,
                w,
                (kdim, 1),
                col,
                (ncols, 1),
                1.0,
                &mut dst[r0 * g.out_w..],
                (out_plane, 1),
            );
            r0 = r1;
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &LayerSpec,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    backward(input, weights, spec, upstream, true)
}

/// Like [`conv2d_backward`] but skips the input gradient (first layer of a
/// branch, where the input is data).
pub fn conv2d_backward_params(
    input: &Tensor,
    weights: &Tensor,
    spec: &LayerSpec,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    backward(input, weights, spec, upstream, false)
}

fn backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &LayerSpec,
    upstream: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = geometry(input.shape(), weights.shape(), spec)?;
    let us = upstream.shape();
    let batch = input.shape().batch;
    expect_dim("conv2d_backward", "upstream batch", batch, us.batch)?;
    expect_dim("conv2d_backward", "upstream channels", g.out_ch, us.channels)?;
    expect_dim("conv2d_backward", "upstream height", g.out_h, us.height)?;
    expect_dim("conv2d_backward", "upstream width", g.out_w, us.width)?;

    let kdim = g.col_rows();
    let out_plane = g.out_h * g.out_w;
    let w = weights.data();
    let mut weight_grad = Tensor::zeros(weights.shape());
    let mut bias_acc = vec![0.0f64; g.out_ch];
    let mut input_grad = want_input.then(|| Tensor::zeros(input.shape()));

    let rows = g.rows_per_chunk();
    let mut col = vec![0.0f32; kdim * rows * g.out_w];
    let mut dcol = if want_input && !g.is_pointwise() {
        vec![0.0f32; kdim * rows * g.out_w]
    } else {
        Vec::new()
    };

    for b in 0..batch {
        let image = input.item(b);
        let gout = upstream.item(b);
        for (oc, plane) in gout.chunks(out_plane).enumerate() {
            bias_acc[oc] += plane.iter().map(|&v| v as f64).sum::<f64>();
        }
        if g.is_pointwise() {
            // dW += gout (out x P) * image^T (P x in)
            sgemm(g.out_ch, out_plane, kdim, gout, (out_plane, 1), image, (1, out_plane), 1.0, weight_grad.data_mut(), (kdim, 1));
            if let Some(ig) = input_grad.as_mut() {
                // dX = W^T (in x out) * gout (out x P)
                sgemm(kdim, g.out_ch, out_plane, w, (1, kdim), gout, (out_plane, 1), 0.0, ig.item_mut(b), (out_plane, 1));
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < g.out_h {
            let r1 = (r0 + rows).min(g.out_h);
            let ncols = (r1 - r0) * g.out_w;
            let col = &mut col[..kdim * ncols];
            im2col(&g, image, r0, r1, col);
            let gchunk = &gout[r0 * g.out_w..];
            // dW += gout_chunk (out x n) * col^T (n x kdim)
            sgemm(g.out_ch, ncols, kdim, gchunk, (out_plane, 1), col, (1, ncols), 1.0, weight_grad.data_mut(), (kdim, 1));
            if let Some(ig) = input_grad.as_mut() {
                let dcol = &mut dcol[..kdim * ncols];
                // dcol = W^T (kdim x out) * gout_chunk (out x n)
                sgemm(kdim, g.out_ch, ncols, w, (1, kdim), gchunk, (out_plane, 1), 0.0, dcol, (ncols, 1));
                col2im(&g, dcol, r0, r1, ig.item_mut(b));
            }
            r0 = r1;
        }
    }

    Ok(ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_acc.into_iter().map(|v| v as f32).collect(),
    })
}
