use super::{expect_dim, LayerSpec, Padding, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    /// For every output element, the flat index of the winning input element
    /// within its `height x width` plane.
    pub argmax: Vec<u32>,
}

fn pool_geometry(op: &'static str, input: Shape, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if padding.begin >= kernel || padding.end >= kernel {
        return Err(Error::invalid(
            op,
            format!("padding {padding:?} must be smaller than kernel {kernel}"),
        ));
    }
    let spec = LayerSpec::max_pool(kernel, stride).with_asymmetric_padding(padding.begin, padding.end);
    let oh = spec.output_len(input.height).map_err(|_| kernel_too_large(op, input, kernel, padding))?;
    let ow = spec.output_len(input.width).map_err(|_| kernel_too_large(op, input, kernel, padding))?;
    Ok((oh, ow))
}

fn kernel_too_large(op: &'static str, input: Shape, kernel: usize, padding: Padding) -> Error {
    Error::invalid(
        op,
        format!(
            "kernel {kernel} larger than padded input {}x{}",
            input.height + padding.total(),
            input.width + padding.total()
        ),
    )
}

/// Max pooling in floor mode. Padded cells act as negative infinity; ties
/// go to the first maximum in row-major window order.
pub fn max_pool(input: &Tensor, kernel: usize, stride: usize, padding: Padding) -> Result<MaxPoolOutput> {
    let s = input.shape();
    let (oh, ow) = pool_geometry("max_pool", s, kernel, stride, padding)?;
    let out_shape = Shape::new(s.batch, s.channels, oh, ow);
    let mut output = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let pb = padding.begin as isize;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = input.plane(b, c);
            for oy in 0..oh {
                let y0 = (oy * stride) as isize - pb;
                let ys = y0.max(0) as usize..((y0 + kernel as isize).min(s.height as isize)) as usize;
                for ox in 0..ow {
                    let x0 = (ox * stride) as isize - pb;
                    let xs = x0.max(0) as usize..((x0 + kernel as isize).min(s.width as isize)) as usize;
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = ys.start * s.width + xs.start;
                    for y in ys.clone() {
                        for x in xs.clone() {
                            let v = plane[y * s.width + x];
                            if v > best {
                                best = v;
                                best_idx = y * s.width + x;
                            }
                        }
                    }
                    output.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_vec(out_shape, output)?,
        argmax,
    })
}

/// Routes each upstream gradient to the recorded argmax of its window.
pub fn max_pool_backward(input_shape: Shape, argmax: &[u32], upstream: &Tensor) -> Result<Tensor> {
    let us = upstream.shape();
    expect_dim("max_pool_backward", "argmax length", us.len(), argmax.len())?;
    expect_dim("max_pool_backward", "batch", input_shape.batch, us.batch)?;
    expect_dim("max_pool_backward", "channels", input_shape.channels, us.channels)?;
    let mut grad = Tensor::zeros(input_shape);
    let out_plane = us.plane();
    for b in 0..us.batch {
        for c in 0..us.channels {
            let base = (b * us.channels + c) * out_plane;
            let up = upstream.plane(b, c);
            let dst = grad.plane_mut(b, c);
            for (i, &g) in up.iter().enumerate() {
                dst[argmax[base + i] as usize] += g;
            }
        }
    }
    Ok(grad)
}

/// Mean over each `kernel x kernel` window (no padding, floor mode).
pub fn avg_pool(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_geometry("avg_pool", s, kernel, stride, Padding::default())?;
    let out_shape = Shape::new(s.batch, s.channels, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let inv = 1.0 / (kernel * kernel) as f32;
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for y in oy * stride..oy * stride + kernel {
                        let row = &plane[y * s.width + ox * stride..y * s.width + ox * stride + kernel];
                        acc += row.iter().sum::<f32>();
                    }
                    dst[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    Ok(out)
}

/// Spreads each upstream value uniformly (`/ kernel^2`) over its window.
pub fn avg_pool_backward(input_shape: Shape, kernel: usize, stride: usize, upstream: &Tensor) -> Result<Tensor> {
    let (oh, ow) = pool_geometry("avg_pool_backward", input_shape, kernel, stride, Padding::default())?;
    let us = upstream.shape();
    expect_dim("avg_pool_backward", "batch", input_shape.batch, us.batch)?;
    expect_dim("avg_pool_backward", "channels", input_shape.channels, us.channels)?;
    expect_dim("avg_pool_backward", "upstream height", oh, us.height)?;
    expect_dim("avg_pool_backward", "upstream width", ow, us.width)?;
    let mut grad = Tensor::zeros(input_shape);
    let inv = 1.0 / (kernel * kernel) as f32;
    let w = input_shape.width;
    for b in 0..us.batch {
        for c in 0..us.channels {
            let up = upstream.plane(b, c);
            let dst = grad.plane_mut(b, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = up[oy * ow + ox] * inv;
                    for y in oy * stride..oy * stride + kernel {
                        for v in &mut dst[y * w + ox * stride..y * w + ox * stride + kernel] {
                            *v += g;
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}
