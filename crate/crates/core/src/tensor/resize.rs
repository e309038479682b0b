use super::{expect_dim, Shape, Tensor};
use crate::error::{Error, Result};

/// Per destination index: the two source taps and the weight of the second.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

/// Half-pixel mapping `src = (dst + 0.5) * (src_len / dst_len) - 0.5`,
/// clamped to `[0, src_len - 1]`.
fn taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let ratio = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap {
                lo,
                hi,
                frac: (s - lo as f64) as f32,
            }
        })
        .collect()
}

fn check(op: &'static str, s: Shape, target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 || s.height == 0 || s.width == 0 {
        return Err(Error::invalid(
            op,
            format!("cannot resize {s} to {target_h}x{target_w}"),
        ));
    }
    Ok(())
}

pub fn bilinear_resize(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = input.shape();
    check("bilinear_resize", s, target_h, target_w)?;
    if (s.height, s.width) == (target_h, target_w) {
        return Ok(input.clone());
    }
    let ty = taps(s.height, target_h);
    let tx = taps(s.width, target_w);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, target_h, target_w));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for (y, t) in ty.iter().enumerate() {
                let r0 = &src[t.lo * s.width..(t.lo + 1) * s.width];
                let r1 = &src[t.hi * s.width..(t.hi + 1) * s.width];
                for (x, u) in tx.iter().enumerate() {
                    let top = r0[u.lo] + (r0[u.hi] - r0[u.lo]) * u.frac;
                    let bottom = r1[u.lo] + (r1[u.hi] - r1[u.lo]) * u.frac;
                    dst[y * target_w + x] = top + (bottom - top) * t.frac;
                }
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_resize`]: scatters each upstream value back onto
/// its four source taps with the forward blend weights.
pub fn bilinear_resize_backward(input_shape: Shape, upstream: &Tensor) -> Result<Tensor> {
    let us = upstream.shape();
    check("bilinear_resize_backward", input_shape, us.height, us.width)?;
    expect_dim("bilinear_resize_backward", "batch", input_shape.batch, us.batch)?;
    expect_dim("bilinear_resize_backward", "channels", input_shape.channels, us.channels)?;
    if (input_shape.height, input_shape.width) == (us.height, us.width) {
        return Ok(upstream.clone());
    }
    let ty = taps(input_shape.height, us.height);
    let tx = taps(input_shape.width, us.width);
    let w = input_shape.width;
    let mut grad = Tensor::zeros(input_shape);
    for b in 0..us.batch {
        for c in 0..us.channels {
            let up = upstream.plane(b, c);
            let dst = grad.plane_mut(b, c);
            for (y, t) in ty.iter().enumerate() {
                for (x, u) in tx.iter().enumerate() {
                    let g = up[y * us.width + x];
                    let gy0 = g * (1.0 - t.frac);
                    let gy1 = g * t.frac;
                    dst[t.lo * w + u.lo] += gy0 * (1.0 - u.frac);
                    dst[t.lo * w + u.hi] += gy0 * u.frac;
                    dst[t.hi * w + u.lo] += gy1 * (1.0 - u.frac);
                    dst[t.hi * w + u.hi] += gy1 * u.frac;
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{dot, max_rel_err, numeric_grad, probe_weights, random};

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 2, 3, 5), 0.75);
        for (h, w) in [(1, 1), (7, 2), (24, 40)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let x = random(Shape::new(1, 1, 4, 6), 1);
        assert_eq!(bilinear_resize(&x, 4, 6).unwrap(), x);
    }

    #[test]
    fn half_pixel_upsample_by_hand() {
        // dst 0: -0.25 -> clamp 0; dst 1: 0.25; dst 2: 0.75; dst 3: 1.25 -> clamp 1
        let x = Tensor::from_plane(1, 2, vec![0.0, 1.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_target_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }

    #[test]
    fn backward_is_the_transpose() {
        let x = random(Shape::new(1, 2, 4, 3), 5);
        for (h, w) in [(8, 7), (2, 2), (5, 9)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            let probe = probe_weights(y.shape(), 6);
            let g = bilinear_resize_backward(x.shape(), &probe).unwrap();
            let num = numeric_grad(&x, 1e-2, |t| dot(&bilinear_resize(t, h, w).unwrap(), &probe));
            assert!(max_rel_err(g.data(), &num) < 1e-2);
        }
    }
}
