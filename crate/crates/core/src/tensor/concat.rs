use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.batch, sa.height, sa.width) != (sb.batch, sb.height, sb.width) {
        return Err(Error::IncompatibleShapes {
            op: "concat_channels",
            left: sa,
            right: sb,
        });
    }
    let out_shape = Shape::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..sa.batch {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(out_shape, data)
}

/// Splits the gradient at the channel seam; `a_channels` is the channel
/// count of the first operand.
pub fn concat_channels_backward(upstream: &Tensor, a_channels: usize) -> Result<(Tensor, Tensor)> {
    let s = upstream.shape();
    if a_channels > s.channels {
        return Err(Error::invalid(
            "concat_channels_backward",
            format!("seam at channel {a_channels} beyond {s}"),
        ));
    }
    let b_channels = s.channels - a_channels;
    let plane = s.plane();
    let mut ga = Vec::with_capacity(s.batch * a_channels * plane);
    let mut gb = Vec::with_capacity(s.batch * b_channels * plane);
    for n in 0..s.batch {
        let item = upstream.item(n);
        ga.extend_from_slice(&item[..a_channels * plane]);
        gb.extend_from_slice(&item[a_channels * plane..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.batch, a_channels, s.height, s.width), ga)?,
        Tensor::from_vec(Shape::new(s.batch, b_channels, s.height, s.width), gb)?,
    ))
}
