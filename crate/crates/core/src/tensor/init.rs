use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Gaussian with standard deviation 0.01.
    #[default]
    Gaussian,
    /// Gaussian with std `sqrt(2 / fan_in)`.
    He,
    /// All weights zero.
    Zero,
}

/// Draws conv weights `(out, in, k, k)` and zero biases for `spec`,
/// determined entirely by `seed`.
pub fn init_weights(spec: &LayerSpec, scheme: InitScheme, seed: u64) -> Result<(Tensor, Vec<f32>)> {
    spec.validate()?;
    if spec.kind != LayerKind::Conv || spec.in_channels == 0 || spec.out_channels == 0 {
        return Err(Error::invalid(
            "init_weights",
            format!("needs a conv spec with channel counts, got {spec:?}"),
        ));
    }
    let shape = Shape::new(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel);
    let fan_in = spec.in_channels * spec.kernel * spec.kernel;
    let std = match scheme {
        InitScheme::Gaussian => 0.01,
        InitScheme::He => (2.0 / fan_in as f64).sqrt(),
        InitScheme::Zero => 0.0,
    };
    let data = if std == 0.0 {
        vec![0.0; shape.len()]
    } else {
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.len()).map(|_| normal.sample(&mut rng) as f32).collect()
    };
    Ok((Tensor::from_vec(shape, data)?, vec![0.0; spec.out_channels]))
}
