//! Ground-truth density maps from head annotations.
//!
//! Every head contributes a Gaussian blob normalized to unit mass, so the
//! map integrates to the number of annotated people. Blobs clipped by the
//! image border are renormalized over their visible part to keep that
//! property exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Default Gaussian width in pixels.
pub const DEFAULT_SIGMA: f64 = 4.0;

/// One head position: `x` is the column, `y` the row, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub image_id: String,
    pub points: Vec<Point>,
}

impl AnnotationSet {
    pub fn new(image_id: impl Into<String>, points: Vec<Point>) -> Self {
        AnnotationSet {
            image_id: image_id.into(),
            points,
        }
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    /// Clamps every point into `[0, width) x [0, height)`; returns how many
    /// points had to move.
    pub fn clamp_to(&mut self, width: usize, height: usize) -> usize {
        let mut moved = 0;
        for p in &mut self.points {
            let q = clamp_point(*p, width, height);
            if q != *p {
                moved += 1;
                *p = q;
            }
        }
        moved
    }
}

/// Largest coordinate strictly inside an axis of length `len`.
fn upper_bound(len: usize) -> f64 {
    (len as f64).next_down().max(0.0)
}

fn clamp_point(p: Point, width: usize, height: usize) -> Point {
    Point {
        x: p.x.clamp(0.0, upper_bound(width)),
        y: p.y.clamp(0.0, upper_bound(height)),
    }
}

/// Scales positions by `factor` and clamps them into the
/// `width x height` bounds of the scaled image.
pub fn scale_annotations(points: &[Point], factor: f64, width: usize, height: usize) -> Vec<Point> {
    points
        .iter()
        .map(|p| clamp_point(Point::new(p.x * factor, p.y * factor), width, height))
        .collect()
}

/// Single-channel non-negative raster; its sum is a person count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        DensityMap {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                op: "DensityMap::from_values",
                dim: "value count",
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(DensityMap {
            height,
            width,
            values,
        })
    }

    /// Takes the first plane of a tensor.
    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        DensityMap {
            height: s.height,
            width: s.width,
            values: t.plane(0, 0).to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.values.clone())
            .expect("density values match dims")
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Total mass accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// The `width x height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<DensityMap> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(
                "DensityMap::crop",
                format!(
                    "window {width}x{height}@({x0},{y0}) exceeds {}x{}",
                    self.width, self.height
                ),
            ));
        }
        let mut values = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(DensityMap {
            height,
            width,
            values,
        })
    }
}

/// A normalized `(2r+1) x (2r+1)` Gaussian, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    pub radius: usize,
    pub values: Vec<f64>,
}

impl GaussianKernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.values[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }
}

/// Radius used when none is given: `ceil(3 sigma)`.
pub fn default_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("gaussian_kernel", format!("sigma {sigma} must be positive")));
    }
    if radius == 0 {
        return Err(Error::invalid("gaussian_kernel", "radius must be at least 1"));
    }
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    let mut values = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            values.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(GaussianKernel { radius, values })
}

/// Density map with the default `ceil(3 sigma)` kernel radius.
pub fn generate_density_map(points: &[Point], width: usize, height: usize, sigma: f64) -> Result<DensityMap> {
    let kernel = gaussian_kernel(sigma, default_radius(sigma))?;
    generate_density_map_with(points, width, height, &kernel)
}

/// Adds one kernel per point, centered on the nearest pixel. The part of
/// the kernel inside the image is rescaled to unit mass.
pub fn generate_density_map_with(
    points: &[Point],
    width: usize,
    height: usize,
    kernel: &GaussianKernel,
) -> Result<DensityMap> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(
            "generate_density_map",
            format!("image size {width}x{height} is empty"),
        ));
    }
    let mut acc = vec![0.0f64; width * height];
    let r = kernel.radius as isize;
    for p in points {
        let cx = (p.x.round().max(0.0) as usize).min(width - 1) as isize;
        let cy = (p.y.round().max(0.0) as usize).min(height - 1) as isize;
        let ys = (cy - r).max(0)..(cy + r + 1).min(height as isize);
        let xs = (cx - r).max(0)..(cx + r + 1).min(width as isize);
        let mut inside = 0.0;
        for y in ys.clone() {
            for x in xs.clone() {
                inside += kernel.at(y - cy, x - cx);
            }
        }
        for y in ys.clone() {
            let row = &mut acc[y as usize * width..(y as usize + 1) * width];
            for x in xs.clone() {
                row[x as usize] += kernel.at(y - cy, x - cx) / inside;
            }
        }
    }
    Ok(DensityMap {
        height,
        width,
        values: acc.into_iter().map(|v| v as f32).collect(),
    })
}
