//! Grid sampling of pixel/bearing correspondences through an input model.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{CameraModel, ImageSize};

/// Fewest correspondences any output family can be fitted from.
pub const MIN_SAMPLES: usize = 8;

/// Default sample count.
pub const DEFAULT_SAMPLES: usize = 500;

/// A pixel and the unit bearing the input model unprojects it to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub u: Vector2<f64>,
    pub bearing: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Correspondence>,
    pub image_size: ImageSize,
    pub requested_n: usize,
    pub accepted_n: usize,
}

impl SampleSet {
    pub fn from_samples(samples: Vec<Correspondence>, image_size: ImageSize, requested_n: usize) -> Self {
        let accepted_n = samples.len();
        Self {
            samples,
            image_size,
            requested_n,
            accepted_n,
        }
    }

    /// Keeps only the samples matching `keep`, leaving `requested_n` intact.
    pub fn filtered<F: Fn(&Correspondence) -> bool>(&self, keep: F) -> Self {
        let samples: Vec<_> = self.samples.iter().copied().filter(|s| keep(s)).collect();
        Self::from_samples(samples, self.image_size, self.requested_n)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Correspondence> {
        self.samples.iter()
    }
}

/// Pixel centers of `n` cells of an aspect-aware grid over the image.
///
/// The grid has `gx = ceil(sqrt(n * w / h))` columns and `gy = ceil(n / gx)`
/// rows. When `gx * gy > n`, `n` cells are picked at evenly spaced row-major
/// indices so that the surplus is spread over the image.
pub fn grid_pixels(size: ImageSize, n: usize) -> Vec<Vector2<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let (w, h) = (size.width as f64, size.height as f64);
    let gx = ((n as f64 * w / h).sqrt().ceil() as usize).max(1);
    let gy = n.div_ceil(gx);
    let total = gx * gy;
    (0..n)
        .map(|k| {
            let idx = k * total / n;
            let (i, j) = (idx % gx, idx / gx);
            Vector2::new(
                (i as f64 + 0.5) * w / gx as f64,
                (j as f64 + 0.5) * h / gy as f64,
            )
        })
        .collect()
}

/// Samples `n` grid pixels and unprojects them through `model`, dropping the
/// ones outside its unprojection domain.
pub fn sample_grid(model: &CameraModel, n: usize) -> Result<SampleSet> {
    if n < MIN_SAMPLES {
        return Err(Error::TooFewValidSamples {
            accepted: 0,
            required: MIN_SAMPLES,
        });
    }
    let samples: Vec<Correspondence> = grid_pixels(model.image_size(), n)
        .into_iter()
        .filter_map(|u| {
            model
                .unproject(&u)
                .ok()
                .map(|bearing| Correspondence { u, bearing })
        })
        .collect();
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewValidSamples {
            accepted: samples.len(),
            required: MIN_SAMPLES,
        });
    }
    Ok(SampleSet::from_samples(samples, model.image_size(), n))
}
