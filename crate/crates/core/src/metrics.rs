//! Evaluation metrics: PSNR for novel views, surface-shell extraction, and
//! Chamfer distance for geometry.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::renderer::SampledField;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimension mismatch: {left} vs {right} values")]
    DimMismatch { left: usize, right: usize },
    #[error("chamfer distance requires non-empty point sets")]
    EmptyPointSet,
}

/// PSNR cap for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Per-view and aggregate evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub view_count: usize,
    pub psnr_per_view: Vec<f64>,
    pub psnr_mean: f64,
    pub chamfer: Option<f64>,
}

/// 10·log10(1 / MSE) over all pixels and channels, capped at 99 dB.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricsError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Anything that can report a volume density at a point; satisfied by the
/// renderer-facing fields.
pub trait DensityProbe {
    fn density(&self, points: &[Vector3<f64>]) -> Vec<f64>;
}

impl<T: SampledField> DensityProbe for T {
    fn density(&self, points: &[Vector3<f64>]) -> Vec<f64> {
        let dirs = vec![Vector3::new(0.0, 0.0, 1.0); points.len()];
        self.query(points, &dirs).0
    }
}

/// Extracts the surface shell of the density field on a grid over the unit
/// ball's bounding cube [-1,1]^3: cell centers where σ crosses the
/// threshold and at least one 6-neighbor sits below it. Returns an empty
/// set (with no error) for empty geometry.
pub fn extract_points(
    field: &dyn DensityProbe,
    grid_res: usize,
    sigma_threshold: f64,
) -> Vec<Vector3<f64>> {
    assert!(grid_res >= 8, "grid too coarse to extract a surface");
    let n = grid_res;
    let step = 2.0 / n as f64;
    let coord = |i: usize| -> f64 { -1.0 + (i as f64 + 0.5) * step };

    // Evaluate the density lattice in z-major slabs.
    let mut lattice = vec![0.0f64; n * n * n];
    for z in 0..n {
        let mut slab = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                slab.push(Vector3::new(coord(x), coord(y), coord(z)));
            }
        }
        let sigma = field.density(&slab);
        lattice[z * n * n..(z + 1) * n * n].copy_from_slice(&sigma);
    }

    let above = |x: i64, y: i64, z: i64| -> bool {
        if x < 0 || y < 0 || z < 0 || x >= n as i64 || y >= n as i64 || z >= n as i64 {
            return false; // outside the grid counts as empty space
        }
        lattice[(z as usize) * n * n + (y as usize) * n + x as usize] >= sigma_threshold
    };

    let mut out = Vec::new();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                if !above(x as i64, y as i64, z as i64) {
                    continue;
                }
                let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                let boundary = !above(xi - 1, yi, zi)
                    || !above(xi + 1, yi, zi)
                    || !above(xi, yi - 1, zi)
                    || !above(xi, yi + 1, zi)
                    || !above(xi, yi, zi - 1)
                    || !above(xi, yi, zi + 1);
                if boundary {
                    out.push(Vector3::new(coord(x), coord(y), coord(z)));
                }
            }
        }
    }
    out
}

/// Symmetric mean nearest-neighbor Euclidean distance:
/// ½·(mean_a min_b ‖a−b‖ + mean_b min_a ‖b−a‖). Exact brute force.
pub fn chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    Ok(0.5 * (mean_nn(a, b) + mean_nn(b, a)))
}

fn mean_nn(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    // Parallel over query points; each point's minimum is independent, and
    // the final sum runs sequentially in index order for reproducibility.
    let dists: Vec<f64> = from
        .par_iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    dists.iter().map(|d| d.sqrt()).sum::<f64>() / from.len() as f64
}
