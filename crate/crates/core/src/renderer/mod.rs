//! Volume-rendering quadrature and supervision losses.
//!
//! A ray with samples t_i and intervals δ_i renders through the weights
//! w_i = T_i·(1 − exp(−σ_i δ_i)) with T_i = exp(−Σ_{j<i} σ_j δ_j); the
//! pixel color is Σ w_i c_i plus residual-transparency background, and the
//! expected depth is the unnormalized Σ w_i t_i.

pub mod diff;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldError;
use crate::geometry::{generate_ray, sample_stratified, Camera, GeometryError, Ray};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("negative {what} at sample {index}: {value}")]
    NegativeInput {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("length mismatch: {context} ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("degenerate batch: no rays with valid ground-truth depth")]
    DegenerateBatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// Composited result for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: [f64; 3],
    pub depth: f64,
    /// Accumulated opacity Σ w_i.
    pub acc: f64,
    pub weights: Vec<f64>,
}

/// Loss terms for one batch; `total = rgb_loss + lambda_depth * depth_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb_loss: f64,
    pub depth_loss: f64,
    pub total: f64,
    pub lambda_depth: f64,
}

/// Sampling and compositing settings shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub jitter: bool,
    /// Divide expected depth by accumulated opacity (off keeps the
    /// unnormalized quadrature).
    pub normalize_depth: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            near: 1.5,
            far: 6.0,
            background: [1.0, 1.0, 1.0],
            jitter: false,
            normalize_depth: false,
        }
    }
}

/// Anything the renderer can march rays through: batched density and color
/// queries at world positions with view directions.
pub trait SampledField: Sync {
    fn query(&self, points: &[Vector3<f64>], dirs: &[Vector3<f64>]) -> (Vec<f64>, Vec<[f64; 3]>);
}

/// Per-sample weights and the transmittance ladder.
///
/// Returns (weights with N entries, transmittance with N+1 entries);
/// `transmittance[0] = 1` and the final entry is the residual transparency
/// behind the last sample.
pub fn compute_weights(sigma: &[f64], delta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), RenderError> {
    if sigma.len() != delta.len() {
        return Err(RenderError::LengthMismatch {
            context: "compute_weights",
            left: sigma.len(),
            right: delta.len(),
        });
    }
    for (i, &s) in sigma.iter().enumerate() {
        if s < 0.0 || !s.is_finite() {
            return Err(RenderError::NegativeInput { what: "sigma", index: i, value: s });
        }
    }
    for (i, &d) in delta.iter().enumerate() {
        if d <= 0.0 || !d.is_finite() {
            return Err(RenderError::NegativeInput { what: "delta", index: i, value: d });
        }
    }
    let n = sigma.len();
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n + 1);
    let mut optical_depth = 0.0f64;
    for i in 0..n {
        let t_i = (-optical_depth).exp();
        transmittance.push(t_i);
        let sd = sigma[i] * delta[i];
        weights.push(t_i * (1.0 - (-sd).exp()));
        optical_depth += sd;
    }
    transmittance.push((-optical_depth).exp());
    Ok((weights, transmittance))
}

/// Σ w_i c_i + (1 − Σ w_i) · background.
pub fn composite_rgb(weights: &[f64], colors: &[[f64; 3]], background: [f64; 3]) -> [f64; 3] {
    debug_assert_eq!(weights.len(), colors.len());
    let mut out = [0.0; 3];
    let mut acc = 0.0;
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            out[k] += w * c[k];
        }
        acc += w;
    }
    let rest = 1.0 - acc;
    for k in 0..3 {
        out[k] += rest * background[k];
    }
    out
}

/// Unnormalized expected ray-termination distance Σ w_i t_i.
pub fn expected_depth(weights: &[f64], t: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), t.len());
    weights.iter().zip(t).map(|(w, ti)| w * ti).sum()
}

/// Mean squared depth error over rays with valid ground truth.
pub fn depth_loss(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64, RenderError> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(RenderError::LengthMismatch {
            context: "depth_loss",
            left: pred.len(),
            right: gt.len().max(mask.len()),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - gt[i];
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(RenderError::DegenerateBatch);
    }
    Ok(sum / count as f64)
}

/// Mean squared RGB error over rays and channels.
pub fn rgb_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    debug_assert_eq!(pred.len(), gt.len());
    if pred.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..3 {
            let d = p[k] - g[k];
            sum += d * d;
        }
    }
    sum / (3 * pred.len()) as f64
}

/// Stable per-ray jitter seed derived from a base seed and ray index.
pub fn ray_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a golden-ratio spaced stream.
    let mut z = base ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Marches a set of rays through the field; pure given the field and seed.
pub fn render_rays(
    rays: &[Ray],
    field: &dyn SampledField,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Vec<RenderOutput>, RenderError> {
    render_rays_with_offset(rays, field, cfg, seed, 0)
}

/// Full-frame render, chunked so memory stays bounded and rows parallelize
/// deterministically. Returns row-major rgb, depth, and opacity buffers.
pub fn render_image(
    camera: &Camera,
    field: &dyn SampledField,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<(Vec<[f64; 3]>, Vec<f64>, Vec<f64>), RenderError> {
    let w = camera.intrinsics.width as usize;
    let h = camera.intrinsics.height as usize;
    let rows: Vec<Result<Vec<RenderOutput>, RenderError>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rays = Vec::with_capacity(w);
            for x in 0..w {
                let px = (x as f64 + 0.5, y as f64 + 0.5);
                rays.push(generate_ray(camera, px, cfg.near, cfg.far)?);
            }
            // Row-local seeds keyed by absolute pixel index.
            render_rays_with_offset(&rays, field, cfg, seed, (y * w) as u64)
        })
        .collect();

    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut acc = Vec::with_capacity(w * h);
    for row in rows {
        for r in row? {
            rgb.push(r.rgb);
            depth.push(r.depth);
            acc.push(r.acc);
        }
    }
    Ok((rgb, depth, acc))
}

fn render_rays_with_offset(
    rays: &[Ray],
    field: &dyn SampledField,
    cfg: &RenderConfig,
    seed: u64,
    index_offset: u64,
) -> Result<Vec<RenderOutput>, RenderError> {
    let n = cfg.n_samples;
    let mut points = Vec::with_capacity(rays.len() * n);
    let mut dirs = Vec::with_capacity(rays.len() * n);
    let mut samples = Vec::with_capacity(rays.len());
    for (i, ray) in rays.iter().enumerate() {
        let sp = sample_stratified(ray, n, cfg.jitter, ray_seed(seed, index_offset + i as u64))?;
        for &t in &sp.t {
            points.push(ray.at(t));
            dirs.push(ray.direction);
        }
        samples.push(sp);
    }
    let (sigma, colors) = field.query(&points, &dirs);
    let mut out = Vec::with_capacity(rays.len());
    for (i, sp) in samples.iter().enumerate() {
        let s = &sigma[i * n..(i + 1) * n];
        let c = &colors[i * n..(i + 1) * n];
        let (weights, _) = compute_weights(s, &sp.delta)?;
        let rgb = composite_rgb(&weights, c, cfg.background);
        let acc: f64 = weights.iter().sum();
        let mut depth = expected_depth(&weights, &sp.t);
        if cfg.normalize_depth {
            depth /= acc + 1e-8;
        }
        out.push(RenderOutput { rgb, depth, acc, weights });
    }
    Ok(out)
}
