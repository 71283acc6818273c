//! Scene ingestion, normalization, and the synthetic sphere scenes whose
//! closed-form geometry serves as the engine's ground truth.

mod io;
mod synth;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::Camera;
use crate::numerics::Tensor;

pub use io::{
    load_scene, read_depth_file, read_points_file, save_scene, write_depth_file,
    write_points_file, write_rgb_png,
};
pub use synth::{
    analytic_density, analytic_pixel_depth, look_at, make_synthetic_scene, AnalyticSphereField,
    SphereSceneSpec, SphereSpec,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("frame {frame}: {reason}")]
    InvalidFrame { frame: usize, reason: String },
    #[error("scene validation failed: {0}")]
    Validation(String),
    #[error("bad file format in {path}: {reason}")]
    BadFormat { path: String, reason: String },
}

/// Depth map in camera-frame z with a per-pixel validity mask; values are
/// zero wherever the mask is false.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMap {
    pub fn from_values(values: Vec<f64>) -> Self {
        let mask = values.iter().map(|&v| v > 0.0).collect();
        Self { values, mask }
    }
}

/// One posed image with optional depth supervision.
#[derive(Debug, Clone)]
pub struct Frame {
    /// [h*w, 3] pixels in [0,1], row-major.
    pub image: Tensor,
    pub camera: Camera,
    pub depth: Option<DepthMap>,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.camera.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.camera.intrinsics.height as usize
    }

    pub fn pixel_rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width() + x) * 3;
        let d = self.image.data();
        [d[i], d[i + 1], d[i + 2]]
    }
}

/// Uniform scale about an offset: x' = scale · (x − offset).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub offset: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.offset) * self.scale
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.scale - 1.0).abs() <= tol && self.offset.norm() <= tol
    }
}

/// Posed images with optional depth and ground-truth surface points.
#[derive(Debug, Clone)]
pub struct Scene {
    pub frames: Vec<Frame>,
    pub points: Option<Vec<Vector3<f64>>>,
    /// Transform that produced this scene from its source coordinates;
    /// identity for freshly loaded scenes.
    pub normalization: SimilarityTransform,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Backprojects a depth pixel to world space.
    pub fn depth_pixel_to_world(frame: &Frame, x: usize, y: usize, z: f64) -> Vector3<f64> {
        let ins = &frame.camera.intrinsics;
        let u = x as f64 + 0.5;
        let v = y as f64 + 0.5;
        let dir_cam = Vector3::new((u - ins.cx) / ins.fx, (v - ins.cy) / ins.fy, 1.0);
        frame.camera.pose.rotation * (dir_cam * z) + frame.camera.pose.translation
    }
}

/// Similarity transform bringing cameras within radius 4 of the origin and
/// the object region inside the unit ball, applied consistently to poses,
/// depth maps, and ground-truth points. Idempotent: renormalizing a
/// normalized scene yields the identity.
pub fn normalize_scene(scene: &Scene) -> (Scene, SimilarityTransform) {
    let center = object_center(scene);
    let r_obj = object_radius(scene, &center).max(1e-9);
    let r_cam = scene
        .frames
        .iter()
        .map(|f| (f.camera.pose.translation - center).norm())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let scale = (1.0 / r_obj).min(4.0 / r_cam);
    let transform = SimilarityTransform { scale, offset: center };

    let mut out = scene.clone();
    for frame in &mut out.frames {
        frame.camera.pose.translation = transform.apply(&frame.camera.pose.translation);
        if let Some(depth) = &mut frame.depth {
            for (v, &m) in depth.values.iter_mut().zip(&depth.mask) {
                if m {
                    *v *= scale;
                }
            }
        }
    }
    if let Some(points) = &mut out.points {
        for p in points.iter_mut() {
            *p = transform.apply(p);
        }
    }
    out.normalization = SimilarityTransform {
        scale: scene.normalization.scale * scale,
        offset: scene.normalization.offset + center / scene.normalization.scale,
    };
    (out, transform)
}

/// Center estimate: ground-truth point centroid when available, otherwise
/// the least-squares intersection of the cameras' optical axes (falling
/// back to the camera centroid for degenerate rigs).
fn object_center(scene: &Scene) -> Vector3<f64> {
    if let Some(points) = &scene.points {
        if !points.is_empty() {
            let sum: Vector3<f64> = points.iter().sum();
            return sum / points.len() as f64;
        }
    }
    let mut a = Matrix3::<f64>::zeros();
    let mut b = Vector3::<f64>::zeros();
    for f in &scene.frames {
        let origin = f.camera.pose.translation;
        let axis = f.camera.pose.rotation * Vector3::new(0.0, 0.0, 1.0);
        let proj = Matrix3::identity() - axis * axis.transpose();
        a += proj;
        b += proj * origin;
    }
    match a.try_inverse() {
        Some(inv) => inv * b,
        None => {
            let sum: Vector3<f64> = scene.frames.iter().map(|f| f.camera.pose.translation).sum();
            sum / scene.frames.len().max(1) as f64
        }
    }
}

fn object_radius(scene: &Scene, center: &Vector3<f64>) -> f64 {
    if let Some(points) = &scene.points {
        if !points.is_empty() {
            return points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        }
    }
    // Backproject valid depth pixels (strided for speed) and take the
    // farthest from the center.
    let mut r: f64 = 0.0;
    let mut any = false;
    for frame in &scene.frames {
        if let Some(depth) = &frame.depth {
            let w = frame.width();
            for (i, (&z, &m)) in depth.values.iter().zip(&depth.mask).enumerate().step_by(7) {
                if m {
                    let p = Scene::depth_pixel_to_world(frame, i % w, i / w, z);
                    r = r.max((p - center).norm());
                    any = true;
                }
            }
        }
    }
    if any {
        return r;
    }
    // No geometry available at all: assume the object spans half the
    // nearest camera distance.
    scene
        .frames
        .iter()
        .map(|f| (f.camera.pose.translation - center).norm())
        .fold(f64::INFINITY, f64::min)
        * 0.5
}
