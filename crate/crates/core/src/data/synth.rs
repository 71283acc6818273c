//! Synthetic Lambertian sphere scenes with closed-form depth, color, and
//! surface geometry. These stand in for scanned objects: every rendered
//! quantity has an analytic value to test against.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{generate_ray, ray_depth_scale, Camera, Intrinsics, Pose, Ray};
use crate::numerics::Tensor;
use crate::renderer::SampledField;

use super::{DataError, DepthMap, Frame, Scene, SimilarityTransform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSpec {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub albedo: [f64; 3],
}

/// Recipe for a ring-of-cameras sphere scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSceneSpec {
    pub spheres: Vec<SphereSpec>,
    /// Direction from surface toward the light; normalized at validation.
    pub light_dir: Vector3<f64>,
    pub n_views: usize,
    /// Square image side in pixels.
    pub image_size: usize,
    pub ring_radius: f64,
    /// Camera elevation above the horizontal plane, radians.
    pub ring_elevation: f64,
    /// Ground-truth surface points to sample for geometry evaluation.
    pub n_surface_points: usize,
}

impl Default for SphereSceneSpec {
    fn default() -> Self {
        Self {
            spheres: vec![SphereSpec {
                center: Vector3::zeros(),
                radius: 1.0,
                albedo: [0.8, 0.35, 0.25],
            }],
            light_dir: Vector3::new(0.4, -0.35, 0.85),
            n_views: 6,
            image_size: 64,
            ring_radius: 3.5,
            ring_elevation: 0.45,
            n_surface_points: 2048,
        }
    }
}

impl SphereSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.spheres.is_empty() {
            return Err(DataError::Validation("no spheres".into()));
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if s.radius <= 0.0 {
                return Err(DataError::Validation(format!("sphere {i} has radius {}", s.radius)));
            }
        }
        for i in 0..self.spheres.len() {
            for j in i + 1..self.spheres.len() {
                let (a, b) = (&self.spheres[i], &self.spheres[j]);
                if (a.center - b.center).norm() < a.radius + b.radius {
                    return Err(DataError::Validation(format!("spheres {i} and {j} intersect")));
                }
            }
        }
        if self.light_dir.norm() < 1e-9 {
            return Err(DataError::Validation("light direction is zero".into()));
        }
        if self.n_views == 0 {
            return Err(DataError::Validation("need at least one view".into()));
        }
        if self.image_size < 8 || self.image_size % 2 != 0 {
            return Err(DataError::Validation(format!(
                "image size must be even and >= 8, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    fn intrinsics(&self) -> Intrinsics {
        let s = self.image_size as f64;
        Intrinsics::new(0.8 * s, 0.8 * s, s / 2.0, s / 2.0, self.image_size as u32, self.image_size as u32)
            .expect("valid synthetic intrinsics")
    }

    /// Camera ring around the origin; the seed rotates the ring's phase.
    pub fn cameras(&self, seed: u64) -> Vec<Camera> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let ins = self.intrinsics();
        (0..self.n_views)
            .map(|i| {
                let az = phase + std::f64::consts::TAU * i as f64 / self.n_views as f64;
                let (se, ce) = self.ring_elevation.sin_cos();
                let position =
                    Vector3::new(az.cos() * ce, az.sin() * ce, se) * self.ring_radius;
                Camera::new(ins, look_at(position, Vector3::zeros()))
            })
            .collect()
    }
}

/// Camera-to-world pose at `position` looking toward `target`, x-right /
/// y-down / z-forward, world +z up.
pub fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let forward = (target - position).normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let right = forward.cross(&up);
    let right = if right.norm() < 1e-9 {
        Vector3::new(1.0, 0.0, 0.0) // looking straight up/down
    } else {
        right.normalize()
    };
    let down = forward.cross(&right);
    let rotation = nalgebra::Matrix3::from_columns(&[right, down, forward]);
    Pose::new(rotation, position).expect("look_at produces a proper rotation")
}

/// Nearest positive ray-sphere intersection distance.
fn hit_sphere(ray_origin: &Vector3<f64>, ray_dir: &Vector3<f64>, sphere: &SphereSpec) -> Option<f64> {
    let oc = ray_origin - sphere.center;
    let b = ray_dir.dot(&oc);
    let q = oc.dot(&oc) - sphere.radius * sphere.radius;
    let disc = b * b - q;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

fn nearest_hit(ray: &Ray, spheres: &[SphereSpec]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in spheres.iter().enumerate() {
        if let Some(t) = hit_sphere(&ray.origin, &ray.direction, s) {
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best
}

fn shade(point: &Vector3<f64>, sphere: &SphereSpec, light: &Vector3<f64>) -> [f64; 3] {
    let n = (point - sphere.center).normalize();
    let l = n.dot(light).max(0.0);
    [sphere.albedo[0] * l, sphere.albedo[1] * l, sphere.albedo[2] * l]
}

/// Quantize a color channel to the 8-bit grid so in-memory scenes match
/// their on-disk round trip exactly.
fn quantize_u8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders the spec analytically: per pixel, the nearest sphere hit gives
/// depth (stored as camera-frame z at f32 precision) and Lambertian color;
/// misses are white with invalid depth. Also samples ground-truth surface
/// points.
pub fn make_synthetic_scene(spec: &SphereSceneSpec, seed: u64) -> Result<Scene, DataError> {
    spec.validate()?;
    let cameras = spec.cameras(seed);
    let light = spec.light_dir.normalize();
    for (i, cam) in cameras.iter().enumerate() {
        for s in &spec.spheres {
            if (cam.pose.translation - s.center).norm() <= s.radius {
                return Err(DataError::Validation(format!("camera {i} is inside a sphere")));
            }
        }
    }

    let size = spec.image_size;
    let mut frames = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let mut pixels = Vec::with_capacity(size * size * 3);
        let mut depth = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let px = (x as f64 + 0.5, y as f64 + 0.5);
                let ray = generate_ray(&cam, px, 1e-3, 1e6).expect("pixel in bounds");
                match nearest_hit(&ray, &spec.spheres) {
                    Some((t, si)) => {
                        let p = ray.at(t);
                        let c = shade(&p, &spec.spheres[si], &light);
                        pixels.extend_from_slice(&[
                            quantize_u8(c[0]),
                            quantize_u8(c[1]),
                            quantize_u8(c[2]),
                        ]);
                        // Camera-frame z at f32 precision (the storage format).
                        let z = t / ray_depth_scale(&cam.intrinsics, px);
                        depth.push(z as f32 as f64);
                    }
                    None => {
                        pixels.extend_from_slice(&[1.0, 1.0, 1.0]);
                        depth.push(0.0);
                    }
                }
            }
        }
        frames.push(Frame {
            image: Tensor::new(vec![size * size, 3], pixels).expect("image shape"),
            camera: cam,
            depth: Some(DepthMap::from_values(depth)),
        });
    }

    // Surface points, area-weighted across spheres.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let total_area: f64 = spec.spheres.iter().map(|s| s.radius * s.radius).sum();
    let mut points = Vec::with_capacity(spec.n_surface_points);
    for s in &spec.spheres {
        let share = ((s.radius * s.radius / total_area) * spec.n_surface_points as f64).round() as usize;
        for _ in 0..share.max(1) {
            // Uniform on the sphere via normalized Gaussian triple.
            let n = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let norm = v.norm();
                if norm > 1e-3 && norm <= 1.0 {
                    break v / norm;
                }
            };
            let p = s.center + n * s.radius;
            points.push(Vector3::new(
                p.x as f32 as f64,
                p.y as f32 as f64,
                p.z as f32 as f64,
            ));
        }
    }

    Ok(Scene {
        frames,
        points: Some(points),
        normalization: SimilarityTransform::identity(),
    })
}

/// Piecewise-constant density oracle: σ = κ inside any sphere, 0 outside;
/// color is the shaded albedo at the nearest sphere surface.
#[derive(Debug, Clone)]
pub struct AnalyticSphereField {
    pub spheres: Vec<SphereSpec>,
    pub light_dir: Vector3<f64>,
    pub kappa: f64,
}

pub fn analytic_density(spec: &SphereSceneSpec) -> AnalyticSphereField {
    AnalyticSphereField {
        spheres: spec.spheres.clone(),
        light_dir: spec.light_dir.normalize(),
        kappa: 1e3,
    }
}

impl AnalyticSphereField {
    pub fn sigma_at(&self, p: &Vector3<f64>) -> f64 {
        for s in &self.spheres {
            if (p - s.center).norm() <= s.radius {
                return self.kappa;
            }
        }
        0.0
    }

    fn color_at(&self, p: &Vector3<f64>) -> [f64; 3] {
        // Nearest sphere surface.
        let mut best = (f64::INFINITY, 0usize);
        for (i, s) in self.spheres.iter().enumerate() {
            let d = ((p - s.center).norm() - s.radius).abs();
            if d < best.0 {
                best = (d, i);
            }
        }
        let s = &self.spheres[best.1];
        let dir = p - s.center;
        let n = if dir.norm() > 1e-12 {
            dir.normalize()
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        let surface = s.center + n * s.radius;
        shade(&surface, s, &self.light_dir)
    }
}

impl SampledField for AnalyticSphereField {
    fn query(&self, points: &[Vector3<f64>], _dirs: &[Vector3<f64>]) -> (Vec<f64>, Vec<[f64; 3]>) {
        let sigma = points.iter().map(|p| self.sigma_at(p)).collect();
        let colors = points.iter().map(|p| self.color_at(p)).collect();
        (sigma, colors)
    }
}

/// Closed-form z-depth for a pixel of a synthetic frame; used by oracle
/// tests to cross-check rendered depth. Returns `None` on a miss.
pub fn analytic_pixel_depth(
    spec: &SphereSceneSpec,
    camera: &Camera,
    x: usize,
    y: usize,
) -> Option<(f64, f64)> {
    let px = (x as f64 + 0.5, y as f64 + 0.5);
    let ray = generate_ray(camera, px, 1e-3, 1e6).ok()?;
    let (t, _) = nearest_hit(&ray, &spec.spheres)?;
    let z = t / ray_depth_scale(&camera.intrinsics, px);
    Some((t, z))
}
