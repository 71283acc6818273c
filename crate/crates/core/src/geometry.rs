//! Pinhole cameras, rays, projection, and stratified sampling along rays.
//!
//! Conventions, asserted throughout the tests: camera looks down +z with x
//! right and y down; poses are camera-to-world; pixel centers sit at
//! integer + 0.5.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix (deviation {deviation:.3e})")]
    InvalidRotation { deviation: f64 },
    #[error("pixel ({u:.2}, {v:.2}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("point is behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("invalid ray bounds: near {near}, far {far}")]
    InvalidRayBounds { near: f64, far: f64 },
    #[error("sample count must be at least 1")]
    EmptySampleCount,
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if !(0.0..(width as f64)).contains(&cx) || !(0.0..(height as f64)).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Validates orthonormality and det = +1 within 1e-6.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let deviation = rotation_deviation(&rotation);
        if deviation > 1e-6 {
            return Err(GeometryError::InvalidRotation { deviation });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn camera_position(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_to_world_dir(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }
}

/// Deviation of `r` from a proper rotation: max of ‖rᵀr − I‖∞ and |det − 1|.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev.max((r.determinant() - 1.0).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.transpose() * (p - self.pose.translation)
    }
}

/// A world-space ray with sampling bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Sample distances along a ray and their backward-difference intervals,
/// with t₀ ≡ near.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoints {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Ray through continuous pixel coordinates `px` = (u, v).
///
/// The direction is the normalized camera-to-world rotation of
/// ((u−cx)/fx, (v−cy)/fy, 1); the origin is the camera position.
pub fn generate_ray(
    camera: &Camera,
    px: (f64, f64),
    near: f64,
    far: f64,
) -> Result<Ray, GeometryError> {
    let (u, v) = px;
    let ins = &camera.intrinsics;
    if !(0.0..=ins.width as f64).contains(&u) || !(0.0..=ins.height as f64).contains(&v) {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: ins.width,
            height: ins.height,
        });
    }
    if !(far > near && near > 0.0) {
        return Err(GeometryError::InvalidRayBounds { near, far });
    }
    let dir_cam = Vector3::new((u - ins.cx) / ins.fx, (v - ins.cy) / ins.fy, 1.0);
    let dir_world = (camera.pose.rotation * dir_cam).normalize();
    Ok(Ray {
        origin: camera.pose.translation,
        direction: dir_world,
        near,
        far,
    })
}

/// Ratio between distance along the pixel ray and camera-frame z for a
/// pixel: ‖((u−cx)/fx, (v−cy)/fy, 1)‖. Converts z-depth to ray depth.
pub fn ray_depth_scale(intrinsics: &Intrinsics, px: (f64, f64)) -> f64 {
    let x = (px.0 - intrinsics.cx) / intrinsics.fx;
    let y = (px.1 - intrinsics.cy) / intrinsics.fy;
    (x * x + y * y + 1.0).sqrt()
}

/// Projects a world point; returns pixel coordinates and camera-frame depth.
pub fn project(camera: &Camera, point: &Vector3<f64>) -> Result<((f64, f64), f64), GeometryError> {
    let p_cam = camera.world_to_camera(point);
    if p_cam.z <= 1e-8 {
        return Err(GeometryError::BehindCamera { z: p_cam.z });
    }
    let ins = &camera.intrinsics;
    let u = ins.fx * p_cam.x / p_cam.z + ins.cx;
    let v = ins.fy * p_cam.y / p_cam.z + ins.cy;
    Ok(((u, v), p_cam.z))
}

/// Stratified sampling of `[near, far]` into `n` bins.
///
/// With `jitter` off, samples sit at bin midpoints; with it on, one uniform
/// draw per bin, deterministic for a given seed. Intervals follow
/// δᵢ = tᵢ − tᵢ₋₁ with t₀ = near.
pub fn sample_stratified(
    ray: &Ray,
    n: usize,
    jitter: bool,
    rng_seed: u64,
) -> Result<SamplePoints, GeometryError> {
    if n == 0 {
        return Err(GeometryError::EmptySampleCount);
    }
    if !(ray.far > ray.near) {
        return Err(GeometryError::InvalidRayBounds {
            near: ray.near,
            far: ray.far,
        });
    }
    let h = (ray.far - ray.near) / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let lower = ray.near + i as f64 * h;
        let u = if jitter {
            // Open interval keeps δᵢ strictly positive even at bin edges.
            loop {
                let draw: f64 = rng.gen();
                if draw > 0.0 {
                    break draw;
                }
            }
        } else {
            0.5
        };
        t.push(lower + u * h);
    }
    let mut delta = Vec::with_capacity(n);
    let mut prev = ray.near;
    for &ti in &t {
        delta.push(ti - prev);
        prev = ti;
    }
    Ok(SamplePoints { t, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple_camera() -> Camera {
        Camera::new(
            Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap(),
            Pose::identity(),
        )
    }

    /// Deterministic pseudo-random proper rotation from a seed.
    pub(crate) fn random_rotation(seed: u64) -> Matrix3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        )
        .normalize();
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let ray = generate_ray(&simple_camera(), (50.0, 50.0), 0.1, 10.0).unwrap();
        assert_relative_eq!(ray.direction, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_eq!(ray.origin, Vector3::zeros());
    }

    #[test]
    fn offset_pixel_follows_pinhole_formula() {
        // fx=fy=100, cx=cy=50, px=(60,50) -> normalize(0.1, 0, 1)
        let ray = generate_ray(&simple_camera(), (60.0, 50.0), 0.1, 10.0).unwrap();
        let expect = Vector3::new(0.1, 0.0, 1.0).normalize();
        assert_relative_eq!(ray.direction, expect, epsilon = 1e-12);
        assert_relative_eq!(ray.direction.x, 0.0995, epsilon = 1e-4);
        assert_relative_eq!(ray.direction.z, 0.9950, epsilon = 1e-4);
    }

    #[test]
    fn rays_are_unit_norm_for_random_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let cam = Camera::new(
                Intrinsics::new(80.0, 120.0, 33.0, 21.5, 64, 48).unwrap(),
                Pose::new(random_rotation(seed), Vector3::new(1.0, -2.0, 3.0)).unwrap(),
            );
            for _ in 0..50 {
                let px = (rng.gen_range(0.0..64.0), rng.gen_range(0.0..48.0));
                let ray = generate_ray(&cam, px, 0.1, 5.0).unwrap();
                assert!((ray.direction.norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let cam = simple_camera();
        assert!(matches!(
            generate_ray(&cam, (150.0, 50.0), 0.1, 10.0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
        assert!(matches!(
            generate_ray(&cam, (50.0, -0.5), 0.1, 10.0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn project_on_axis_hits_principal_point() {
        let cam = simple_camera();
        let ((u, v), depth) = project(&cam, &Vector3::new(0.0, 0.0, 2.5)).unwrap();
        assert_relative_eq!(u, 50.0, epsilon = 1e-12);
        assert_relative_eq!(v, 50.0, epsilon = 1e-12);
        assert_relative_eq!(depth, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn project_offset_point() {
        // fx=100, cx=50, camera-frame (0.1, 0, 1) -> u = 60
        let cam = simple_camera();
        let ((u, _), _) = project(&cam, &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(u, 60.0, epsilon = 1e-12);
    }

    #[test]
    fn project_behind_camera_errors() {
        let cam = simple_camera();
        assert!(matches!(
            project(&cam, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_ray_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..25 {
            let cam = Camera::new(
                Intrinsics::new(90.0, 110.0, 40.0, 30.0, 80, 60).unwrap(),
                Pose::new(
                    random_rotation(1000 + seed),
                    Vector3::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                    ),
                )
                .unwrap(),
            );
            for _ in 0..40 {
                let px = (rng.gen_range(0.0..80.0), rng.gen_range(0.0..60.0));
                let t = rng.gen_range(0.5..8.0);
                let ray = generate_ray(&cam, px, 0.1, 10.0).unwrap();
                let ((u, v), depth) = project(&cam, &ray.at(t)).unwrap();
                assert!((u - px.0).abs() < 1e-4, "u {u} vs {}", px.0);
                assert!((v - px.1).abs() < 1e-4, "v {v} vs {}", px.1);
                // Ray depth relates to z-depth by the direction's z scaling.
                assert!(depth <= t + 1e-12);
            }
        }
    }

    #[test]
    fn ray_depth_scale_converts_depth() {
        let cam = simple_camera();
        let px = (72.0, 31.0);
        let ray = generate_ray(&cam, px, 0.1, 10.0).unwrap();
        let t = 3.7;
        let (_, z) = project(&cam, &ray.at(t)).unwrap();
        let scale = ray_depth_scale(&cam.intrinsics, px);
        assert_relative_eq!(z * scale, t, epsilon = 1e-10);
    }

    #[test]
    fn stratified_midpoints_without_jitter() {
        let ray = Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(0.0, 0.0, 1.0),
            near: 2.0,
            far: 6.0,
        };
        let s = sample_stratified(&ray, 4, false, 0).unwrap();
        assert_eq!(s.t, vec![2.5, 3.5, 4.5, 5.5]);
        assert_eq!(s.delta, vec![0.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_sample_midpoint() {
        let ray = Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(0.0, 0.0, 1.0),
            near: 1e-9,
            far: 1.0,
        };
        // near ~ 0 within f64 print precision; spec example uses near = 0,
        // which the Ray invariant (near > 0) tightens to an epsilon.
        let s = sample_stratified(&ray, 1, false, 0).unwrap();
        assert_relative_eq!(s.t[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(s.delta[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn jitter_is_deterministic_per_seed() {
        let ray = Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(0.0, 0.0, 1.0),
            near: 1.0,
            far: 3.0,
        };
        let a = sample_stratified(&ray, 16, true, 42).unwrap();
        let b = sample_stratified(&ray, 16, true, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_stratified(&ray, 16, true, 43).unwrap();
        assert_ne!(a.t, c.t);
    }

    #[test]
    fn zero_samples_rejected() {
        let ray = Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(0.0, 0.0, 1.0),
            near: 1.0,
            far: 2.0,
        };
        assert!(matches!(
            sample_stratified(&ray, 0, false, 0),
            Err(GeometryError::EmptySampleCount)
        ));
    }

    #[test]
    fn samples_ascending_within_bounds_for_all_seeds() {
        let ray = Ray {
            origin: Vector3::zeros(),
            direction: Vector3::new(0.0, 0.0, 1.0),
            near: 0.5,
            far: 4.5,
        };
        for seed in 0..200 {
            let s = sample_stratified(&ray, 32, true, seed).unwrap();
            for w in s.t.windows(2) {
                assert!(w[0] < w[1], "not strictly ascending at seed {seed}");
            }
            assert!(s.t[0] > ray.near && *s.t.last().unwrap() <= ray.far);
            assert!(s.delta.iter().all(|&d| d > 0.0));
            // delta convention: t_i - t_{i-1} with t_0 = near.
            let mut prev = ray.near;
            for (ti, di) in s.t.iter().zip(&s.delta) {
                assert_relative_eq!(ti - prev, *di, epsilon = 1e-12);
                prev = *ti;
            }
        }
    }

    #[test]
    fn pose_rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        assert!(matches!(
            Pose::new(r, Vector3::zeros()),
            Err(GeometryError::InvalidRotation { .. })
        ));
        // Reflection: orthonormal but det = -1.
        let mut refl = Matrix3::identity();
        refl[(2, 2)] = -1.0;
        assert!(Pose::new(refl, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(Intrinsics::new(10.0, 10.0, 10.0, 5.0, 10, 10).is_err());
        assert!(Intrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).is_ok());
    }
}
