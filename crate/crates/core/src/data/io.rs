//! On-disk scene format.
//!
//! A scene directory holds `scene.json` (shared intrinsics, per-frame image
//! and depth paths plus a 4x4 row-major camera-to-world transform, optional
//! points path), 8-bit PNG images, `DPTH` depth maps (magic, u32 LE width
//! and height, f32 LE row-major, 0.0 = invalid), and a `PNTS` point set
//! (magic, u32 LE count, 3·count f32 LE).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_deviation, Camera, Intrinsics, Pose};
use crate::numerics::Tensor;

use super::{DataError, DepthMap, Frame, Scene, SimilarityTransform};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
pub const POINTS_MAGIC: &[u8; 4] = b"PNTS";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    image: String,
    depth: Option<String>,
    /// 16 numbers, row-major camera-to-world.
    transform: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    intrinsics: ManifestIntrinsics,
    frames: Vec<ManifestFrame>,
    points: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a scene directory; all frames must share one set of intrinsics.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<(), DataError> {
    if scene.frames.is_empty() {
        return Err(DataError::Validation("scene has no frames".into()));
    }
    let ins = scene.frames[0].camera.intrinsics;
    for (i, f) in scene.frames.iter().enumerate() {
        if f.camera.intrinsics != ins {
            return Err(DataError::InvalidFrame {
                frame: i,
                reason: "frames with mixed intrinsics cannot share a manifest".into(),
            });
        }
    }
    fs::create_dir_all(dir.join("images")).map_err(io_err(dir))?;
    fs::create_dir_all(dir.join("depth")).map_err(io_err(dir))?;

    let mut frames = Vec::with_capacity(scene.frames.len());
    for (i, f) in scene.frames.iter().enumerate() {
        let image_rel = format!("images/frame_{i:03}.png");
        write_png(&dir.join(&image_rel), &f.image, ins.width, ins.height)?;

        let depth_rel = match &f.depth {
            Some(d) => {
                let rel = format!("depth/frame_{i:03}.dpth");
                write_depth_file(&dir.join(&rel), &d.values, ins.width, ins.height)?;
                Some(rel)
            }
            None => None,
        };

        let r = f.camera.pose.rotation;
        let t = f.camera.pose.translation;
        #[rustfmt::skip]
        let transform = vec![
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ];
        frames.push(ManifestFrame {
            image: image_rel,
            depth: depth_rel,
            transform,
        });
    }

    let points_rel = match &scene.points {
        Some(points) => {
            let rel = "points.pnts".to_string();
            write_points_file(&dir.join(&rel), points)?;
            Some(rel)
        }
        None => None,
    };

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        intrinsics: ManifestIntrinsics {
            fx: ins.fx,
            fy: ins.fy,
            cx: ins.cx,
            cy: ins.cy,
            width: ins.width,
            height: ins.height,
        },
        frames,
        points: points_rel,
    };
    let manifest_path = dir.join("scene.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::Parse(e.to_string()))?;
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(())
}

/// Loads a scene directory (or an explicit `scene.json` path), validating
/// dimensions and rotations per frame.
pub fn load_scene(path: &Path) -> Result<Scene, DataError> {
    let manifest_path = if path.is_dir() {
        path.join("scene.json")
    } else {
        path.to_path_buf()
    };
    let root: PathBuf = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::Parse(e.to_string()))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(DataError::Parse(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let mi = &manifest.intrinsics;
    let intrinsics = Intrinsics::new(mi.fx, mi.fy, mi.cx, mi.cy, mi.width, mi.height)
        .map_err(|e| DataError::Validation(e.to_string()))?;

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, mf) in manifest.frames.iter().enumerate() {
        if mf.transform.len() != 16 {
            return Err(DataError::InvalidFrame {
                frame: i,
                reason: format!("transform has {} entries, need 16", mf.transform.len()),
            });
        }
        let m = &mf.transform;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let pose = pose_from_loaded(rotation, translation, i)?;

        let image_path = root.join(&mf.image);
        let (image, w, h) = read_png(&image_path)?;
        if w != intrinsics.width || h != intrinsics.height {
            return Err(DataError::InvalidFrame {
                frame: i,
                reason: format!(
                    "image {}x{} does not match intrinsics {}x{}",
                    w, h, intrinsics.width, intrinsics.height
                ),
            });
        }

        let depth = match &mf.depth {
            Some(rel) => {
                let depth_path = root.join(rel);
                let (values, dw, dh) = read_depth_file(&depth_path)?;
                if dw != intrinsics.width || dh != intrinsics.height {
                    return Err(DataError::InvalidFrame {
                        frame: i,
                        reason: format!("depth map {dw}x{dh} does not match intrinsics"),
                    });
                }
                Some(DepthMap::from_values(values))
            }
            None => None,
        };

        frames.push(Frame {
            image,
            camera: Camera::new(intrinsics, pose),
            depth,
        });
    }

    let points = match &manifest.points {
        Some(rel) => {
            let p = read_points_file(&root.join(rel))?;
            if p.is_empty() {
                return Err(DataError::Validation("point set file is empty".into()));
            }
            Some(p)
        }
        None => None,
    };

    Ok(Scene {
        frames,
        points,
        normalization: SimilarityTransform::identity(),
    })
}

/// Rotations within 1e-6 of orthonormal pass through untouched (keeping
/// round trips bit-exact); up to 1e-4 they are re-orthonormalized; beyond
/// that the frame is rejected.
fn pose_from_loaded(
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    frame: usize,
) -> Result<Pose, DataError> {
    let deviation = rotation_deviation(&rotation);
    if deviation <= 1e-6 {
        return Pose::new(rotation, translation).map_err(|e| DataError::InvalidFrame {
            frame,
            reason: e.to_string(),
        });
    }
    if deviation > 1e-4 {
        return Err(DataError::InvalidFrame {
            frame,
            reason: format!("rotation deviates from orthonormal by {deviation:.3e}"),
        });
    }
    // Gram-Schmidt on columns; the third column comes from the cross
    // product so the result is always proper.
    let c0 = rotation.column(0).into_owned().normalize();
    let mut c1 = rotation.column(1).into_owned();
    c1 -= c0 * c0.dot(&c1);
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    if rotation.column(2).dot(&c2) < 0.0 {
        return Err(DataError::InvalidFrame {
            frame,
            reason: "rotation is a reflection (det < 0)".into(),
        });
    }
    Pose::new(Matrix3::from_columns(&[c0, c1, c2]), translation).map_err(|e| {
        DataError::InvalidFrame {
            frame,
            reason: e.to_string(),
        }
    })
}

fn write_png(path: &Path, image: &Tensor, width: u32, height: u32) -> Result<(), DataError> {
    if image.shape() != [(width * height) as usize, 3] {
        return Err(DataError::Validation(format!(
            "image tensor {:?} does not match {width}x{height}",
            image.shape()
        )));
    }
    write_rgb_png_flat(path, image.data(), width, height)
}

/// 8-bit PNG from row-major [r,g,b] triples in [0,1].
pub fn write_rgb_png(path: &Path, pixels: &[[f64; 3]], width: u32, height: u32) -> Result<(), DataError> {
    if pixels.len() != (width * height) as usize {
        return Err(DataError::Validation(format!(
            "{} pixels do not fill {width}x{height}",
            pixels.len()
        )));
    }
    let flat: Vec<f64> = pixels.iter().flatten().copied().collect();
    write_rgb_png_flat(path, &flat, width, height)
}

fn write_rgb_png_flat(path: &Path, data: &[f64], width: u32, height: u32) -> Result<(), DataError> {
    let (w, h) = (width as usize, height as usize);
    let mut img = image::RgbImage::new(width, height);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            let px = image::Rgb([
                (data[i].clamp(0.0, 1.0) * 255.0).round() as u8,
                (data[i + 1].clamp(0.0, 1.0) * 255.0).round() as u8,
                (data[i + 2].clamp(0.0, 1.0) * 255.0).round() as u8,
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path).map_err(|e| DataError::BadFormat {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn read_png(path: &Path) -> Result<(Tensor, u32, u32), DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for px in img.pixels() {
        data.push(px.0[0] as f64 / 255.0);
        data.push(px.0[1] as f64 / 255.0);
        data.push(px.0[2] as f64 / 255.0);
    }
    Ok((
        Tensor::new(vec![(w * h) as usize, 3], data).expect("png tensor shape"),
        w,
        h,
    ))
}

/// `DPTH` depth map; values are truncated to f32 (the storage precision).
pub fn write_depth_file(path: &Path, values: &[f64], width: u32, height: u32) -> Result<(), DataError> {
    if values.len() != (width * height) as usize {
        return Err(DataError::Validation(format!(
            "depth buffer has {} values for {width}x{height}",
            values.len()
        )));
    }
    let mut buf = Vec::with_capacity(12 + values.len() * 4);
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_depth_file(path: &Path) -> Result<(Vec<f64>, u32, u32), DataError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(io_err(path))?;
    if &header[0..4] != DEPTH_MAGIC {
        return Err(DataError::BadFormat {
            path: path.display().to_string(),
            reason: "missing DPTH magic".into(),
        });
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let count = (width * height) as usize;
    let mut rest = Vec::new();
    file.read_to_end(&mut rest).map_err(io_err(path))?;
    if rest.len() != count * 4 {
        return Err(DataError::BadFormat {
            path: path.display().to_string(),
            reason: format!("expected {} depth values, file holds {}", count, rest.len() / 4),
        });
    }
    let values = rest
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((values, width, height))
}

/// `PNTS` point set; stored at f32 precision.
pub fn write_points_file(path: &Path, points: &[Vector3<f64>]) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(8 + points.len() * 12);
    buf.extend_from_slice(POINTS_MAGIC);
    buf.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        buf.extend_from_slice(&(p.x as f32).to_le_bytes());
        buf.extend_from_slice(&(p.y as f32).to_le_bytes());
        buf.extend_from_slice(&(p.z as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_points_file(path: &Path) -> Result<Vec<Vector3<f64>>, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 8 || &bytes[0..4] != POINTS_MAGIC {
        return Err(DataError::BadFormat {
            path: path.display().to_string(),
            reason: "missing PNTS magic".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count * 12 {
        return Err(DataError::BadFormat {
            path: path.display().to_string(),
            reason: format!("expected {count} points, size mismatch"),
        });
    }
    let points = bytes[8..]
        .chunks_exact(12)
        .map(|c| {
            Vector3::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[8..12].try_into().unwrap()) as f64,
            )
        })
        .collect();
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_scene, SphereSceneSpec};

    #[test]
    fn scene_round_trip_is_exact() {
        let spec = SphereSceneSpec {
            image_size: 16,
            n_views: 3,
            n_surface_points: 64,
            ..SphereSceneSpec::default()
        };
        let scene = make_synthetic_scene(&spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();

        assert_eq!(loaded.frames.len(), scene.frames.len());
        for (a, b) in scene.frames.iter().zip(&loaded.frames) {
            // Bit-identical depth (f32-quantized at generation), poses, and
            // images (8-bit grid at generation). Everything a renderer
            // consumes survives the round trip unchanged.
            assert_eq!(a.image.data(), b.image.data());
            assert_eq!(a.camera.pose.rotation, b.camera.pose.rotation);
            assert_eq!(a.camera.pose.translation, b.camera.pose.translation);
            assert_eq!(a.camera.intrinsics, b.camera.intrinsics);
            let (da, db) = (a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap());
            assert_eq!(da.values, db.values);
            assert_eq!(da.mask, db.mask);
        }
        let (pa, pb) = (scene.points.as_ref().unwrap(), loaded.points.as_ref().unwrap());
        assert_eq!(pa, pb);
    }

    #[test]
    fn missing_image_names_the_path() {
        let spec = SphereSceneSpec {
            image_size: 8,
            n_views: 1,
            n_surface_points: 8,
            ..SphereSceneSpec::default()
        };
        let scene = make_synthetic_scene(&spec, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        fs::remove_file(dir.path().join("images/frame_000.png")).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame_000.png"), "error should name the file: {msg}");
    }

    #[test]
    fn corrupt_rotation_names_the_frame() {
        let spec = SphereSceneSpec {
            image_size: 8,
            n_views: 1,
            n_surface_points: 8,
            ..SphereSceneSpec::default()
        };
        let scene = make_synthetic_scene(&spec, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        // Scale the first rotation row well past the 1e-4 gate.
        let manifest_path = dir.path().join("scene.json");
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest["frames"][0]["transform"][0] = serde_json::json!(2.0);
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::InvalidFrame { frame: 0, .. }), "{err}");
    }

    #[test]
    fn slightly_noisy_rotation_is_reorthonormalized() {
        let spec = SphereSceneSpec {
            image_size: 8,
            n_views: 1,
            n_surface_points: 8,
            ..SphereSceneSpec::default()
        };
        let scene = make_synthetic_scene(&spec, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&scene, dir.path()).unwrap();
        let manifest_path = dir.path().join("scene.json");
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        let r00 = manifest["frames"][0]["transform"][0].as_f64().unwrap();
        manifest["frames"][0]["transform"][0] = serde_json::json!(r00 + 3e-5);
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();
        let dev = rotation_deviation(&loaded.frames[0].camera.pose.rotation);
        assert!(dev < 1e-9, "loader should orthonormalize, got deviation {dev}");
    }

    #[test]
    fn depth_file_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dpth");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(read_depth_file(&path).is_err());
    }
}
