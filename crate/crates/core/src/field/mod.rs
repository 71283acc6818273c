//! The conditioned radiance field: a small convolutional encoder produces a
//! half-resolution feature volume per source view; 3D query points project
//! into each view and bilinearly sample a feature, features average across
//! views, and an MLP maps (encoded position, encoded direction, feature) to
//! density and color.

mod encoder;
mod mlp;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{encode_into, EncodingSchedule};
use crate::geometry::{project, Camera};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

pub(crate) use encoder::build_encoder_graph;
pub(crate) use mlp::build_mlp_graph;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("image dimensions must be even and at least 8, got {h}x{w}")]
    BadImageDims { h: usize, w: usize },
    #[error("feature aggregation needs at least one view")]
    NoViews,
    #[error("encoding length mismatch: expected {expected}, got {got}")]
    EncodingLength { expected: usize, got: usize },
}

/// Architecture hyperparameters; every dimension the MLP and encoder need
/// derives from here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Feature channels C in the per-view volume.
    pub feature_channels: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Frequency bands for position encoding (windowed during training).
    pub pos_bands: usize,
    /// Frequency bands for view-direction encoding (always fully open).
    pub dir_bands: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            feature_channels: 32,
            hidden_layers: 6,
            hidden_width: 128,
            pos_bands: 10,
            dir_bands: 4,
        }
    }
}

impl FieldConfig {
    pub fn pos_schedule(&self, ramp_iters: usize) -> EncodingSchedule {
        EncodingSchedule::new(self.pos_bands, ramp_iters.max(1), true)
    }

    pub fn dir_schedule(&self) -> EncodingSchedule {
        EncodingSchedule::unwindowed(self.dir_bands, true)
    }

    pub fn pos_dim(&self) -> usize {
        3 * (2 * self.pos_bands + 1)
    }

    pub fn dir_dim(&self) -> usize {
        3 * (2 * self.dir_bands + 1)
    }

    pub(crate) fn color_hidden_width(&self) -> usize {
        (self.hidden_width / 2).max(8)
    }
}

/// Half-resolution feature map for one source view, tied to the camera it
/// was encoded from.
#[derive(Debug, Clone)]
pub struct FeatureVolume {
    /// [fh * fw, C], row-major over feature texels.
    pub data: Tensor,
    pub fh: usize,
    pub fw: usize,
    pub camera: Camera,
    pub image_h: usize,
    pub image_w: usize,
}

/// Density and color for a single field query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

/// Fresh parameters for the encoder and MLP, deterministically seeded.
pub fn init_params(cfg: &FieldConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    encoder::init_encoder_params(&mut store, cfg, &mut rng);
    mlp::init_mlp_params(&mut store, cfg, &mut rng);
    store
}

/// Name predicate for the encoder parameter group (the freeze unit).
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("encoder.")
}

/// Name predicate for the rendering-MLP parameter group.
pub fn is_mlp_param(name: &str) -> bool {
    name.starts_with("mlp.")
}

/// Runs the conv stack over an image ([H*W, 3] in [0,1]) and returns the
/// feature volume. Deterministic given parameters.
pub fn encode_image(
    image: &Tensor,
    h: usize,
    w: usize,
    camera: &Camera,
    params: &ParamStore,
    cfg: &FieldConfig,
) -> Result<FeatureVolume, FieldError> {
    encoder::check_dims(h, w)?;
    let mut g = Graph::new();
    let img = g.constant(image.clone());
    let feat = encoder::build_encoder_graph(&mut g, img, h, w, params, cfg, false);
    Ok(FeatureVolume {
        data: g.value(feat).clone(),
        fh: h / 2,
        fw: w / 2,
        camera: *camera,
        image_h: h,
        image_w: w,
    })
}

/// Four texel taps and bilinear weights for a world-space query projected
/// into a feature volume. `None` when the query is behind the camera or
/// projects outside the source image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTaps {
    pub idx: [i64; 4],
    pub w: [f64; 4],
}

pub(crate) fn bilinear_taps(meta: &FeatureVolumeMeta, query: &Vector3<f64>) -> Option<BilinearTaps> {
    let ((u, v), _depth) = project(&meta.camera, query).ok()?;
    let iw = meta.image_w as f64;
    let ih = meta.image_h as f64;
    if !(0.0..=iw).contains(&u) || !(0.0..=ih).contains(&v) {
        return None;
    }
    // Image pixels to feature texels (half resolution), texel centers at
    // integer + 0.5.
    let fx = u * meta.fw as f64 / iw - 0.5;
    let fy = v * meta.fh as f64 / ih - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let clamp = |v: f64, hi: usize| -> i64 { (v.max(0.0) as i64).min(hi as i64 - 1) };
    let x0i = clamp(x0, meta.fw);
    let x1i = clamp(x0 + 1.0, meta.fw);
    let y0i = clamp(y0, meta.fh);
    let y1i = clamp(y0 + 1.0, meta.fh);
    let fw = meta.fw as i64;
    Some(BilinearTaps {
        idx: [y0i * fw + x0i, y0i * fw + x1i, y1i * fw + x0i, y1i * fw + x1i],
        w: [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ],
    })
}

/// Bilinear pixel-aligned feature for one query; zero vector outside the
/// frustum.
pub fn sample_feature(volume: &FeatureVolume, query: &Vector3<f64>) -> Vec<f64> {
    let c = volume.data.ncols();
    let mut out = vec![0.0; c];
    if let Some(taps) = bilinear_taps(&volume.meta(), query) {
        for (i, &row) in taps.idx.iter().enumerate() {
            let base = row as usize * c;
            let w = taps.w[i];
            for (o, &v) in out.iter_mut().zip(&volume.data.data()[base..base + c]) {
                *o += w * v;
            }
        }
    }
    out
}

/// Elementwise mean across per-view feature vectors.
pub fn aggregate_views(features: &[Vec<f64>]) -> Result<Vec<f64>, FieldError> {
    if features.is_empty() {
        return Err(FieldError::NoViews);
    }
    let c = features[0].len();
    let mut out = vec![0.0; c];
    for f in features {
        debug_assert_eq!(f.len(), c);
        for (o, v) in out.iter_mut().zip(f) {
            *o += v;
        }
    }
    let inv = 1.0 / features.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    Ok(out)
}

/// Graph version of projection + bilinear interpolation + cross-view mean:
/// gathers features for every query point from each volume node and
/// averages. `volumes` pairs each feature-map Var (shape [fh*fw, C]) with
/// the metadata used for projection.
pub(crate) fn build_feature_gather(
    g: &mut Graph,
    volumes: &[(Var, FeatureVolumeMeta)],
    queries: &[Vector3<f64>],
) -> Result<Var, FieldError> {
    if volumes.is_empty() {
        return Err(FieldError::NoViews);
    }
    let mut per_view: Vec<Var> = Vec::with_capacity(volumes.len());
    for (var, meta) in volumes {
        let mut gathered: Option<Var> = None;
        // Four taps, each a gather + row scale; summed.
        let mut idx = [
            Vec::with_capacity(queries.len()),
            Vec::with_capacity(queries.len()),
            Vec::with_capacity(queries.len()),
            Vec::with_capacity(queries.len()),
        ];
        let mut wts = [
            Vec::with_capacity(queries.len()),
            Vec::with_capacity(queries.len()),
            Vec::with_capacity(queries.len()),
            Vec::with_capacity(queries.len()),
        ];
        for q in queries {
            match bilinear_taps(meta, q) {
                Some(t) => {
                    for k in 0..4 {
                        idx[k].push(t.idx[k]);
                        wts[k].push(t.w[k]);
                    }
                }
                None => {
                    for k in 0..4 {
                        idx[k].push(-1);
                        wts[k].push(0.0);
                    }
                }
            }
        }
        for k in 0..4 {
            let rows = g.gather_rows(*var, std::mem::take(&mut idx[k]));
            let scaled = g.scale_rows(rows, std::mem::take(&mut wts[k]));
            gathered = Some(match gathered {
                Some(acc) => g.add(acc, scaled),
                None => scaled,
            });
        }
        per_view.push(gathered.expect("four taps recorded"));
    }
    let mut acc = per_view[0];
    for v in &per_view[1..] {
        acc = g.add(acc, *v);
    }
    if per_view.len() > 1 {
        acc = g.scale(acc, 1.0 / per_view.len() as f64);
    }
    Ok(acc)
}

/// Projection metadata of a feature volume, separable from its data so the
/// data can live on the graph.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FeatureVolumeMeta {
    pub fh: usize,
    pub fw: usize,
    pub camera: Camera,
    pub image_h: usize,
    pub image_w: usize,
}

impl FeatureVolume {
    pub(crate) fn meta(&self) -> FeatureVolumeMeta {
        FeatureVolumeMeta {
            fh: self.fh,
            fw: self.fw,
            camera: self.camera,
            image_h: self.image_h,
            image_w: self.image_w,
        }
    }
}

/// Single-query field evaluation: encodes position and direction, runs the
/// MLP with the given aggregated feature. Batched training uses the graph
/// builders directly; this is the one-sample entry point.
pub fn query_field(
    pos_encoded: &[f64],
    dir_encoded: &[f64],
    feature: &[f64],
    params: &ParamStore,
    cfg: &FieldConfig,
) -> Result<FieldOutput, FieldError> {
    if pos_encoded.len() != cfg.pos_dim() {
        return Err(FieldError::EncodingLength {
            expected: cfg.pos_dim(),
            got: pos_encoded.len(),
        });
    }
    if dir_encoded.len() != cfg.dir_dim() {
        return Err(FieldError::EncodingLength {
            expected: cfg.dir_dim(),
            got: dir_encoded.len(),
        });
    }
    let mut g = Graph::new();
    let pe = g.constant(Tensor::new(vec![1, pos_encoded.len()], pos_encoded.to_vec()).unwrap());
    let de = g.constant(Tensor::new(vec![1, dir_encoded.len()], dir_encoded.to_vec()).unwrap());
    let fe = g.constant(Tensor::new(vec![1, feature.len()], feature.to_vec()).unwrap());
    let (sigma, rgb) = mlp::build_mlp_graph(&mut g, pe, de, fe, params, cfg, false);
    let r = g.value(rgb).data();
    Ok(FieldOutput {
        sigma: g.value(sigma).item(),
        rgb: [r[0], r[1], r[2]],
    })
}

/// Encodes a batch of positions into an [M, P] tensor.
pub(crate) fn encode_positions(
    points: &[Vector3<f64>],
    schedule: &EncodingSchedule,
    alpha: f64,
) -> Tensor {
    let dim = schedule.output_len();
    let mut data = Vec::with_capacity(points.len() * dim);
    for p in points {
        encode_into(p, schedule, alpha, &mut data);
    }
    Tensor::new(vec![points.len(), dim], data).expect("encoded batch shape")
}

/// The neural field bound to its conditioning views, queryable by the
/// renderer. Evaluation replays the same graph ops training records, with
/// parameters as constants, so train-time and eval-time forward arithmetic
/// are identical.
pub struct ConditionedField<'a> {
    pub params: &'a ParamStore,
    pub cfg: &'a FieldConfig,
    pub volumes: &'a [FeatureVolume],
    /// Coarse-to-fine progress for the position window.
    pub alpha: f64,
}

impl crate::renderer::SampledField for ConditionedField<'_> {
    fn query(&self, points: &[Vector3<f64>], dirs: &[Vector3<f64>]) -> (Vec<f64>, Vec<[f64; 3]>) {
        let pos_schedule = EncodingSchedule::new(self.cfg.pos_bands, 1, true);
        let dir_schedule = self.cfg.dir_schedule();
        let mut g = Graph::new();
        let pe = g.constant(encode_positions(points, &pos_schedule, self.alpha));
        let de = g.constant(encode_positions(
            dirs,
            &dir_schedule,
            dir_schedule.bands as f64,
        ));
        let vols: Vec<(Var, FeatureVolumeMeta)> = self
            .volumes
            .iter()
            .map(|v| (g.constant(v.data.clone()), v.meta()))
            .collect();
        let feat = build_feature_gather(&mut g, &vols, points).expect("conditioning views");
        let (sigma, rgb) = build_mlp_graph(&mut g, pe, de, feat, self.params, self.cfg, false);
        let s = g.value(sigma).data().to_vec();
        let c = g
            .value(rgb)
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        (s, c)
    }
}
