//! Differentiable end-to-end render of a ray batch: stratified sampling,
//! windowed position encoding, pixel-aligned feature gather, the
//! conditioned MLP, quadrature, compositing, and the RGB + depth losses —
//! recorded on one tape so gradients reach the MLP and (when conditioning
//! from raw images) the encoder.

use nalgebra::Vector3;

use crate::encoding::EncodingSchedule;
use crate::field::{
    build_encoder_graph, build_feature_gather, build_mlp_graph, encode_positions, FeatureVolume,
    FieldConfig,
};
use crate::geometry::{sample_stratified, Camera, Ray};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

use super::{ray_seed, LossBreakdown, RenderError};

/// Rays plus their supervision targets. `target_depth` is parameterized as
/// distance along the ray (callers convert camera-frame z with
/// [`crate::geometry::ray_depth_scale`]).
#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub target_rgb: Vec<[f64; 3]>,
    pub target_depth: Vec<f64>,
    pub depth_valid: Vec<bool>,
}

/// A source image ready for the encoder, paired with its camera.
pub struct SourceView<'a> {
    /// [h*w, 3] pixel tensor in [0,1].
    pub image: &'a Tensor,
    pub h: usize,
    pub w: usize,
    pub camera: Camera,
}

/// How conditioning features enter the graph: precomputed volumes become
/// constants (frozen encoder / evaluation); raw source views run the conv
/// stack with trainable parameters.
pub enum Conditioning<'a> {
    Volumes(&'a [FeatureVolume]),
    Images(&'a [SourceView<'a>]),
}

#[derive(Debug, Clone, Copy)]
pub struct DiffRenderSettings {
    pub n_samples: usize,
    pub jitter: bool,
    pub sample_seed: u64,
    pub background: [f64; 3],
    /// Coarse-to-fine progress for the position encoding window.
    pub alpha: f64,
    pub lambda_depth: f64,
    pub normalize_depth: bool,
    pub train_mlp: bool,
}

/// Graph handles for a rendered batch plus the realized loss values.
pub struct RenderedBatch {
    pub loss: Var,
    pub rgb: Var,
    pub depth: Var,
    pub acc: Var,
    pub weights: Var,
    pub breakdown: LossBreakdown,
}

pub fn build_render_graph(
    g: &mut Graph,
    params: &ParamStore,
    field_cfg: &FieldConfig,
    conditioning: &Conditioning,
    batch: &RayBatch,
    settings: &DiffRenderSettings,
) -> Result<RenderedBatch, RenderError> {
    let r = batch.rays.len();
    let n = settings.n_samples;
    assert!(r > 0 && n > 0, "empty batch");
    debug_assert_eq!(batch.target_rgb.len(), r);

    // Sampling: positions and intervals are constants of the graph.
    let mut points: Vec<Vector3<f64>> = Vec::with_capacity(r * n);
    let mut dirs: Vec<Vector3<f64>> = Vec::with_capacity(r * n);
    let mut t_data = Vec::with_capacity(r * n);
    let mut delta_data = Vec::with_capacity(r * n);
    for (i, ray) in batch.rays.iter().enumerate() {
        let sp = sample_stratified(ray, n, settings.jitter, ray_seed(settings.sample_seed, i as u64))?;
        for &t in &sp.t {
            points.push(ray.at(t));
            dirs.push(ray.direction);
        }
        t_data.extend_from_slice(&sp.t);
        delta_data.extend_from_slice(&sp.delta);
    }

    // Encodings (windowed positions, fully-open directions).
    let pos_schedule = EncodingSchedule::new(field_cfg.pos_bands, 1, true);
    let dir_schedule = field_cfg.dir_schedule();
    let pos_enc = g.constant(encode_positions(&points, &pos_schedule, settings.alpha));
    let dir_enc = g.constant(encode_positions(
        &dirs,
        &dir_schedule,
        dir_schedule.bands as f64,
    ));

    // Conditioning features.
    let volume_nodes: Vec<(Var, crate::field::FeatureVolumeMeta)> = match conditioning {
        Conditioning::Volumes(vols) => vols
            .iter()
            .map(|v| (g.constant(v.data.clone()), v.meta()))
            .collect(),
        Conditioning::Images(views) => {
            let mut nodes = Vec::with_capacity(views.len());
            for view in views.iter() {
                let img = g.constant(view.image.clone());
                let feat = build_encoder_graph(g, img, view.h, view.w, params, field_cfg, true);
                let meta = crate::field::FeatureVolumeMeta {
                    fh: view.h / 2,
                    fw: view.w / 2,
                    camera: view.camera,
                    image_h: view.h,
                    image_w: view.w,
                };
                nodes.push((feat, meta));
            }
            nodes
        }
    };
    let features = build_feature_gather(g, &volume_nodes, &points)?;

    // Field evaluation.
    let (sigma, colors) = build_mlp_graph(
        g,
        pos_enc,
        dir_enc,
        features,
        params,
        field_cfg,
        settings.train_mlp,
    );

    // Quadrature: w_i = exp(-cum) * (1 - exp(-sigma*delta)).
    let sigma_rn = g.reshape(sigma, vec![r, n]);
    let delta_c = g.constant(Tensor::new(vec![r, n], delta_data).expect("delta shape"));
    let t_c = g.constant(Tensor::new(vec![r, n], t_data).expect("t shape"));
    let sd = g.mul(sigma_rn, delta_c);
    let cum = g.cumsum_exclusive(sd);
    let neg_cum = g.scale(cum, -1.0);
    let trans = g.exp(neg_cum);
    let neg_sd = g.scale(sd, -1.0);
    let through = g.exp(neg_sd);
    let alpha_i = g.rsub_scalar(1.0, through);
    let weights = g.mul(trans, alpha_i);

    // Composite.
    let acc = g.sum_rows(weights);
    let wt = g.mul(weights, t_c);
    let raw_depth = g.sum_rows(wt);
    let depth = if settings.normalize_depth {
        let denom = g.add_scalar(acc, 1e-8);
        g.div(raw_depth, denom)
    } else {
        raw_depth
    };

    let w_rows = g.reshape(weights, vec![r * n, 1]);
    let weighted_colors = g.mul_col_vec(colors, w_rows);
    let comp = g.sum_group_rows(weighted_colors, n);
    let bg_rows = {
        let mut data = Vec::with_capacity(r * 3);
        for _ in 0..r {
            data.extend_from_slice(&settings.background);
        }
        g.constant(Tensor::new(vec![r, 3], data).expect("background shape"))
    };
    let residual = g.rsub_scalar(1.0, acc);
    let bg_term = g.mul_col_vec(bg_rows, residual);
    let rgb = g.add(comp, bg_term);

    // Losses. The depth term is the mean over valid rays only; a batch with
    // no valid depth simply carries a zero depth term (training batches may
    // legitimately land entirely on background).
    let target_rgb = {
        let mut data = Vec::with_capacity(r * 3);
        for c in &batch.target_rgb {
            data.extend_from_slice(c);
        }
        g.constant(Tensor::new(vec![r, 3], data).expect("target rgb shape"))
    };
    let rgb_diff = g.sub(rgb, target_rgb);
    let rgb_sq = g.mul(rgb_diff, rgb_diff);
    let rgb_loss = g.mean_all(rgb_sq);

    let valid: Vec<i64> = batch
        .depth_valid
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| v.then_some(i as i64))
        .collect();
    let (total, depth_loss_value) = if settings.lambda_depth > 0.0 && !valid.is_empty() {
        let gt: Vec<f64> = valid
            .iter()
            .map(|&i| batch.target_depth[i as usize])
            .collect();
        let m = valid.len();
        let pred = g.gather_rows(depth, valid);
        let gt_c = g.constant(Tensor::new(vec![m, 1], gt).expect("target depth shape"));
        let d = g.sub(pred, gt_c);
        let dsq = g.mul(d, d);
        let depth_loss = g.mean_all(dsq);
        let scaled = g.scale(depth_loss, settings.lambda_depth);
        let total = g.add(rgb_loss, scaled);
        (total, g.value(depth_loss).item())
    } else {
        (rgb_loss, 0.0)
    };

    let breakdown = LossBreakdown {
        rgb_loss: g.value(rgb_loss).item(),
        depth_loss: depth_loss_value,
        total: g.value(total).item(),
        lambda_depth: settings.lambda_depth,
    };

    Ok(RenderedBatch {
        loss: total,
        rgb,
        depth,
        acc,
        weights,
        breakdown,
    })
}
