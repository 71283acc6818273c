//! Two-stage optimization: cross-scene pretraining, then per-scene
//! fine-tuning on the sparse input views, with freeze policies for the
//! encoder and rendering-MLP groups.

pub mod report;

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Scene;
use crate::encoding::alpha_at;
use crate::field::{
    encode_image, init_params, is_encoder_param, is_mlp_param, ConditionedField, FeatureVolume,
    FieldConfig,
};
use crate::geometry::{generate_ray, ray_depth_scale};
use crate::metrics::psnr;
use crate::numerics::{AdamConfig, Checkpoint, Graph, NumericsError, ParamStore};
use crate::renderer::diff::{
    build_render_graph, Conditioning, DiffRenderSettings, RayBatch, SourceView,
};
use crate::renderer::{ray_seed, render_image, LossBreakdown, RenderConfig, RenderError};

pub use report::{EvalRecord, TrainReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at iteration {iteration} on scene {scene}: {op}")]
    Diverged {
        iteration: u64,
        scene: usize,
        op: String,
    },
    #[error("no scenes to train on")]
    NoScenes,
    #[error("scene offers {available} views, {requested} requested")]
    InsufficientViews { available: usize, requested: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error("report io at {path}: {source}")]
    ReportIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    None,
    FreezeEncoder,
    FreezeRendering,
}

impl FreezePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            FreezePolicy::None => "none",
            FreezePolicy::FreezeEncoder => "freeze_encoder",
            FreezePolicy::FreezeRendering => "freeze_rendering",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_depth: f64,
    pub freeze_policy: FreezePolicy,
    /// Coarse-to-fine window on the position encoding.
    pub c2f_enabled: bool,
    /// Iterations over which the window opens fully.
    pub c2f_ramp_iters: usize,
    /// Restart the window at fine-tune start instead of continuing from the
    /// checkpoint's iteration count.
    pub c2f_reset_on_finetune: bool,
    pub seed: u64,
    /// Evaluate held-out PSNR every this many iterations (0: final only).
    pub eval_every: usize,
    /// Upper bound on randomly drawn source views during pretraining.
    pub max_source_views: usize,
}

impl TrainConfig {
    pub fn pretrain_defaults() -> Self {
        Self {
            stage: Stage::Pretrain,
            iterations: 20_000,
            rays_per_batch: 128,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_depth: 0.1,
            freeze_policy: FreezePolicy::None,
            c2f_enabled: true,
            c2f_ramp_iters: 5_000,
            c2f_reset_on_finetune: true,
            seed: 0,
            eval_every: 500,
            max_source_views: 3,
        }
    }

    pub fn finetune_defaults() -> Self {
        Self {
            stage: Stage::Finetune,
            iterations: 2_000,
            lr: 1e-4,
            c2f_ramp_iters: 500,
            eval_every: 250,
            ..Self::pretrain_defaults()
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Parameters plus the architecture they instantiate.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParamStore,
    pub field_cfg: FieldConfig,
    /// Global iteration counter (continues across resumed runs).
    pub iteration: u64,
}

impl Model {
    pub fn new(field_cfg: FieldConfig, seed: u64) -> Self {
        Self {
            params: init_params(&field_cfg, seed),
            field_cfg,
            iteration: 0,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, field_cfg: FieldConfig) -> Result<Self, TrainError> {
        let expected = init_params(&field_cfg, 0);
        for name in expected.names() {
            match ckpt.params.get(name) {
                Some(e) if e.value.shape() == expected.value(name).shape() => {}
                Some(e) => {
                    return Err(TrainError::Numerics(NumericsError::ShapeMismatch {
                        context: "checkpoint load",
                        expected: format!("{:?} for {name}", expected.value(name).shape()),
                        got: format!("{:?}", e.value.shape()),
                    }))
                }
                None => {
                    return Err(TrainError::Numerics(NumericsError::UnknownParam(
                        name.clone(),
                    )))
                }
            }
        }
        Ok(Self {
            params: ckpt.params,
            field_cfg,
            iteration: ckpt.iteration,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone(), self.iteration)
    }

    pub fn apply_freeze_policy(&mut self, policy: FreezePolicy) {
        self.params.set_all_trainable(true);
        match policy {
            FreezePolicy::None => {}
            FreezePolicy::FreezeEncoder => {
                self.params.set_trainable_where(is_encoder_param, false);
            }
            FreezePolicy::FreezeRendering => {
                self.params.set_trainable_where(is_mlp_param, false);
            }
        }
    }
}

/// Which rays a single step trains on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub scene_idx: usize,
    pub source_views: Vec<usize>,
    pub target_view: usize,
    pub pixels: Vec<usize>,
}

/// Evenly spread view indices; the deterministic "input view" selection for
/// fine-tuning and evaluation tracks.
pub fn spread_views(count: usize, total: usize) -> Vec<usize> {
    (0..count).map(|i| i * total / count).collect()
}

/// Draws the step's scene, conditioning views, target view, and pixels.
/// Keyed entirely by (seed, iter) so interrupted runs replay identically.
pub fn plan_step(scenes: &[Scene], cfg: &TrainConfig, iter: u64) -> StepPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(ray_seed(cfg.seed, iter * 2));
    let scene_idx = (iter % scenes.len() as u64) as usize;
    let scene = &scenes[scene_idx];
    let nf = scene.n_frames();

    let (source_views, target_view) = if nf == 1 {
        (vec![0], 0)
    } else {
        let cap = cfg.max_source_views.max(1).min(nf - 1);
        let v = rng.gen_range(1..=cap);
        let mut sources: Vec<usize> = index_sample(&mut rng, nf, v).into_vec();
        sources.sort_unstable();
        let complement: Vec<usize> = (0..nf).filter(|i| !sources.contains(i)).collect();
        let target = complement[rng.gen_range(0..complement.len())];
        (sources, target)
    };

    let frame = &scene.frames[target_view];
    let n_pixels = frame.width() * frame.height();
    let take = cfg.rays_per_batch.min(n_pixels);
    let pixels = index_sample(&mut rng, n_pixels, take).into_vec();
    StepPlan {
        scene_idx,
        source_views,
        target_view,
        pixels,
    }
}

/// Fine-tuning draws batches only from the fixed input views.
pub fn plan_finetune_step(
    scene: &Scene,
    input_views: &[usize],
    cfg: &TrainConfig,
    iter: u64,
) -> StepPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(ray_seed(cfg.seed, iter * 2));
    let target_view = input_views[rng.gen_range(0..input_views.len())];
    let frame = &scene.frames[target_view];
    let n_pixels = frame.width() * frame.height();
    let take = cfg.rays_per_batch.min(n_pixels);
    let pixels = index_sample(&mut rng, n_pixels, take).into_vec();
    StepPlan {
        scene_idx: 0,
        source_views: input_views.to_vec(),
        target_view,
        pixels,
    }
}

/// One optimizer update on the planned batch. Returns the loss terms.
/// The cache holds per-view feature volumes and is only consulted when the
/// encoder is frozen (its outputs are then constant across steps).
pub fn train_step(
    model: &mut Model,
    scenes: &[Scene],
    plan: &StepPlan,
    cfg: &TrainConfig,
    render: &RenderConfig,
    iter: u64,
    volume_cache: &mut VolumeCache,
) -> Result<LossBreakdown, TrainError> {
    let scene = &scenes[plan.scene_idx];
    let target = &scene.frames[plan.target_view];
    let ins = &target.camera.intrinsics;
    let w = target.width();

    let mut batch = RayBatch::default();
    for &pi in &plan.pixels {
        let (x, y) = (pi % w, pi / w);
        let px = (x as f64 + 0.5, y as f64 + 0.5);
        batch
            .rays
            .push(generate_ray(&target.camera, px, render.near, render.far)?);
        batch.target_rgb.push(target.pixel_rgb(x, y));
        match &target.depth {
            Some(d) if d.mask[pi] => {
                batch
                    .target_depth
                    .push(d.values[pi] * ray_depth_scale(ins, px));
                batch.depth_valid.push(true);
            }
            _ => {
                batch.target_depth.push(0.0);
                batch.depth_valid.push(false);
            }
        }
    }

    let alpha = current_alpha(model, cfg, iter);
    let settings = DiffRenderSettings {
        n_samples: render.n_samples,
        jitter: render.jitter,
        sample_seed: ray_seed(cfg.seed, iter * 2 + 1),
        background: render.background,
        alpha,
        lambda_depth: cfg.lambda_depth,
        normalize_depth: render.normalize_depth,
        train_mlp: cfg.freeze_policy != FreezePolicy::FreezeRendering,
    };

    let encoder_frozen = cfg.freeze_policy == FreezePolicy::FreezeEncoder;
    let mut g = Graph::new();
    let out = if encoder_frozen {
        let volumes = volume_cache.volumes_for(model, scene, plan.scene_idx, &plan.source_views)?;
        build_render_graph(
            &mut g,
            &model.params,
            &model.field_cfg,
            &Conditioning::Volumes(&volumes),
            &batch,
            &settings,
        )?
    } else {
        let views: Vec<SourceView> = plan
            .source_views
            .iter()
            .map(|&vi| {
                let f = &scene.frames[vi];
                SourceView {
                    image: &f.image,
                    h: f.height(),
                    w: f.width(),
                    camera: f.camera,
                }
            })
            .collect();
        build_render_graph(
            &mut g,
            &model.params,
            &model.field_cfg,
            &Conditioning::Images(&views),
            &batch,
            &settings,
        )?
    };

    let grads = g.backward(out.loss).map_err(|e| match e {
        NumericsError::NonFiniteLoss { op } => TrainError::Diverged {
            iteration: iter,
            scene: plan.scene_idx,
            op,
        },
        other => TrainError::Numerics(other),
    })?;
    drop(g);
    model.params.adam_step(&grads, &cfg.adam())?;
    Ok(out.breakdown)
}

fn current_alpha(model: &Model, cfg: &TrainConfig, iter: u64) -> f64 {
    if !cfg.c2f_enabled {
        return model.field_cfg.pos_bands as f64;
    }
    let schedule = model.field_cfg.pos_schedule(cfg.c2f_ramp_iters);
    alpha_at(&schedule, iter as usize)
}

/// Feature volumes for frozen-encoder training, computed once per
/// (scene, view) and reused across steps.
#[derive(Default)]
pub struct VolumeCache {
    entries: HashMap<(usize, usize), FeatureVolume>,
}

impl VolumeCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn volumes_for(
        &mut self,
        model: &Model,
        scene: &Scene,
        scene_idx: usize,
        views: &[usize],
    ) -> Result<Vec<FeatureVolume>, TrainError> {
        let mut out = Vec::with_capacity(views.len());
        for &vi in views {
            let key = (scene_idx, vi);
            if !self.entries.contains_key(&key) {
                let f = &scene.frames[vi];
                let vol = encode_image(
                    &f.image,
                    f.height(),
                    f.width(),
                    &f.camera,
                    &model.params,
                    &model.field_cfg,
                )?;
                self.entries.insert(key, vol);
            }
            out.push(self.entries[&key].clone());
        }
        Ok(out)
    }
}

/// Held-out view evaluation: renders each eval view conditioned on the
/// given source views and reports PSNR (plus depth RMSE when the frames
/// carry ground truth).
pub struct EvalViews {
    pub per_view_psnr: Vec<f64>,
    pub mean_psnr: f64,
    pub depth_rmse: Option<f64>,
}

pub fn evaluate_views(
    model: &Model,
    scene: &Scene,
    source_views: &[usize],
    eval_views: &[usize],
    render: &RenderConfig,
    alpha: f64,
) -> Result<EvalViews, TrainError> {
    let mut volumes = Vec::with_capacity(source_views.len());
    for &vi in source_views {
        let f = &scene.frames[vi];
        volumes.push(encode_image(
            &f.image,
            f.height(),
            f.width(),
            &f.camera,
            &model.params,
            &model.field_cfg,
        )?);
    }
    let field = ConditionedField {
        params: &model.params,
        cfg: &model.field_cfg,
        volumes: &volumes,
        alpha,
    };
    let eval_cfg = RenderConfig {
        jitter: false,
        ..*render
    };

    let mut per_view = Vec::with_capacity(eval_views.len());
    let mut se_depth = 0.0;
    let mut n_depth = 0usize;
    for &vi in eval_views {
        let frame = &scene.frames[vi];
        let (rgb, depth, _) = render_image(&frame.camera, &field, &eval_cfg, 0)?;
        let flat: Vec<f64> = rgb.iter().flatten().copied().collect();
        let p = psnr(&flat, frame.image.data()).map_err(|e| {
            TrainError::Render(RenderError::LengthMismatch {
                context: "evaluate_views",
                left: flat.len(),
                right: e.to_string().len(),
            })
        })?;
        per_view.push(p);

        if let Some(d) = &frame.depth {
            let w = frame.width();
            let ins = &frame.camera.intrinsics;
            for (pi, (&z, &m)) in d.values.iter().zip(&d.mask).enumerate() {
                if m {
                    let px = ((pi % w) as f64 + 0.5, (pi / w) as f64 + 0.5);
                    let gt_ray = z * ray_depth_scale(ins, px);
                    let err = depth[pi] - gt_ray;
                    se_depth += err * err;
                    n_depth += 1;
                }
            }
        }
    }
    let mean_psnr = per_view.iter().sum::<f64>() / per_view.len().max(1) as f64;
    let depth_rmse = (n_depth > 0).then(|| (se_depth / n_depth as f64).sqrt());
    Ok(EvalViews {
        per_view_psnr: per_view,
        mean_psnr,
        depth_rmse,
    })
}

/// Cross-scene pretraining: round-robin over scenes, random 1–3 view
/// conditioning, disjoint target supervision.
pub fn pretrain(
    model: &mut Model,
    scenes: &[Scene],
    cfg: &TrainConfig,
    render: &RenderConfig,
) -> Result<TrainReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    model.apply_freeze_policy(cfg.freeze_policy);
    let mut cache = VolumeCache::new();
    let mut report = TrainReport::new(cfg.freeze_policy.as_str(), None);

    // Report-time eval setup: last frame of the first scene, conditioned on
    // spread views from the rest.
    let eval_scene = 0usize;
    let nf = scenes[eval_scene].n_frames();
    let eval_view = nf - 1;
    let eval_sources: Vec<usize> = spread_views(cfg.max_source_views.min(nf.saturating_sub(1)).max(1), nf)
        .into_iter()
        .filter(|&v| v != eval_view)
        .collect();
    report.set_views(eval_sources.clone(), vec![eval_view]);

    let start = model.iteration;
    let t0 = Instant::now();
    for iter in start..start + cfg.iterations as u64 {
        let plan = plan_step(scenes, cfg, iter);
        let last = train_step(model, scenes, &plan, cfg, render, iter, &mut cache)?;
        model.iteration = iter + 1;
        let due = cfg.eval_every > 0 && (iter + 1 - start) % cfg.eval_every as u64 == 0;
        if due || iter + 1 == start + cfg.iterations as u64 {
            let alpha = current_alpha(model, cfg, iter + 1);
            let eval = evaluate_views(model, &scenes[eval_scene], &eval_sources, &[eval_view], render, alpha)?;
            report.push(EvalRecord {
                iteration: iter + 1,
                rgb_loss: last.rgb_loss,
                depth_loss: last.depth_loss,
                psnr: eval.mean_psnr,
                depth_rmse: eval.depth_rmse,
                wall_time_s: t0.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(report)
}

/// Per-scene test-time optimization on exactly the input views; held-out
/// views are only ever rendered for evaluation.
pub fn finetune(
    model: &mut Model,
    scene: &Scene,
    views: usize,
    cfg: &TrainConfig,
    render: &RenderConfig,
) -> Result<TrainReport, TrainError> {
    let nf = scene.n_frames();
    if views == 0 || views > nf {
        return Err(TrainError::InsufficientViews {
            available: nf,
            requested: views,
        });
    }
    model.apply_freeze_policy(cfg.freeze_policy);
    let input_views = spread_views(views, nf);
    let eval_views: Vec<usize> = (0..nf).filter(|i| !input_views.contains(i)).collect();
    let mut report = TrainReport::new(cfg.freeze_policy.as_str(), Some(views));
    report.set_views(input_views.clone(), eval_views.clone());

    let mut cache = VolumeCache::new();
    let scenes = std::slice::from_ref(scene);
    let start_global = model.iteration;
    let t0 = Instant::now();
    for local in 0..cfg.iterations as u64 {
        // Fine-tune step seeds are local so two fine-tunes from the same
        // checkpoint replay identically regardless of pretrain length.
        let plan = plan_finetune_step(scene, &input_views, cfg, local);
        let alpha_iter = if cfg.c2f_reset_on_finetune {
            local
        } else {
            start_global + local
        };
        let breakdown = train_step(model, scenes, &plan, cfg, render, alpha_iter, &mut cache)
            .map_err(|e| match e {
                TrainError::Diverged { op, scene, .. } => TrainError::Diverged {
                    iteration: start_global + local,
                    scene,
                    op,
                },
                other => other,
            })?;
        model.iteration = start_global + local + 1;
        let due = cfg.eval_every > 0 && (local + 1) % cfg.eval_every as u64 == 0;
        if (due || local + 1 == cfg.iterations as u64) && !eval_views.is_empty() {
            let alpha = current_alpha(model, cfg, alpha_iter + 1);
            let eval = evaluate_views(model, scene, &input_views, &eval_views, render, alpha)?;
            report.push(EvalRecord {
                iteration: start_global + local + 1,
                rgb_loss: breakdown.rgb_loss,
                depth_loss: breakdown.depth_loss,
                psnr: eval.mean_psnr,
                depth_rmse: eval.depth_rmse,
                wall_time_s: t0.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(report)
}
