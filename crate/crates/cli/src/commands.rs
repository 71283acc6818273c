//! The five pipeline commands. Each one owns its output directory: a
//! checkpoint, a report, the resolved config echo, and an `images/`
//! subdirectory where applicable.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use spry_core::data::{load_scene, make_synthetic_scene, normalize_scene, save_scene, Scene};
use spry_core::field::{encode_image, ConditionedField};
use spry_core::metrics::{chamfer, extract_points, psnr, EvalResult};
use spry_core::numerics::Checkpoint;
use spry_core::renderer::{render_image, RenderConfig};
use spry_core::trainer::{
    evaluate_views, finetune, pretrain, spread_views, Model, Stage, TrainReport,
};

use crate::config::RunConfig;
use crate::table::format_eval_table;

/// Errors that indicate misuse (bad arguments, impossible requests) rather
/// than runtime failure; they map to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.jsonl";

fn prepare_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("images"))
        .with_context(|| format!("creating output directory {}", out.display()))
}

fn load_prepared_scene(cfg: &RunConfig, dir: &Path) -> Result<Scene> {
    let scene = load_scene(dir).with_context(|| format!("loading scene {}", dir.display()))?;
    if cfg.render.normalize_scene {
        Ok(normalize_scene(&scene).0)
    } else {
        Ok(scene)
    }
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Model::from_checkpoint(ckpt, cfg.field.to_core())
        .context("checkpoint does not match the configured field architecture")
}

fn source_volumes(
    model: &Model,
    scene: &Scene,
    views: &[usize],
) -> Result<Vec<spry_core::field::FeatureVolume>> {
    let mut volumes = Vec::with_capacity(views.len());
    for &vi in views {
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
    Ok(volumes)
}

/// `synth`: write a complete synthetic scene directory.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let spec = cfg.synth.to_core();
    spec.validate()
        .map_err(|e| UsageError(format!("invalid scene spec: {e}")))?;
    let scene = make_synthetic_scene(&spec, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_scene(&scene, out)?;
    cfg.echo(out)?;
    println!(
        "wrote {} views of {}x{} px to {}",
        scene.n_frames(),
        spec.image_size,
        spec.image_size,
        out.display()
    );
    Ok(())
}

/// `pretrain`: cross-scene optimization from scratch or a resumed
/// checkpoint.
pub fn cmd_pretrain(
    cfg: &RunConfig,
    scene_dirs: &[PathBuf],
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    if scene_dirs.is_empty() {
        bail!(UsageError("pretrain needs at least one scene directory".into()));
    }
    for dir in scene_dirs {
        if !dir.join("scene.json").is_file() && !dir.is_file() {
            bail!(UsageError(format!("scene manifest not found under {}", dir.display())));
        }
    }
    prepare_out_dir(out)?;
    let scenes: Vec<Scene> = scene_dirs
        .iter()
        .map(|d| load_prepared_scene(cfg, d))
        .collect::<Result<_>>()?;

    let mut model = match resume {
        Some(p) => load_model(cfg, p)?,
        None => Model::new(cfg.field.to_core(), cfg.train.seed),
    };
    let train_cfg = cfg.train.to_core(Stage::Pretrain);
    let report = pretrain(&mut model, &scenes, &train_cfg, &cfg.render.to_core())?;

    finish_run(cfg, out, &model, &report)?;
    println!(
        "pretrained {} iterations over {} scenes -> {}",
        train_cfg.iterations,
        scenes.len(),
        out.display()
    );
    if let Some(p) = report.last_psnr() {
        println!("final held-out PSNR {p:.2} dB");
    }
    Ok(())
}

/// `finetune`: per-scene test-time optimization on `views` input views.
pub fn cmd_finetune(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    views: usize,
    out: &Path,
) -> Result<()> {
    prepare_out_dir(out)?;
    let scene = load_prepared_scene(cfg, scene_dir)?;
    if views == 0 || views > scene.n_frames() {
        bail!(UsageError(format!(
            "requested {views} input views but the scene has {}",
            scene.n_frames()
        )));
    }
    let mut model = load_model(cfg, checkpoint)?;
    let train_cfg = cfg.train.to_core(Stage::Finetune);
    let report = finetune(&mut model, &scene, views, &train_cfg, &cfg.render.to_core())?;

    finish_run(cfg, out, &model, &report)?;
    println!(
        "fine-tuned {} iterations on {} views ({} policy) -> {}",
        train_cfg.iterations,
        views,
        train_cfg.freeze_policy.as_str(),
        out.display()
    );
    if let Some(p) = report.last_psnr() {
        println!("final held-out PSNR {p:.2} dB");
    }
    Ok(())
}

fn finish_run(cfg: &RunConfig, out: &Path, model: &Model, report: &TrainReport) -> Result<()> {
    model
        .to_checkpoint()
        .save(&out.join(CHECKPOINT_FILE))
        .context("writing checkpoint")?;
    report.write_jsonl(&out.join(REPORT_FILE))?;
    cfg.echo(out)?;
    Ok(())
}

/// `render`: RGB + depth for the requested poses, plus a side-by-side
/// ground-truth comparison when the scene carries the target image.
pub fn cmd_render(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    poses: &[usize],
    source_view_count: usize,
    out: &Path,
) -> Result<()> {
    prepare_out_dir(out)?;
    let scene = load_prepared_scene(cfg, scene_dir)?;
    let model = load_model(cfg, checkpoint)?;
    let nf = scene.n_frames();
    let poses: Vec<usize> = if poses.is_empty() { (0..nf).collect() } else { poses.to_vec() };
    for &p in &poses {
        if p >= nf {
            bail!(UsageError(format!("pose index {p} out of range ({nf} frames)")));
        }
    }
    let v = source_view_count.clamp(1, nf);
    let sources = spread_views(v, nf);
    let volumes = source_volumes(&model, &scene, &sources)?;
    let field = ConditionedField {
        params: &model.params,
        cfg: &model.field_cfg,
        volumes: &volumes,
        alpha: model.field_cfg.pos_bands as f64,
    };
    let render_cfg = RenderConfig {
        jitter: false,
        ..cfg.render.to_core()
    };

    for &p in &poses {
        let frame = &scene.frames[p];
        let (rgb, depth, _) = render_image(&frame.camera, &field, &render_cfg, cfg.train.seed)?;
        let w = frame.camera.intrinsics.width;
        let h = frame.camera.intrinsics.height;
        spry_core::data::write_rgb_png(&out.join(format!("images/render_{p:03}.png")), &rgb, w, h)?;
        spry_core::data::write_depth_file(
            &out.join(format!("images/depth_{p:03}.dpth")),
            &depth,
            w,
            h,
        )?;
        // Side-by-side ground truth | render.
        let mut pair = Vec::with_capacity(rgb.len() * 2);
        let gt = frame.image.data();
        for y in 0..h as usize {
            for x in 0..w as usize {
                let i = y * w as usize + x;
                pair.push([gt[i * 3], gt[i * 3 + 1], gt[i * 3 + 2]]);
            }
            for x in 0..w as usize {
                let i = y * w as usize + x;
                pair.push(rgb[i]);
            }
        }
        spry_core::data::write_rgb_png(
            &out.join(format!("images/compare_{p:03}.png")),
            &pair,
            w * 2,
            h,
        )?;
        let flat: Vec<f64> = rgb.iter().flatten().copied().collect();
        let p_db = psnr(&flat, frame.image.data())?;
        println!("pose {p:3}: PSNR {p_db:.2} dB");
    }
    cfg.echo(out)?;
    Ok(())
}

/// `eval`: PSNR and Chamfer distance per view-count condition, printed as a
/// table and written as structured records.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    view_counts: &[usize],
    out: &Path,
) -> Result<()> {
    prepare_out_dir(out)?;
    let scene = load_prepared_scene(cfg, scene_dir)?;
    let model = load_model(cfg, checkpoint)?;
    let nf = scene.n_frames();
    let render_cfg = cfg.render.to_core();
    let alpha = model.field_cfg.pos_bands as f64;

    let mut results = Vec::new();
    for &v in view_counts {
        if v == 0 || v >= nf {
            bail!(UsageError(format!(
                "view count {v} needs held-out views in a {nf}-frame scene"
            )));
        }
        let sources = spread_views(v, nf);
        let evals: Vec<usize> = (0..nf).filter(|i| !sources.contains(i)).collect();
        let e = evaluate_views(&model, &scene, &sources, &evals, &render_cfg, alpha)?;

        let cd = match &scene.points {
            Some(gt) => {
                let volumes = source_volumes(&model, &scene, &sources)?;
                let field = ConditionedField {
                    params: &model.params,
                    cfg: &model.field_cfg,
                    volumes: &volumes,
                    alpha,
                };
                let pts = extract_points(&field, cfg.eval.grid_res, cfg.eval.sigma_threshold);
                if pts.is_empty() {
                    eprintln!("warning: no surface extracted at threshold {}", cfg.eval.sigma_threshold);
                    None
                } else {
                    Some(chamfer(&pts, gt)?)
                }
            }
            None => None,
        };
        results.push(EvalResult {
            view_count: v,
            psnr_per_view: e.per_view_psnr,
            psnr_mean: e.mean_psnr,
            chamfer: cd,
        });
    }

    let table = format_eval_table("spry", &results);
    print!("{table}");
    fs::write(out.join("table.txt"), &table).context("writing table.txt")?;
    let mut jsonl = String::new();
    for r in &results {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(out.join("eval.jsonl"), jsonl).context("writing eval.jsonl")?;
    cfg.echo(out)?;
    Ok(())
}

