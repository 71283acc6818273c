// Temporary calibration probe v6; deleted before finalizing.
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use spry_core::data::{make_synthetic_scene, normalize_scene, Scene, SphereSceneSpec, SphereSpec};
use spry_core::field::{encode_image, ConditionedField, FieldConfig};
use spry_core::metrics::{chamfer, extract_points};
use spry_core::numerics::Checkpoint;
use spry_core::renderer::RenderConfig;
use spry_core::trainer::{
    evaluate_views, finetune, spread_views, FreezePolicy, Model, TrainConfig,
};

fn sp(c: [f64; 3], r: f64, a: [f64; 3]) -> SphereSpec {
    SphereSpec { center: Vector3::new(c[0], c[1], c[2]), radius: r, albedo: a }
}

fn test_variant(idx: u64) -> SphereSceneSpec {
    let (spheres, light) = match idx % 6 {
        0 => (
            vec![
                sp([-0.55, -0.25, -0.35], 0.4, [0.95, 0.1, 0.1]),
                sp([0.15, 0.1, 0.1], 0.35, [0.1, 0.15, 0.95]),
                sp([0.6, 0.4, 0.5], 0.28, [0.95, 0.9, 0.15]),
            ],
            Vector3::new(-0.5, 0.6, 0.62),
        ),
        1 => (
            vec![
                sp([0.0, 0.0, 0.5], 0.45, [0.9, 0.55, 0.15]),
                sp([0.0, 0.05, -0.5], 0.42, [0.15, 0.75, 0.6]),
            ],
            Vector3::new(0.7, 0.1, 0.7),
        ),
        2 => (
            vec![sp([0.05, -0.05, 0.0], 0.95, [0.45, 0.15, 0.75])],
            Vector3::new(-0.3, -0.8, 0.52),
        ),
        3 => (
            vec![
                sp([-0.5, 0.3, 0.0], 0.38, [0.2, 0.9, 0.3]),
                sp([0.45, -0.3, 0.1], 0.44, [0.9, 0.25, 0.65]),
            ],
            Vector3::new(0.1, 0.9, 0.42),
        ),
        4 => (
            vec![
                sp([0.0, 0.55, 0.2], 0.38, [0.95, 0.8, 0.3]),
                sp([0.0, -0.25, -0.2], 0.5, [0.2, 0.35, 0.9]),
            ],
            Vector3::new(-0.6, -0.2, 0.77),
        ),
        _ => (
            vec![
                sp([-0.4, -0.4, 0.3], 0.33, [0.85, 0.4, 0.1]),
                sp([0.35, 0.35, -0.25], 0.45, [0.1, 0.6, 0.85]),
                sp([0.55, -0.45, 0.35], 0.25, [0.7, 0.9, 0.2]),
            ],
            Vector3::new(0.4, -0.7, 0.59),
        ),
    };
    SphereSceneSpec {
        spheres,
        light_dir: light,
        image_size: 48,
        n_views: 6,
        n_surface_points: 1024,
        ..SphereSceneSpec::default()
    }
}

fn build_test_scene(idx: u64) -> Scene {
    normalize_scene(&make_synthetic_scene(&test_variant(idx), 900 + idx).unwrap()).0
}

fn field_cfg() -> FieldConfig {
    FieldConfig { hidden_layers: 4, hidden_width: 96, ..FieldConfig::default() }
}

fn render_cfg() -> RenderConfig {
    RenderConfig { n_samples: 32, near: 2.0, far: 5.5, jitter: true, ..RenderConfig::default() }
}

fn pretrained() -> Model {
    Model::from_checkpoint(
        Checkpoint::load(Path::new("/tmp/spry_probe_pretrained.ckpt")).unwrap(),
        field_cfg(),
    )
    .unwrap()
}

fn ft(base: &Model, scene: &Scene, views: usize, lambda: f64, iters: usize, seed: u64) -> Model {
    let mut m = base.clone();
    let cfg = TrainConfig {
        iterations: iters,
        rays_per_batch: 128,
        lr: 1e-4,
        lambda_depth: lambda,
        freeze_policy: FreezePolicy::None,
        seed,
        eval_every: 0,
        c2f_enabled: false,
        ..TrainConfig::finetune_defaults()
    };
    finetune(&mut m, scene, views, &cfg, &render_cfg()).unwrap();
    m
}

fn cd_of(m: &Model, scene: &Scene, input: &[usize], thr: f64) -> f64 {
    let vols: Vec<_> = input
        .iter()
        .map(|&vi| {
            let f = &scene.frames[vi];
            encode_image(&f.image, f.height(), f.width(), &f.camera, &m.params, &m.field_cfg).unwrap()
        })
        .collect();
    let alpha = m.field_cfg.pos_bands as f64;
    let field = ConditionedField { params: &m.params, cfg: &m.field_cfg, volumes: &vols, alpha };
    let pts = extract_points(&field, 48, thr);
    if pts.is_empty() {
        f64::INFINITY
    } else {
        chamfer(&pts, scene.points.as_ref().unwrap()).unwrap()
    }
}

#[test]
#[ignore]
fn probe_c7_long() {
    let base = pretrained();
    let rc = render_cfg();
    let alpha = field_cfg().pos_bands as f64;
    for iters in [3000usize, 400] {
        let t0 = Instant::now();
        let mut wins5 = 0;
        let mut wins10 = 0;
        let mut wins20 = 0;
        for sidx in 0..5u64 {
            let scene = build_test_scene(sidx);
            let input = spread_views(2, scene.n_frames());
            let evals: Vec<usize> =
                (0..scene.n_frames()).filter(|i| !input.contains(i)).collect();
            let rgb_only = ft(&base, &scene, 2, 0.0, iters, 33 + sidx);
            let ds = ft(&base, &scene, 2, 0.1, iters, 33 + sidx);
            let e_rgb = evaluate_views(&rgb_only, &scene, &input, &evals, &rc, alpha).unwrap();
            let e_ds = evaluate_views(&ds, &scene, &input, &evals, &rc, alpha).unwrap();
            let rmse_rgb = e_rgb.depth_rmse.unwrap();
            let rmse_ds = e_ds.depth_rmse.unwrap();
            let rmse_win = rmse_ds < rmse_rgb;
            let mut line = format!("it{iters} s{sidx}: rmse {rmse_rgb:.4}->{rmse_ds:.4}");
            for (thr, wins) in [(5.0, &mut wins5), (10.0, &mut wins10), (20.0, &mut wins20)] {
                let cd_rgb = cd_of(&rgb_only, &scene, &input, thr);
                let cd_ds = cd_of(&ds, &scene, &input, thr);
                *wins += (rmse_win && cd_ds < cd_rgb) as u32;
                line += &format!(" | t{thr}: {cd_rgb:.4}->{cd_ds:.4}");
            }
            eprintln!("{line}");
        }
        eprintln!(
            "it{iters}: wins thr5 {wins5}/5, thr10 {wins10}/5, thr20 {wins20}/5  [{:.0}s]",
            t0.elapsed().as_secs_f64()
        );
    }
}
