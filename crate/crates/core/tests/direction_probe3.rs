// Temporary calibration probe v3; deleted before finalizing.
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use spry_core::data::{make_synthetic_scene, normalize_scene, Scene, SphereSceneSpec, SphereSpec};
use spry_core::field::{encode_image, ConditionedField, FieldConfig};
use spry_core::metrics::{chamfer, extract_points};
use spry_core::numerics::Checkpoint;
use spry_core::renderer::RenderConfig;
use spry_core::trainer::{
    evaluate_views, finetune, pretrain, spread_views, FreezePolicy, Model, TrainConfig,
};

fn scene_variant(idx: u64) -> SphereSceneSpec {
    let presets: Vec<Vec<SphereSpec>> = vec![
        vec![SphereSpec { center: Vector3::zeros(), radius: 1.0, albedo: [0.8, 0.35, 0.25] }],
        vec![
            SphereSpec { center: Vector3::new(0.4, 0.0, 0.0), radius: 0.55, albedo: [0.2, 0.6, 0.9] },
            SphereSpec { center: Vector3::new(-0.5, 0.0, 0.1), radius: 0.35, albedo: [0.9, 0.8, 0.2] },
        ],
        vec![SphereSpec { center: Vector3::new(0.0, 0.1, 0.0), radius: 0.8, albedo: [0.3, 0.8, 0.4] }],
        vec![
            SphereSpec { center: Vector3::new(0.0, 0.45, 0.0), radius: 0.5, albedo: [0.85, 0.2, 0.55] },
            SphereSpec { center: Vector3::new(0.05, -0.55, 0.0), radius: 0.4, albedo: [0.25, 0.45, 0.85] },
        ],
        vec![SphereSpec { center: Vector3::new(-0.1, 0.0, -0.1), radius: 0.9, albedo: [0.7, 0.7, 0.3] }],
        vec![
            SphereSpec { center: Vector3::new(0.5, 0.1, 0.2), radius: 0.45, albedo: [0.5, 0.3, 0.8] },
            SphereSpec { center: Vector3::new(-0.45, -0.1, -0.15), radius: 0.5, albedo: [0.9, 0.5, 0.3] },
        ],
        vec![SphereSpec { center: Vector3::new(0.1, -0.1, 0.1), radius: 0.75, albedo: [0.4, 0.75, 0.75] }],
        vec![
            SphereSpec { center: Vector3::new(0.0, 0.0, 0.45), radius: 0.5, albedo: [0.8, 0.6, 0.2] },
            SphereSpec { center: Vector3::new(0.0, 0.0, -0.5), radius: 0.45, albedo: [0.3, 0.5, 0.9] },
        ],
    ];
    SphereSceneSpec {
        spheres: presets[(idx as usize) % presets.len()].clone(),
        image_size: 48,
        n_views: 6,
        n_surface_points: 1024,
        ..SphereSceneSpec::default()
    }
}

fn build_scene(idx: u64) -> Scene {
    normalize_scene(&make_synthetic_scene(&scene_variant(idx), 100 + idx).unwrap()).0
}

fn field_cfg() -> FieldConfig {
    FieldConfig { hidden_layers: 4, hidden_width: 96, ..FieldConfig::default() }
}

fn render_cfg() -> RenderConfig {
    RenderConfig { n_samples: 32, near: 2.0, far: 5.5, jitter: true, ..RenderConfig::default() }
}

fn pretrained_model() -> Model {
    let path = Path::new("/tmp/spry_probe_pretrained.ckpt");
    if path.exists() {
        return Model::from_checkpoint(Checkpoint::load(path).unwrap(), field_cfg()).unwrap();
    }
    let scenes: Vec<Scene> = (0..4).map(build_scene).collect();
    let mut model = Model::new(field_cfg(), 42);
    let cfg = TrainConfig {
        iterations: 6000,
        rays_per_batch: 128,
        seed: 7,
        eval_every: 0,
        c2f_ramp_iters: 1500,
        ..TrainConfig::pretrain_defaults()
    };
    let t0 = Instant::now();
    pretrain(&mut model, &scenes, &cfg, &render_cfg()).unwrap();
    eprintln!("pretrain 6000: {:.0} s", t0.elapsed().as_secs_f64());
    model.to_checkpoint().save(path).unwrap();
    model
}

fn ft(base: &Model, scene: &Scene, views: usize, lambda: f64, lr: f64, iters: usize, policy: FreezePolicy, seed: u64) -> Model {
    let mut m = base.clone();
    let cfg = TrainConfig {
        iterations: iters,
        rays_per_batch: 128,
        lr,
        lambda_depth: lambda,
        freeze_policy: policy,
        seed,
        eval_every: 0,
        c2f_enabled: false,
        ..TrainConfig::finetune_defaults()
    };
    finetune(&mut m, scene, views, &cfg, &render_cfg()).unwrap();
    m
}

#[test]
#[ignore]
fn probe_c6_grid() {
    let pretrained = pretrained_model();
    let rc = render_cfg();
    let alpha = field_cfg().pos_bands as f64;
    let held_out = build_scene(6);
    let input = spread_views(2, held_out.n_frames());
    let evals: Vec<usize> = (0..held_out.n_frames()).filter(|i| !input.contains(i)).collect();
    let base = evaluate_views(&pretrained, &held_out, &input, &evals, &rc, alpha).unwrap();
    eprintln!("base: {:.2} dB rmse {:.4}", base.mean_psnr, base.depth_rmse.unwrap());

    for policy in [FreezePolicy::FreezeEncoder, FreezePolicy::None] {
        for lr in [1e-4, 5e-5] {
            for iters in [1000usize, 2500] {
                let t0 = Instant::now();
                let m = ft(&pretrained, &held_out, 2, 0.1, lr, iters, policy, 21);
                let e = evaluate_views(&m, &held_out, &input, &evals, &rc, alpha).unwrap();
                eprintln!(
                    "ft {policy:?} lr {lr:.0e} it {iters}: {:.2} dB (gain {:+.2}), rmse {:.4}  [{:.0}s]",
                    e.mean_psnr,
                    e.mean_psnr - base.mean_psnr,
                    e.depth_rmse.unwrap(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}

#[test]
#[ignore]
fn probe_c7_c8() {
    let pretrained = pretrained_model();
    let rc = render_cfg();
    let alpha = field_cfg().pos_bands as f64;
    // Settings chosen from probe_c6_grid results (placeholder values here;
    // rerun after the grid).
    let (lr, iters, policy) = (1e-4, 1500, FreezePolicy::FreezeEncoder);

    let mut rmse_wins = 0;
    let mut full_wins = 0;
    for sidx in 0..5u64 {
        let scene = build_scene(3 + sidx);
        let input = spread_views(2, scene.n_frames());
        let evals: Vec<usize> = (0..scene.n_frames()).filter(|i| !input.contains(i)).collect();
        let rgb_only = ft(&pretrained, &scene, 2, 0.0, lr, iters, policy, 33 + sidx);
        let ds = ft(&pretrained, &scene, 2, 0.1, lr, iters, policy, 33 + sidx);

        let e_rgb = evaluate_views(&rgb_only, &scene, &input, &evals, &rc, alpha).unwrap();
        let e_ds = evaluate_views(&ds, &scene, &input, &evals, &rc, alpha).unwrap();
        let thr = 10.0;
        let gt = scene.points.as_ref().unwrap();
        let cd_of = |m: &Model| {
            let vols: Vec<_> = input
                .iter()
                .map(|&vi| {
                    let f = &scene.frames[vi];
                    encode_image(&f.image, f.height(), f.width(), &f.camera, &m.params, &m.field_cfg).unwrap()
                })
                .collect();
            let field = ConditionedField { params: &m.params, cfg: &m.field_cfg, volumes: &vols, alpha };
            let pts = extract_points(&field, 48, thr);
            if pts.is_empty() { f64::INFINITY } else { chamfer(&pts, gt).unwrap() }
        };
        let cd_rgb = cd_of(&rgb_only);
        let cd_ds = cd_of(&ds);
        let rmse_rgb = e_rgb.depth_rmse.unwrap();
        let rmse_ds = e_ds.depth_rmse.unwrap();
        rmse_wins += (rmse_ds < rmse_rgb) as u32;
        full_wins += (rmse_ds < rmse_rgb && cd_ds < cd_rgb) as u32;
        eprintln!(
            "C7 scene {sidx}: rmse {rmse_rgb:.4} -> {rmse_ds:.4} | cd {cd_rgb:.4} -> {cd_ds:.4} | psnr {:.2} -> {:.2}",
            e_rgb.mean_psnr, e_ds.mean_psnr
        );
    }
    eprintln!("C7: rmse wins {rmse_wins}/5, full wins {full_wins}/5");

    // C8: per-track finetune, fixed eval views.
    for scene_idx in [6u64, 7] {
        let scene = build_scene(scene_idx);
        let nf = scene.n_frames();
        let all_inputs: Vec<Vec<usize>> = (1..=3).map(|v| spread_views(v, nf)).collect();
        let union: Vec<usize> = {
            let mut u: Vec<usize> = all_inputs.iter().flatten().copied().collect();
            u.sort_unstable();
            u.dedup();
            u
        };
        let fixed_evals: Vec<usize> = (0..nf).filter(|i| !union.contains(i)).collect();
        let mut row = Vec::new();
        for (vi, input) in all_inputs.iter().enumerate() {
            let m = ft(&pretrained, &scene, vi + 1, 0.1, lr, iters, policy, 55);
            let e = evaluate_views(&m, &scene, input, &fixed_evals, &rc, alpha).unwrap();
            row.push(e.mean_psnr);
        }
        eprintln!(
            "C8 scene {scene_idx} ft by views (evals {fixed_evals:?}): 1v {:.2} | 2v {:.2} | 3v {:.2}",
            row[0], row[1], row[2]
        );
    }
}
