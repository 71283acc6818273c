//! Run configuration: a TOML file with one section per subsystem, merged
//! with command-line overrides. Unknown keys are rejected, and the fully
//! resolved configuration is echoed into the output directory so a run can
//! be reproduced from its artifacts alone.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use spry_core::data::{SphereSceneSpec, SphereSpec};
use spry_core::field::FieldConfig;
use spry_core::renderer::RenderConfig;
use spry_core::trainer::{FreezePolicy, Stage, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub field: FieldSection,
    pub render: RenderSection,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            field: FieldSection::default(),
            render: RenderSection::default(),
            train: TrainSection::default(),
            synth: SynthSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub feature_channels: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pos_bands: usize,
    pub dir_bands: usize,
}

impl Default for FieldSection {
    fn default() -> Self {
        let d = FieldConfig::default();
        Self {
            feature_channels: d.feature_channels,
            hidden_layers: d.hidden_layers,
            hidden_width: d.hidden_width,
            pos_bands: d.pos_bands,
            dir_bands: d.dir_bands,
        }
    }
}

impl FieldSection {
    pub fn to_core(&self) -> FieldConfig {
        FieldConfig {
            feature_channels: self.feature_channels,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            pos_bands: self.pos_bands,
            dir_bands: self.dir_bands,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub jitter: bool,
    pub normalize_depth: bool,
    /// Apply scene normalization (cameras within radius 4, object in the
    /// unit ball) after loading.
    pub normalize_scene: bool,
}

impl Default for RenderSection {
    fn default() -> Self {
        let d = RenderConfig::default();
        Self {
            n_samples: d.n_samples,
            near: d.near,
            far: d.far,
            background: d.background,
            jitter: d.jitter,
            normalize_depth: d.normalize_depth,
            normalize_scene: true,
        }
    }
}

impl RenderSection {
    pub fn to_core(&self) -> RenderConfig {
        RenderConfig {
            n_samples: self.n_samples,
            near: self.near,
            far: self.far,
            background: self.background,
            jitter: self.jitter,
            normalize_depth: self.normalize_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub finetune_iterations: usize,
    pub rays_per_batch: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_depth: f64,
    pub freeze_policy: FreezePolicy,
    pub c2f_enabled: bool,
    pub c2f_ramp_iters: usize,
    pub c2f_reset_on_finetune: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub max_source_views: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let p = TrainConfig::pretrain_defaults();
        let f = TrainConfig::finetune_defaults();
        Self {
            iterations: p.iterations,
            finetune_iterations: f.iterations,
            rays_per_batch: p.rays_per_batch,
            lr: p.lr,
            finetune_lr: f.lr,
            beta1: p.beta1,
            beta2: p.beta2,
            adam_eps: p.adam_eps,
            lambda_depth: p.lambda_depth,
            freeze_policy: p.freeze_policy,
            c2f_enabled: p.c2f_enabled,
            c2f_ramp_iters: p.c2f_ramp_iters,
            c2f_reset_on_finetune: p.c2f_reset_on_finetune,
            seed: p.seed,
            eval_every: p.eval_every,
            max_source_views: p.max_source_views,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, stage: Stage) -> TrainConfig {
        TrainConfig {
            stage,
            iterations: match stage {
                Stage::Pretrain => self.iterations,
                Stage::Finetune => self.finetune_iterations,
            },
            rays_per_batch: self.rays_per_batch,
            lr: match stage {
                Stage::Pretrain => self.lr,
                Stage::Finetune => self.finetune_lr,
            },
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            lambda_depth: self.lambda_depth,
            freeze_policy: self.freeze_policy,
            c2f_enabled: self.c2f_enabled,
            c2f_ramp_iters: self.c2f_ramp_iters,
            c2f_reset_on_finetune: self.c2f_reset_on_finetune,
            seed: self.seed,
            eval_every: self.eval_every,
            max_source_views: self.max_source_views,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub image_size: usize,
    pub n_views: usize,
    pub ring_radius: f64,
    pub ring_elevation: f64,
    pub n_surface_points: usize,
    pub light_dir: [f64; 3],
    pub spheres: Vec<SphereEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereEntry {
    pub center: [f64; 3],
    pub radius: f64,
    pub albedo: [f64; 3],
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SphereSceneSpec::default();
        Self {
            image_size: d.image_size,
            n_views: d.n_views,
            ring_radius: d.ring_radius,
            ring_elevation: d.ring_elevation,
            n_surface_points: d.n_surface_points,
            light_dir: [d.light_dir.x, d.light_dir.y, d.light_dir.z],
            spheres: d
                .spheres
                .iter()
                .map(|s| SphereEntry {
                    center: [s.center.x, s.center.y, s.center.z],
                    radius: s.radius,
                    albedo: s.albedo,
                })
                .collect(),
        }
    }
}

impl SynthSection {
    pub fn to_core(&self) -> SphereSceneSpec {
        SphereSceneSpec {
            spheres: self
                .spheres
                .iter()
                .map(|s| SphereSpec {
                    center: nalgebra::Vector3::new(s.center[0], s.center[1], s.center[2]),
                    radius: s.radius,
                    albedo: s.albedo,
                })
                .collect(),
            light_dir: nalgebra::Vector3::new(self.light_dir[0], self.light_dir[1], self.light_dir[2]),
            n_views: self.n_views,
            image_size: self.image_size,
            ring_radius: self.ring_radius,
            ring_elevation: self.ring_elevation,
            n_surface_points: self.n_surface_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub grid_res: usize,
    pub sigma_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            grid_res: 64,
            sigma_threshold: 50.0,
        }
    }
}

/// Typed command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub rays_per_batch: Option<usize>,
    pub lr: Option<f64>,
    pub lambda_depth: Option<f64>,
    pub freeze: Option<FreezePolicy>,
    pub n_samples: Option<usize>,
    pub eval_every: Option<usize>,
    pub c2f: Option<bool>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                cfg.validate()?;
                Ok(cfg)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn apply(&mut self, o: &Overrides, stage: Option<Stage>) {
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.iterations {
            match stage {
                Some(Stage::Finetune) => self.train.finetune_iterations = v,
                _ => self.train.iterations = v,
            }
        }
        if let Some(v) = o.rays_per_batch {
            self.train.rays_per_batch = v;
        }
        if let Some(v) = o.lr {
            match stage {
                Some(Stage::Finetune) => self.train.finetune_lr = v,
                _ => self.train.lr = v,
            }
        }
        if let Some(v) = o.lambda_depth {
            self.train.lambda_depth = v;
        }
        if let Some(v) = o.freeze {
            self.train.freeze_policy = v;
        }
        if let Some(v) = o.n_samples {
            self.render.n_samples = v;
        }
        if let Some(v) = o.eval_every {
            self.train.eval_every = v;
        }
        if let Some(v) = o.c2f {
            self.train.c2f_enabled = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.render.far <= self.render.near || self.render.near <= 0.0 {
            bail!(
                "render.near/far must satisfy 0 < near < far (got {} / {})",
                self.render.near,
                self.render.far
            );
        }
        if self.render.n_samples == 0 {
            bail!("render.n_samples must be at least 1");
        }
        if self.train.rays_per_batch == 0 {
            bail!("train.rays_per_batch must be at least 1");
        }
        if self.render.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            bail!("render.background channels must lie in [0,1]");
        }
        if self.eval.grid_res < 8 {
            bail!("eval.grid_res must be at least 8");
        }
        Ok(())
    }

    /// Writes the resolved configuration next to the run's artifacts.
    pub fn echo(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing config echo")?;
        let path = out_dir.join("config.toml");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[train]\nnot_a_real_key = 3\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());
        let text = "[no_such_section]\nx = 1\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn overrides_apply_per_stage() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            iterations: Some(77),
            lr: Some(0.5),
            ..Overrides::default()
        };
        cfg.apply(&o, Some(Stage::Finetune));
        assert_eq!(cfg.train.finetune_iterations, 77);
        assert_eq!(cfg.train.finetune_lr, 0.5);
        // Pretrain values untouched.
        assert_eq!(cfg.train.iterations, TrainConfig::pretrain_defaults().iterations);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = RunConfig::default();
        cfg.render.near = 5.0;
        cfg.render.far = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.render.background = [1.5, 0.0, 0.0];
        assert!(cfg.validate().is_err());
    }
}
