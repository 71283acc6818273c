//! Sparse-view volume rendering engine: a pixel-aligned feature-conditioned
//! neural field trained with RGB and expected-depth supervision, with a
//! coarse-to-fine positional encoding schedule.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: cameras, rays, projection, stratified sampling
//! - [`encoding`]: windowed positional encoding
//! - [`numerics`]: f64 tensors, reverse-mode differentiation, Adam, checkpoints
//! - [`field`]: image encoder, pixel-aligned feature lookup, conditioned MLP
//! - [`renderer`]: quadrature weights, compositing, expected depth, losses
//! - [`data`]: scene I/O, normalization, synthetic scenes with analytic GT
//! - [`trainer`]: pretrain / fine-tune loops with freeze policies
//! - [`metrics`]: PSNR, surface extraction, Chamfer distance

pub mod data;
pub mod encoding;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod numerics;
pub mod renderer;
pub mod trainer;

pub use data::{Scene, SphereSceneSpec};
pub use encoding::EncodingSchedule;
pub use field::{FeatureVolume, FieldConfig, FieldOutput};
pub use geometry::{Camera, Intrinsics, Pose, Ray, SamplePoints};
pub use numerics::{ParamStore, Tensor};
pub use renderer::{LossBreakdown, RenderConfig, RenderOutput};
pub use trainer::{FreezePolicy, TrainConfig, TrainReport};
