//! Strided convolutional image encoder producing the per-view feature
//! volume. Three 3x3 layers (stride 2, 1, 1; channels 3 -> 16 -> 32 -> C)
//! with ReLU between, implemented as im2col gathers feeding the shared
//! matmul kernel so the whole stack is differentiable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Graph, ParamStore, Tensor, Var};

use super::{FieldConfig, FieldError};

pub(super) const KERNEL: usize = 3;
pub(super) const MID_CHANNELS: [usize; 2] = [16, 32];

/// Layer specs as (name, in_channels, out_channels, stride).
pub(super) fn conv_specs(cfg: &FieldConfig) -> [(&'static str, usize, usize, usize); 3] {
    [
        ("encoder.conv1", 3, MID_CHANNELS[0], 2),
        ("encoder.conv2", MID_CHANNELS[0], MID_CHANNELS[1], 1),
        ("encoder.conv3", MID_CHANNELS[1], cfg.feature_channels, 1),
    ]
}

pub(super) fn init_encoder_params(
    store: &mut ParamStore,
    cfg: &FieldConfig,
    rng: &mut ChaCha8Rng,
) {
    for (name, cin, cout, _) in conv_specs(cfg) {
        let fan_in = KERNEL * KERNEL * cin;
        let limit = (6.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * cout).map(|_| rng.gen_range(-limit..limit)).collect();
        store
            .insert(&format!("{name}.weight"), Tensor::new(vec![fan_in, cout], w).unwrap())
            .expect("unique param name");
        store
            .insert(&format!("{name}.bias"), Tensor::zeros(vec![1, cout]))
            .expect("unique param name");
    }
}

/// Row indices of the im2col matrix for a 3x3 conv with padding 1.
/// Out-of-bounds taps map to -1 (zero row).
fn im2col_indices(h: usize, w: usize, stride: usize) -> (Vec<i64>, usize, usize) {
    let oh = (h + 2 - KERNEL) / stride + 1;
    let ow = (w + 2 - KERNEL) / stride + 1;
    let mut idx = Vec::with_capacity(oh * ow * KERNEL * KERNEL);
    for oy in 0..oh {
        for ox in 0..ow {
            for dy in 0..KERNEL {
                for dx in 0..KERNEL {
                    let iy = (oy * stride + dy) as i64 - 1;
                    let ix = (ox * stride + dx) as i64 - 1;
                    if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                        idx.push(iy * w as i64 + ix);
                    } else {
                        idx.push(-1);
                    }
                }
            }
        }
    }
    (idx, oh, ow)
}

/// Records the conv stack on the graph. `image` is an [H*W, 3] node; the
/// result is the [H/2 * W/2, C] feature map. When `train` is false the
/// caller should pass conv parameters as constants via `bind`.
pub(crate) fn build_encoder_graph(
    g: &mut Graph,
    image: Var,
    h: usize,
    w: usize,
    params: &ParamStore,
    cfg: &FieldConfig,
    train: bool,
) -> Var {
    let mut x = image;
    let (mut ch, mut cw) = (h, w);
    let specs = conv_specs(cfg);
    let last = specs.len() - 1;
    for (li, (name, _cin, _cout, stride)) in specs.into_iter().enumerate() {
        let (idx, oh, ow) = im2col_indices(ch, cw, stride);
        let cols = g.gather_rows(x, idx);
        let cin = g.value(x).ncols();
        let cols = g.reshape(cols, vec![oh * ow, KERNEL * KERNEL * cin]);
        let wname = format!("{name}.weight");
        let bname = format!("{name}.bias");
        let wvar = bind(g, params, &wname, train);
        let bvar = bind(g, params, &bname, train);
        let y = g.matmul(cols, wvar);
        let y = g.add_row_vec(y, bvar);
        x = if li < last { g.relu(y) } else { y };
        ch = oh;
        cw = ow;
    }
    x
}

fn bind(g: &mut Graph, params: &ParamStore, name: &str, train: bool) -> Var {
    let value = params.value(name).clone();
    if train {
        g.param(name, value)
    } else {
        g.constant(value)
    }
}

/// Validates image dimensions per the encoder contract.
pub(super) fn check_dims(h: usize, w: usize) -> Result<(), FieldError> {
    if h < 8 || w < 8 || h % 2 != 0 || w % 2 != 0 {
        return Err(FieldError::BadImageDims { h, w });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_cfg() -> FieldConfig {
        FieldConfig {
            feature_channels: 8,
            ..FieldConfig::default()
        }
    }

    #[test]
    fn output_is_half_resolution() {
        let cfg = test_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_encoder_params(&mut store, &cfg, &mut rng);

        let (h, w) = (16, 12);
        let image = Tensor::zeros(vec![h * w, 3]);
        let mut g = Graph::new();
        let img = g.constant(image);
        let feat = build_encoder_graph(&mut g, img, h, w, &store, &cfg, false);
        assert_eq!(g.value(feat).shape(), &[(h / 2) * (w / 2), 8]);
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        // Biases initialize to zero, so a zero image stays zero through
        // every conv and ReLU.
        let cfg = test_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        init_encoder_params(&mut store, &cfg, &mut rng);

        let (h, w) = (8, 8);
        let mut g = Graph::new();
        let img = g.constant(Tensor::zeros(vec![h * w, 3]));
        let feat = build_encoder_graph(&mut g, img, h, w, &store, &cfg, false);
        assert!(g.value(feat).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_given_parameters() {
        let cfg = test_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        init_encoder_params(&mut store, &cfg, &mut rng);

        let (h, w) = (10, 8);
        let image = Tensor::new(
            vec![h * w, 3],
            (0..h * w * 3).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        let run = || {
            let mut g = Graph::new();
            let img = g.constant(image.clone());
            let feat = build_encoder_graph(&mut g, img, h, w, &store, &cfg, false);
            g.value(feat).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        // One channel in/out, identity-ish kernel: compare against a naive
        // conv evaluated by hand.
        let (h, w) = (4usize, 4usize);
        let image: Vec<f64> = (0..h * w).map(|i| i as f64).collect();
        let (idx, oh, ow) = im2col_indices(h, w, 1);
        assert_eq!((oh, ow), (4, 4));
        // Kernel that picks the center tap: output should equal input.
        let mut g = Graph::new();
        let img = g.constant(Tensor::new(vec![h * w, 1], image.clone()).unwrap());
        let cols = g.gather_rows(img, idx);
        let cols = g.reshape(cols, vec![oh * ow, 9]);
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // center of the 3x3 window
        let k = g.constant(Tensor::new(vec![9, 1], kernel).unwrap());
        let y = g.matmul(cols, k);
        assert_eq!(g.value(y).data(), image.as_slice());
    }

    #[test]
    fn dimension_contract() {
        assert!(check_dims(64, 64).is_ok());
        assert!(check_dims(7, 8).is_err());
        assert!(check_dims(8, 9).is_err());
        assert!(check_dims(6, 6).is_err());
    }
}
