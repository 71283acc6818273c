//! The conditioned radiance MLP: (encoded position ++ aggregated feature)
//! through the trunk, view-direction encoding injected before the color
//! head. softplus keeps density non-negative, sigmoid keeps color in [0,1].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Graph, ParamStore, Tensor, Var};

use super::FieldConfig;

/// (name, fan_in, fan_out) for every linear layer, in forward order.
pub(super) fn mlp_specs(cfg: &FieldConfig) -> Vec<(String, usize, usize)> {
    let mut specs = Vec::new();
    let mut input = cfg.pos_dim() + cfg.feature_channels;
    for i in 0..cfg.hidden_layers {
        specs.push((format!("mlp.trunk{i}"), input, cfg.hidden_width));
        input = cfg.hidden_width;
    }
    specs.push(("mlp.sigma".to_string(), cfg.hidden_width, 1));
    specs.push((
        "mlp.color0".to_string(),
        cfg.hidden_width + cfg.dir_dim(),
        cfg.color_hidden_width(),
    ));
    specs.push(("mlp.color1".to_string(), cfg.color_hidden_width(), 3));
    specs
}

pub(super) fn init_mlp_params(store: &mut ParamStore, cfg: &FieldConfig, rng: &mut ChaCha8Rng) {
    for (name, fan_in, fan_out) in mlp_specs(cfg) {
        let limit = (6.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        store
            .insert(&format!("{name}.weight"), Tensor::new(vec![fan_in, fan_out], w).unwrap())
            .expect("unique param name");
        store
            .insert(&format!("{name}.bias"), Tensor::zeros(vec![1, fan_out]))
            .expect("unique param name");
    }
}

fn linear(g: &mut Graph, x: Var, params: &ParamStore, name: &str, train: bool) -> Var {
    let w = params.value(&format!("{name}.weight")).clone();
    let b = params.value(&format!("{name}.bias")).clone();
    let (wv, bv) = if train {
        (g.param(&format!("{name}.weight"), w), g.param(&format!("{name}.bias"), b))
    } else {
        (g.constant(w), g.constant(b))
    };
    let y = g.matmul(x, wv);
    g.add_row_vec(y, bv)
}

/// Records the MLP on the graph for a batch of samples.
///
/// `pos_enc` is [M, P], `dir_enc` is [M, D], `features` is [M, C]; returns
/// (sigma [M, 1], rgb [M, 3]) after the range-fixing activations.
pub(crate) fn build_mlp_graph(
    g: &mut Graph,
    pos_enc: Var,
    dir_enc: Var,
    features: Var,
    params: &ParamStore,
    cfg: &FieldConfig,
    train: bool,
) -> (Var, Var) {
    let mut x = g.concat_cols(&[pos_enc, features]);
    for i in 0..cfg.hidden_layers {
        let y = linear(g, x, params, &format!("mlp.trunk{i}"), train);
        x = g.relu(y);
    }
    let sigma_raw = linear(g, x, params, "mlp.sigma", train);
    let sigma = g.softplus(sigma_raw);

    let color_in = g.concat_cols(&[x, dir_enc]);
    let h = linear(g, color_in, params, "mlp.color0", train);
    let h = g.relu(h);
    let rgb_raw = linear(g, h, params, "mlp.color1", train);
    let rgb = g.sigmoid(rgb_raw);
    (sigma, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;
    use rand::SeedableRng;

    fn tiny_cfg() -> FieldConfig {
        FieldConfig {
            feature_channels: 4,
            hidden_layers: 2,
            hidden_width: 16,
            pos_bands: 2,
            dir_bands: 1,
            ..FieldConfig::default()
        }
    }

    fn init(cfg: &FieldConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_mlp_params(&mut store, cfg, &mut rng);
        store
    }

    fn random_inputs(cfg: &FieldConfig, m: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        (
            Tensor::new(vec![m, cfg.pos_dim()], draw(m * cfg.pos_dim())).unwrap(),
            Tensor::new(vec![m, cfg.dir_dim()], draw(m * cfg.dir_dim())).unwrap(),
            Tensor::new(vec![m, cfg.feature_channels], draw(m * cfg.feature_channels)).unwrap(),
        )
    }

    #[test]
    fn zero_params_give_activation_identities() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        for (name, fan_in, fan_out) in mlp_specs(&cfg) {
            store
                .insert(&format!("{name}.weight"), Tensor::zeros(vec![fan_in, fan_out]))
                .unwrap();
            store
                .insert(&format!("{name}.bias"), Tensor::zeros(vec![1, fan_out]))
                .unwrap();
        }
        let (pe, de, fe) = random_inputs(&cfg, 3, 0);
        let mut g = Graph::new();
        let (pe, de, fe) = (g.constant(pe), g.constant(de), g.constant(fe));
        let (sigma, rgb) = build_mlp_graph(&mut g, pe, de, fe, &store, &cfg, false);
        for &s in g.value(sigma).data() {
            assert!((s - std::f64::consts::LN_2).abs() < 1e-15, "softplus(0) = ln 2");
        }
        for &c in g.value(rgb).data() {
            assert_eq!(c, 0.5, "sigmoid(0) = 0.5");
        }
    }

    #[test]
    fn outputs_in_range_for_random_draws() {
        let cfg = tiny_cfg();
        for seed in 0..40 {
            let store = init(&cfg, seed);
            let (pe, de, fe) = random_inputs(&cfg, 16, seed + 1000);
            let mut g = Graph::new();
            let (pe, de, fe) = (g.constant(pe), g.constant(de), g.constant(fe));
            let (sigma, rgb) = build_mlp_graph(&mut g, pe, de, fe, &store, &cfg, false);
            assert!(g.value(sigma).data().iter().all(|&s| s >= 0.0));
            assert!(g.value(rgb).data().iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let store = init(&cfg, 7);
        let (pe, de, fe) = random_inputs(&cfg, 4, 8);
        let program = move |g: &mut Graph, params: &ParamStore| {
            let (pe, de, fe) = (
                g.constant(pe.clone()),
                g.constant(de.clone()),
                g.constant(fe.clone()),
            );
            let (sigma, rgb) = build_mlp_graph(g, pe, de, fe, params, &cfg, true);
            // Scalar objective touching both heads.
            let s = g.sum_all(sigma);
            let c = g.sum_all(rgb);
            g.add(s, c)
        };
        let err = gradient_check(&program, &store, 1e-5, 6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
