use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model_ir::{LayerKind, LayerSpec, NetworkModel, TensorShape};

#[derive(Debug, Clone, Copy)]
pub struct RandomModelConfig {
    pub depth: usize,
    pub max_spatial: u32,
    pub max_channels: u32,
}

/// Deterministic random chain of `depth` layers. Windowed layers that would
/// not fit the current feature map fall back to a pointwise convolution, so
/// the result always validates. Some models end in a global pool and a dense
/// layer.
pub fn random_model(seed: u64, config: RandomModelConfig) -> NetworkModel {
    let RandomModelConfig {
        depth,
        max_spatial,
        max_channels,
    } = config;
    assert!(depth >= 1 && max_spatial >= 1 && max_channels >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = TensorShape::new(
        rng.gen_range(max_spatial.min(3)..=max_spatial),
        rng.gen_range(max_spatial.min(3)..=max_spatial),
        rng.gen_range(1..=max_channels),
    );
    let input = shape;

    let sink_tail = match depth {
        d if d >= 3 && rng.gen_bool(0.25) => 2,
        d if d >= 2 && rng.gen_bool(0.1) => 1,
        _ => 0,
    };
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth - sink_tail {
        let c = shape.channels;
        let kind = match rng.gen_range(0..20) {
            0..=8 => LayerKind::Conv2d,
            9..=14 => LayerKind::DwConv2d,
            15..=17 => LayerKind::MaxPool2d,
            _ => LayerKind::AvgPool2d,
        };
        let kernel = [1, 2, 3, 3, 3, 5][rng.gen_range(0..6)];
        let stride = if rng.gen_bool(0.25) { 2 } else { 1 };
        let padding = if rng.gen_bool(0.7) {
            kernel / 2
        } else {
            rng.gen_range(0..kernel)
        };
        let mut layer = match kind {
            LayerKind::Conv2d => {
                LayerSpec::conv(kernel, stride, padding, c, rng.gen_range(1..=max_channels))
            }
            LayerKind::DwConv2d => LayerSpec::dwconv(kernel, stride, padding, c),
            LayerKind::MaxPool2d => LayerSpec::max_pool(kernel.max(2), stride, padding, c),
            _ => LayerSpec::avg_pool(kernel.max(2), stride, padding, c),
        };
        let out = match layer.output_shape(shape) {
            Ok(out) => out,
            Err(_) => {
                layer = LayerSpec::conv(1, 1, 0, c, rng.gen_range(1..=max_channels));
                layer
                    .output_shape(shape)
                    .expect("pointwise conv always fits")
            }
        };
        layers.push(layer);
        shape = out;
    }
    if sink_tail >= 1 {
        layers.push(LayerSpec::global_pool(shape.channels));
    }
    if sink_tail == 2 {
        layers.push(LayerSpec::dense(
            shape.channels,
            rng.gen_range(1..=max_channels),
        ));
    }
    NetworkModel::new(format!("random-{seed}"), input, layers, 1)
        .expect("generated models are valid by construction")
}
