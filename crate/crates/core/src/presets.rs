//! Ready-made network architectures for experiments, plus seeded weight
//! initialization and a constrained random generator for equivalence
//! fuzzing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ir::{
    AvgPool2dLayer, BatchNormLayer, Conv2dLayer, Conv3dLayer, FcLayer, InputRank, InputSpec,
    LayerKind, LayerSpec, NetworkGraph,
};
use crate::tensor::BatchNormParams;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PresetError {
    #[error("sample size {m} must be an odd value of at least 3")]
    BadSampleSize { m: usize },
}

const EPS: f32 = 1e-5;

fn conv2d(
    id: &str,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: bool,
) -> LayerSpec {
    LayerSpec::new(
        id,
        LayerKind::Conv2d(Conv2dLayer {
            in_channels: ci,
            out_channels: co,
            kh: k,
            kw: k,
            stride_h: stride,
            stride_w: stride,
            pad,
            weights: None,
            bias: bias.then(|| vec![0.0; co]),
        }),
    )
}

fn conv3d_spectral(id: &str, ci: usize, co: usize, kd: usize, khw: usize, sd: usize, pd: usize) -> LayerSpec {
    LayerSpec::new(
        id,
        LayerKind::Conv3d(Conv3dLayer {
            in_channels: ci,
            out_channels: co,
            kd,
            kh: khw,
            kw: khw,
            stride_d: sd,
            stride_h: 1,
            stride_w: 1,
            pad_d: pd,
            pad_hw: 0,
            weights: None,
            bias: Some(vec![0.0; co]),
        }),
    )
}

fn bn(id: &str, channels: usize) -> LayerSpec {
    LayerSpec::new(
        id,
        LayerKind::BatchNorm(BatchNormLayer {
            channels,
            epsilon: EPS,
            params: None,
        }),
    )
}

fn relu(id: &str) -> LayerSpec {
    LayerSpec::new(id, LayerKind::Relu)
}

/// Largest odd spectral kernel not exceeding the band count, capped at
/// the classic 7.
fn spectral_kernel(bands: usize) -> usize {
    let k = bands.min(7);
    if k % 2 == 0 {
        k - 1
    } else {
        k
    }
}

/// Spectral-spatial residual classifier in the style of depth-probing
/// 3-D networks: a strided spectral stem, a spectral residual block,
/// spectral collapse, a spatial residual block, then global pooling
/// into a fully connected head. Sample size 7.
///
/// Nothing in it strides or pads spatially, so the transform rewrites
/// only the head (pooling and the fully connected layer) and the
/// weights survive unchanged: no retraining is needed.
pub fn ssrn_like(bands: usize, num_classes: usize) -> NetworkGraph {
    let kd = spectral_kernel(bands);
    let d1 = (bands - kd) / 2 + 1;
    let c3 = 24usize;
    let pd = (kd - 1) / 2;
    NetworkGraph {
        name: String::from("ssrn-like"),
        input: InputSpec {
            bands,
            sample_size: 7,
            rank: InputRank::Rank4,
        },
        num_classes,
        layers: vec![
            conv3d_spectral("stem", 1, c3, kd, 1, 2, 0),
            bn("stem-bn", c3),
            relu("stem-act"),
            LayerSpec::new("spec-res", LayerKind::ResidualBegin),
            conv3d_spectral("spec1", c3, c3, kd, 1, 1, pd),
            bn("spec1-bn", c3),
            relu("spec1-act"),
            conv3d_spectral("spec2", c3, c3, kd, 1, 1, pd),
            bn("spec2-bn", c3),
            LayerSpec::new("spec-add", LayerKind::ResidualEnd),
            relu("spec-act"),
            LayerSpec::new("flatten", LayerKind::CollapseSpectral),
            conv2d("mix", c3 * d1, c3, 1, 1, 0, false),
            bn("mix-bn", c3),
            relu("mix-act"),
            LayerSpec::new("spat-res", LayerKind::ResidualBegin),
            conv2d("spat1", c3, c3, 3, 1, 0, false),
            bn("spat1-bn", c3),
            relu("spat1-act"),
            conv2d("spat2", c3, c3, 3, 1, 0, false),
            bn("spat2-bn", c3),
            LayerSpec::new("spat-add", LayerKind::ResidualEnd),
            relu("spat-act"),
            LayerSpec::new("pool", LayerKind::GlobalAvgPool),
            LayerSpec::new(
                "head",
                LayerKind::Fc(FcLayer {
                    in_features: c3,
                    out_features: num_classes,
                    weights: None,
                    bias: Some(vec![0.0; num_classes]),
                }),
            ),
        ],
    }
}

/// Pyramidal residual classifier: padded 3x3 stages that downsample
/// with stride-2 convolutions, then a fully connected head. Sample
/// size 9.
///
/// The strides and padding pin it to patches; the transform strips
/// them, which changes the computed features, so the rewritten network
/// (receptive field 11) must be retrained.
pub fn presnet_like(bands: usize, num_classes: usize) -> NetworkGraph {
    let c = 24usize;
    let ct = 32usize;
    NetworkGraph {
        name: String::from("presnet-like"),
        input: InputSpec {
            bands,
            sample_size: 9,
            rank: InputRank::Rank3,
        },
        num_classes,
        layers: vec![
            conv2d("stem", bands, c, 3, 1, 1, false),
            bn("stem-bn", c),
            relu("stem-act"),
            LayerSpec::new("res", LayerKind::ResidualBegin),
            conv2d("down", c, c, 3, 2, 1, false),
            bn("down-bn", c),
            relu("down-act"),
            conv2d("keep", c, c, 3, 1, 1, false),
            bn("keep-bn", c),
            LayerSpec::new("add", LayerKind::ResidualEnd),
            relu("res-act"),
            conv2d("trans", c, ct, 3, 2, 1, false),
            bn("trans-bn", ct),
            relu("trans-act"),
            LayerSpec::new(
                "head",
                LayerKind::Fc(FcLayer {
                    in_features: ct * 3 * 3,
                    out_features: num_classes,
                    weights: None,
                    bias: Some(vec![0.0; num_classes]),
                }),
            ),
        ],
    }
}

/// Small unpadded 3x3 pyramid with a 1x1 head. Sample size 5. Already
/// image-runnable, trainable as is; the workhorse for end-to-end runs.
pub fn small_tppi(bands: usize, num_classes: usize) -> NetworkGraph {
    let c = 24usize;
    NetworkGraph {
        name: String::from("small-tppi"),
        input: InputSpec {
            bands,
            sample_size: 5,
            rank: InputRank::Rank3,
        },
        num_classes,
        layers: vec![
            conv2d("c1", bands, c, 3, 1, 0, true),
            relu("a1"),
            conv2d("c2", c, c, 3, 1, 0, true),
            relu("a2"),
            conv2d("head", c, num_classes, 1, 1, 0, true),
        ],
    }
}

/// Timing-sweep network: one kernel-spanning "gather" convolution sized
/// to the sample, then a fixed 1x1 body that dominates the cost. Across
/// odd sample sizes the per-pixel image cost stays within a factor of
/// two, which isolates the patch pipeline's window overhead in sweep
/// measurements.
pub fn sweep_net(m: usize, bands: usize, num_classes: usize) -> Result<NetworkGraph, PresetError> {
    if m < 3 || m % 2 == 0 {
        return Err(PresetError::BadSampleSize { m });
    }
    let gather = 8usize;
    let body = 32usize;
    let mut layers = vec![
        conv2d("gather", bands, gather, m, 1, 0, true),
        relu("gather-act"),
        conv2d("mix", gather, body, 1, 1, 0, true),
        relu("mix-act"),
    ];
    for i in 0..5 {
        layers.push(conv2d(&format!("body{i}"), body, body, 1, 1, 0, true));
        layers.push(relu(&format!("body{i}-act")));
    }
    layers.push(conv2d("head", body, num_classes, 1, 1, 0, true));
    Ok(NetworkGraph {
        name: format!("sweep-m{m}"),
        input: InputSpec {
            bands,
            sample_size: m,
            rank: InputRank::Rank3,
        },
        num_classes,
        layers,
    })
}

/// He-style fan-in initialization: convolution and fully connected
/// weights are drawn from `N(0, 2 / fan_in)` with the seeded generator,
/// biases that exist are zeroed, and batch-norm layers get identity
/// parameters. Existing weights are overwritten.
pub fn init_weights(net: &mut NetworkGraph, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, fan_in: usize| -> Vec<f32> {
        let std = (2.0 / fan_in as f32).sqrt();
        let dist = Normal::new(0.0f32, std).expect("std is finite and positive");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    for layer in &mut net.layers {
        match &mut layer.kind {
            LayerKind::Conv2d(c) => {
                let fan = c.in_channels * c.kh * c.kw;
                c.weights = Some(draw(c.out_channels * fan, fan));
                if let Some(b) = &mut c.bias {
                    b.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            LayerKind::Conv3d(c) => {
                let fan = c.in_channels * c.kd * c.kh * c.kw;
                c.weights = Some(draw(c.out_channels * fan, fan));
                if let Some(b) = &mut c.bias {
                    b.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            LayerKind::Fc(f) => {
                f.weights = Some(draw(f.out_features * f.in_features, f.in_features));
                if let Some(b) = &mut f.bias {
                    b.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            LayerKind::BatchNorm(b) => {
                b.params = Some(BatchNormParams::identity(b.channels, b.epsilon));
            }
            _ => {}
        }
    }
}

/// Generates a random image-runnable network with sample size 3, 5, or
/// 7, spanning the whole layer vocabulary: optional strided spectral
/// stem, residual blocks, batch norm with non-trivial statistics,
/// sliding pools, and 1x1 mixers. Weights are initialized from the same
/// seed, so equal seeds give equal networks.
pub fn random_tppi_net(seed: u64, bands: usize, num_classes: usize) -> NetworkGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = [3usize, 5, 7][rng.random_range(0..3)];

    // Spatial kernels whose combined shrink reaches the sample size.
    let mut budget = m - 1;
    let mut slots: Vec<usize> = Vec::new();
    while budget > 0 {
        let k = if budget >= 4 && rng.random_bool(0.3) { 5 } else { 3 };
        slots.push(k);
        budget -= k - 1;
    }
    let mut slots = slots.into_iter();

    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut channels = bands;
    let mut rank = InputRank::Rank3;
    let mut n = 0usize;

    if bands >= 3 && rng.random_bool(0.35) {
        rank = InputRank::Rank4;
        let kd_max = bands.min(5);
        let kd = if kd_max >= 5 && rng.random_bool(0.5) { 5 } else { 3 };
        let sd = if bands > kd && rng.random_bool(0.5) { 2 } else { 1 };
        let khw = slots.next().unwrap_or(1);
        let co = rng.random_range(2..=4);
        layers.push(conv3d_spectral("stem", 1, co, kd, khw, sd, 0));
        if rng.random_bool(0.5) {
            layers.push(bn("stem-bn", co));
        }
        layers.push(relu("stem-act"));
        layers.push(LayerSpec::new("flatten", LayerKind::CollapseSpectral));
        channels = co * ((bands - kd) / sd + 1);
    }

    for k in slots {
        n += 1;
        let roll = rng.random_range(0..10);
        if k == 3 && roll < 2 {
            layers.push(LayerSpec::new(format!("res{n}"), LayerKind::ResidualBegin));
            layers.push(conv2d(&format!("body{n}"), channels, channels, 3, 1, 0, true));
            layers.push(LayerSpec::new(format!("add{n}"), LayerKind::ResidualEnd));
            layers.push(relu(&format!("res{n}-act")));
        } else if k == 3 && roll < 3 {
            layers.push(LayerSpec::new(
                format!("pool{n}"),
                LayerKind::AvgPool2d(AvgPool2dLayer {
                    kernel: (3, 3),
                    stride: (1, 1),
                }),
            ));
        } else {
            let co = rng.random_range(4..=12);
            layers.push(conv2d(&format!("conv{n}"), channels, co, k, 1, 0, true));
            if rng.random_bool(0.4) {
                layers.push(bn(&format!("bn{n}"), co));
            }
            layers.push(relu(&format!("act{n}")));
            channels = co;
        }
    }

    if rng.random_bool(0.5) {
        let co = rng.random_range(4..=10);
        layers.push(conv2d("mixer", channels, co, 1, 1, 0, true));
        layers.push(relu("mixer-act"));
        channels = co;
    }
    layers.push(conv2d("head", channels, num_classes, 1, 1, 0, true));

    let mut net = NetworkGraph {
        name: format!("fuzz-{seed}"),
        input: InputSpec {
            bands,
            sample_size: m,
            rank,
        },
        num_classes,
        layers,
    };
    init_weights(&mut net, seed ^ 0x9E37_79B9_97F4_A7C5);

    // Non-trivial normalization statistics so equivalence checks cover
    // the general affine case, not just near-identity scaling.
    for layer in &mut net.layers {
        if let LayerKind::BatchNorm(b) = &mut layer.kind {
            let params = b.params.as_mut().expect("initialized above");
            for c in 0..b.channels {
                params.gamma[c] = 0.6 + 0.8 * rng.random::<f32>();
                params.beta[c] = 0.3 * (rng.random::<f32>() - 0.5);
                params.running_mean[c] = 0.4 * (rng.random::<f32>() - 0.5);
                params.running_var[c] = 0.4 + 1.2 * rng.random::<f32>();
            }
        }
    }
    net
}
