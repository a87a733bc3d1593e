//! Graph execution: network weights are converted to the execution
//! scalar type once, then reused across many forward passes.

use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{GraphError, LayerKind, NetworkGraph};
use crate::real::Real;
use crate::tensor::{
    add, avgpool2d_sliding, batchnorm_infer, collapse_spectral, conv2d, conv3d,
    crop_center_spatial, fully_connected, global_avgpool, relu, softmax_channels,
    BatchNormParams, ConvKernel2d, ConvKernel3d, Tensor, TensorError,
};

#[derive(Debug, Clone)]
pub(crate) enum CompiledKind<S: Real> {
    Conv2d(ConvKernel2d<S>),
    Conv3d(ConvKernel3d<S>),
    BatchNorm(BatchNormParams<S>),
    Relu,
    AvgPool2d {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    GlobalAvgPool,
    Fc {
        out_features: usize,
        weights: Vec<S>,
        bias: Option<Vec<S>>,
    },
    Softmax,
    CollapseSpectral,
    ResidualBegin,
    ResidualEnd,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledLayer<S: Real> {
    pub id: String,
    pub kind: CompiledKind<S>,
}

/// A network with all weights present, validated, and converted to `S`.
#[derive(Debug, Clone)]
pub(crate) struct CompiledNet<S: Real> {
    pub layers: Vec<CompiledLayer<S>>,
}

fn missing<T>(id: &str, kind: &'static str) -> Result<T, GraphError> {
    Err(GraphError::MissingWeights {
        at: String::from(id),
        kind,
    })
}

fn take_weights<S: Real>(
    id: &str,
    what: &'static str,
    kind: &'static str,
    w: &Option<Vec<f32>>,
    expected: usize,
) -> Result<Vec<S>, GraphError> {
    let Some(w) = w else {
        return missing(id, kind);
    };
    if w.len() != expected {
        return Err(GraphError::WeightLen {
            at: String::from(id),
            what,
            expected,
            got: w.len(),
        });
    }
    Ok(w.iter().map(|v| S::from_f32(*v)).collect())
}

fn take_bias<S: Real>(
    id: &str,
    what: &'static str,
    b: &Option<Vec<f32>>,
    expected: usize,
) -> Result<Option<Vec<S>>, GraphError> {
    match b {
        None => Ok(None),
        Some(b) if b.len() == expected => Ok(Some(b.iter().map(|v| S::from_f32(*v)).collect())),
        Some(b) => Err(GraphError::WeightLen {
            at: String::from(id),
            what,
            expected,
            got: b.len(),
        }),
    }
}

impl<S: Real> CompiledNet<S> {
    pub fn compile(net: &NetworkGraph) -> Result<Self, GraphError> {
        let mut layers = Vec::with_capacity(net.layers.len());
        for layer in &net.layers {
            let kind = match &layer.kind {
                LayerKind::Conv2d(c) => {
                    let expected = c.out_channels * c.in_channels * c.kh * c.kw;
                    CompiledKind::Conv2d(ConvKernel2d {
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        kh: c.kh,
                        kw: c.kw,
                        stride_h: c.stride_h,
                        stride_w: c.stride_w,
                        pad: c.pad,
                        weights: take_weights(
                            &layer.id,
                            "conv2d weights",
                            "conv2d",
                            &c.weights,
                            expected,
                        )?,
                        bias: take_bias(&layer.id, "conv2d bias", &c.bias, c.out_channels)?,
                    })
                }
                LayerKind::Conv3d(c) => {
                    let expected = c.out_channels * c.in_channels * c.kd * c.kh * c.kw;
                    CompiledKind::Conv3d(ConvKernel3d {
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        kd: c.kd,
                        kh: c.kh,
                        kw: c.kw,
                        stride_d: c.stride_d,
                        stride_h: c.stride_h,
                        stride_w: c.stride_w,
                        pad_d: c.pad_d,
                        pad_hw: c.pad_hw,
                        weights: take_weights(
                            &layer.id,
                            "conv3d weights",
                            "conv3d",
                            &c.weights,
                            expected,
                        )?,
                        bias: take_bias(&layer.id, "conv3d bias", &c.bias, c.out_channels)?,
                    })
                }
                LayerKind::BatchNorm(bn) => {
                    let Some(params) = &bn.params else {
                        return missing(&layer.id, "batchnorm");
                    };
                    if params.channels() != bn.channels {
                        return Err(GraphError::WeightLen {
                            at: layer.id.clone(),
                            what: "batchnorm parameters",
                            expected: bn.channels,
                            got: params.channels(),
                        });
                    }
                    CompiledKind::BatchNorm(params.cast::<S>())
                }
                LayerKind::Relu => CompiledKind::Relu,
                LayerKind::AvgPool2d(p) => CompiledKind::AvgPool2d {
                    kernel: p.kernel,
                    stride: p.stride,
                },
                LayerKind::GlobalAvgPool => CompiledKind::GlobalAvgPool,
                LayerKind::Fc(fc) => CompiledKind::Fc {
                    out_features: fc.out_features,
                    weights: take_weights(
                        &layer.id,
                        "fc weights",
                        "fc",
                        &fc.weights,
                        fc.in_features * fc.out_features,
                    )?,
                    bias: take_bias(&layer.id, "fc bias", &fc.bias, fc.out_features)?,
                },
                LayerKind::Softmax => CompiledKind::Softmax,
                LayerKind::CollapseSpectral => CompiledKind::CollapseSpectral,
                LayerKind::ResidualBegin => CompiledKind::ResidualBegin,
                LayerKind::ResidualEnd => CompiledKind::ResidualEnd,
            };
            layers.push(CompiledLayer {
                id: layer.id.clone(),
                kind,
            });
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>, GraphError> {
        let mut cur = input.clone();
        let mut skips: Vec<Tensor<S>> = Vec::new();
        for layer in &self.layers {
            cur = apply_layer(layer, cur, &mut skips)?;
        }
        Ok(cur)
    }

    /// Copies the (possibly updated) parameters back into the graph,
    /// rounding to f32 storage.
    pub fn store_into(&self, net: &mut NetworkGraph) {
        for (src, dst) in self.layers.iter().zip(net.layers.iter_mut()) {
            match (&src.kind, &mut dst.kind) {
                (CompiledKind::Conv2d(k), LayerKind::Conv2d(c)) => {
                    c.weights = Some(k.weights.iter().map(|v| v.to_f32()).collect());
                    c.bias = k
                        .bias
                        .as_ref()
                        .map(|b| b.iter().map(|v| v.to_f32()).collect());
                }
                (CompiledKind::Conv3d(k), LayerKind::Conv3d(c)) => {
                    c.weights = Some(k.weights.iter().map(|v| v.to_f32()).collect());
                    c.bias = k
                        .bias
                        .as_ref()
                        .map(|b| b.iter().map(|v| v.to_f32()).collect());
                }
                (CompiledKind::BatchNorm(p), LayerKind::BatchNorm(bn)) => {
                    bn.params = Some(p.cast::<f32>());
                }
                (CompiledKind::Fc { weights, bias, .. }, LayerKind::Fc(fc)) => {
                    fc.weights = Some(weights.iter().map(|v| v.to_f32()).collect());
                    fc.bias = bias
                        .as_ref()
                        .map(|b| b.iter().map(|v| v.to_f32()).collect());
                }
                _ => {}
            }
        }
    }
}

fn wrap(id: &str, e: TensorError) -> GraphError {
    GraphError::Shape {
        at: String::from(id),
        source: e,
    }
}

pub(crate) fn apply_layer<S: Real>(
    layer: &CompiledLayer<S>,
    cur: Tensor<S>,
    skips: &mut Vec<Tensor<S>>,
) -> Result<Tensor<S>, GraphError> {
    let id = layer.id.as_str();
    match &layer.kind {
        CompiledKind::Conv2d(k) => conv2d(&cur, k).map_err(|e| wrap(id, e)),
        CompiledKind::Conv3d(k) => conv3d(&cur, k).map_err(|e| wrap(id, e)),
        CompiledKind::BatchNorm(p) => batchnorm_infer(&cur, p).map_err(|e| wrap(id, e)),
        CompiledKind::Relu => Ok(relu(&cur)),
        CompiledKind::AvgPool2d { kernel, stride } => {
            avgpool2d_sliding(&cur, *kernel, *stride).map_err(|e| wrap(id, e))
        }
        CompiledKind::GlobalAvgPool => global_avgpool(&cur).map_err(|e| wrap(id, e)),
        CompiledKind::Fc {
            out_features,
            weights,
            bias,
        } => fully_connected(&cur, *out_features, weights, bias.as_deref())
            .map_err(|e| wrap(id, e)),
        CompiledKind::Softmax => softmax_channels(&cur).map_err(|e| wrap(id, e)),
        CompiledKind::CollapseSpectral => collapse_spectral(&cur).map_err(|e| wrap(id, e)),
        CompiledKind::ResidualBegin => {
            skips.push(cur.clone());
            Ok(cur)
        }
        CompiledKind::ResidualEnd => {
            let skip = skips.pop().ok_or_else(|| GraphError::UnmatchedResidualEnd {
                at: String::from(id),
            })?;
            let rank = cur.rank();
            let cropped = crop_center_spatial(&skip, cur.dims()[rank - 2], cur.dims()[rank - 1])
                .map_err(|e| wrap(id, e))?;
            add(&cur, &cropped).map_err(|e| wrap(id, e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Conv2dLayer, InputRank, InputSpec, LayerSpec};
    use alloc::borrow::ToOwned;
    use alloc::vec;

    fn tiny_net(weights: Option<Vec<f32>>) -> NetworkGraph {
        NetworkGraph {
            name: "t".to_owned(),
            input: InputSpec {
                bands: 2,
                sample_size: 1,
                rank: InputRank::Rank3,
            },
            num_classes: 2,
            layers: vec![LayerSpec::new(
                "head",
                LayerKind::Conv2d(Conv2dLayer {
                    in_channels: 2,
                    out_channels: 2,
                    kh: 1,
                    kw: 1,
                    stride_h: 1,
                    stride_w: 1,
                    pad: 0,
                    weights,
                    bias: None,
                }),
            )],
        }
    }

    #[test]
    fn compile_requires_weights_of_right_length() {
        assert!(matches!(
            CompiledNet::<f32>::compile(&tiny_net(None)),
            Err(GraphError::MissingWeights { .. })
        ));
        assert!(matches!(
            CompiledNet::<f32>::compile(&tiny_net(Some(vec![1.0; 3]))),
            Err(GraphError::WeightLen {
                expected: 4,
                got: 3,
                ..
            })
        ));
        assert!(CompiledNet::<f32>::compile(&tiny_net(Some(vec![1.0; 4]))).is_ok());
    }

    #[test]
    fn forward_runs_identity_conv() {
        // [[1,0],[0,1]] as 1x1 kernels over 2 channels: identity.
        let net = tiny_net(Some(vec![1.0, 0.0, 0.0, 1.0]));
        let compiled = CompiledNet::<f32>::compile(&net).unwrap();
        let x = Tensor::from_vec(&[2, 1, 1], vec![3.0, 4.0]).unwrap();
        let y = compiled.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn residual_add_crops_skip() {
        let net = NetworkGraph {
            name: "r".to_owned(),
            input: InputSpec {
                bands: 1,
                sample_size: 3,
                rank: InputRank::Rank3,
            },
            num_classes: 1,
            layers: vec![
                LayerSpec::new("rb", LayerKind::ResidualBegin),
                LayerSpec::new(
                    "body",
                    LayerKind::Conv2d(Conv2dLayer {
                        in_channels: 1,
                        out_channels: 1,
                        kh: 3,
                        kw: 3,
                        stride_h: 1,
                        stride_w: 1,
                        pad: 0,
                        weights: Some(vec![0.0; 9]),
                        bias: None,
                    }),
                ),
                LayerSpec::new("re", LayerKind::ResidualEnd),
            ],
        };
        let compiled = CompiledNet::<f32>::compile(&net).unwrap();
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(|i| i as f32).collect()).unwrap();
        // Zero body plus center of the skip.
        let y = compiled.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }
}
