//! Layer-graph representation of spectral-spatial classifiers.
//!
//! A network is a linear list of layers; residual blocks are expressed as
//! `ResidualBegin`/`ResidualEnd` brackets (nesting allowed). The graph
//! carries hyperparameters and optional weights, so the same structure
//! serves shape inference, cost modeling, rewriting, execution, and
//! training.
//!
//! A network is image-runnable (classifies every pixel of an arbitrarily
//! sized image in one pass) when it satisfies two structural rules:
//!
//! 1. no fully connected layer, and
//! 2. no spatial downsampling, i.e. no spatial stride greater than one
//!    and no global pooling.
//!
//! Strides along the spectral axis of a 3-D convolution do not affect
//! spatial alignment and are permitted.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{conv_out_len, BatchNormParams, TensorError};

/// How an input cube is presented to the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRank {
    /// `[bands, h, w]`: bands are channels, for 2-D networks.
    Rank3,
    /// `[1, bands, h, w]`: bands form the depth axis, for 3-D networks.
    Rank4,
}

impl InputRank {
    pub fn as_usize(self) -> usize {
        match self {
            InputRank::Rank3 => 3,
            InputRank::Rank4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    /// Number of spectral bands the network expects.
    pub bands: usize,
    /// Declared training patch side length m.
    pub sample_size: usize,
    pub rank: InputRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// Symmetric spatial zero padding.
    pub pad: usize,
    pub weights: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride_d: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// Zero padding along the spectral axis.
    pub pad_d: usize,
    /// Symmetric spatial zero padding.
    pub pad_hw: usize,
    pub weights: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub epsilon: f32,
    pub params: Option<BatchNormParams<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool2dLayer {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d(Conv2dLayer),
    Conv3d(Conv3dLayer),
    BatchNorm(BatchNormLayer),
    Relu,
    AvgPool2d(AvgPool2dLayer),
    GlobalAvgPool,
    Fc(FcLayer),
    Softmax,
    /// Folds the spectral axis into channels: `[c, d, h, w]` -> `[c*d, h, w]`.
    CollapseSpectral,
    ResidualBegin,
    ResidualEnd,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d(_) => "conv2d",
            LayerKind::Conv3d(_) => "conv3d",
            LayerKind::BatchNorm(_) => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::AvgPool2d(_) => "avgpool2d",
            LayerKind::GlobalAvgPool => "global_avgpool",
            LayerKind::Fc(_) => "fc",
            LayerKind::Softmax => "softmax",
            LayerKind::CollapseSpectral => "collapse_spectral",
            LayerKind::ResidualBegin => "residual_begin",
            LayerKind::ResidualEnd => "residual_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub name: String,
    pub input: InputSpec,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("duplicate layer id {id:?}")]
    DuplicateId { id: String },
    #[error("layer {at:?} ({kind}): expected rank {expected} input, got {got:?}")]
    RankMismatch {
        at: String,
        kind: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("layer {at:?}: declares {declared} input channels, input has {found}")]
    ChannelMismatch {
        at: String,
        declared: usize,
        found: usize,
    },
    #[error("layer {at:?}: declares {declared} input features, input has {found}")]
    FcSizeMismatch {
        at: String,
        declared: usize,
        found: usize,
    },
    #[error("input smaller than receptive field at layer {at:?}: {source}")]
    InputTooSmall { at: String, source: TensorError },
    #[error("layer {at:?}: {source}")]
    Shape { at: String, source: TensorError },
    #[error("residual_end {at:?} has no matching residual_begin")]
    UnmatchedResidualEnd { at: String },
    #[error("residual_begin {at:?} is never closed")]
    UnclosedResidual { at: String },
    #[error("residual_end {at:?}: skip {skip:?} and body {body:?} are incompatible: {reason}")]
    ResidualMismatch {
        at: String,
        skip: Vec<usize>,
        body: Vec<usize>,
        reason: String,
    },
    #[error("network output {output:?} does not provide {classes} class scores")]
    ClassCountMismatch { output: Vec<usize>, classes: usize },
    #[error("receptive field is undefined: layer {at:?} ({kind}) consumes the whole input")]
    ReceptiveFieldUndefined { at: String, kind: &'static str },
    #[error(
        "computed receptive field {computed_h}x{computed_w} does not match declared sample size {declared}"
    )]
    SampleSizeMismatch {
        computed_h: usize,
        computed_w: usize,
        declared: usize,
    },
    #[error("layer {at:?} ({kind}) has no weights")]
    MissingWeights { at: String, kind: &'static str },
    #[error("layer {at:?}: {what} holds {got} values, expected {expected}")]
    WeightLen {
        at: String,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("layer {at:?} ({kind}) has no backward rule")]
    NonDifferentiable { at: String, kind: &'static str },
    #[error("network is not image-runnable: {summary}")]
    NotImageRunnable { summary: String },
    #[error("cannot rewrite network: {reason}")]
    Untransformable { reason: String },
}

/// Structural rule an image-runnable network must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TppiRule {
    /// Rule 1: no fully connected layer.
    NoFullyConnected,
    /// Rule 2: no spatial downsampling (spatial stride > 1 or global pooling).
    NoSpatialDownsampling,
}

impl core::fmt::Display for TppiRule {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TppiRule::NoFullyConnected => write!(f, "rule 1 (no fully connected layer)"),
            TppiRule::NoSpatialDownsampling => write!(f, "rule 2 (no spatial downsampling)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer_index: usize,
    pub layer_id: String,
    pub rule: TppiRule,
    pub message: String,
}

/// One line per violation: `"<id> breaks <rule>: <detail>"`.
pub fn summarize_violations(violations: &[Violation]) -> String {
    let lines: Vec<String> = violations
        .iter()
        .map(|v| format!("{} breaks {}: {}", v.layer_id, v.rule, v.message))
        .collect();
    lines.join("; ")
}

/// Output dims of every layer for one input size, plus the total spatial
/// shrink between input and output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeReport {
    pub input: Vec<usize>,
    pub layers: Vec<LayerShape>,
    /// (rows lost, columns lost) from input to output. A flat output
    /// (a single feature vector) counts as one spatial position.
    pub shrink: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub index: usize,
    pub id: String,
    pub output: Vec<usize>,
}

impl ShapeReport {
    /// Dims flowing out of the last layer.
    pub fn output(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output.as_slice())
            .unwrap_or(&self.input)
    }

    /// Dims flowing into layer `index`.
    pub fn input_of(&self, index: usize) -> &[usize] {
        if index == 0 {
            &self.input
        } else {
            &self.layers[index - 1].output
        }
    }
}

fn spatial_of(dims: &[usize]) -> (usize, usize) {
    match dims.len() {
        1 => (1, 1),
        n => (dims[n - 2], dims[n - 1]),
    }
}

impl NetworkGraph {
    /// Dims of the tensor handed to the first layer for an `h` by `w` scene.
    pub fn input_dims(&self, h: usize, w: usize) -> Vec<usize> {
        match self.input.rank {
            InputRank::Rank3 => [self.input.bands, h, w].to_vec(),
            InputRank::Rank4 => [1, self.input.bands, h, w].to_vec(),
        }
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    fn check_ids(&self) -> Result<(), GraphError> {
        let mut seen = alloc::collections::BTreeSet::new();
        for l in &self.layers {
            if !seen.insert(l.id.as_str()) {
                return Err(GraphError::DuplicateId { id: l.id.clone() });
            }
        }
        Ok(())
    }

    /// Walks the graph and records the output dims of every layer for a
    /// spatial input of `h` by `w`. Validates declared channel and
    /// feature counts, residual bracket balance and compatibility, and
    /// that the final output carries `num_classes` scores.
    pub fn shape_infer(&self, h: usize, w: usize) -> Result<ShapeReport, GraphError> {
        if self.layers.is_empty() {
            return Err(GraphError::EmptyNetwork);
        }
        self.check_ids()?;
        let input = self.input_dims(h, w);
        let mut dims = input.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        // Stack of (begin id, dims entering the residual block).
        let mut residuals: Vec<(String, Vec<usize>)> = Vec::new();

        for (index, layer) in self.layers.iter().enumerate() {
            dims = infer_layer(layer, &dims, &mut residuals, self.num_classes)?;
            layers.push(LayerShape {
                index,
                id: layer.id.clone(),
                output: dims.clone(),
            });
        }
        if let Some((at, _)) = residuals.pop() {
            return Err(GraphError::UnclosedResidual { at });
        }
        let classes_ok = match dims.len() {
            1 => dims[0] == self.num_classes,
            3 => dims[0] == self.num_classes,
            _ => false,
        };
        if !classes_ok {
            return Err(GraphError::ClassCountMismatch {
                output: dims,
                classes: self.num_classes,
            });
        }
        let (out_h, out_w) = spatial_of(&dims);
        Ok(ShapeReport {
            shrink: (h - out_h.min(h), w - out_w.min(w)),
            input,
            layers,
        })
    }

    /// Dims of the tensor entering layer `index` for an `h` by `w`
    /// scene, walking only the prefix of the graph (open residual
    /// brackets are fine).
    pub(crate) fn dims_entering(
        &self,
        index: usize,
        h: usize,
        w: usize,
    ) -> Result<Vec<usize>, GraphError> {
        let mut dims = self.input_dims(h, w);
        let mut residuals: Vec<(String, Vec<usize>)> = Vec::new();
        for layer in &self.layers[..index] {
            dims = infer_layer(layer, &dims, &mut residuals, self.num_classes)?;
        }
        Ok(dims)
    }

    /// Side length of the square input window one output position depends
    /// on. Defined only for image-runnable networks, where it must match
    /// the declared sample size, which in turn is the patch size that
    /// makes patch-mode output collapse to a single position.
    pub fn receptive_field(&self) -> Result<usize, GraphError> {
        let violations = self.validate_tppi();
        if !violations.is_empty() {
            return Err(GraphError::NotImageRunnable {
                summary: summarize_violations(&violations),
            });
        }
        let (rf_h, rf_w) = self.receptive_field_hw()?;
        if rf_h != rf_w || rf_h != self.input.sample_size {
            return Err(GraphError::SampleSizeMismatch {
                computed_h: rf_h,
                computed_w: rf_w,
                declared: self.input.sample_size,
            });
        }
        Ok(rf_h)
    }

    /// Raw spatial receptive field (rows, columns) of one output
    /// position, valid for any network made of local layers. Strides
    /// enlarge the jump between consecutive output positions.
    pub(crate) fn receptive_field_hw(&self) -> Result<(usize, usize), GraphError> {
        if self.layers.is_empty() {
            return Err(GraphError::EmptyNetwork);
        }
        let mut rf = (1usize, 1usize);
        let mut jump = (1usize, 1usize);
        let mut stack: Vec<((usize, usize), (usize, usize))> = Vec::new();
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Conv2d(c) => {
                    rf.0 += (c.kh - 1) * jump.0;
                    rf.1 += (c.kw - 1) * jump.1;
                    jump.0 *= c.stride_h;
                    jump.1 *= c.stride_w;
                }
                LayerKind::Conv3d(c) => {
                    rf.0 += (c.kh - 1) * jump.0;
                    rf.1 += (c.kw - 1) * jump.1;
                    jump.0 *= c.stride_h;
                    jump.1 *= c.stride_w;
                }
                LayerKind::AvgPool2d(p) => {
                    rf.0 += (p.kernel.0 - 1) * jump.0;
                    rf.1 += (p.kernel.1 - 1) * jump.1;
                    jump.0 *= p.stride.0;
                    jump.1 *= p.stride.1;
                }
                LayerKind::Fc(_) | LayerKind::GlobalAvgPool => {
                    return Err(GraphError::ReceptiveFieldUndefined {
                        at: layer.id.clone(),
                        kind: layer.kind.name(),
                    });
                }
                LayerKind::ResidualBegin => stack.push((rf, jump)),
                LayerKind::ResidualEnd => {
                    let (skip_rf, _) = stack.pop().ok_or(GraphError::UnmatchedResidualEnd {
                        at: layer.id.clone(),
                    })?;
                    rf.0 = rf.0.max(skip_rf.0);
                    rf.1 = rf.1.max(skip_rf.1);
                }
                LayerKind::BatchNorm(_)
                | LayerKind::Relu
                | LayerKind::Softmax
                | LayerKind::CollapseSpectral => {}
            }
        }
        Ok(rf)
    }

    /// Checks the two structural rules for whole-image execution and
    /// returns every violation found (empty means the network can run
    /// image-to-image).
    pub fn validate_tppi(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (layer_index, layer) in self.layers.iter().enumerate() {
            let mut push = |rule: TppiRule, message: String| {
                out.push(Violation {
                    layer_index,
                    layer_id: layer.id.clone(),
                    rule,
                    message,
                });
            };
            match &layer.kind {
                LayerKind::Fc(fc) => push(
                    TppiRule::NoFullyConnected,
                    format!(
                        "fully connected layer ({} -> {} features) fixes the input size",
                        fc.in_features, fc.out_features
                    ),
                ),
                LayerKind::Conv2d(c) if (c.stride_h, c.stride_w) != (1, 1) => push(
                    TppiRule::NoSpatialDownsampling,
                    format!(
                        "conv2d spatial stride ({}, {}) drops pixel positions",
                        c.stride_h, c.stride_w
                    ),
                ),
                LayerKind::Conv3d(c) if (c.stride_h, c.stride_w) != (1, 1) => push(
                    TppiRule::NoSpatialDownsampling,
                    format!(
                        "conv3d spatial stride ({}, {}) drops pixel positions",
                        c.stride_h, c.stride_w
                    ),
                ),
                LayerKind::AvgPool2d(p) if p.stride != (1, 1) => push(
                    TppiRule::NoSpatialDownsampling,
                    format!(
                        "avgpool2d spatial stride {:?} drops pixel positions",
                        p.stride
                    ),
                ),
                LayerKind::GlobalAvgPool => push(
                    TppiRule::NoSpatialDownsampling,
                    String::from("global pooling collapses the spatial axes"),
                ),
                _ => {}
            }
        }
        out
    }
}

fn expect_rank(layer: &LayerSpec, dims: &[usize], expected: usize) -> Result<(), GraphError> {
    if dims.len() != expected {
        return Err(GraphError::RankMismatch {
            at: layer.id.clone(),
            kind: layer.kind.name(),
            expected,
            got: dims.to_vec(),
        });
    }
    Ok(())
}

fn shape_err(layer: &LayerSpec, source: TensorError) -> GraphError {
    // A kernel that outgrows its input means the scene or patch is
    // smaller than the network's receptive field.
    if matches!(source, TensorError::KernelTooLarge { .. }) {
        GraphError::InputTooSmall {
            at: layer.id.clone(),
            source,
        }
    } else {
        GraphError::Shape {
            at: layer.id.clone(),
            source,
        }
    }
}

fn infer_layer(
    layer: &LayerSpec,
    dims: &[usize],
    residuals: &mut Vec<(String, Vec<usize>)>,
    _num_classes: usize,
) -> Result<Vec<usize>, GraphError> {
    match &layer.kind {
        LayerKind::Conv2d(c) => {
            expect_rank(layer, dims, 3)?;
            if dims[0] != c.in_channels {
                return Err(GraphError::ChannelMismatch {
                    at: layer.id.clone(),
                    declared: c.in_channels,
                    found: dims[0],
                });
            }
            let oh = conv_out_len("height", dims[1], c.kh, c.stride_h, c.pad)
                .map_err(|e| shape_err(layer, e))?;
            let ow = conv_out_len("width", dims[2], c.kw, c.stride_w, c.pad)
                .map_err(|e| shape_err(layer, e))?;
            Ok([c.out_channels, oh, ow].to_vec())
        }
        LayerKind::Conv3d(c) => {
            expect_rank(layer, dims, 4)?;
            if dims[0] != c.in_channels {
                return Err(GraphError::ChannelMismatch {
                    at: layer.id.clone(),
                    declared: c.in_channels,
                    found: dims[0],
                });
            }
            let od = conv_out_len("depth", dims[1], c.kd, c.stride_d, c.pad_d)
                .map_err(|e| shape_err(layer, e))?;
            let oh = conv_out_len("height", dims[2], c.kh, c.stride_h, c.pad_hw)
                .map_err(|e| shape_err(layer, e))?;
            let ow = conv_out_len("width", dims[3], c.kw, c.stride_w, c.pad_hw)
                .map_err(|e| shape_err(layer, e))?;
            Ok([c.out_channels, od, oh, ow].to_vec())
        }
        LayerKind::BatchNorm(bn) => {
            if dims.len() != 3 && dims.len() != 4 {
                return Err(GraphError::RankMismatch {
                    at: layer.id.clone(),
                    kind: layer.kind.name(),
                    expected: 3,
                    got: dims.to_vec(),
                });
            }
            if dims[0] != bn.channels {
                return Err(GraphError::ChannelMismatch {
                    at: layer.id.clone(),
                    declared: bn.channels,
                    found: dims[0],
                });
            }
            Ok(dims.to_vec())
        }
        LayerKind::Relu => Ok(dims.to_vec()),
        LayerKind::AvgPool2d(p) => {
            expect_rank(layer, dims, 3)?;
            let oh = conv_out_len("height", dims[1], p.kernel.0, p.stride.0, 0)
                .map_err(|e| shape_err(layer, e))?;
            let ow = conv_out_len("width", dims[2], p.kernel.1, p.stride.1, 0)
                .map_err(|e| shape_err(layer, e))?;
            Ok([dims[0], oh, ow].to_vec())
        }
        LayerKind::GlobalAvgPool => {
            expect_rank(layer, dims, 3)?;
            Ok([dims[0], 1, 1].to_vec())
        }
        LayerKind::Fc(fc) => {
            let found: usize = dims.iter().product();
            if found != fc.in_features {
                return Err(GraphError::FcSizeMismatch {
                    at: layer.id.clone(),
                    declared: fc.in_features,
                    found,
                });
            }
            Ok([fc.out_features].to_vec())
        }
        LayerKind::Softmax => {
            if dims.len() != 1 && dims.len() != 3 {
                return Err(GraphError::RankMismatch {
                    at: layer.id.clone(),
                    kind: layer.kind.name(),
                    expected: 3,
                    got: dims.to_vec(),
                });
            }
            Ok(dims.to_vec())
        }
        LayerKind::CollapseSpectral => {
            expect_rank(layer, dims, 4)?;
            Ok([dims[0] * dims[1], dims[2], dims[3]].to_vec())
        }
        LayerKind::ResidualBegin => {
            residuals.push((layer.id.clone(), dims.to_vec()));
            Ok(dims.to_vec())
        }
        LayerKind::ResidualEnd => {
            let (_, skip) = residuals.pop().ok_or(GraphError::UnmatchedResidualEnd {
                at: layer.id.clone(),
            })?;
            check_residual_compat(layer, &skip, dims)?;
            Ok(dims.to_vec())
        }
    }
}

/// Skip and body tensors can be added after center-cropping the skip:
/// equal rank, equal channels (and spectral extent), body no larger than
/// skip spatially, spatial shrink even on both axes.
fn check_residual_compat(
    layer: &LayerSpec,
    skip: &[usize],
    body: &[usize],
) -> Result<(), GraphError> {
    let mismatch = |reason: String| GraphError::ResidualMismatch {
        at: layer.id.clone(),
        skip: skip.to_vec(),
        body: body.to_vec(),
        reason,
    };
    if skip.len() != body.len() {
        return Err(mismatch(String::from("ranks differ")));
    }
    if skip[0] != body[0] {
        return Err(mismatch(String::from("channel counts differ")));
    }
    if skip.len() == 4 && skip[1] != body[1] {
        return Err(mismatch(String::from("spectral extents differ")));
    }
    let n = skip.len();
    for (axis, name) in [(n - 2, "rows"), (n - 1, "columns")] {
        if body[axis] > skip[axis] {
            return Err(mismatch(format!("body is wider than skip along {name}")));
        }
        if (skip[axis] - body[axis]) % 2 != 0 {
            return Err(mismatch(format!(
                "skip cannot be center-cropped along {name}: shrink {} is odd",
                skip[axis] - body[axis]
            )));
        }
    }
    Ok(())
}
