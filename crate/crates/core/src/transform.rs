//! Rewrites that turn a patch classifier into an image-runnable network.
//!
//! Three rules remove the structures that pin a network to a fixed input
//! size or drop pixel positions:
//!
//! - `fc_to_conv` reinterprets a fully connected layer as a convolution
//!   whose kernel spans the layer's input. Weights are reused in place,
//!   so outputs are bit-identical.
//! - `globalpool_to_sliding` replaces global average pooling with a
//!   sliding average pool whose window equals the spatial extent the
//!   layer saw at the declared sample size. On that sample the two ops
//!   agree bit for bit.
//! - `destride` resets a layer's spatial stride to one and drops its
//!   spatial zero padding. Weights are carried over but the features
//!   change, so a destrided network needs retraining.
//!
//! `transform` applies whichever rules a network needs, re-declares its
//! sample size from the rewritten geometry, and reports what it did.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{
    summarize_violations, AvgPool2dLayer, Conv2dLayer, GraphError, LayerKind, NetworkGraph,
};

/// Which rewrite produced a layer change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteRule {
    FcToConv,
    GlobalPoolToSliding,
    Destride,
}

impl core::fmt::Display for RewriteRule {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RewriteRule::FcToConv => write!(f, "fc_to_conv"),
            RewriteRule::GlobalPoolToSliding => write!(f, "globalpool_to_sliding"),
            RewriteRule::Destride => write!(f, "destride"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub layer_id: String,
    pub rule: RewriteRule,
    /// True when the rewritten layer computes the same function on the
    /// declared sample, bit for bit.
    pub weight_preserving: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformReport {
    pub rewrites: Vec<Rewrite>,
    /// True unless every rewrite was weight preserving.
    pub retrain_required: bool,
    /// Declared sample size of the input network.
    pub receptive_field_before: usize,
    /// Computed receptive field (and new declared sample size) of the
    /// rewritten network.
    pub receptive_field_after: usize,
}

fn untransformable(reason: String) -> GraphError {
    GraphError::Untransformable { reason }
}

fn layer_index(net: &NetworkGraph, layer_id: &str) -> Result<usize, GraphError> {
    net.layers
        .iter()
        .position(|l| l.id == layer_id)
        .ok_or_else(|| untransformable(format!("no layer named {layer_id:?}")))
}

/// Converts the fully connected layer `layer_id` into an equivalent
/// convolution. The layer's input at the declared sample size, `[c, s,
/// s']`, becomes the kernel geometry; a flat input acts as `[f, 1, 1]`.
///
/// A fully connected weight row is indexed by the flat channel-major
/// input order `(c, y, x)`, which is exactly the storage order of a
/// `[out][c][y][x]` convolution kernel, so the weight buffer is reused
/// unchanged and outputs are bit-identical.
pub fn fc_to_conv(net: &NetworkGraph, layer_id: &str) -> Result<NetworkGraph, GraphError> {
    let index = layer_index(net, layer_id)?;
    let m = net.input.sample_size;
    let dims = net.dims_entering(index, m, m)?;
    let LayerKind::Fc(fc) = &net.layers[index].kind else {
        return Err(untransformable(format!(
            "layer {layer_id:?} is {}, not fc",
            net.layers[index].kind.name()
        )));
    };
    let (c, s_h, s_w) = match dims.as_slice() {
        [c, h, w] => (*c, *h, *w),
        [f] => (*f, 1, 1),
        other => {
            return Err(untransformable(format!(
                "layer {layer_id:?} input {other:?} has no spatial interpretation"
            )));
        }
    };
    if fc.in_features != c * s_h * s_w {
        return Err(GraphError::FcSizeMismatch {
            at: layer_id.to_owned(),
            declared: fc.in_features,
            found: c * s_h * s_w,
        });
    }
    let mut out = net.clone();
    out.layers[index].kind = LayerKind::Conv2d(Conv2dLayer {
        in_channels: c,
        out_channels: fc.out_features,
        kh: s_h,
        kw: s_w,
        stride_h: 1,
        stride_w: 1,
        pad: 0,
        weights: fc.weights.clone(),
        bias: fc.bias.clone(),
    });
    Ok(out)
}

/// Replaces global average pooling at `layer_id` with a sliding average
/// pool whose window is the spatial extent that layer sees at the
/// declared sample size. A window of one is a no-op layer.
pub fn globalpool_to_sliding(net: &NetworkGraph, layer_id: &str) -> Result<NetworkGraph, GraphError> {
    let index = layer_index(net, layer_id)?;
    if !matches!(net.layers[index].kind, LayerKind::GlobalAvgPool) {
        return Err(untransformable(format!(
            "layer {layer_id:?} is {}, not global_avgpool",
            net.layers[index].kind.name()
        )));
    }
    let m = net.input.sample_size;
    let dims = net.dims_entering(index, m, m)?;
    let [_, s_h, s_w] = dims.as_slice() else {
        return Err(untransformable(format!(
            "layer {layer_id:?} input {dims:?} is not a 2-d feature map"
        )));
    };
    let mut out = net.clone();
    out.layers[index].kind = LayerKind::AvgPool2d(AvgPool2dLayer {
        kernel: (*s_h, *s_w),
        stride: (1, 1),
    });
    Ok(out)
}

/// True when destriding would change the layer.
fn needs_destride(kind: &LayerKind) -> bool {
    match kind {
        LayerKind::Conv2d(c) => c.stride_h != 1 || c.stride_w != 1 || c.pad != 0,
        LayerKind::Conv3d(c) => c.stride_h != 1 || c.stride_w != 1 || c.pad_hw != 0,
        LayerKind::AvgPool2d(p) => p.stride != (1, 1),
        _ => false,
    }
}

fn apply_destride(kind: &mut LayerKind) {
    match kind {
        LayerKind::Conv2d(c) => {
            c.stride_h = 1;
            c.stride_w = 1;
            c.pad = 0;
        }
        LayerKind::Conv3d(c) => {
            // The spectral axis has no pixel grid; its stride and
            // padding stay.
            c.stride_h = 1;
            c.stride_w = 1;
            c.pad_hw = 0;
        }
        LayerKind::AvgPool2d(p) => p.stride = (1, 1),
        _ => {}
    }
}

/// Resets the spatial stride of the convolution or pooling layer
/// `layer_id` to one and removes its spatial zero padding. Weights are
/// kept, but the layer's output features change, so the network needs
/// retraining afterwards.
pub fn destride(net: &NetworkGraph, layer_id: &str) -> Result<NetworkGraph, GraphError> {
    let index = layer_index(net, layer_id)?;
    let kind = &net.layers[index].kind;
    match kind {
        LayerKind::Conv2d(_) | LayerKind::Conv3d(_) | LayerKind::AvgPool2d(_) => {}
        other => {
            return Err(untransformable(format!(
                "layer {layer_id:?} is {}, which has no stride or padding",
                other.name()
            )));
        }
    }
    if !needs_destride(kind) {
        return Err(untransformable(format!(
            "layer {layer_id:?} is not strided and has no spatial padding"
        )));
    }
    let mut out = net.clone();
    apply_destride(&mut out.layers[index].kind);
    Ok(out)
}

/// Rewrites a network until it can classify every pixel of an image in
/// one pass: fully connected layers become convolutions, global pooling
/// becomes sliding pooling, spatial strides and padding are removed.
/// The declared sample size is updated to the rewritten network's
/// receptive field. Running the result through `transform` again is a
/// no-op.
pub fn transform(net: &NetworkGraph) -> Result<(NetworkGraph, TransformReport), GraphError> {
    let m = net.input.sample_size;
    // Geometry of every layer under the original network, at the sample
    // size it was trained on. Pool windows come from here.
    net.shape_infer(m, m)?;

    let mut out = net.clone();
    let mut rewrites = Vec::new();
    for index in 0..net.layers.len() {
        let id = net.layers[index].id.clone();
        match &net.layers[index].kind {
            LayerKind::Fc(_) => {
                let rewritten = fc_to_conv(net, &id)?;
                out.layers[index].kind = rewritten.layers[index].kind.clone();
                rewrites.push(Rewrite {
                    layer_id: id,
                    rule: RewriteRule::FcToConv,
                    weight_preserving: true,
                });
            }
            LayerKind::GlobalAvgPool => {
                let rewritten = globalpool_to_sliding(net, &id)?;
                out.layers[index].kind = rewritten.layers[index].kind.clone();
                rewrites.push(Rewrite {
                    layer_id: id,
                    rule: RewriteRule::GlobalPoolToSliding,
                    weight_preserving: true,
                });
            }
            kind if needs_destride(kind) => {
                apply_destride(&mut out.layers[index].kind);
                rewrites.push(Rewrite {
                    layer_id: id,
                    rule: RewriteRule::Destride,
                    weight_preserving: false,
                });
            }
            _ => {}
        }
    }

    let violations = out.validate_tppi();
    if !violations.is_empty() {
        return Err(untransformable(format!(
            "rewritten network still cannot run on images: {}",
            summarize_violations(&violations)
        )));
    }
    let (rf_h, rf_w) = out.receptive_field_hw()?;
    if rf_h != rf_w {
        return Err(untransformable(format!(
            "rewritten network has a non-square receptive field {rf_h}x{rf_w}"
        )));
    }
    out.input.sample_size = rf_h;
    if !rewrites.is_empty() && !out.name.ends_with("-tppi") {
        out.name = format!("{}-tppi", out.name);
    }
    // The new declaration must hold up end to end.
    debug_assert_eq!(out.receptive_field(), Ok(rf_h));

    let retrain_required = rewrites.iter().any(|r| !r.weight_preserving);
    Ok((
        out,
        TransformReport {
            rewrites,
            retrain_required,
            receptive_field_before: m,
            receptive_field_after: rf_h,
        },
    ))
}
