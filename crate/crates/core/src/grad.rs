//! Reverse-mode gradients for patch training, plus a finite-difference
//! checker that validates every analytic gradient path.
//!
//! Training runs on a restricted layer set: convolutions, ReLU,
//! frozen-statistics batch norm (gamma and beta learn, the recorded
//! statistics do not), sliding average pooling, the spectral collapse,
//! and residual adds. Fully connected layers, global pooling, and
//! softmax layers have no training path here; networks carrying them
//! are rewritten before training.
//!
//! The loss is softmax cross-entropy averaged over the batch.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::forward::{apply_layer, CompiledKind, CompiledNet};
use crate::ir::{GraphError, NetworkGraph};
use crate::real::Real;
use crate::tensor::{add, BatchNormParams, ConvKernel2d, ConvKernel3d, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("layer {layer:?} ({kind}) has no training path; rewrite the network first")]
    NonDifferentiable { layer: String, kind: &'static str },
    #[error("batch holds {inputs} samples but {labels} labels")]
    BatchMismatch { inputs: usize, labels: usize },
    #[error("cannot train on an empty batch")]
    EmptyBatch,
    #[error("label {label} at sample {index} is outside 1..={num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: u16,
        num_classes: usize,
    },
    #[error("network output {dims:?} is not a single scored position; training samples must match the receptive field")]
    OutputShape { dims: Vec<usize> },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Parameter gradients of one layer, in the layer's own buffer layout.
/// Parameterless layers carry empty buffers. For batch norm, `weights`
/// is the gamma gradient and `bias` the beta gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<S: Real> {
    pub layer_id: String,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

/// A network validated for training, with parameters held in `S`.
///
/// The same instance serves repeated forward/backward calls, and the
/// trainer mutates its parameters in place between steps so that f64
/// master weights never round through f32 storage.
#[derive(Debug, Clone)]
pub struct DiffNet<S: Real> {
    compiled: CompiledNet<S>,
}

fn kind_name<S: Real>(kind: &CompiledKind<S>) -> &'static str {
    match kind {
        CompiledKind::Conv2d(_) => "conv2d",
        CompiledKind::Conv3d(_) => "conv3d",
        CompiledKind::BatchNorm(_) => "batchnorm",
        CompiledKind::Relu => "relu",
        CompiledKind::AvgPool2d { .. } => "avgpool2d",
        CompiledKind::GlobalAvgPool => "global_avgpool",
        CompiledKind::Fc { .. } => "fc",
        CompiledKind::Softmax => "softmax",
        CompiledKind::CollapseSpectral => "collapse_spectral",
        CompiledKind::ResidualBegin => "residual_begin",
        CompiledKind::ResidualEnd => "residual_end",
    }
}

impl<S: Real> DiffNet<S> {
    pub fn from_graph(net: &NetworkGraph) -> Result<Self, GradError> {
        let compiled = CompiledNet::<S>::compile(net)?;
        for layer in &compiled.layers {
            if matches!(
                layer.kind,
                CompiledKind::Fc { .. } | CompiledKind::GlobalAvgPool | CompiledKind::Softmax
            ) {
                return Err(GradError::NonDifferentiable {
                    layer: layer.id.clone(),
                    kind: kind_name(&layer.kind),
                });
            }
        }
        Ok(Self { compiled })
    }

    pub fn layer_count(&self) -> usize {
        self.compiled.layers.len()
    }

    pub fn layer_id(&self, index: usize) -> &str {
        &self.compiled.layers[index].id
    }

    /// `(weight_len, bias_len)` of a layer's learnable buffers.
    pub fn param_lens(&self, index: usize) -> (usize, usize) {
        match &self.compiled.layers[index].kind {
            CompiledKind::Conv2d(k) => (k.weights.len(), k.bias.as_ref().map_or(0, Vec::len)),
            CompiledKind::Conv3d(k) => (k.weights.len(), k.bias.as_ref().map_or(0, Vec::len)),
            CompiledKind::BatchNorm(p) => (p.gamma.len(), p.beta.len()),
            _ => (0, 0),
        }
    }

    /// Mutable views of a layer's learnable buffers.
    pub fn params_mut(
        &mut self,
        index: usize,
    ) -> (Option<&mut Vec<S>>, Option<&mut Vec<S>>) {
        match &mut self.compiled.layers[index].kind {
            CompiledKind::Conv2d(k) => (Some(&mut k.weights), k.bias.as_mut()),
            CompiledKind::Conv3d(k) => (Some(&mut k.weights), k.bias.as_mut()),
            CompiledKind::BatchNorm(p) => (Some(&mut p.gamma), Some(&mut p.beta)),
            _ => (None, None),
        }
    }

    /// Adds `delta` to one parameter, addressing weights first and the
    /// bias buffer after them.
    pub fn nudge(&mut self, index: usize, coord: usize, delta: f64) {
        let (w, b) = self.params_mut(index);
        let wlen = w.as_ref().map_or(0, |v| v.len());
        let slot = if coord < wlen {
            &mut w.expect("coord addresses weights")[coord]
        } else {
            &mut b.expect("coord addresses bias")[coord - wlen]
        };
        *slot = *slot + S::from_f64(delta);
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>, GradError> {
        Ok(self.compiled.forward(input)?)
    }

    /// Writes the current parameters back into the graph's f32 storage.
    pub fn store_into(&self, net: &mut NetworkGraph) {
        self.compiled.store_into(net);
    }

    /// Mean softmax cross-entropy over the batch, no gradients.
    pub fn loss_batch(&self, batch: &[Tensor<S>], labels: &[u16]) -> Result<S, GradError> {
        check_batch(batch, labels)?;
        let mut total = S::ZERO;
        for (i, (x, &label)) in batch.iter().zip(labels).enumerate() {
            let out = self.forward(x)?;
            let scores = single_scores(&out)?;
            let (loss, _) = softmax_ce(scores, label, i)?;
            total += loss;
        }
        Ok(total / S::from_usize(batch.len()))
    }

    /// Mean loss and its gradient for every learnable buffer.
    pub fn backward_batch(
        &self,
        batch: &[Tensor<S>],
        labels: &[u16],
    ) -> Result<(S, Vec<LayerGrads<S>>), GradError> {
        check_batch(batch, labels)?;
        let mut grads: Vec<LayerGrads<S>> = self
            .compiled
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (wlen, blen) = self.param_lens(i);
                LayerGrads {
                    layer_id: l.id.clone(),
                    weights: vec![S::ZERO; wlen],
                    bias: vec![S::ZERO; blen],
                }
            })
            .collect();
        let inv_n = S::ONE / S::from_usize(batch.len());
        let mut total = S::ZERO;
        for (i, (x, &label)) in batch.iter().zip(labels).enumerate() {
            let trace = self.forward_trace(x)?;
            let scores = single_scores(&trace.output)?;
            let (loss, mut dscores) = softmax_ce(scores, label, i)?;
            total += loss;
            for d in &mut dscores {
                *d = *d * inv_n;
            }
            let dy = Tensor::from_vec(trace.output.dims(), dscores)
                .expect("gradient matches output shape");
            self.backward_trace(&trace, dy, &mut grads)?;
        }
        Ok((total * inv_n, grads))
    }

    /// Indices of the batch-norm layers.
    pub(crate) fn bn_indices(&self) -> Vec<usize> {
        self.compiled
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, CompiledKind::BatchNorm(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Replaces the frozen statistics of a batch-norm layer.
    pub(crate) fn set_bn_stats(&mut self, index: usize, mean: Vec<S>, var: Vec<S>) {
        if let CompiledKind::BatchNorm(p) = &mut self.compiled.layers[index].kind {
            p.running_mean = mean;
            p.running_var = var;
        }
    }

    pub(crate) fn forward_trace(&self, input: &Tensor<S>) -> Result<Trace<S>, GradError> {
        let mut cur = input.clone();
        let mut skips: Vec<Tensor<S>> = Vec::new();
        let mut inputs = Vec::with_capacity(self.compiled.layers.len());
        let mut skip_dims = vec![None; self.compiled.layers.len()];
        for (i, layer) in self.compiled.layers.iter().enumerate() {
            inputs.push(cur.clone());
            if matches!(layer.kind, CompiledKind::ResidualEnd) {
                if let Some(skip) = skips.last() {
                    skip_dims[i] = Some(skip.dims().to_vec());
                }
            }
            cur = apply_layer(layer, cur, &mut skips)?;
        }
        Ok(Trace {
            inputs,
            skip_dims,
            output: cur,
        })
    }

    /// Reverse sweep. `dy` is the loss gradient at the network output;
    /// parameter gradients accumulate into `grads`.
    fn backward_trace(
        &self,
        trace: &Trace<S>,
        mut dy: Tensor<S>,
        grads: &mut [LayerGrads<S>],
    ) -> Result<(), GradError> {
        // Gradients waiting to reenter at a residual begin, matched
        // last-in-first-out with the ends seen while walking backwards.
        let mut pending: Vec<Tensor<S>> = Vec::new();
        for (i, layer) in self.compiled.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            dy = match &layer.kind {
                CompiledKind::Conv2d(k) => {
                    conv2d_backward(x, k, &dy, &mut grads[i].weights, &mut grads[i].bias)
                }
                CompiledKind::Conv3d(k) => {
                    conv3d_backward(x, k, &dy, &mut grads[i].weights, &mut grads[i].bias)
                }
                CompiledKind::BatchNorm(p) => {
                    batchnorm_backward(x, p, &dy, &mut grads[i].weights, &mut grads[i].bias)
                }
                CompiledKind::Relu => {
                    let mut dx = dy;
                    for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if !(*v > S::ZERO) {
                            *d = S::ZERO;
                        }
                    }
                    dx
                }
                CompiledKind::AvgPool2d { kernel, stride } => {
                    avgpool2d_backward(x.dims(), *kernel, *stride, &dy)
                }
                CompiledKind::CollapseSpectral => dy
                    .reshape(x.dims())
                    .expect("collapse preserves element count"),
                CompiledKind::ResidualBegin => {
                    let skip_grad = pending.pop().expect("residual pairs are validated");
                    add(&dy, &skip_grad).expect("skip gradient matches input shape")
                }
                CompiledKind::ResidualEnd => {
                    let dims = trace.skip_dims[i]
                        .as_ref()
                        .expect("residual pairs are validated");
                    pending.push(embed_center(&dy, dims));
                    dy
                }
                CompiledKind::Fc { .. } | CompiledKind::GlobalAvgPool | CompiledKind::Softmax => {
                    unreachable!("rejected in from_graph")
                }
            };
        }
        Ok(())
    }
}

pub(crate) struct Trace<S: Real> {
    /// Tensor entering each layer.
    pub(crate) inputs: Vec<Tensor<S>>,
    /// For each residual end, the shape of the skip it consumed.
    skip_dims: Vec<Option<Vec<usize>>>,
    pub(crate) output: Tensor<S>,
}

fn check_batch<S: Real>(batch: &[Tensor<S>], labels: &[u16]) -> Result<(), GradError> {
    if batch.is_empty() {
        return Err(GradError::EmptyBatch);
    }
    if batch.len() != labels.len() {
        return Err(GradError::BatchMismatch {
            inputs: batch.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

pub(crate) fn single_scores<S: Real>(out: &Tensor<S>) -> Result<&[S], GradError> {
    if out.data().len() == out.dims()[0] {
        Ok(out.data())
    } else {
        Err(GradError::OutputShape {
            dims: out.dims().to_vec(),
        })
    }
}

/// Numerically stable softmax cross-entropy of one sample; returns the
/// loss and its gradient with respect to the scores.
fn softmax_ce<S: Real>(scores: &[S], label: u16, index: usize) -> Result<(S, Vec<S>), GradError> {
    let c = scores.len();
    if label == 0 || label as usize > c {
        return Err(GradError::LabelOutOfRange {
            index,
            label,
            num_classes: c,
        });
    }
    let y = label as usize - 1;
    let mut mx = scores[0];
    for &v in &scores[1..] {
        mx = mx.max(v);
    }
    let mut sum = S::ZERO;
    let mut probs: Vec<S> = scores.iter().map(|&v| (v - mx).exp()).collect();
    for &e in &probs {
        sum += e;
    }
    let loss = sum.ln() - (scores[y] - mx);
    for p in &mut probs {
        *p = *p / sum;
    }
    probs[y] = probs[y] - S::ONE;
    Ok((loss, probs))
}

fn conv2d_backward<S: Real>(
    x: &Tensor<S>,
    k: &ConvKernel2d<S>,
    dy: &Tensor<S>,
    dw: &mut [S],
    db: &mut [S],
) -> Tensor<S> {
    let (c_in, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (c_out, oh, ow) = (dy.dims()[0], dy.dims()[1], dy.dims()[2]);
    let (kh, kw) = (k.kh, k.kw);
    let (sy, sx) = (k.stride_h, k.stride_w);
    let pad = k.pad as isize;
    let per_filter = c_in * kh * kw;
    let mut dx = Tensor::zeros(x.dims()).expect("input shape is valid");
    let xd = x.data();
    let dyd = dy.data();
    let weights = k.weights.as_slice();
    let has_bias = !db.is_empty();

    for oc in 0..c_out {
        let w_base = oc * per_filter;
        for oy in 0..oh {
            let y0 = (oy * sy) as isize - pad;
            for ox in 0..ow {
                let g = dyd[(oc * oh + oy) * ow + ox];
                if has_bias {
                    db[oc] += g;
                }
                let x0 = (ox * sx) as isize - pad;
                for ic in 0..c_in {
                    let in_plane = ic * h * w;
                    let w_plane = w_base + ic * kh * kw;
                    for ky in 0..kh {
                        let iy = y0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = in_plane + iy as usize * w;
                        let w_row = w_plane + ky * kw;
                        for kx in 0..kw {
                            let ix = x0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = in_row + ix as usize;
                            dw[w_row + kx] += g * xd[xi];
                            dx.data_mut()[xi] += g * weights[w_row + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv3d_backward<S: Real>(
    x: &Tensor<S>,
    k: &ConvKernel3d<S>,
    dy: &Tensor<S>,
    dw: &mut [S],
    db: &mut [S],
) -> Tensor<S> {
    let (c_in, d, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (c_out, od, oh, ow) = (dy.dims()[0], dy.dims()[1], dy.dims()[2], dy.dims()[3]);
    let (kd, kh, kw) = (k.kd, k.kh, k.kw);
    let (sd, sy, sx) = (k.stride_d, k.stride_h, k.stride_w);
    let (pad_d, pad) = (k.pad_d as isize, k.pad_hw as isize);
    let per_filter = c_in * kd * kh * kw;
    let mut dx = Tensor::zeros(x.dims()).expect("input shape is valid");
    let xd = x.data();
    let dyd = dy.data();
    let weights = k.weights.as_slice();
    let has_bias = !db.is_empty();

    for oc in 0..c_out {
        let w_base = oc * per_filter;
        for odi in 0..od {
            let d0 = (odi * sd) as isize - pad_d;
            for oy in 0..oh {
                let y0 = (oy * sy) as isize - pad;
                for ox in 0..ow {
                    let g = dyd[((oc * od + odi) * oh + oy) * ow + ox];
                    if has_bias {
                        db[oc] += g;
                    }
                    let x0 = (ox * sx) as isize - pad;
                    for ic in 0..c_in {
                        let in_vol = ic * d * h * w;
                        let w_vol = w_base + ic * kd * kh * kw;
                        for kdi in 0..kd {
                            let id = d0 + kdi as isize;
                            if id < 0 || id >= d as isize {
                                continue;
                            }
                            let in_plane = in_vol + id as usize * h * w;
                            let w_plane = w_vol + kdi * kh * kw;
                            for ky in 0..kh {
                                let iy = y0 + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = in_plane + iy as usize * w;
                                let w_row = w_plane + ky * kw;
                                for kx in 0..kw {
                                    let ix = x0 + kx as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = in_row + ix as usize;
                                    dw[w_row + kx] += g * xd[xi];
                                    dx.data_mut()[xi] += g * weights[w_row + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn batchnorm_backward<S: Real>(
    x: &Tensor<S>,
    p: &BatchNormParams<S>,
    dy: &Tensor<S>,
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Tensor<S> {
    let channels = x.dims()[0];
    let plane = x.data().len() / channels;
    let mut dx = Tensor::zeros(x.dims()).expect("input shape is valid");
    for c in 0..channels {
        let inv = S::ONE / (p.running_var[c] + p.epsilon).sqrt();
        let mean = p.running_mean[c];
        let gamma_inv = p.gamma[c] * inv;
        let xs = &x.data()[c * plane..(c + 1) * plane];
        let dys = &dy.data()[c * plane..(c + 1) * plane];
        let dxs = &mut dx.data_mut()[c * plane..(c + 1) * plane];
        for i in 0..plane {
            let g = dys[i];
            dbeta[c] += g;
            dgamma[c] += g * (xs[i] - mean) * inv;
            dxs[i] = g * gamma_inv;
        }
    }
    dx
}

fn avgpool2d_backward<S: Real>(
    in_dims: &[usize],
    kernel: (usize, usize),
    stride: (usize, usize),
    dy: &Tensor<S>,
) -> Tensor<S> {
    let (c, _h, w) = (in_dims[0], in_dims[1], in_dims[2]);
    let (oh, ow) = (dy.dims()[1], dy.dims()[2]);
    let (kh, kw) = kernel;
    let (sy, sx) = stride;
    let inv_k = S::ONE / S::from_usize(kh * kw);
    let mut dx = Tensor::zeros(in_dims).expect("input shape is valid");
    let plane_in = in_dims[1] * in_dims[2];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy.data()[(ch * oh + oy) * ow + ox] * inv_k;
                for ky in 0..kh {
                    let row = ch * plane_in + (oy * sy + ky) * w + ox * sx;
                    for kx in 0..kw {
                        dx.data_mut()[row + kx] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Adjoint of the centered spatial crop: places `dy` in the middle of a
/// zero tensor of `target` shape.
fn embed_center<S: Real>(dy: &Tensor<S>, target: &[usize]) -> Tensor<S> {
    let rank = dy.rank();
    let (bh, bw) = (dy.dims()[rank - 2], dy.dims()[rank - 1]);
    let (th, tw) = (target[rank - 2], target[rank - 1]);
    let (my, mx) = ((th - bh) / 2, (tw - bw) / 2);
    let lead: usize = dy.dims()[..rank - 2].iter().product();
    let mut out = Tensor::zeros(target).expect("target shape is valid");
    for l in 0..lead {
        for y in 0..bh {
            let src = (l * bh + y) * bw;
            let dst = (l * th + my + y) * tw + mx;
            out.data_mut()[dst..dst + bw].copy_from_slice(&dy.data()[src..src + bw]);
        }
    }
    out
}

/// Convenience wrapper: compiles the graph and returns the mean loss
/// and per-layer gradients for one batch.
pub fn backward<S: Real>(
    net: &NetworkGraph,
    batch: &[Tensor<S>],
    labels: &[u16],
) -> Result<(S, Vec<LayerGrads<S>>), GradError> {
    DiffNet::<S>::from_graph(net)?.backward_batch(batch, labels)
}

/// Outcome of comparing analytic gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    /// Layer id and flat coordinate of the worst mismatch.
    pub worst: Option<(String, usize)>,
    pub step: f64,
}

/// Verifies analytic gradients against central finite differences in
/// f64. For each learnable buffer, `coords_per_layer` coordinates are
/// sampled with the seeded generator, perturbed by `step` both ways,
/// and compared with relative error
/// `|a - fd| / max(|a|, |fd|, 1e-6)`.
pub fn check_gradients(
    net: &NetworkGraph,
    batch: &[Tensor<f64>],
    labels: &[u16],
    coords_per_layer: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, GradError> {
    let mut dn = DiffNet::<f64>::from_graph(net)?;
    let (_, grads) = dn.backward_batch(batch, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst: None,
        step,
    };
    for i in 0..dn.layer_count() {
        let (wlen, blen) = dn.param_lens(i);
        let total = wlen + blen;
        if total == 0 {
            continue;
        }
        for coord in rand::seq::index::sample(&mut rng, total, coords_per_layer.min(total)) {
            let analytic = if coord < wlen {
                grads[i].weights[coord]
            } else {
                grads[i].bias[coord - wlen]
            };
            dn.nudge(i, coord, step);
            let plus = dn.loss_batch(batch, labels)?;
            dn.nudge(i, coord, -2.0 * step);
            let minus = dn.loss_batch(batch, labels)?;
            dn.nudge(i, coord, step);
            let fd = (plus - minus) / (2.0 * step);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((String::from(dn.layer_id(i)), coord));
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
