//! Dense tensors and the numeric kernels used by both inference modes.
//!
//! Every kernel reduces in a fixed, position-independent order:
//!
//! - 2-D convolution: input channel, then kernel row, then kernel column.
//! - 3-D convolution: input channel, then kernel depth, row, column.
//! - Pooling: window row, then window column.
//! - Fully connected: input features in flat (channel-major) order.
//!
//! Because the order never depends on the output position, the thread
//! count, or whether the surrounding tensor is a small patch or a whole
//! image, outputs are bit-identical wherever two invocations see the same
//! window of input data. That property is what makes patch-mode and
//! image-mode prediction agree exactly.
//!
//! Values are stored in whatever scalar the caller picks (`f32` for
//! deployment, `f64` for oracle and gradient-check runs); a kernel's
//! accumulation width equals its storage width. In debug builds every
//! kernel asserts that finite inputs produce finite outputs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Numeric width selector for execution paths that are generic over the
/// scalar type. Weights are always stored as f32 in network files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// What a tensor's axes mean under the rank conventions of this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisRole {
    /// Rank 3: `[channels, rows, cols]`.
    FeatureMap2d,
    /// Rank 4: `[channels, spectral, rows, cols]`.
    FeatureMap3d,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("dims {dims:?} describe {numel} elements but {len} were given")]
    LenMismatch {
        dims: Vec<usize>,
        numel: usize,
        len: usize,
    },
    #[error("dims must be nonempty and free of zero extents, got {dims:?}")]
    BadDims { dims: Vec<usize> },
    #[error("expected rank {expected}, got rank {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("{what} length {got}, expected {expected}")]
    ParamLen {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("stride must be nonzero")]
    ZeroStride,
    #[error("kernel extent {kernel} exceeds padded input extent {extent} along {axis}")]
    KernelTooLarge {
        axis: &'static str,
        kernel: usize,
        extent: usize,
    },
    #[error("channel count mismatch: input has {input}, kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("running variance of channel {channel} is negative")]
    NegativeVariance { channel: usize },
    #[error("mirror pad {pad} needs axis extent greater than {pad}, got {extent}")]
    PadTooLarge { pad: usize, extent: usize },
    #[error("cannot center-crop extent {from} to {to}: shrink must be even and nonnegative")]
    BadCrop { from: usize, to: usize },
    #[error("window [{offset}, {offset}+{len}) exceeds axis extent {extent}")]
    WindowOutOfBounds {
        offset: usize,
        len: usize,
        extent: usize,
    },
    #[error("{0}")]
    Other(String),
}

/// Dense row-major tensor (last dimension varies fastest).
///
/// Rank conventions used throughout the crate:
///
/// - rank 3: `[channels, height, width]`
/// - rank 4: `[channels, depth, height, width]` where depth is the
///   spectral axis
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Real = f32> {
    pub(crate) dims: Vec<usize>,
    pub(crate) data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(dims: &[usize]) -> Result<Self, TensorError> {
        check_dims(dims)?;
        let numel = dims.iter().product();
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![S::ZERO; numel],
        })
    }

    pub fn from_vec(dims: &[usize], data: Vec<S>) -> Result<Self, TensorError> {
        check_dims(dims)?;
        let numel: usize = dims.iter().product();
        if data.len() != numel {
            return Err(TensorError::LenMismatch {
                dims: dims.to_vec(),
                numel,
                len: data.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Axis-role tag derived from the rank conventions; `None` for ranks
    /// without a feature-map meaning (e.g. flat logit vectors).
    pub fn role(&self) -> Option<AxisRole> {
        match self.rank() {
            3 => Some(AxisRole::FeatureMap2d),
            4 => Some(AxisRole::FeatureMap3d),
            _ => None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterprets the buffer under new dims with the same element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self, TensorError> {
        check_dims(dims)?;
        let numel: usize = dims.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::LenMismatch {
                dims: dims.to_vec(),
                numel,
                len: self.data.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: self.data,
        })
    }

    /// Element-by-element conversion to another scalar width via f64.
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    fn expect_rank(&self, expected: usize) -> Result<(), TensorError> {
        if self.rank() != expected {
            return Err(TensorError::RankMismatch {
                expected,
                got: self.rank(),
            });
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<(), TensorError> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(TensorError::BadDims {
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

#[cfg(debug_assertions)]
fn slices_moderate<S: Real>(slices: &[&[S]]) -> bool {
    // Below this magnitude no kernel here can overflow even in f32, so
    // a non-finite output is a logic error, not extreme data.
    slices
        .iter()
        .all(|s| s.iter().all(|v| v.is_finite() && v.to_f64().abs() <= 1e15))
}

/// Debug-build guarantee: inputs of sane magnitude never produce
/// NaN/Inf outputs.
macro_rules! debug_finite_guard {
    ($label:expr, [$($input:expr),*], $out:expr) => {
        #[cfg(debug_assertions)]
        {
            if slices_moderate(&[$($input),*]) {
                debug_assert!(
                    $out.iter().all(|v| v.is_finite()),
                    concat!($label, " produced a non-finite value from finite inputs")
                );
            }
        }
    };
}

/// Output extent of a valid/zero-padded convolution along one axis.
pub fn conv_out_len(
    axis: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let extent = input + 2 * pad;
    if kernel == 0 || kernel > extent {
        return Err(TensorError::KernelTooLarge {
            axis,
            kernel,
            extent,
        });
    }
    Ok((extent - kernel) / stride + 1)
}

/// 2-D convolution kernel: weights laid out `[out][in][kh][kw]`, bias
/// `[out]`, symmetric spatial zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel2d<S: Real = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad: usize,
    pub weights: Vec<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Real> ConvKernel2d<S> {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kh * self.kw
    }

    fn validate(&self) -> Result<(), TensorError> {
        check_param_len("conv2d weights", &self.weights, self.weight_len())?;
        if let Some(b) = &self.bias {
            check_param_len("conv2d bias", b, self.out_channels)?;
        }
        Ok(())
    }
}

/// 3-D convolution kernel over `[c][depth][h][w]`: weights laid out
/// `[out][in][kd][kh][kw]`; spectral pad and symmetric spatial pad are
/// independent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel3d<S: Real = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride_d: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_d: usize,
    pub pad_hw: usize,
    pub weights: Vec<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Real> ConvKernel3d<S> {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kd * self.kh * self.kw
    }

    fn validate(&self) -> Result<(), TensorError> {
        check_param_len("conv3d weights", &self.weights, self.weight_len())?;
        if let Some(b) = &self.bias {
            check_param_len("conv3d bias", b, self.out_channels)?;
        }
        Ok(())
    }
}

/// Per-channel affine normalization with fixed (running) statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<S: Real = f32> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub epsilon: S,
}

impl<S: Real> BatchNormParams<S> {
    /// Identity normalization over `channels` channels.
    pub fn identity(channels: usize, epsilon: S) -> Self {
        Self {
            gamma: vec![S::ONE; channels],
            beta: vec![S::ZERO; channels],
            running_mean: vec![S::ZERO; channels],
            running_var: vec![S::ONE; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<T: Real>(&self) -> BatchNormParams<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64(x.to_f64())).collect();
        BatchNormParams {
            gamma: conv(&self.gamma),
            beta: conv(&self.beta),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            epsilon: T::from_f64(self.epsilon.to_f64()),
        }
    }

    fn validate(&self) -> Result<(), TensorError> {
        let c = self.gamma.len();
        for (what, v) in [
            ("batchnorm beta", &self.beta),
            ("batchnorm running_mean", &self.running_mean),
            ("batchnorm running_var", &self.running_var),
        ] {
            if v.len() != c {
                return Err(TensorError::ParamLen {
                    what,
                    expected: c,
                    got: v.len(),
                });
            }
        }
        for (channel, v) in self.running_var.iter().enumerate() {
            if *v < S::ZERO {
                return Err(TensorError::NegativeVariance { channel });
            }
        }
        Ok(())
    }
}

fn check_param_len<S>(
    what: &'static str,
    slice: &[S],
    expected: usize,
) -> Result<(), TensorError> {
    if slice.len() != expected {
        return Err(TensorError::ParamLen {
            what,
            expected,
            got: slice.len(),
        });
    }
    Ok(())
}

/// Runs `f(chunk_index, chunk)` over every `chunk_len` slice of `out`,
/// in parallel when the `parallel` feature is enabled. Chunks are
/// disjoint and each chunk's work reads only shared immutable inputs,
/// so the thread count cannot change any output bit.
fn for_each_chunk<S: Real, F>(out: &mut [S], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [S]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
    }
}

/// 2-D convolution over `[c_in, h, w]` producing `[c_out, h', w']` with
/// `h' = (h + 2*pad - kh) / stride_h + 1` (floor), likewise for width.
///
/// Out-of-range taps under zero padding contribute nothing. For each
/// output element the reduction runs input channel, kernel row, kernel
/// column, in that order.
pub fn conv2d<S: Real>(input: &Tensor<S>, k: &ConvKernel2d<S>) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(3)?;
    k.validate()?;
    let (c_in, h, w) = (input.dims[0], input.dims[1], input.dims[2]);
    if c_in != k.in_channels {
        return Err(TensorError::ChannelMismatch {
            input: c_in,
            kernel: k.in_channels,
        });
    }
    let out_h = conv_out_len("height", h, k.kh, k.stride_h, k.pad)?;
    let out_w = conv_out_len("width", w, k.kw, k.stride_w, k.pad)?;

    let mut out = Tensor::zeros(&[k.out_channels, out_h, out_w])?;
    let (kh, kw) = (k.kh, k.kw);
    let (sy, sx) = (k.stride_h, k.stride_w);
    let pad = k.pad as isize;
    let in_data = input.data.as_slice();
    let weights = k.weights.as_slice();
    let bias = k.bias.as_deref();
    let per_filter = c_in * kh * kw;

    for_each_chunk(&mut out.data, out_w, |chunk, row| {
        let oc = chunk / out_h;
        let oy = chunk % out_h;
        let w_base = oc * per_filter;
        for (ox, slot) in row.iter_mut().enumerate() {
            let mut acc = match bias {
                Some(b) => b[oc],
                None => S::ZERO,
            };
            let y0 = (oy * sy) as isize - pad;
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
                        acc += weights[w_row + kx] * in_data[in_row + ix as usize];
                    }
                }
            }
            *slot = acc;
        }
    });
    debug_finite_guard!(
        "conv2d",
        [&input.data, &k.weights, k.bias.as_deref().unwrap_or(&[])],
        out.data
    );
    Ok(out)
}

/// 3-D convolution over `[c_in, d, h, w]` producing `[c_out, d', h', w']`.
///
/// Reduction order per output element: input channel, kernel depth,
/// kernel row, kernel column.
pub fn conv3d<S: Real>(input: &Tensor<S>, k: &ConvKernel3d<S>) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(4)?;
    k.validate()?;
    let (c_in, d, h, w) = (input.dims[0], input.dims[1], input.dims[2], input.dims[3]);
    if c_in != k.in_channels {
        return Err(TensorError::ChannelMismatch {
            input: c_in,
            kernel: k.in_channels,
        });
    }
    let out_d = conv_out_len("depth", d, k.kd, k.stride_d, k.pad_d)?;
    let out_h = conv_out_len("height", h, k.kh, k.stride_h, k.pad_hw)?;
    let out_w = conv_out_len("width", w, k.kw, k.stride_w, k.pad_hw)?;

    let mut out = Tensor::zeros(&[k.out_channels, out_d, out_h, out_w])?;
    let (kd, kh, kw) = (k.kd, k.kh, k.kw);
    let (sd, sy, sx) = (k.stride_d, k.stride_h, k.stride_w);
    let (pd, phw) = (k.pad_d as isize, k.pad_hw as isize);
    let in_data = input.data.as_slice();
    let weights = k.weights.as_slice();
    let bias = k.bias.as_deref();
    let per_filter = c_in * kd * kh * kw;

    for_each_chunk(&mut out.data, out_w, |chunk, row| {
        let oc = chunk / (out_d * out_h);
        let od = (chunk / out_h) % out_d;
        let oy = chunk % out_h;
        let w_base = oc * per_filter;
        for (ox, slot) in row.iter_mut().enumerate() {
            let mut acc = match bias {
                Some(b) => b[oc],
                None => S::ZERO,
            };
            let d0 = (od * sd) as isize - pd;
            let y0 = (oy * sy) as isize - phw;
            let x0 = (ox * sx) as isize - phw;
            for ic in 0..c_in {
                let in_vol = ic * d * h * w;
                let w_vol = w_base + ic * kd * kh * kw;
                for kz in 0..kd {
                    let id = d0 + kz as isize;
                    if id < 0 || id >= d as isize {
                        continue;
                    }
                    let in_plane = in_vol + id as usize * h * w;
                    let w_plane = w_vol + kz * kh * kw;
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
                            acc += weights[w_row + kx] * in_data[in_row + ix as usize];
                        }
                    }
                }
            }
            *slot = acc;
        }
    });
    debug_finite_guard!(
        "conv3d",
        [&input.data, &k.weights, k.bias.as_deref().unwrap_or(&[])],
        out.data
    );
    Ok(out)
}

/// Fully connected layer over the flattened input. Weight layout is
/// `[out_features][in_features]` where input features are enumerated in
/// the tensor's flat (channel-major) order, matching the reduction order
/// of a convolution whose kernel spans the whole input.
pub fn fully_connected<S: Real>(
    input: &Tensor<S>,
    out_features: usize,
    weights: &[S],
    bias: Option<&[S]>,
) -> Result<Tensor<S>, TensorError> {
    let in_features = input.numel();
    check_param_len("fc weights", weights, out_features * in_features)?;
    if let Some(b) = bias {
        check_param_len("fc bias", b, out_features)?;
    }
    let mut out = Tensor::zeros(&[out_features])?;
    for (o, slot) in out.data.iter_mut().enumerate() {
        let mut acc = match bias {
            Some(b) => b[o],
            None => S::ZERO,
        };
        let row = &weights[o * in_features..(o + 1) * in_features];
        for (wv, xv) in row.iter().zip(input.data.iter()) {
            acc += *wv * *xv;
        }
        *slot = acc;
    }
    debug_finite_guard!(
        "fully_connected",
        [&input.data, weights, bias.unwrap_or(&[])],
        out.data
    );
    Ok(out)
}

/// Elementwise max(0, x).
pub fn relu<S: Real>(input: &Tensor<S>) -> Tensor<S> {
    Tensor {
        dims: input.dims.clone(),
        data: input.data.iter().map(|v| v.max(S::ZERO)).collect(),
    }
}

/// Elementwise sum of two identically shaped tensors.
pub fn add<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    if a.dims != b.dims {
        return Err(TensorError::ShapeMismatch {
            left: a.dims.clone(),
            right: b.dims.clone(),
        });
    }
    let out = Tensor {
        dims: a.dims.clone(),
        data: a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(x, y)| *x + *y)
            .collect(),
    };
    debug_finite_guard!("add", [&a.data, &b.data], out.data);
    Ok(out)
}

/// Inference-mode batch normalization over the channel (first) axis of a
/// rank-3 or rank-4 tensor:
/// `y = (x - running_mean) / sqrt(running_var + epsilon) * gamma + beta`.
pub fn batchnorm_infer<S: Real>(
    input: &Tensor<S>,
    params: &BatchNormParams<S>,
) -> Result<Tensor<S>, TensorError> {
    if input.rank() != 3 && input.rank() != 4 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: input.rank(),
        });
    }
    params.validate()?;
    let c = input.dims[0];
    if params.channels() != c {
        return Err(TensorError::ChannelMismatch {
            input: c,
            kernel: params.channels(),
        });
    }
    let plane: usize = input.dims[1..].iter().product();
    let mut out = input.clone();
    for ch in 0..c {
        let inv = S::ONE / (params.running_var[ch] + params.epsilon).sqrt();
        let (gamma, beta, mean) = (params.gamma[ch], params.beta[ch], params.running_mean[ch]);
        for v in &mut out.data[ch * plane..(ch + 1) * plane] {
            *v = (*v - mean) * inv * gamma + beta;
        }
    }
    debug_finite_guard!(
        "batchnorm_infer",
        [&input.data, &params.gamma, &params.beta, &params.running_mean, &params.running_var],
        out.data
    );
    Ok(out)
}

/// Sliding average pooling over the spatial axes of `[c, h, w]` with no
/// padding. Window sums run row-major; each sum is divided by `kh * kw`.
pub fn avgpool2d_sliding<S: Real>(
    input: &Tensor<S>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(3)?;
    let (c, h, w) = (input.dims[0], input.dims[1], input.dims[2]);
    let (kh, kw) = kernel;
    let out_h = conv_out_len("height", h, kh, stride.0, 0)?;
    let out_w = conv_out_len("width", w, kw, stride.1, 0)?;
    let mut out = Tensor::zeros(&[c, out_h, out_w])?;
    let norm = S::ONE / S::from_usize(kh * kw);
    let in_data = input.data.as_slice();

    for_each_chunk(&mut out.data, out_w, |chunk, row| {
        let ch = chunk / out_h;
        let oy = chunk % out_h;
        let plane = ch * h * w;
        for (ox, slot) in row.iter_mut().enumerate() {
            let y0 = oy * stride.0;
            let x0 = ox * stride.1;
            let mut acc = S::ZERO;
            for ky in 0..kh {
                let base = plane + (y0 + ky) * w + x0;
                for kx in 0..kw {
                    acc += in_data[base + kx];
                }
            }
            *slot = acc * norm;
        }
    });
    debug_finite_guard!("avgpool2d_sliding", [&input.data], out.data);
    Ok(out)
}

/// Global average pooling: `[c, h, w]` to `[c, 1, 1]`. Implemented as a
/// single-window sliding pool so the summation order matches the sliding
/// form a rewrite pass substitutes for it.
pub fn global_avgpool<S: Real>(input: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(3)?;
    avgpool2d_sliding(input, (input.dims[1], input.dims[2]), (1, 1))
}

/// Merges the spectral axis into channels: `[c, d, h, w]` to `[c*d, h, w]`
/// with new channel index `c*D + d`. Row-major layout makes this a
/// relabeling; the buffer is unchanged.
pub fn collapse_spectral<S: Real>(input: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(4)?;
    let dims = [
        input.dims[0] * input.dims[1],
        input.dims[2],
        input.dims[3],
    ];
    input.clone().reshape(&dims)
}

/// Per-position softmax over the channel axis of a rank-1 or rank-3 tensor.
pub fn softmax_channels<S: Real>(input: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    match input.rank() {
        1 => {
            let mut out = input.clone();
            softmax_slice_strided(&mut out.data, 1, 0);
            Ok(out)
        }
        3 => {
            let mut out = input.clone();
            let plane = input.dims[1] * input.dims[2];
            for pos in 0..plane {
                softmax_slice_strided(&mut out.data, plane, pos);
            }
            Ok(out)
        }
        r => Err(TensorError::RankMismatch {
            expected: 3,
            got: r,
        }),
    }
}

/// Softmax over elements `offset, offset+stride, offset+2*stride, ...`.
fn softmax_slice_strided<S: Real>(data: &mut [S], stride: usize, offset: usize) {
    let mut m = data[offset];
    let mut i = offset;
    while i < data.len() {
        m = m.max(data[i]);
        i += stride;
    }
    let mut sum = S::ZERO;
    i = offset;
    while i < data.len() {
        let e = (data[i] - m).exp();
        data[i] = e;
        sum += e;
        i += stride;
    }
    i = offset;
    while i < data.len() {
        data[i] = data[i] / sum;
        i += stride;
    }
}

/// Border fill rule for spatial padding of input scenes and patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderFill {
    /// Reflect without duplicating the edge row/column (index -k maps to
    /// k). The default everywhere; requires pad < extent.
    #[default]
    Mirror,
    /// Zero fill, available for border-policy ablations.
    Zero,
}

/// Pads the spatial axes of `[c, h, w]` with mirrored (reflected) data.
/// Index `-k` maps to `k` and `h - 1 + k` to `h - 1 - k`; the edge
/// row/column is not duplicated, which requires every pad < extent.
pub fn pad_mirror<S: Real>(
    input: &Tensor<S>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Result<Tensor<S>, TensorError> {
    pad_spatial(input, top, bottom, left, right, BorderFill::Mirror)
}

/// Pads the spatial axes of `[c, h, w]` with zeros.
pub fn pad_zero<S: Real>(
    input: &Tensor<S>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Result<Tensor<S>, TensorError> {
    pad_spatial(input, top, bottom, left, right, BorderFill::Zero)
}

/// Pads the spatial axes of `[c, h, w]` using the given border fill.
pub fn pad_spatial<S: Real>(
    input: &Tensor<S>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
    fill: BorderFill,
) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(3)?;
    let (c, h, w) = (input.dims[0], input.dims[1], input.dims[2]);
    if fill == BorderFill::Mirror {
        for (pad, extent) in [(top, h), (bottom, h), (left, w), (right, w)] {
            if pad >= extent {
                return Err(TensorError::PadTooLarge { pad, extent });
            }
        }
    }
    if top == 0 && bottom == 0 && left == 0 && right == 0 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h + top + bottom, w + left + right);
    // None marks zero-filled positions.
    let row_map: Vec<Option<usize>> = (0..oh).map(|y| border_index(y, top, h, fill)).collect();
    let col_map: Vec<Option<usize>> = (0..ow).map(|x| border_index(x, left, w, fill)).collect();
    let mut out = Tensor::zeros(&[c, oh, ow])?;
    for ch in 0..c {
        let in_plane = &input.data[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut out.data[ch * oh * ow..(ch + 1) * oh * ow];
        for (y, row) in out_plane.chunks_mut(ow).enumerate() {
            let Some(src_y) = row_map[y] else { continue };
            let src_row = &in_plane[src_y * w..src_y * w + w];
            for (x, v) in row.iter_mut().enumerate() {
                if let Some(src_x) = col_map[x] {
                    *v = src_row[src_x];
                }
            }
        }
    }
    Ok(out)
}

fn border_index(out_pos: usize, pad: usize, extent: usize, fill: BorderFill) -> Option<usize> {
    let i = out_pos as isize - pad as isize;
    if i >= 0 && (i as usize) < extent {
        return Some(i as usize);
    }
    match fill {
        BorderFill::Zero => None,
        BorderFill::Mirror => Some(if i < 0 {
            (-i) as usize
        } else {
            2 * (extent - 1) - i as usize
        }),
    }
}

/// Copies the spatial window starting at `(y0, x0)` out of `[c, h, w]`.
pub fn crop_window<S: Real>(
    input: &Tensor<S>,
    y0: usize,
    x0: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<S>, TensorError> {
    input.expect_rank(3)?;
    let (c, h, w) = (input.dims[0], input.dims[1], input.dims[2]);
    if y0 + out_h > h {
        return Err(TensorError::WindowOutOfBounds {
            offset: y0,
            len: out_h,
            extent: h,
        });
    }
    if x0 + out_w > w {
        return Err(TensorError::WindowOutOfBounds {
            offset: x0,
            len: out_w,
            extent: w,
        });
    }
    let mut out = Tensor::zeros(&[c, out_h, out_w])?;
    for ch in 0..c {
        let in_plane = ch * h * w;
        let out_plane = ch * out_h * out_w;
        for y in 0..out_h {
            let src = in_plane + (y0 + y) * w + x0;
            let dst = out_plane + y * out_w;
            out.data[dst..dst + out_w].copy_from_slice(&input.data[src..src + out_w]);
        }
    }
    Ok(out)
}

/// Symmetric spatial crop of a rank-3 or rank-4 tensor down to
/// `(target_h, target_w)`. The shrink on each axis must be even so the
/// crop stays centered.
pub fn crop_center_spatial<S: Real>(
    input: &Tensor<S>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<S>, TensorError> {
    let rank = input.rank();
    if rank != 3 && rank != 4 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: rank,
        });
    }
    let h = input.dims[rank - 2];
    let w = input.dims[rank - 1];
    let off_y = center_offset(h, target_h)?;
    let off_x = center_offset(w, target_w)?;
    if off_y == 0 && off_x == 0 {
        return Ok(input.clone());
    }
    let planes: usize = input.dims[..rank - 2].iter().product();
    let mut dims = input.dims.clone();
    dims[rank - 2] = target_h;
    dims[rank - 1] = target_w;
    let mut out = Tensor::zeros(&dims)?;
    for p in 0..planes {
        let in_plane = p * h * w;
        let out_plane = p * target_h * target_w;
        for y in 0..target_h {
            let src = in_plane + (off_y + y) * w + off_x;
            let dst = out_plane + y * target_w;
            out.data[dst..dst + target_w].copy_from_slice(&input.data[src..src + target_w]);
        }
    }
    Ok(out)
}

fn center_offset(from: usize, to: usize) -> Result<usize, TensorError> {
    if to > from || (from - to) % 2 != 0 {
        return Err(TensorError::BadCrop { from, to });
    }
    Ok((from - to) / 2)
}
