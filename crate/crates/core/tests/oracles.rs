//! Cross-checks of the numeric kernels against independent naive
//! reimplementations, plus structural properties that must hold for
//! dual-mode prediction to be exact.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tppi_core::infer::{predict_image, PredictOptions};
use tppi_core::presets::{init_weights, small_tppi};
use tppi_core::scene::{gen_synthetic, SceneSpec};
use tppi_core::tensor::{
    batchnorm_infer, conv2d, conv3d, crop_center_spatial, crop_window, pad_spatial, BatchNormParams,
    BorderFill, ConvKernel2d, ConvKernel3d, Tensor,
};
use tppi_core::Real;

fn fill<S: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    (0..n).map(|_| S::from_f64(rng.random_range(-1.0..1.0))).collect()
}

/// Zero-pads explicitly into a lookup closure, then runs the plainest
/// possible loop nest. Shares no code with the production kernel.
fn naive_conv2d(
    input: &[f64],
    (ci, h, w): (usize, usize, usize),
    weights: &[f64],
    bias: Option<&[f64]>,
    (co, kh, kw): (usize, usize, usize),
    (sh, sw): (usize, usize),
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h + 2 * pad - kh) / sh + 1;
    let ow = (w + 2 * pad - kw) / sw + 1;
    let at = |c: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
            0.0
        } else {
            input[(c * h + y as usize) * w + x as usize]
        }
    };
    let mut out = vec![0.0f64; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for i in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * sh + ky) as isize - pad as isize;
                            let x = (ox * sw + kx) as isize - pad as isize;
                            let wv = weights[((o * ci + i) * kh + ky) * kw + kx];
                            acc += wv * at(i, y, x);
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, (co, oh, ow))
}

fn naive_conv3d(
    input: &[f64],
    (ci, d, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    bias: Option<&[f64]>,
    (co, kd, kh, kw): (usize, usize, usize, usize),
    (sd, sh, sw): (usize, usize, usize),
    (pd, phw): (usize, usize),
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let od = (d + 2 * pd - kd) / sd + 1;
    let oh = (h + 2 * phw - kh) / sh + 1;
    let ow = (w + 2 * phw - kw) / sw + 1;
    let at = |c: usize, z: isize, y: isize, x: isize| -> f64 {
        if z < 0 || y < 0 || x < 0 || z as usize >= d || y as usize >= h || x as usize >= w {
            0.0
        } else {
            input[((c * d + z as usize) * h + y as usize) * w + x as usize]
        }
    };
    let mut out = vec![0.0f64; co * od * oh * ow];
    for o in 0..co {
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for i in 0..ci {
                        for az in 0..kd {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let z = (oz * sd + az) as isize - pd as isize;
                                    let y = (oy * sh + ky) as isize - phw as isize;
                                    let x = (ox * sw + kx) as isize - phw as isize;
                                    let wv = weights
                                        [(((o * ci + i) * kd + az) * kh + ky) * kw + kx];
                                    acc += wv * at(i, z, y, x);
                                }
                            }
                        }
                    }
                    out[((o * od + oz) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, (co, od, oh, ow))
}

/// Absolute-or-relative bound: tight near zero, scales with magnitude.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1.0f64.max(a.abs().max(b.abs()))
}

#[test]
fn conv2d_matches_naive_reference_across_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..120 {
        let ci = rng.random_range(1..=3);
        let co = rng.random_range(1..=3);
        let kh = rng.random_range(1..=3);
        let kw = rng.random_range(1..=3);
        let pad = rng.random_range(0..=1);
        let sh = rng.random_range(1..=2);
        let sw = rng.random_range(1..=2);
        let h = rng.random_range(kh.max(2 * pad)..kh + 6);
        let w = rng.random_range(kw.max(2 * pad)..kw + 6);
        let weights: Vec<f64> = fill(&mut rng, co * ci * kh * kw);
        let bias: Option<Vec<f64>> = rng.random_bool(0.5).then(|| fill(&mut rng, co));
        let input: Vec<f64> = fill(&mut rng, ci * h * w);

        let (want, (wc, wh, ww)) = naive_conv2d(
            &input,
            (ci, h, w),
            &weights,
            bias.as_deref(),
            (co, kh, kw),
            (sh, sw),
            pad,
        );

        let run = |tol: f64, label: &str, f32_path: bool| {
            if f32_path {
                let k = ConvKernel2d::<f32> {
                    in_channels: ci,
                    out_channels: co,
                    kh,
                    kw,
                    stride_h: sh,
                    stride_w: sw,
                    pad,
                    weights: weights.iter().map(|&v| v as f32).collect(),
                    bias: bias.as_ref().map(|b| b.iter().map(|&v| v as f32).collect()),
                };
                let x = Tensor::from_vec(&[ci, h, w], input.iter().map(|&v| v as f32).collect())
                    .unwrap();
                let got = conv2d(&x, &k).unwrap();
                assert_eq!(got.dims(), &[wc, wh, ww], "case {case} {label}");
                for (g, e) in got.data().iter().zip(&want) {
                    assert!(close(*g as f64, *e, tol), "case {case} {label}: {g} vs {e}");
                }
            } else {
                let k = ConvKernel2d::<f64> {
                    in_channels: ci,
                    out_channels: co,
                    kh,
                    kw,
                    stride_h: sh,
                    stride_w: sw,
                    pad,
                    weights: weights.clone(),
                    bias: bias.clone(),
                };
                let x = Tensor::from_vec(&[ci, h, w], input.clone()).unwrap();
                let got = conv2d(&x, &k).unwrap();
                assert_eq!(got.dims(), &[wc, wh, ww], "case {case} {label}");
                for (g, e) in got.data().iter().zip(&want) {
                    assert!(close(*g, *e, tol), "case {case} {label}: {g} vs {e}");
                }
            }
        };
        run(1e-9, "f64", false);
        run(1e-4, "f32", true);
    }
}

#[test]
fn conv3d_matches_naive_reference_across_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..120 {
        let ci = rng.random_range(1..=2);
        let co = rng.random_range(1..=3);
        let kd = rng.random_range(1..=3);
        let kh = rng.random_range(1..=2);
        let kw = rng.random_range(1..=2);
        let pd = rng.random_range(0..=1);
        let phw = rng.random_range(0..=1);
        let sd = rng.random_range(1..=2);
        let sh = rng.random_range(1..=2);
        let sw = rng.random_range(1..=2);
        let d = rng.random_range(kd.max(2 * pd)..kd + 4);
        let h = rng.random_range(kh.max(2 * phw)..kh + 4);
        let w = rng.random_range(kw.max(2 * phw)..kw + 4);
        let weights: Vec<f64> = fill(&mut rng, co * ci * kd * kh * kw);
        let bias: Option<Vec<f64>> = rng.random_bool(0.5).then(|| fill(&mut rng, co));
        let input: Vec<f64> = fill(&mut rng, ci * d * h * w);

        let (want, (wc, wd, wh, ww)) = naive_conv3d(
            &input,
            (ci, d, h, w),
            &weights,
            bias.as_deref(),
            (co, kd, kh, kw),
            (sd, sh, sw),
            (pd, phw),
        );

        let k = ConvKernel3d::<f64> {
            in_channels: ci,
            out_channels: co,
            kd,
            kh,
            kw,
            stride_d: sd,
            stride_h: sh,
            stride_w: sw,
            pad_d: pd,
            pad_hw: phw,
            weights: weights.clone(),
            bias: bias.clone(),
        };
        let x = Tensor::from_vec(&[ci, d, h, w], input.clone()).unwrap();
        let got = conv3d(&x, &k).unwrap();
        assert_eq!(got.dims(), &[wc, wd, wh, ww], "case {case}");
        for (g, e) in got.data().iter().zip(&want) {
            assert!(close(*g, *e, 1e-9), "case {case}: {g} vs {e}");
        }

        let kf = ConvKernel3d::<f32> {
            in_channels: ci,
            out_channels: co,
            kd,
            kh,
            kw,
            stride_d: sd,
            stride_h: sh,
            stride_w: sw,
            pad_d: pd,
            pad_hw: phw,
            weights: weights.iter().map(|&v| v as f32).collect(),
            bias: bias.as_ref().map(|b| b.iter().map(|&v| v as f32).collect()),
        };
        let xf = Tensor::from_vec(&[ci, d, h, w], input.iter().map(|&v| v as f32).collect())
            .unwrap();
        let gotf = conv3d(&xf, &kf).unwrap();
        for (g, e) in gotf.data().iter().zip(&want) {
            assert!(close(*g as f64, *e, 2e-4), "case {case} f32: {g} vs {e}");
        }
    }
}

#[test]
fn batchnorm_matches_literal_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..60 {
        let c = rng.random_range(1..=5);
        let h = rng.random_range(1..=5);
        let w = rng.random_range(1..=5);
        let eps = 1e-5f64;
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
        let beta: Vec<f64> = fill(&mut rng, c);
        let mean: Vec<f64> = fill(&mut rng, c);
        let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..3.0)).collect();
        let input: Vec<f64> = fill(&mut rng, c * h * w);

        let params = BatchNormParams {
            gamma: gamma.clone(),
            beta: beta.clone(),
            running_mean: mean.clone(),
            running_var: var.clone(),
            epsilon: eps,
        };
        let x = Tensor::from_vec(&[c, h, w], input.clone()).unwrap();
        let got = batchnorm_infer(&x, &params).unwrap();

        for ch in 0..c {
            for i in 0..h * w {
                let v = input[ch * h * w + i];
                let want = gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch];
                let g = got.data()[ch * h * w + i];
                assert!(close(g, want, 1e-9), "case {case}: {g} vs {want}");
            }
        }
    }
}

#[test]
fn convolution_is_linear_in_its_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..30 {
        let (ci, co, k, h, w) = (2usize, 3usize, 3usize, 6usize, 7usize);
        let kernel = ConvKernel2d::<f64> {
            in_channels: ci,
            out_channels: co,
            kh: k,
            kw: k,
            stride_h: 1,
            stride_w: 1,
            pad: 0,
            weights: fill(&mut rng, co * ci * k * k),
            bias: None,
        };
        let xa: Vec<f64> = fill(&mut rng, ci * h * w);
        let xb: Vec<f64> = fill(&mut rng, ci * h * w);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| a * p + b * q).collect();

        let ya = conv2d(&Tensor::from_vec(&[ci, h, w], xa).unwrap(), &kernel).unwrap();
        let yb = conv2d(&Tensor::from_vec(&[ci, h, w], xb).unwrap(), &kernel).unwrap();
        let ym = conv2d(&Tensor::from_vec(&[ci, h, w], mix).unwrap(), &kernel).unwrap();
        for ((pa, pb), pm) in ya.data().iter().zip(yb.data()).zip(ym.data()) {
            assert!(close(*pm, a * pa + b * pb, 1e-9));
        }
    }
}

/// The property that makes training on windows and predicting on the
/// scene the same computation: an unpadded stride-1 convolution of a
/// cropped window equals the matching crop of the full convolution,
/// bit for bit.
#[test]
fn convolution_commutes_with_cropping_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..40 {
        let (ci, co, k) = (2usize, 2usize, 3usize);
        let (h, w) = (rng.random_range(8..14), rng.random_range(8..14));
        let kernel = ConvKernel2d::<f32> {
            in_channels: ci,
            out_channels: co,
            kh: k,
            kw: k,
            stride_h: 1,
            stride_w: 1,
            pad: 0,
            weights: fill(&mut rng, co * ci * k * k),
            bias: Some(fill(&mut rng, co)),
        };
        let x = Tensor::from_vec(&[ci, h, w], fill(&mut rng, ci * h * w)).unwrap();
        let full = conv2d(&x, &kernel).unwrap();

        let wh = rng.random_range(k..=h.min(k + 4));
        let ww = rng.random_range(k..=w.min(k + 4));
        let y0 = rng.random_range(0..=h - wh);
        let x0 = rng.random_range(0..=w - ww);
        let window = crop_window(&x, y0, x0, wh, ww).unwrap();
        let local = conv2d(&window, &kernel).unwrap();
        let from_full = crop_window(&full, y0, x0, wh - k + 1, ww - k + 1).unwrap();

        assert_eq!(local.dims(), from_full.dims());
        for (a, b) in local.data().iter().zip(from_full.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn prediction_is_identical_across_thread_pool_sizes() {
    let spec = SceneSpec::new(20, 17, 6, 3);
    let (cube, _gt) = gen_synthetic(&spec).unwrap();
    let mut net = small_tppi(6, 3);
    init_weights(&mut net, 7);
    let opts = PredictOptions {
        keep_logits: true,
        ..PredictOptions::default()
    };

    let runs: Vec<_> = [1usize, 4]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| predict_image(&net, &cube, true, &opts).unwrap())
        })
        .collect();

    assert_eq!(runs[0].class_of, runs[1].class_of);
    let (la, lb) = (
        runs[0].logits.as_ref().unwrap(),
        runs[1].logits.as_ref().unwrap(),
    );
    assert_eq!(la.len(), lb.len());
    for (a, b) in la.iter().zip(lb) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Output extent of an unpadded stride-1 convolution is
    /// `input - kernel + 1` on both axes.
    #[test]
    fn output_extent_law(
        k in 1usize..=5,
        extra_h in 0usize..6,
        extra_w in 0usize..6,
        ci in 1usize..=3,
        co in 1usize..=3,
    ) {
        let (h, w) = (k + extra_h, k + extra_w);
        let kernel = ConvKernel2d::<f32> {
            in_channels: ci,
            out_channels: co,
            kh: k,
            kw: k,
            stride_h: 1,
            stride_w: 1,
            pad: 0,
            weights: vec![0.25; co * ci * k * k],
            bias: None,
        };
        let x = Tensor::from_vec(&[ci, h, w], vec![1.0; ci * h * w]).unwrap();
        let y = conv2d(&x, &kernel).unwrap();
        prop_assert_eq!(y.dims(), &[co, h - k + 1, w - k + 1]);
    }

    /// Padding then cropping the center recovers the original tensor
    /// exactly, for both border fills.
    #[test]
    fn pad_then_center_crop_is_identity(
        c in 1usize..=3,
        h in 2usize..=7,
        w in 2usize..=7,
        pad in 0usize..=1,
        mirror in proptest::bool::ANY,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = fill(&mut rng, c * h * w);
        let x = Tensor::from_vec(&[c, h, w], data.clone()).unwrap();
        let fillk = if mirror { BorderFill::Mirror } else { BorderFill::Zero };
        let padded = pad_spatial(&x, pad, pad, pad, pad, fillk).unwrap();
        prop_assert_eq!(padded.dims(), &[c, h + 2 * pad, w + 2 * pad]);
        let back = crop_center_spatial(&padded, h, w).unwrap();
        prop_assert_eq!(back.dims(), x.dims());
        for (a, b) in back.data().iter().zip(&data) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Folding the spectral axis into channels preserves every value
    /// and the element order implied by the indexing formula.
    #[test]
    fn collapse_merges_depth_into_channels(
        c in 1usize..=3,
        d in 1usize..=4,
        h in 1usize..=4,
        w in 1usize..=4,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = fill(&mut rng, c * d * h * w);
        let x = Tensor::from_vec(&[c, d, h, w], data.clone()).unwrap();
        let y = tppi_core::tensor::collapse_spectral(&x).unwrap();
        prop_assert_eq!(y.dims(), &[c * d, h, w]);
        // Row-major layout makes the fold a pure reshape: channel
        // `c * d + z` of the output is plane `(c, z)` of the input.
        prop_assert_eq!(y.data(), data.as_slice());
    }
}
