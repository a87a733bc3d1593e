//! Patch training: stratified pixel splits, SGD with momentum and
//! weight decay, frozen-statistics batch-norm calibration, and
//! checkpoint selection by validation accuracy.
//!
//! Training always runs on patches. A network trained here is then
//! reusable unchanged for whole-image prediction, which is the point
//! of keeping the layer set convolutional.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grad::{single_scores, DiffNet, GradError};
use crate::ir::{InputRank, NetworkGraph};
use crate::metrics::PixelMask;
use crate::real::Real;
use crate::scene::{GroundTruth, HsiCube};
use crate::tensor::{pad_spatial, BorderFill, Precision, Tensor, TensorError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError {
    #[error("split fractions train={train} val={val} must be non-negative and sum to at most 1")]
    BadFractions { train: f64, val: f64 },
    #[error("the training split is empty")]
    EmptyTrainSplit,
    #[error("network expects {net} bands, cube has {cube}")]
    BandMismatch { net: usize, cube: usize },
    #[error("split covers {split_h}x{split_w} but the cube covers {h}x{w}")]
    SplitShapeMismatch {
        split_h: usize,
        split_w: usize,
        h: usize,
        w: usize,
    },
    #[error("sample size {m} must be odd so patches can center on pixels")]
    EvenSampleSize { m: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("cannot pad the scene: {0}")]
    Pad(TensorError),
    #[error("training diverged with a non-finite loss at epoch {epoch}; the best earlier checkpoint is attached")]
    Diverged {
        epoch: usize,
        outcome: Box<TrainOutcome>,
    },
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// One annotated pixel, with its 1-based class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPixel {
    pub row: usize,
    pub col: usize,
    pub label: u16,
}

/// A stratified train/validation/test division of the labeled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub height: usize,
    pub width: usize,
    pub train: Vec<LabeledPixel>,
    pub val: Vec<LabeledPixel>,
    pub test: Vec<LabeledPixel>,
    /// Classes too small to split cleanly, and similar conditions.
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    fn mask_of(&self, pixels: &[LabeledPixel]) -> PixelMask {
        PixelMask::from_pixels(
            self.height,
            self.width,
            pixels.iter().map(|p| (p.row, p.col)),
        )
    }

    pub fn train_mask(&self) -> PixelMask {
        self.mask_of(&self.train)
    }

    pub fn val_mask(&self) -> PixelMask {
        self.mask_of(&self.val)
    }

    /// Train and validation pixels together: the set a fair evaluation
    /// excludes.
    pub fn non_test_mask(&self) -> PixelMask {
        self.train_mask()
            .union(&self.val_mask())
            .expect("masks share the split extent")
    }
}

/// Splits the labeled pixels of `gt` per class: each class is shuffled
/// with the seeded generator, the first `floor(train_frac * n)` pixels
/// train, the next `floor(val_frac * n)` validate, and the rest test.
/// Fractions of zero send every pixel to the test split. Classes with
/// fewer than three pixels are split best effort and noted in
/// `warnings`.
pub fn split_dataset(
    gt: &GroundTruth,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<DatasetSplit, TrainError> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac > 1.0
    {
        return Err(TrainError::BadFractions {
            train: train_frac,
            val: val_frac,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        height: gt.height,
        width: gt.width,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for class in 1..=gt.num_classes as u16 {
        let mut pixels: Vec<LabeledPixel> = (0..gt.height * gt.width)
            .filter(|&p| gt.labels[p] == class)
            .map(|p| LabeledPixel {
                row: p / gt.width,
                col: p % gt.width,
                label: class,
            })
            .collect();
        if pixels.len() < 3 {
            split.warnings.push(format!(
                "class {class} has only {} labeled pixels; splitting best effort",
                pixels.len()
            ));
        }
        pixels.shuffle(&mut rng);
        let n_train = (train_frac * pixels.len() as f64) as usize;
        let n_val = (val_frac * pixels.len() as f64) as usize;
        split.test.extend_from_slice(&pixels[n_train + n_val..]);
        split.val.extend_from_slice(&pixels[n_train..n_train + n_val]);
        split.train.extend_from_slice(&pixels[..n_train]);
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Seeds the batch shuffling only; weight initialization is the
    /// caller's concern.
    pub seed: u64,
    /// Arithmetic width of the training run. `F64` runs are
    /// bit-reproducible; weights round to f32 storage only at the end.
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            seed: 1,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Fraction of validation pixels classified correctly.
    pub val_oa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 is the calibrated starting
    /// point.
    pub best_epoch: usize,
    pub best_val_oa: f64,
    /// Seconds spent in the training loop; 0 when no clock is
    /// available.
    pub wall_seconds: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// The input network with the best checkpoint's weights.
    pub net: NetworkGraph,
    pub log: TrainLog,
}

/// `v = momentum * v - lr * (g + wd * w); w += v`, elementwise.
fn sgd_update<S: Real>(w: &mut [S], v: &mut [S], g: &[S], lr: S, momentum: S, wd: S) {
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = momentum * *vi - lr * (*gi + wd * *wi);
        *wi += *vi;
    }
}

/// Mirror-pads the scene and cuts the centered window of every pixel.
fn extract_patches<S: Real>(
    scene: &Tensor<S>,
    pixels: &[LabeledPixel],
    m: usize,
    rank: InputRank,
) -> Result<(Vec<Tensor<S>>, Vec<u16>), TrainError> {
    let r = (m - 1) / 2;
    let padded = pad_spatial(scene, r, r, r, r, BorderFill::Mirror).map_err(TrainError::Pad)?;
    let mut patches = Vec::with_capacity(pixels.len());
    let mut labels = Vec::with_capacity(pixels.len());
    for p in pixels {
        let window =
            crate::tensor::crop_window(&padded, p.row, p.col, m, m).map_err(TrainError::Pad)?;
        let window = match rank {
            InputRank::Rank3 => window,
            InputRank::Rank4 => {
                let mut dims = vec![1usize];
                dims.extend_from_slice(window.dims());
                window.reshape(&dims).expect("unit axis keeps the length")
            }
        };
        patches.push(window);
        labels.push(p.label);
    }
    Ok((patches, labels))
}

fn cast_tensor<S: Real>(t: &Tensor<f32>) -> Tensor<S> {
    Tensor::from_vec(t.dims(), t.data().iter().map(|&v| S::from_f32(v)).collect())
        .expect("shape is unchanged")
}

fn argmax_label<S: Real>(scores: &[S]) -> u16 {
    let mut best = 0usize;
    for (i, v) in scores.iter().enumerate().skip(1) {
        if *v > scores[best] {
            best = i;
        }
    }
    (best + 1) as u16
}

fn val_accuracy<S: Real>(
    dn: &DiffNet<S>,
    patches: &[Tensor<S>],
    labels: &[u16],
) -> Result<f64, GradError> {
    if patches.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &label) in patches.iter().zip(labels) {
        let out = dn.forward(x)?;
        if argmax_label(single_scores(&out)?) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / patches.len() as f64)
}

/// Replaces every batch-norm layer's statistics with the channel mean
/// and population variance of that layer's input over the training
/// patches, computed with the starting weights. The statistics stay
/// frozen afterwards; only gamma and beta keep learning.
fn calibrate_batchnorm<S: Real>(
    dn: &mut DiffNet<S>,
    patches: &[Tensor<S>],
    notes: &mut Vec<String>,
) -> Result<(), GradError> {
    let bn = dn.bn_indices();
    if bn.is_empty() {
        return Ok(());
    }
    struct Acc<S> {
        sum: Vec<S>,
        sumsq: Vec<S>,
        count: usize,
    }
    let mut accs: Vec<Option<Acc<S>>> = (0..dn.layer_count()).map(|_| None).collect();
    for x in patches {
        let trace = dn.forward_trace(x)?;
        for &i in &bn {
            let input = &trace.inputs[i];
            let channels = input.dims()[0];
            let plane = input.data().len() / channels;
            let acc = accs[i].get_or_insert_with(|| Acc {
                sum: vec![S::ZERO; channels],
                sumsq: vec![S::ZERO; channels],
                count: 0,
            });
            for c in 0..channels {
                for &v in &input.data()[c * plane..(c + 1) * plane] {
                    acc.sum[c] += v;
                    acc.sumsq[c] += v * v;
                }
            }
            acc.count += plane;
        }
    }
    for &i in &bn {
        let acc = accs[i].take().expect("every batch-norm layer was visited");
        let n = S::from_usize(acc.count);
        let mean: Vec<S> = acc.sum.iter().map(|&s| s / n).collect();
        let var: Vec<S> = acc
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(&sq, &mu)| {
                let v = sq / n - mu * mu;
                v.max(S::ZERO)
            })
            .collect();
        dn.set_bn_stats(i, mean, var);
    }
    notes.push(format!(
        "calibrated {} batch-norm layer(s) over {} training patches",
        bn.len(),
        patches.len()
    ));
    Ok(())
}

/// Trains `net` on the split's training pixels and returns the weights
/// of the epoch with the best validation accuracy (ties keep the
/// earlier epoch). The starting weights must already be initialized.
pub fn train(
    net: &NetworkGraph,
    cube: &HsiCube,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    match config.precision {
        Precision::F32 => train_impl::<f32>(net, cube, split, config),
        Precision::F64 => train_impl::<f64>(net, cube, split, config),
    }
}

fn train_impl<S: Real>(
    net: &NetworkGraph,
    cube: &HsiCube,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    #[cfg(feature = "std")]
    let t0 = std::time::Instant::now();

    if net.input.bands != cube.bands {
        return Err(TrainError::BandMismatch {
            net: net.input.bands,
            cube: cube.bands,
        });
    }
    if (split.height, split.width) != (cube.height, cube.width) {
        return Err(TrainError::SplitShapeMismatch {
            split_h: split.height,
            split_w: split.width,
            h: cube.height,
            w: cube.width,
        });
    }
    let m = net.input.sample_size;
    if m % 2 == 0 {
        return Err(TrainError::EvenSampleSize { m });
    }
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    if config.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }

    let scene = cast_tensor::<S>(&cube.to_tensor(InputRank::Rank3));
    let (train_x, train_y) = extract_patches(&scene, &split.train, m, net.input.rank)?;
    let (val_x, val_y) = extract_patches(&scene, &split.val, m, net.input.rank)?;

    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_oa: 0.0,
        wall_seconds: 0.0,
        notes: split.warnings.clone(),
    };
    if val_x.is_empty() {
        log.notes
            .push("no validation pixels; keeping the final epoch's weights".to_owned());
    }

    let mut dn = DiffNet::<S>::from_graph(net)?;
    calibrate_batchnorm(&mut dn, &train_x, &mut log.notes)?;

    let mut best = dn.clone();
    log.best_val_oa = val_accuracy(&dn, &val_x, &val_y)?;

    let mut velocity: Vec<(Vec<S>, Vec<S>)> = (0..dn.layer_count())
        .map(|i| {
            let (wlen, blen) = dn.param_lens(i);
            (vec![S::ZERO; wlen], vec![S::ZERO; blen])
        })
        .collect();
    let lr = S::from_f64(config.learning_rate);
    let momentum = S::from_f64(config.momentum);
    let wd = S::from_f64(config.weight_decay);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut batch_x: Vec<Tensor<S>> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<u16> = Vec::with_capacity(config.batch_size);

    let finish = |log: &mut TrainLog, best: &DiffNet<S>| -> TrainOutcome {
        let mut out = net.clone();
        best.store_into(&mut out);
        #[cfg(feature = "std")]
        {
            log.wall_seconds = t0.elapsed().as_secs_f64();
        }
        TrainOutcome {
            net: out,
            log: log.clone(),
        }
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(train_x[i].clone());
                batch_y.push(train_y[i]);
            }
            let (loss, grads) = dn.backward_batch(&batch_x, &batch_y)?;
            let loss = loss.to_f64();
            if !loss.is_finite() {
                log.notes
                    .push(format!("non-finite loss in epoch {epoch}; aborted"));
                let outcome = finish(&mut log, &best);
                return Err(TrainError::Diverged {
                    epoch,
                    outcome: Box::new(outcome),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            for (i, g) in grads.iter().enumerate() {
                let (vw, vb) = &mut velocity[i];
                let (w, b) = dn.params_mut(i);
                if let Some(w) = w {
                    sgd_update(w, vw, &g.weights, lr, momentum, wd);
                }
                if let Some(b) = b {
                    sgd_update(b, vb, &g.bias, lr, momentum, wd);
                }
            }
        }
        let val_oa = val_accuracy(&dn, &val_x, &val_y)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_x.len() as f64,
            val_oa,
        });
        let keep = if val_x.is_empty() {
            true
        } else {
            val_oa > log.best_val_oa
        };
        if keep {
            log.best_val_oa = val_oa;
            log.best_epoch = epoch;
            best = dn.clone();
        }
    }

    Ok(finish(&mut log, &best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BatchNormLayer, Conv2dLayer, InputSpec, LayerKind, LayerSpec};
    use crate::scene::{gen_synthetic, SceneSpec};
    use crate::tensor::BatchNormParams;

    fn mix(i: usize) -> f32 {
        ((i * 53 + 19) % 31) as f32 * 0.06 - 0.9
    }

    fn conv(id: &str, ci: usize, co: usize, k: usize, salt: usize) -> LayerSpec {
        LayerSpec::new(
            id,
            LayerKind::Conv2d(Conv2dLayer {
                in_channels: ci,
                out_channels: co,
                kh: k,
                kw: k,
                stride_h: 1,
                stride_w: 1,
                pad: 0,
                weights: Some((0..co * ci * k * k).map(|i| mix(i + salt)).collect()),
                bias: Some((0..co).map(|i| mix(i * 7 + salt)).collect()),
            }),
        )
    }

    fn small_net(bands: usize, classes: usize) -> NetworkGraph {
        NetworkGraph {
            name: "train-test".to_owned(),
            input: InputSpec {
                bands,
                sample_size: 3,
                rank: InputRank::Rank3,
            },
            num_classes: classes,
            layers: vec![
                conv("c1", bands, 8, 1, 3),
                LayerSpec::new("r1", LayerKind::Relu),
                conv("head", 8, classes, 3, 57),
            ],
        }
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let (_, gt) = gen_synthetic(&SceneSpec::new(16, 16, 4, 3)).unwrap();
        let a = split_dataset(&gt, 0.2, 0.16, 5).unwrap();
        let b = split_dataset(&gt, 0.2, 0.16, 5).unwrap();
        assert_eq!(a, b);
        let counts = gt.class_counts();
        for class in 1..=3u16 {
            let n = counts[class as usize - 1] as f64;
            let train = a.train.iter().filter(|p| p.label == class).count();
            let val = a.val.iter().filter(|p| p.label == class).count();
            assert_eq!(train, (0.2 * n) as usize, "class {class}");
            assert_eq!(val, (0.16 * n) as usize, "class {class}");
        }
        assert_eq!(
            a.train.len() + a.val.len() + a.test.len(),
            gt.labeled_count()
        );

        let c = split_dataset(&gt, 0.2, 0.16, 6).unwrap();
        assert_ne!(a.train, c.train);

        let all_test = split_dataset(&gt, 0.0, 0.0, 5).unwrap();
        assert!(all_test.train.is_empty() && all_test.val.is_empty());
        assert_eq!(all_test.test.len(), gt.labeled_count());

        assert!(matches!(
            split_dataset(&gt, 0.7, 0.4, 5),
            Err(TrainError::BadFractions { .. })
        ));
    }

    #[test]
    fn tiny_classes_warn_but_split() {
        let mut labels = vec![1u16; 36];
        labels[0] = 2;
        labels[1] = 2;
        let gt = GroundTruth::new(6, 6, labels).unwrap();
        let split = split_dataset(&gt, 0.2, 0.16, 3).unwrap();
        assert!(split.warnings.iter().any(|w| w.contains("class 2")));
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 36);
    }

    #[test]
    fn masks_cover_the_right_pixels() {
        let (_, gt) = gen_synthetic(&SceneSpec::new(8, 8, 4, 2)).unwrap();
        let split = split_dataset(&gt, 0.25, 0.25, 1).unwrap();
        let mask = split.non_test_mask();
        assert_eq!(mask.count(), split.train.len() + split.val.len());
        for p in &split.test {
            assert!(!mask.contains(p.row, p.col));
        }
    }

    #[test]
    fn momentum_free_decay_matches_closed_form() {
        let mut w = vec![1.0f64, -2.0];
        let mut v = vec![0.0f64; 2];
        let g = vec![0.0f64; 2];
        for _ in 0..10 {
            sgd_update(&mut w, &mut v, &g, 0.1, 0.0, 0.5);
        }
        let factor = (1.0f64 - 0.1 * 0.5).powi(10);
        assert!((w[0] - factor).abs() < 1e-12);
        assert!((w[1] + 2.0 * factor).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (cube, gt) = gen_synthetic(&SceneSpec::new(10, 10, 4, 3)).unwrap();
        let net = small_net(4, 3);
        let split = split_dataset(&gt, 0.3, 0.2, 2).unwrap();
        let config = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            weight_decay: 0.0,
            batch_size: 16,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let out = train(&net, &cube, &split, &config).unwrap();
        assert_eq!(out.net, net);
        assert_eq!(out.log.epochs.len(), 2);
        assert_eq!(out.log.epochs[0].val_oa, out.log.epochs[1].val_oa);
    }

    #[test]
    fn f64_training_is_bit_reproducible() {
        let (cube, gt) = gen_synthetic(&SceneSpec::new(12, 12, 4, 3)).unwrap();
        let net = small_net(4, 3);
        let split = split_dataset(&gt, 0.3, 0.2, 4).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.02,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let a = train(&net, &cube, &split, &config).unwrap();
        let b = train(&net, &cube, &split, &config).unwrap();
        assert_eq!(a.net, b.net);
        for (x, y) in a.log.epochs.iter().zip(&b.log.epochs) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_oa, y.val_oa);
        }
    }

    #[test]
    fn loss_goes_down_and_best_checkpoint_is_tracked() {
        let (cube, gt) = gen_synthetic(&SceneSpec::new(14, 14, 5, 3)).unwrap();
        let net = small_net(5, 3);
        let split = split_dataset(&gt, 0.3, 0.2, 8).unwrap();
        let config = TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 0.05,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let out = train(&net, &cube, &split, &config).unwrap();
        let first = out.log.epochs.first().unwrap().train_loss;
        let last = out.log.epochs.last().unwrap().train_loss;
        assert!(last < first, "{last} !< {first}");
        let max_oa = out
            .log
            .epochs
            .iter()
            .map(|e| e.val_oa)
            .fold(0.0f64, f64::max);
        assert!(out.log.best_val_oa >= max_oa);
        if out.log.best_epoch > 0 {
            let rec = &out.log.epochs[out.log.best_epoch - 1];
            assert_eq!(rec.val_oa, out.log.best_val_oa);
        }
    }

    #[test]
    fn batchnorm_statistics_come_from_training_patches() {
        let bands = 3usize;
        let net = NetworkGraph {
            name: "bn-first".to_owned(),
            input: InputSpec {
                bands,
                sample_size: 1,
                rank: InputRank::Rank3,
            },
            num_classes: 2,
            layers: vec![
                LayerSpec::new(
                    "bn",
                    LayerKind::BatchNorm(BatchNormLayer {
                        channels: bands,
                        epsilon: 1e-5,
                        params: Some(BatchNormParams::identity(bands, 1e-5)),
                    }),
                ),
                conv("head", bands, 2, 1, 9),
            ],
        };
        let (cube, gt) = gen_synthetic(&SceneSpec::new(10, 10, bands, 2)).unwrap();
        let split = split_dataset(&gt, 0.4, 0.2, 3).unwrap();
        let config = TrainConfig {
            epochs: 0,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let out = train(&net, &cube, &split, &config).unwrap();

        // Expected statistics: plain mean/variance of the training
        // pixels' band values (sample size 1 means one pixel per patch).
        let n = split.train.len() as f64;
        for band in 0..bands {
            let values: Vec<f64> = split
                .train
                .iter()
                .map(|p| cube.value(band, p.row, p.col) as f64)
                .collect();
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let LayerKind::BatchNorm(bn) = &out.net.layers[0].kind else {
                panic!("layer order changed");
            };
            let params = bn.params.as_ref().unwrap();
            assert!((params.running_mean[band] as f64 - mean).abs() < 1e-6);
            assert!((params.running_var[band] as f64 - var).abs() < 1e-6);
        }
        assert!(out.log.notes.iter().any(|n| n.contains("batch-norm")));
    }

    #[test]
    fn divergence_aborts_with_checkpoint() {
        let (cube, gt) = gen_synthetic(&SceneSpec::new(10, 10, 4, 3)).unwrap();
        // Linear net so saturation cannot quietly absorb the blow-up.
        let net = NetworkGraph {
            name: "fragile".to_owned(),
            input: InputSpec {
                bands: 4,
                sample_size: 3,
                rank: InputRank::Rank3,
            },
            num_classes: 3,
            layers: vec![conv("c1", 4, 8, 1, 3), conv("head", 8, 3, 3, 57)],
        };
        let split = split_dataset(&gt, 0.3, 0.2, 2).unwrap();
        // lr * wd far above 2 makes the decay term itself explode
        // geometrically until f32 overflows.
        let config = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 100.0,
            weight_decay: 100.0,
            momentum: 0.0,
            precision: Precision::F32,
            ..TrainConfig::default()
        };
        match train(&net, &cube, &split, &config) {
            Err(TrainError::Diverged { epoch, outcome }) => {
                assert!(epoch >= 1);
                assert!(outcome.log.notes.iter().any(|n| n.contains("non-finite")));
                // The checkpoint predates the explosion and stays usable.
                assert!(outcome.net.layers.iter().all(|l| match &l.kind {
                    LayerKind::Conv2d(c) =>
                        c.weights.as_ref().unwrap().iter().all(|w| w.is_finite()),
                    _ => true,
                }));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn input_contracts_are_checked() {
        let (cube, gt) = gen_synthetic(&SceneSpec::new(8, 8, 4, 2)).unwrap();
        let split = split_dataset(&gt, 0.3, 0.2, 2).unwrap();
        let config = TrainConfig::default();

        assert!(matches!(
            train(&small_net(5, 2), &cube, &split, &config),
            Err(TrainError::BandMismatch { net: 5, cube: 4 })
        ));

        let empty = split_dataset(&gt, 0.0, 0.0, 2).unwrap();
        assert!(matches!(
            train(&small_net(4, 2), &cube, &empty, &config),
            Err(TrainError::EmptyTrainSplit)
        ));

        let mut bad = config;
        bad.batch_size = 0;
        assert!(matches!(
            train(&small_net(4, 2), &cube, &split, &bad),
            Err(TrainError::ZeroBatch)
        ));
    }
}
