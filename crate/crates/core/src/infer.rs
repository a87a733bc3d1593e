//! Dual-mode prediction: pixel-by-pixel patch classification and
//! whole-image classification, plus tiling and an equivalence checker.
//!
//! Patch mode pads the scene once (mirror fill by default), then runs
//! the network on the window centered on each requested pixel. Image
//! mode runs the network across the scene in a single pass. Because
//! every kernel reduces in a fixed order, the two modes see identical
//! windows of identical data and produce bit-identical scores; the
//! equivalence checker makes that measurable.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::forward::CompiledNet;
use crate::ir::{GraphError, InputRank, NetworkGraph};
use crate::scene::{GroundTruth, HsiCube};
use crate::tensor::{crop_window, pad_spatial, BorderFill, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferError {
    #[error("network expects {net} bands, cube {cube_name:?} has {cube}")]
    BandMismatch {
        net: usize,
        cube: usize,
        cube_name: String,
    },
    #[error("sample size {m} must be odd so a window can center on a pixel")]
    EvenSampleSize { m: usize },
    #[error("scene {h}x{w} is smaller than the sample size {m}")]
    SceneTooSmall { h: usize, w: usize, m: usize },
    #[error("ground truth raster {gt_h}x{gt_w} does not cover the {h}x{w} scene")]
    GtShapeMismatch {
        gt_h: usize,
        gt_w: usize,
        h: usize,
        w: usize,
    },
    #[error("tile {tile} is smaller than the sample size {m}")]
    TileTooSmall { tile: usize, m: usize },
    #[error("patch output {dims:?} is not a single scored position; the declared sample size does not match the network geometry")]
    PatchOutputShape { dims: Vec<usize> },
    #[error("image output spans {got_h}x{got_w}, expected {want_h}x{want_w}; networks that pad internally must be rewritten before image-mode prediction")]
    GeometryMismatch {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("cannot pad the scene: {0}")]
    Pad(TensorError),
    #[error("map carries no logits; rerun prediction with logit retention")]
    NoLogits,
    #[error("maps cover different extents: {a_h}x{a_w} vs {b_h}x{b_w}")]
    MapExtentMismatch {
        a_h: usize,
        a_w: usize,
        b_h: usize,
        b_w: usize,
    },
    #[error("maps score different class counts: {a} vs {b}")]
    MapClassMismatch { a: usize, b: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Patch,
    Image,
    Tiled,
}

impl PredictMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictMode::Patch => "patch",
            PredictMode::Image => "image",
            PredictMode::Tiled => "tiled",
        }
    }
}

/// How a map was produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapProvenance {
    pub mode: PredictMode,
    /// Whether the scene was padded so every pixel gets a prediction.
    pub padded: bool,
    /// Name of the network that produced the map.
    pub net: String,
}

/// Per-pixel class decisions over a raster. Class ids run 1..=C; 0 marks
/// a pixel that was not predicted. Wherever logits are retained,
/// `class_of` equals their argmax with ties going to the lowest id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub class_of: Vec<u16>,
    /// Pixel-major score vectors: `logits[(row * width + col) * C + c]`.
    pub logits: Option<Vec<f32>>,
    pub provenance: MapProvenance,
}

impl ClassificationMap {
    pub fn class_at(&self, row: usize, col: usize) -> u16 {
        self.class_of[row * self.width + col]
    }

    pub fn logits_at(&self, row: usize, col: usize) -> Option<&[f32]> {
        let c = self.num_classes;
        self.logits
            .as_ref()
            .map(|l| &l[(row * self.width + col) * c..(row * self.width + col + 1) * c])
    }
}

/// Which pixels patch-mode prediction classifies.
#[derive(Debug, Clone, Copy)]
pub enum PixelSelection<'a> {
    All,
    /// Only pixels the ground truth annotates; the rest stay 0.
    LabeledOnly(&'a GroundTruth),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Retain per-pixel score vectors in the map.
    pub keep_logits: bool,
    /// Fill rule for scene padding (patch windows and padded image
    /// mode). Mirror is the default; zero fill exists for ablations.
    pub border: BorderFill,
    /// Patch-mode scheduling granularity. Results do not depend on it.
    pub batch_size: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            keep_logits: false,
            border: BorderFill::Mirror,
            batch_size: 100,
        }
    }
}

/// Lowest-index argmax, as a 1-based class id.
fn argmax_class(scores: &[f32]) -> u16 {
    let mut best = 0usize;
    for (i, v) in scores.iter().enumerate().skip(1) {
        if *v > scores[best] {
            best = i;
        }
    }
    (best + 1) as u16
}

fn check_bands(net: &NetworkGraph, cube: &HsiCube) -> Result<(), InferError> {
    if net.input.bands != cube.bands {
        return Err(InferError::BandMismatch {
            net: net.input.bands,
            cube: cube.bands,
            cube_name: cube.name.clone(),
        });
    }
    Ok(())
}

/// Adds the leading unit channel axis 3-D networks expect.
fn with_input_rank(t: Tensor<f32>, rank: InputRank) -> Tensor<f32> {
    match rank {
        InputRank::Rank3 => t,
        InputRank::Rank4 => {
            let mut dims = vec![1usize];
            dims.extend_from_slice(t.dims());
            t.reshape(&dims).expect("unit axis never changes length")
        }
    }
}

fn single_position_scores(out: &Tensor<f32>) -> Result<Vec<f32>, InferError> {
    match out.dims() {
        [_] => Ok(out.data().to_vec()),
        [_, 1, 1] => Ok(out.data().to_vec()),
        dims => Err(InferError::PatchOutputShape {
            dims: dims.to_vec(),
        }),
    }
}

/// Classifies pixels one window at a time. The scene is padded once by
/// half the declared sample size, so every window, border or interior,
/// is exactly the data an image-mode pass would reduce at that pixel.
/// Works for any network, including ones that cannot run image-to-image.
pub fn predict_patchwise(
    net: &NetworkGraph,
    cube: &HsiCube,
    pixels: PixelSelection<'_>,
    opts: &PredictOptions,
) -> Result<ClassificationMap, InferError> {
    check_bands(net, cube)?;
    let m = net.input.sample_size;
    if m % 2 == 0 {
        return Err(InferError::EvenSampleSize { m });
    }
    let (h, w) = (cube.height, cube.width);
    let r = (m - 1) / 2;
    let scene = cube.to_tensor(InputRank::Rank3);
    let padded = pad_spatial(&scene, r, r, r, r, opts.border).map_err(InferError::Pad)?;
    let compiled = CompiledNet::<f32>::compile(net)?;
    let num_classes = net.num_classes;

    let selected: Vec<(usize, usize)> = match pixels {
        PixelSelection::All => (0..h * w).map(|p| (p / w, p % w)).collect(),
        PixelSelection::LabeledOnly(gt) => {
            if gt.height != h || gt.width != w {
                return Err(InferError::GtShapeMismatch {
                    gt_h: gt.height,
                    gt_w: gt.width,
                    h,
                    w,
                });
            }
            (0..h * w)
                .filter(|&p| gt.labels[p] != 0)
                .map(|p| (p / w, p % w))
                .collect()
        }
    };

    let run_one = |&(y, x): &(usize, usize)| -> Result<(u16, Vec<f32>), InferError> {
        // Pixel (y, x) sits at (y + r, x + r) in the padded scene, so
        // its centered window starts at (y, x).
        let window = crop_window(&padded, y, x, m, m).map_err(InferError::Pad)?;
        let input = with_input_rank(window, net.input.rank);
        let out = compiled.forward(&input)?;
        let scores = single_position_scores(&out)?;
        Ok((argmax_class(&scores), scores))
    };

    let mut class_of = vec![0u16; h * w];
    let mut logits = opts.keep_logits.then(|| vec![0.0f32; h * w * num_classes]);
    for batch in selected.chunks(opts.batch_size.max(1)) {
        #[cfg(feature = "parallel")]
        let results: Result<Vec<_>, InferError> = {
            use rayon::prelude::*;
            batch.par_iter().map(run_one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Result<Vec<_>, InferError> = batch.iter().map(run_one).collect();
        for ((y, x), (class, scores)) in batch.iter().zip(results?) {
            let p = y * w + x;
            class_of[p] = class;
            if let Some(buf) = &mut logits {
                buf[p * num_classes..(p + 1) * num_classes].copy_from_slice(&scores);
            }
        }
    }

    Ok(ClassificationMap {
        height: h,
        width: w,
        num_classes,
        class_of,
        logits,
        provenance: MapProvenance {
            mode: PredictMode::Patch,
            padded: true,
            net: net.name.clone(),
        },
    })
}

/// Classifies the whole scene in one pass. With `pad_to_full` the scene
/// is padded by half the sample size and the map covers every pixel;
/// without it the map shrinks to the positions whose full window lies
/// inside the scene.
pub fn predict_image(
    net: &NetworkGraph,
    cube: &HsiCube,
    pad_to_full: bool,
    opts: &PredictOptions,
) -> Result<ClassificationMap, InferError> {
    check_bands(net, cube)?;
    let m = net.receptive_field()?;
    let (h, w) = (cube.height, cube.width);
    if h < m || w < m {
        return Err(InferError::SceneTooSmall { h, w, m });
    }
    let scene = cube.to_tensor(InputRank::Rank3);
    let input2d = if pad_to_full {
        let r = (m - 1) / 2;
        pad_spatial(&scene, r, r, r, r, opts.border).map_err(InferError::Pad)?
    } else {
        scene
    };
    let input = with_input_rank(input2d, net.input.rank);
    let compiled = CompiledNet::<f32>::compile(net)?;
    let out = compiled.forward(&input)?;

    let (want_h, want_w) = if pad_to_full {
        (h, w)
    } else {
        (h - m + 1, w - m + 1)
    };
    let (got_h, got_w) = match out.dims() {
        [c, oh, ow] if *c == net.num_classes => (*oh, *ow),
        dims => {
            return Err(InferError::PatchOutputShape {
                dims: dims.to_vec(),
            });
        }
    };
    if (got_h, got_w) != (want_h, want_w) {
        return Err(InferError::GeometryMismatch {
            got_h,
            got_w,
            want_h,
            want_w,
        });
    }

    Ok(map_from_planes(
        &out,
        net,
        MapProvenance {
            mode: PredictMode::Image,
            padded: pad_to_full,
            net: net.name.clone(),
        },
        opts.keep_logits,
    ))
}

/// Converts `[c, h, w]` score planes into a map (argmax per position,
/// optional pixel-major logits).
fn map_from_planes(
    out: &Tensor<f32>,
    net: &NetworkGraph,
    provenance: MapProvenance,
    keep_logits: bool,
) -> ClassificationMap {
    let (c, oh, ow) = (out.dims()[0], out.dims()[1], out.dims()[2]);
    let plane = oh * ow;
    let data = out.data();
    let mut class_of = vec![0u16; plane];
    let mut logits = keep_logits.then(|| vec![0.0f32; plane * c]);
    let mut scores = vec![0.0f32; c];
    for p in 0..plane {
        for (ch, s) in scores.iter_mut().enumerate() {
            *s = data[ch * plane + p];
        }
        class_of[p] = argmax_class(&scores);
        if let Some(buf) = &mut logits {
            buf[p * c..(p + 1) * c].copy_from_slice(&scores);
        }
    }
    ClassificationMap {
        height: oh,
        width: ow,
        num_classes: net.num_classes,
        class_of,
        logits,
        provenance,
    }
}

/// Image-mode prediction over square input tiles of side `tile` with
/// overlap one less than the sample size, stitched into one map. The
/// result is bit-identical to whole-image prediction under the same
/// `pad_to_full` choice; only the peak memory differs. `tile` may
/// exceed the scene (one tile total).
pub fn predict_tiled(
    net: &NetworkGraph,
    cube: &HsiCube,
    tile: usize,
    pad_to_full: bool,
    opts: &PredictOptions,
) -> Result<ClassificationMap, InferError> {
    check_bands(net, cube)?;
    let m = net.receptive_field()?;
    if tile < m {
        return Err(InferError::TileTooSmall { tile, m });
    }
    if cube.height < m || cube.width < m {
        return Err(InferError::SceneTooSmall {
            h: cube.height,
            w: cube.width,
            m,
        });
    }
    let mut scene = cube.to_tensor(InputRank::Rank3);
    if pad_to_full {
        let r = (m - 1) / 2;
        scene = pad_spatial(&scene, r, r, r, r, opts.border).map_err(InferError::Pad)?;
    }
    let (h, w) = (scene.dims()[1], scene.dims()[2]);
    let (out_h, out_w) = (h - m + 1, w - m + 1);
    let step = tile - (m - 1);
    let compiled = CompiledNet::<f32>::compile(net)?;
    let c = net.num_classes;

    let mut class_of = vec![0u16; out_h * out_w];
    let mut logits = opts.keep_logits.then(|| vec![0.0f32; out_h * out_w * c]);
    let mut y0 = 0usize;
    while y0 < out_h {
        let in_h = tile.min(h - y0);
        let block_h = in_h - m + 1;
        let mut x0 = 0usize;
        while x0 < out_w {
            let in_w = tile.min(w - x0);
            let block_w = in_w - m + 1;
            let window = crop_window(&scene, y0, x0, in_h, in_w).map_err(InferError::Pad)?;
            let input = with_input_rank(window, net.input.rank);
            let out = compiled.forward(&input)?;
            let (got_h, got_w) = match out.dims() {
                [oc, oh, ow] if *oc == c => (*oh, *ow),
                dims => {
                    return Err(InferError::PatchOutputShape {
                        dims: dims.to_vec(),
                    });
                }
            };
            if (got_h, got_w) != (block_h, block_w) {
                return Err(InferError::GeometryMismatch {
                    got_h,
                    got_w,
                    want_h: block_h,
                    want_w: block_w,
                });
            }
            let data = out.data();
            let block_plane = block_h * block_w;
            let mut scores = vec![0.0f32; c];
            for by in 0..block_h {
                for bx in 0..block_w {
                    let bp = by * block_w + bx;
                    for (ch, s) in scores.iter_mut().enumerate() {
                        *s = data[ch * block_plane + bp];
                    }
                    let p = (y0 + by) * out_w + (x0 + bx);
                    class_of[p] = argmax_class(&scores);
                    if let Some(buf) = &mut logits {
                        buf[p * c..(p + 1) * c].copy_from_slice(&scores);
                    }
                }
            }
            x0 += step;
        }
        y0 += step;
    }

    Ok(ClassificationMap {
        height: out_h,
        width: out_w,
        num_classes: c,
        class_of,
        logits,
        provenance: MapProvenance {
            mode: PredictMode::Tiled,
            padded: pad_to_full,
            net: net.name.clone(),
        },
    })
}

/// Outcome of comparing two maps pixel by pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// Pixels both maps predicted.
    pub pixels_compared: usize,
    pub max_abs_logit_diff: f64,
    pub argmax_disagreements: usize,
    /// Coordinates of the first disagreements, up to
    /// `MAX_LISTED_DISAGREEMENTS`.
    pub disagreeing_pixels: Vec<(usize, usize)>,
    pub tolerance: f64,
    /// No argmax disagreements and the score gap within tolerance.
    pub passed: bool,
}

pub const MAX_LISTED_DISAGREEMENTS: usize = 32;

/// Compares two maps that retained logits over the pixels both predicted.
pub fn compare_maps(
    a: &ClassificationMap,
    b: &ClassificationMap,
    tolerance: f64,
) -> Result<EquivalenceReport, InferError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(InferError::MapExtentMismatch {
            a_h: a.height,
            a_w: a.width,
            b_h: b.height,
            b_w: b.width,
        });
    }
    if a.num_classes != b.num_classes {
        return Err(InferError::MapClassMismatch {
            a: a.num_classes,
            b: b.num_classes,
        });
    }
    let (la, lb) = match (&a.logits, &b.logits) {
        (Some(la), Some(lb)) => (la, lb),
        _ => return Err(InferError::NoLogits),
    };
    let c = a.num_classes;
    let mut pixels_compared = 0usize;
    let mut max_diff = 0.0f64;
    let mut disagreements = 0usize;
    let mut listed = Vec::new();
    for p in 0..a.height * a.width {
        if a.class_of[p] == 0 || b.class_of[p] == 0 {
            continue;
        }
        pixels_compared += 1;
        for ch in 0..c {
            let d = (la[p * c + ch] as f64 - lb[p * c + ch] as f64).abs();
            if d > max_diff {
                max_diff = d;
            }
        }
        if a.class_of[p] != b.class_of[p] {
            disagreements += 1;
            if listed.len() < MAX_LISTED_DISAGREEMENTS {
                listed.push((p / a.width, p % a.width));
            }
        }
    }
    Ok(EquivalenceReport {
        pixels_compared,
        max_abs_logit_diff: max_diff,
        argmax_disagreements: disagreements,
        disagreeing_pixels: listed,
        tolerance,
        passed: disagreements == 0 && max_diff <= tolerance,
    })
}

/// Runs both prediction modes over the full scene with logits retained
/// and reports how far apart they are. For networks built from the
/// fixed-order kernels the answer is "not at all", bit for bit.
pub fn verify_equivalence(
    net: &NetworkGraph,
    cube: &HsiCube,
    tolerance: f64,
) -> Result<EquivalenceReport, InferError> {
    let opts = PredictOptions {
        keep_logits: true,
        ..PredictOptions::default()
    };
    let patch = predict_patchwise(net, cube, PixelSelection::All, &opts)?;
    let image = predict_image(net, cube, true, &opts)?;
    compare_maps(&patch, &image, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Conv2dLayer, FcLayer, InputSpec, LayerKind, LayerSpec};
    use crate::scene::{gen_synthetic, SceneSpec};
    use alloc::borrow::ToOwned;

    /// Small deterministic net: conv 3x3 -> relu -> conv 1x1, m = 3.
    fn tiny_net(bands: usize, classes: usize) -> NetworkGraph {
        let mid = 5usize;
        let mix = |i: usize| ((i * 37 + 11) % 29) as f32 * 0.07 - 1.0;
        NetworkGraph {
            name: "tiny".to_owned(),
            input: InputSpec {
                bands,
                sample_size: 3,
                rank: InputRank::Rank3,
            },
            num_classes: classes,
            layers: vec![
                LayerSpec::new(
                    "c1",
                    LayerKind::Conv2d(Conv2dLayer {
                        in_channels: bands,
                        out_channels: mid,
                        kh: 3,
                        kw: 3,
                        stride_h: 1,
                        stride_w: 1,
                        pad: 0,
                        weights: Some((0..mid * bands * 9).map(mix).collect()),
                        bias: Some((0..mid).map(mix).collect()),
                    }),
                ),
                LayerSpec::new("r1", LayerKind::Relu),
                LayerSpec::new(
                    "head",
                    LayerKind::Conv2d(Conv2dLayer {
                        in_channels: mid,
                        out_channels: classes,
                        kh: 1,
                        kw: 1,
                        stride_h: 1,
                        stride_w: 1,
                        pad: 0,
                        weights: Some((0..classes * mid).map(mix).collect()),
                        bias: None,
                    }),
                ),
            ],
        }
    }

    fn small_scene() -> HsiCube {
        let spec = SceneSpec::new(8, 9, 4, 3);
        gen_synthetic(&spec).unwrap().0
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_class(&[1.0, 3.0, 3.0]), 2);
        assert_eq!(argmax_class(&[5.0, 5.0]), 1);
        assert_eq!(argmax_class(&[-2.0]), 1);
    }

    #[test]
    fn patch_and_image_modes_agree_exactly() {
        let net = tiny_net(4, 3);
        let cube = small_scene();
        let report = verify_equivalence(&net, &cube, 0.0).unwrap();
        assert_eq!(report.pixels_compared, 72);
        assert_eq!(report.max_abs_logit_diff, 0.0);
        assert_eq!(report.argmax_disagreements, 0);
        assert!(report.passed);
    }

    #[test]
    fn map_argmax_matches_logits() {
        let net = tiny_net(4, 3);
        let cube = small_scene();
        let opts = PredictOptions {
            keep_logits: true,
            ..PredictOptions::default()
        };
        let map = predict_image(&net, &cube, true, &opts).unwrap();
        for y in 0..map.height {
            for x in 0..map.width {
                let scores = map.logits_at(y, x).unwrap();
                assert_eq!(map.class_at(y, x), argmax_class(scores));
            }
        }
    }

    #[test]
    fn unpadded_map_is_the_interior() {
        let net = tiny_net(4, 3);
        let cube = small_scene();
        let opts = PredictOptions {
            keep_logits: true,
            ..PredictOptions::default()
        };
        let full = predict_image(&net, &cube, true, &opts).unwrap();
        let raw = predict_image(&net, &cube, false, &opts).unwrap();
        assert_eq!((raw.height, raw.width), (6, 7));
        assert!(!raw.provenance.padded);
        // Away from the border, padding cannot influence the window.
        for y in 0..raw.height {
            for x in 0..raw.width {
                assert_eq!(raw.logits_at(y, x), full.logits_at(y + 1, x + 1));
            }
        }
    }

    #[test]
    fn labeled_only_skips_unannotated_pixels() {
        let net = tiny_net(4, 3);
        let spec = SceneSpec {
            unlabeled_frac: 0.4,
            ..SceneSpec::new(8, 9, 4, 3)
        };
        let (cube, gt) = gen_synthetic(&spec).unwrap();
        let opts = PredictOptions::default();
        let sparse = predict_patchwise(&net, &cube, PixelSelection::LabeledOnly(&gt), &opts).unwrap();
        let dense = predict_patchwise(&net, &cube, PixelSelection::All, &opts).unwrap();
        let mut skipped = 0usize;
        for p in 0..72 {
            if gt.labels[p] == 0 {
                assert_eq!(sparse.class_of[p], 0);
                skipped += 1;
            } else {
                assert_eq!(sparse.class_of[p], dense.class_of[p]);
            }
        }
        assert!(skipped > 0);
    }

    #[test]
    fn tiling_is_invisible() {
        let net = tiny_net(4, 3);
        let cube = small_scene();
        let opts = PredictOptions {
            keep_logits: true,
            ..PredictOptions::default()
        };
        for pad in [false, true] {
            let whole = predict_image(&net, &cube, pad, &opts).unwrap();
            for tile in [3usize, 4, 5, 100] {
                let tiled = predict_tiled(&net, &cube, tile, pad, &opts).unwrap();
                assert_eq!(tiled.class_of, whole.class_of, "tile {tile} pad {pad}");
                assert_eq!(tiled.logits, whole.logits, "tile {tile} pad {pad}");
            }
        }
        assert!(matches!(
            predict_tiled(&net, &cube, 2, false, &opts),
            Err(InferError::TileTooSmall { tile: 2, m: 3 })
        ));
    }

    #[test]
    fn input_contracts_are_enforced() {
        let net = tiny_net(4, 3);
        let wrong_bands = gen_synthetic(&SceneSpec::new(8, 8, 6, 3)).unwrap().0;
        assert!(matches!(
            predict_image(&net, &wrong_bands, true, &PredictOptions::default()),
            Err(InferError::BandMismatch { net: 4, cube: 6, .. })
        ));

        let mut even = tiny_net(4, 3);
        even.input.sample_size = 4;
        assert!(matches!(
            predict_patchwise(&even, &small_scene(), PixelSelection::All, &PredictOptions::default()),
            Err(InferError::EvenSampleSize { m: 4 })
        ));

        // Image mode refuses networks that cannot run on images.
        let mut fc = tiny_net(4, 3);
        fc.layers.push(LayerSpec::new(
            "fc",
            LayerKind::Fc(FcLayer {
                in_features: 3,
                out_features: 3,
                weights: Some(vec![0.0; 9]),
                bias: None,
            }),
        ));
        assert!(matches!(
            predict_image(&fc, &small_scene(), true, &PredictOptions::default()),
            Err(InferError::Graph(GraphError::NotImageRunnable { .. }))
        ));

        // Declared sample size must match the computed receptive field.
        let mut lying = tiny_net(4, 3);
        lying.input.sample_size = 5;
        assert!(matches!(
            predict_image(&lying, &small_scene(), true, &PredictOptions::default()),
            Err(InferError::Graph(GraphError::SampleSizeMismatch { .. }))
        ));

        // Scene smaller than the window.
        let little = gen_synthetic(&SceneSpec::new(2, 2, 4, 2)).unwrap().0;
        assert!(matches!(
            predict_image(&tiny_net(4, 3), &little, true, &PredictOptions::default()),
            Err(InferError::SceneTooSmall { m: 3, .. })
        ));
    }

    #[test]
    fn compare_maps_needs_logits_and_matching_shapes() {
        let net = tiny_net(4, 3);
        let cube = small_scene();
        let bare = predict_image(&net, &cube, true, &PredictOptions::default()).unwrap();
        assert!(matches!(
            compare_maps(&bare, &bare, 0.0),
            Err(InferError::NoLogits)
        ));
        let opts = PredictOptions {
            keep_logits: true,
            ..PredictOptions::default()
        };
        let full = predict_image(&net, &cube, true, &opts).unwrap();
        let raw = predict_image(&net, &cube, false, &opts).unwrap();
        assert!(matches!(
            compare_maps(&full, &raw, 0.0),
            Err(InferError::MapExtentMismatch { .. })
        ));
    }

    #[test]
    fn zero_border_fill_changes_borders_only() {
        let net = tiny_net(4, 3);
        let cube = small_scene();
        let mirror = PredictOptions {
            keep_logits: true,
            ..PredictOptions::default()
        };
        let zero = PredictOptions {
            keep_logits: true,
            border: BorderFill::Zero,
            ..PredictOptions::default()
        };
        let a = predict_image(&net, &cube, true, &mirror).unwrap();
        let b = predict_image(&net, &cube, true, &zero).unwrap();
        // Interior windows never touch the border fill.
        for y in 1..a.height - 1 {
            for x in 1..a.width - 1 {
                assert_eq!(a.logits_at(y, x), b.logits_at(y, x));
            }
        }
        assert_ne!(a.logits, b.logits);
    }
}
