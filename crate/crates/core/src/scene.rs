//! Scene containers and a deterministic synthetic scene generator.
//!
//! A scene is a hyperspectral cube (band-sequential f32 values) plus an
//! integer ground-truth raster where label 0 means "not annotated" and
//! labels 1..=C name classes. The generator builds region-structured
//! scenes: random sites partition the grid into cells by nearest-site
//! rule, each cell gets a class, and every pixel emits its class's
//! smooth spectral signature plus optional white noise. Two calls with
//! the same spec produce identical bytes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ir::InputRank;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("cube dims {height}x{width}x{bands} describe {expected} values, got {got}")]
    CubeLenMismatch {
        height: usize,
        width: usize,
        bands: usize,
        expected: usize,
        got: usize,
    },
    #[error("cube holds {count} non-finite values")]
    NonFinite { count: usize },
    #[error("dims must be nonzero, got {height}x{width} with {bands} bands")]
    EmptyDims {
        height: usize,
        width: usize,
        bands: usize,
    },
    #[error("ground truth raster of {height}x{width} needs {expected} labels, got {got}")]
    GtLenMismatch {
        height: usize,
        width: usize,
        expected: usize,
        got: usize,
    },
    #[error("ground truth has no labeled pixels")]
    NoLabels,
    #[error("{what} lists {got} entries for {classes} classes")]
    ClassListLen {
        what: &'static str,
        classes: usize,
        got: usize,
    },
    #[error("{classes} classes exceed the supported maximum of 255")]
    TooManyClasses { classes: usize },
    #[error("{pixels} pixels cannot host {classes} classes")]
    TooFewPixels { pixels: usize, classes: usize },
    #[error("{regions} regions cannot cover {classes} classes")]
    TooFewRegions { regions: usize, classes: usize },
    #[error("unlabeled fraction {frac} is outside [0, 1)")]
    BadFraction { frac: f32 },
    #[error("noise sigma {sigma} is not a finite nonnegative number")]
    BadSigma { sigma: f32 },
    #[error("cube carries no normalization record to invert")]
    NotNormalized,
}

/// Per-band value range recorded when a cube is normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRange {
    pub min: f32,
    pub max: f32,
}

/// Hyperspectral cube stored band-sequentially: `data[b*h*w + y*w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    data: Vec<f32>,
    /// Present on cubes produced by `normalize`; consumed by
    /// `denormalize`.
    pub normalization: Option<Vec<BandRange>>,
}

impl HsiCube {
    /// Validates extent and finiteness. Loaders funnel through here.
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
    ) -> Result<Self, SceneError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(SceneError::EmptyDims {
                height,
                width,
                bands,
            });
        }
        let expected = height * width * bands;
        if data.len() != expected {
            return Err(SceneError::CubeLenMismatch {
                height,
                width,
                bands,
                expected,
                got: data.len(),
            });
        }
        let count = data.iter().filter(|v| !v.is_finite()).count();
        if count > 0 {
            return Err(SceneError::NonFinite { count });
        }
        Ok(Self {
            name: name.into(),
            height,
            width,
            bands,
            data,
            normalization: None,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn value(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[band * self.height * self.width + row * self.width + col]
    }

    /// The full spectrum of one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.value(b, row, col)).collect()
    }

    /// The whole scene as a network input tensor: band-sequential
    /// storage is already `[bands, h, w]`, and the 3-D view just adds a
    /// leading unit channel axis.
    pub fn to_tensor(&self, rank: InputRank) -> Tensor<f32> {
        let dims: Vec<usize> = match rank {
            InputRank::Rank3 => vec![self.bands, self.height, self.width],
            InputRank::Rank4 => vec![1, self.bands, self.height, self.width],
        };
        Tensor::from_vec(&dims, self.data.clone()).expect("cube extent is validated")
    }

    /// Rescales every band to [0, 1] by its own min and max, recording
    /// the ranges so `denormalize` can undo the mapping. A constant band
    /// maps to zero.
    pub fn normalize(&self) -> HsiCube {
        let plane = self.height * self.width;
        let mut out = self.clone();
        let mut ranges = Vec::with_capacity(self.bands);
        for b in 0..self.bands {
            let band = &mut out.data[b * plane..(b + 1) * plane];
            let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
            for v in band.iter() {
                min = min.min(*v);
                max = max.max(*v);
            }
            if max > min {
                let inv = 1.0 / (max - min);
                for v in band.iter_mut() {
                    *v = (*v - min) * inv;
                }
            } else {
                for v in band.iter_mut() {
                    *v = 0.0;
                }
            }
            ranges.push(BandRange { min, max });
        }
        out.normalization = Some(ranges);
        out
    }

    /// Inverts `normalize` using the recorded ranges.
    pub fn denormalize(&self) -> Result<HsiCube, SceneError> {
        let ranges = self.normalization.as_ref().ok_or(SceneError::NotNormalized)?;
        let plane = self.height * self.width;
        let mut out = self.clone();
        for (b, range) in ranges.iter().enumerate() {
            let scale = range.max - range.min;
            for v in &mut out.data[b * plane..(b + 1) * plane] {
                *v = *v * scale + range.min;
            }
        }
        out.normalization = None;
        Ok(out)
    }
}

/// Per-pixel class annotations: 0 means unlabeled, 1..=num_classes are
/// class ids. Carries display names and map colors for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// RGB color per class, indexed by class id minus one.
    pub palette: Vec<[u8; 3]>,
}

impl GroundTruth {
    /// Derives the class count from the highest label and fills in
    /// default names and colors.
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self, SceneError> {
        if labels.len() != height * width {
            return Err(SceneError::GtLenMismatch {
                height,
                width,
                expected: height * width,
                got: labels.len(),
            });
        }
        let num_classes = labels.iter().copied().max().unwrap_or(0) as usize;
        if num_classes == 0 {
            return Err(SceneError::NoLabels);
        }
        if num_classes > 255 {
            return Err(SceneError::TooManyClasses {
                classes: num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            labels,
            num_classes,
            class_names: default_class_names(num_classes),
            palette: default_palette(num_classes),
        })
    }

    /// Like `new` but with caller-provided names and colors, which must
    /// cover every class.
    pub fn with_names_palette(
        height: usize,
        width: usize,
        labels: Vec<u16>,
        class_names: Vec<String>,
        palette: Vec<[u8; 3]>,
    ) -> Result<Self, SceneError> {
        let mut gt = Self::new(height, width, labels)?;
        if class_names.len() != gt.num_classes {
            return Err(SceneError::ClassListLen {
                what: "class names",
                classes: gt.num_classes,
                got: class_names.len(),
            });
        }
        if palette.len() != gt.num_classes {
            return Err(SceneError::ClassListLen {
                what: "palette",
                classes: gt.num_classes,
                got: palette.len(),
            });
        }
        gt.class_names = class_names;
        gt.palette = palette;
        Ok(gt)
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Pixels per class, indexed by class id minus one.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            if l != 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

pub fn default_class_names(num_classes: usize) -> Vec<String> {
    (1..=num_classes).map(|c| format!("class-{c}")).collect()
}

/// Evenly spaced hues at full saturation; distinct for up to 255 classes.
pub fn default_palette(num_classes: usize) -> Vec<[u8; 3]> {
    (0..num_classes)
        .map(|c| hsv_to_rgb(c as f32 / num_classes as f32, 0.85, 0.95))
        .collect()
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let h6 = (h - libm::floorf(h)) * 6.0;
    let sector = h6 as usize % 6;
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0 + 0.5) as u8,
        (g * 255.0 + 0.5) as u8,
        (b * 255.0 + 0.5) as u8,
    ]
}

/// Parameters of a generated scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Number of nearest-site cells the grid is split into; every class
    /// owns at least one cell.
    pub regions: usize,
    /// Standard deviation of the white noise added to every value.
    pub noise_sigma: f32,
    pub seed: u64,
    /// Fraction of pixels whose ground-truth label is blanked to 0. The
    /// cube values are unaffected.
    pub unlabeled_frac: f32,
}

impl SceneSpec {
    /// Defaults: three regions per class (at least eight total), mild
    /// noise, every pixel labeled.
    pub fn new(height: usize, width: usize, bands: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            bands,
            classes,
            regions: (classes * 3).max(8),
            noise_sigma: 0.02,
            seed: 7,
            unlabeled_frac: 0.0,
        }
    }
}

/// The spectral signature each class emits: a distinct DC level per
/// class plus a smooth ripple whose amplitude is 35% of the level gap,
/// so spectra of different classes never meet in any band.
pub fn class_prototypes(spec: &SceneSpec) -> Vec<Vec<f32>> {
    let c_total = spec.classes as f32;
    let gap = 1.0 / (c_total + 1.0);
    (0..spec.classes)
        .map(|c| {
            let base = (c as f32 + 1.0) * gap;
            let freq = 1.0 + (c % 3) as f32;
            let phase = core::f32::consts::TAU * c as f32 / c_total;
            (0..spec.bands)
                .map(|b| {
                    let t = b as f32 / spec.bands as f32;
                    base + 0.35 * gap * libm::sinf(core::f32::consts::TAU * freq * t + phase)
                })
                .collect()
        })
        .collect()
}

fn validate_spec(spec: &SceneSpec) -> Result<(), SceneError> {
    if spec.height == 0 || spec.width == 0 || spec.bands == 0 {
        return Err(SceneError::EmptyDims {
            height: spec.height,
            width: spec.width,
            bands: spec.bands,
        });
    }
    if spec.classes == 0 || spec.classes > 255 {
        return Err(SceneError::TooManyClasses {
            classes: spec.classes,
        });
    }
    if spec.height * spec.width < spec.classes {
        return Err(SceneError::TooFewPixels {
            pixels: spec.height * spec.width,
            classes: spec.classes,
        });
    }
    if spec.regions < spec.classes {
        return Err(SceneError::TooFewRegions {
            regions: spec.regions,
            classes: spec.classes,
        });
    }
    if !(0.0..1.0).contains(&spec.unlabeled_frac) {
        return Err(SceneError::BadFraction {
            frac: spec.unlabeled_frac,
        });
    }
    if !spec.noise_sigma.is_finite() || spec.noise_sigma < 0.0 {
        return Err(SceneError::BadSigma {
            sigma: spec.noise_sigma,
        });
    }
    Ok(())
}

/// Deterministically builds a region-structured scene and its fully
/// labeled ground truth (minus the requested unlabeled fraction). The
/// first site of every class sits on a distinct pixel and wins distance
/// ties, so every class appears in the ground truth. With zero noise
/// every pixel equals its class prototype exactly.
pub fn gen_synthetic(spec: &SceneSpec) -> Result<(HsiCube, GroundTruth), SceneError> {
    validate_spec(spec)?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // One guaranteed site per class on distinct pixels, then extra sites
    // anywhere, with classes dealt round-robin and shuffled.
    let mut sites: Vec<(usize, usize)> =
        rand::seq::index::sample(&mut rng, h * w, spec.classes)
            .iter()
            .map(|p| (p / w, p % w))
            .collect();
    for _ in spec.classes..spec.regions {
        sites.push((rng.random_range(0..h), rng.random_range(0..w)));
    }
    let mut extra_classes: Vec<u16> = (spec.classes..spec.regions)
        .map(|r| (r % spec.classes) as u16 + 1)
        .collect();
    extra_classes.shuffle(&mut rng);
    let site_class: Vec<u16> = (1..=spec.classes as u16).chain(extra_classes).collect();

    let mut labels = vec![0u16; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = usize::MAX;
            let mut best_class = 0u16;
            for (site, class) in sites.iter().zip(site_class.iter()) {
                let dy = y.abs_diff(site.0);
                let dx = x.abs_diff(site.1);
                let d = dy * dy + dx * dx;
                if d < best {
                    best = d;
                    best_class = *class;
                }
            }
            labels[y * w + x] = best_class;
        }
    }

    let protos = class_prototypes(spec);
    let plane = h * w;
    let mut data = vec![0.0f32; spec.bands * plane];
    for b in 0..spec.bands {
        for (pix, &label) in labels.iter().enumerate() {
            data[b * plane + pix] = protos[label as usize - 1][b];
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_sigma).expect("sigma validated");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }

    let mut gt_labels = labels;
    if spec.unlabeled_frac > 0.0 {
        for l in &mut gt_labels {
            if rng.random::<f32>() < spec.unlabeled_frac {
                *l = 0;
            }
        }
        // Blanking must not erase a class outright.
        if gt_labels.iter().filter(|&&l| l != 0).count() == 0 {
            return Err(SceneError::NoLabels);
        }
    }

    let name = format!(
        "synthetic-{}x{}x{}-c{}-s{}",
        h, w, spec.bands, spec.classes, spec.seed
    );
    let cube = HsiCube::new(name, h, w, spec.bands, data)?;
    let gt = GroundTruth::new(h, w, gt_labels)?;
    Ok((cube, gt))
}
