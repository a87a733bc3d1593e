//! Arithmetic cost model for the two prediction modes.
//!
//! Costs are multiply-accumulate counts (one MAC per weight tap).
//! Elementwise work (normalization, activation, pooling sums, residual
//! adds, softmax) goes into a separate bucket and is excluded from the
//! headline MAC totals and ratios. Callers that prefer counting a MAC as
//! two floating point operations can double the numbers on display.
//!
//! Spatial position counts use the full scene extent `h * w` for every
//! layer in image mode and the full declared window `m * m` in
//! patch mode; border shrink inside the network is ignored. Spectral
//! extents and channel counts are exact, taken from shape inference.
//! Under this convention the per-layer cost ratio between classifying
//! every pixel patch-by-patch and classifying the scene in one pass is
//! exactly `m * m` for every layer that does arithmetic.

use alloc::string::String;
use alloc::vec::Vec;

use crate::ir::{summarize_violations, GraphError, LayerKind, NetworkGraph, ShapeReport};

/// Cost of one layer. Image-mode numbers cover the whole scene; patch
/// mode numbers cover one pixel (one `m * m` window).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub index: usize,
    pub id: String,
    pub kind: &'static str,
    pub image_macs: u128,
    pub patch_macs_per_pixel: u128,
    pub image_elementwise: u128,
    pub patch_elementwise_per_pixel: u128,
}

impl LayerCost {
    /// Exact whole-scene patch/image MAC ratio, when it divides evenly.
    pub fn macs_ratio_exact(&self, num_pixels: u128) -> Option<u128> {
        let total = self.patch_macs_per_pixel.checked_mul(num_pixels)?;
        if self.image_macs == 0 || total % self.image_macs != 0 {
            return None;
        }
        Some(total / self.image_macs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub height: usize,
    pub width: usize,
    /// Declared sample size m; a patch costs the m-by-m window price.
    pub sample_size: usize,
    /// Pixels classified when every position is predicted.
    pub num_pixels: u128,
    pub layers: Vec<LayerCost>,
    pub image_macs: u128,
    pub patch_macs_per_pixel: u128,
    pub image_elementwise: u128,
    pub patch_elementwise_per_pixel: u128,
}

impl FlopsReport {
    /// MACs spent classifying every pixel individually.
    pub fn patch_macs_total(&self) -> u128 {
        self.patch_macs_per_pixel * self.num_pixels
    }

    /// Whole-scene cost ratio patch mode / image mode.
    pub fn macs_ratio(&self) -> f64 {
        if self.image_macs == 0 {
            return 0.0;
        }
        self.patch_macs_total() as f64 / self.image_macs as f64
    }
}

/// Per-position MAC and elementwise cost of one layer given its input
/// and output dims (spatial extents in the dims are ignored).
fn per_position_cost(kind: &LayerKind, input: &[usize], output: &[usize]) -> (u128, u128) {
    // Product of the non-spatial output dims: c, or c * d for rank 4.
    let channel_volume = |dims: &[usize]| -> u128 {
        dims[..dims.len().saturating_sub(2)]
            .iter()
            .map(|&d| d as u128)
            .product()
    };
    match kind {
        LayerKind::Conv2d(c) => {
            let macs = c.out_channels as u128 * c.in_channels as u128 * (c.kh * c.kw) as u128;
            (macs, 0)
        }
        LayerKind::Conv3d(c) => {
            // output = [c_out, d_out, h, w]; every output depth position
            // pays the full kernel.
            let d_out = output[1] as u128;
            let macs = d_out
                * c.out_channels as u128
                * c.in_channels as u128
                * (c.kd * c.kh * c.kw) as u128;
            (macs, 0)
        }
        LayerKind::Fc(fc) => ((fc.in_features * fc.out_features) as u128, 0),
        LayerKind::AvgPool2d(p) => {
            let c = output[0] as u128;
            (0, c * (p.kernel.0 * p.kernel.1) as u128)
        }
        LayerKind::GlobalAvgPool => {
            let c = output[0] as u128;
            (0, c * (input[1] * input[2]) as u128)
        }
        LayerKind::BatchNorm(_) | LayerKind::Relu | LayerKind::Softmax => {
            (0, channel_volume(output))
        }
        LayerKind::ResidualEnd => (0, channel_volume(output)),
        LayerKind::CollapseSpectral | LayerKind::ResidualBegin => (0, 0),
    }
}

/// Counts the arithmetic both prediction modes spend on an `h` by `w`
/// scene. Requires an image-runnable network, since the comparison is
/// meaningless for networks that cannot run image-to-image.
pub fn count_flops(net: &NetworkGraph, h: usize, w: usize) -> Result<FlopsReport, GraphError> {
    let violations = net.validate_tppi();
    if !violations.is_empty() {
        return Err(GraphError::NotImageRunnable {
            summary: summarize_violations(&violations),
        });
    }
    let report: ShapeReport = net.shape_infer(h, w)?;
    let m = net.input.sample_size;
    let image_positions = (h * w) as u128;
    let patch_positions = (m * m) as u128;

    let mut layers = Vec::with_capacity(net.layers.len());
    let mut image_macs = 0u128;
    let mut patch_macs_per_pixel = 0u128;
    let mut image_elementwise = 0u128;
    let mut patch_elementwise_per_pixel = 0u128;
    for (index, layer) in net.layers.iter().enumerate() {
        let (macs, elementwise) =
            per_position_cost(&layer.kind, report.input_of(index), &report.layers[index].output);
        let cost = LayerCost {
            index,
            id: layer.id.clone(),
            kind: layer.kind.name(),
            image_macs: macs * image_positions,
            patch_macs_per_pixel: macs * patch_positions,
            image_elementwise: elementwise * image_positions,
            patch_elementwise_per_pixel: elementwise * patch_positions,
        };
        image_macs += cost.image_macs;
        patch_macs_per_pixel += cost.patch_macs_per_pixel;
        image_elementwise += cost.image_elementwise;
        patch_elementwise_per_pixel += cost.patch_elementwise_per_pixel;
        layers.push(cost);
    }
    Ok(FlopsReport {
        height: h,
        width: w,
        sample_size: m,
        num_pixels: image_positions,
        layers,
        image_macs,
        patch_macs_per_pixel,
        image_elementwise,
        patch_elementwise_per_pixel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{
        Conv2dLayer, Conv3dLayer, FcLayer, InputRank, InputSpec, LayerSpec, NetworkGraph,
    };
    use alloc::borrow::ToOwned;
    use alloc::vec;

    fn conv2d(id: &str, c_in: usize, c_out: usize, k: usize) -> LayerSpec {
        LayerSpec::new(
            id,
            LayerKind::Conv2d(Conv2dLayer {
                in_channels: c_in,
                out_channels: c_out,
                kh: k,
                kw: k,
                stride_h: 1,
                stride_w: 1,
                pad: 0,
                weights: None,
                bias: None,
            }),
        )
    }

    fn conv3d(id: &str, c_in: usize, c_out: usize, kd: usize, sd: usize, pd: usize) -> LayerSpec {
        LayerSpec::new(
            id,
            LayerKind::Conv3d(Conv3dLayer {
                in_channels: c_in,
                out_channels: c_out,
                kd,
                kh: 1,
                kw: 1,
                stride_d: sd,
                stride_h: 1,
                stride_w: 1,
                pad_d: pd,
                pad_hw: 0,
                weights: None,
                bias: None,
            }),
        )
    }

    /// Spectral stem (200 bands, depth stride 2 then a padded depth
    /// conv), collapse, pointwise reduction, two spatial convolutions.
    fn spectral_net() -> NetworkGraph {
        NetworkGraph {
            name: "cost".to_owned(),
            input: InputSpec {
                bands: 200,
                sample_size: 7,
                rank: InputRank::Rank4,
            },
            num_classes: 16,
            layers: vec![
                conv3d("stem", 1, 24, 7, 2, 0),
                conv3d("deep", 24, 24, 7, 1, 3),
                LayerSpec::new("fold", LayerKind::CollapseSpectral),
                conv2d("mix", 24 * 97, 128, 1),
                conv2d("spat", 128, 24, 3),
                conv2d("head", 24, 16, 5),
            ],
        }
    }

    #[test]
    fn image_mode_closed_forms() {
        let (h, w) = (145usize, 145usize);
        let hw = (h * w) as u128;
        let report = count_flops(&spectral_net(), h, w).unwrap();

        // Depth-strided stem: 200 -> 97 output depths, kernel 7, 1 -> 24.
        assert_eq!(report.layers[0].image_macs, hw * 97 * 24 * 7 * 1);
        // Depth-preserving conv: 97 depths, kernel 7, 24 -> 24 channels.
        assert_eq!(report.layers[1].image_macs, hw * 97 * 24 * 7 * 24);
        // Pointwise mix after folding: 1x1, (24 * 97) -> 128.
        assert_eq!(report.layers[3].image_macs, hw * 1 * 128 * 24 * 97);
        // Spatial 3x3 between 128 and 24 channels.
        assert_eq!(report.layers[4].image_macs, hw * 128 * 3 * 3 * 24);

        let total: u128 = report.layers.iter().map(|l| l.image_macs).sum();
        assert_eq!(report.image_macs, total);
        assert_eq!(report.num_pixels, hw);
    }

    #[test]
    fn patch_mode_pays_window_price_per_pixel() {
        let report = count_flops(&spectral_net(), 145, 145).unwrap();
        // One pixel costs the whole 7x7 window at every layer.
        assert_eq!(
            report.layers[1].patch_macs_per_pixel,
            (7 * 7) as u128 * 97 * 24 * 7 * 24
        );
        // Every arithmetic layer repeats m*m times more work per scene.
        for layer in &report.layers {
            if layer.image_macs == 0 {
                continue;
            }
            assert_eq!(
                layer.macs_ratio_exact(report.num_pixels),
                Some(49),
                "layer {}",
                layer.id
            );
        }
        assert_eq!(report.macs_ratio(), 49.0);
        assert_eq!(report.patch_macs_total(), report.image_macs * 49);
    }

    #[test]
    fn elementwise_bucket_is_separate() {
        let net = NetworkGraph {
            name: "e".to_owned(),
            input: InputSpec {
                bands: 8,
                sample_size: 3,
                rank: InputRank::Rank3,
            },
            num_classes: 4,
            layers: vec![
                conv2d("a", 8, 4, 3),
                LayerSpec::new("act", LayerKind::Relu),
            ],
        };
        let report = count_flops(&net, 10, 10).unwrap();
        assert_eq!(report.layers[1].image_macs, 0);
        assert_eq!(report.layers[1].image_elementwise, 100 * 4);
        assert_eq!(report.image_macs, 100 * 4 * 8 * 9);
        assert_eq!(report.image_elementwise, 100 * 4);
    }

    #[test]
    fn rejects_networks_that_cannot_run_on_images() {
        let net = NetworkGraph {
            name: "bad".to_owned(),
            input: InputSpec {
                bands: 8,
                sample_size: 5,
                rank: InputRank::Rank3,
            },
            num_classes: 4,
            layers: vec![LayerSpec::new(
                "fc",
                LayerKind::Fc(FcLayer {
                    in_features: 200,
                    out_features: 4,
                    weights: None,
                    bias: None,
                }),
            )],
        };
        let err = count_flops(&net, 10, 10).unwrap_err();
        match err {
            GraphError::NotImageRunnable { summary } => {
                assert!(summary.contains("rule 1"), "{summary}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
