//! JSON report documents emitted by the commands. Every document
//! carries `schema_version` and `report` so downstream tooling can
//! dispatch without guessing; field sets are locked by golden-file
//! tests.

use std::path::Path;

use serde::Serialize;

use tppi_core::infer::EquivalenceReport;
use tppi_core::metrics::MetricsReport;
use tppi_core::train::TrainLog;
use tppi_core::transform::TransformReport;

use crate::error::CliError;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize)]
pub struct TransformDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub net_in: String,
    pub net_out: String,
    pub retrain_required: bool,
    pub receptive_field_before: usize,
    pub receptive_field_after: usize,
    pub rewrites: Vec<RewriteDoc>,
}

#[derive(Serialize)]
pub struct RewriteDoc {
    pub layer_id: String,
    pub rule: String,
    pub weight_preserving: bool,
}

impl TransformDoc {
    pub fn new(net_in: &str, net_out: &str, report: &TransformReport) -> Self {
        TransformDoc {
            schema_version: SCHEMA_VERSION,
            report: "transform",
            net_in: net_in.to_string(),
            net_out: net_out.to_string(),
            retrain_required: report.retrain_required,
            receptive_field_before: report.receptive_field_before,
            receptive_field_after: report.receptive_field_after,
            rewrites: report
                .rewrites
                .iter()
                .map(|r| RewriteDoc {
                    layer_id: r.layer_id.clone(),
                    rule: r.rule.to_string(),
                    weight_preserving: r.weight_preserving,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
pub struct MetricsDoc {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// Classes absent from the evaluated pixels carry null.
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion: Vec<u64>,
    pub pixels_evaluated: u64,
}

impl MetricsDoc {
    pub fn new(m: &MetricsReport) -> Self {
        MetricsDoc {
            overall_accuracy: m.overall_accuracy,
            average_accuracy: m.average_accuracy,
            kappa: m.kappa,
            per_class_recall: m
                .per_class_recall
                .iter()
                .map(|&r| if r.is_nan() { None } else { Some(r) })
                .collect(),
            confusion: m.confusion.clone(),
            pixels_evaluated: m.pixels_evaluated,
        }
    }
}

#[derive(Serialize)]
pub struct PredictDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub net: String,
    pub cube: String,
    pub mode: String,
    pub padded: bool,
    pub height: usize,
    pub width: usize,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsDoc>,
}

#[derive(Serialize)]
pub struct VerifyDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub net: String,
    pub cube: String,
    pub pixels_compared: usize,
    pub max_abs_logit_diff: f64,
    pub argmax_disagreements: usize,
    pub disagreeing_pixels: Vec<(usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerifyDoc {
    pub fn new(net: &str, cube: &str, r: &EquivalenceReport) -> Self {
        VerifyDoc {
            schema_version: SCHEMA_VERSION,
            report: "verify",
            net: net.to_string(),
            cube: cube.to_string(),
            pixels_compared: r.pixels_compared,
            max_abs_logit_diff: r.max_abs_logit_diff,
            argmax_disagreements: r.argmax_disagreements,
            disagreeing_pixels: r.disagreeing_pixels.clone(),
            tolerance: r.tolerance,
            passed: r.passed,
        }
    }
}

#[derive(Serialize)]
pub struct TrainDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub net: String,
    pub cube: String,
    pub epochs: Vec<EpochDoc>,
    pub best_epoch: usize,
    pub best_val_oa: f64,
    pub wall_seconds: f64,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
pub struct EpochDoc {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_oa: f64,
}

impl TrainDoc {
    pub fn new(net: &str, cube: &str, log: &TrainLog) -> Self {
        TrainDoc {
            schema_version: SCHEMA_VERSION,
            report: "train",
            net: net.to_string(),
            cube: cube.to_string(),
            epochs: log
                .epochs
                .iter()
                .map(|e| EpochDoc {
                    epoch: e.epoch,
                    train_loss: e.train_loss,
                    val_oa: e.val_oa,
                })
                .collect(),
            best_epoch: log.best_epoch,
            best_val_oa: log.best_val_oa,
            wall_seconds: log.wall_seconds,
            notes: log.notes.clone(),
        }
    }
}

#[derive(Serialize)]
pub struct FlopsDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub net: String,
    pub height: usize,
    pub width: usize,
    pub sample_size: usize,
    /// "macs" counts one multiply-accumulate as 1; "flops" doubles it
    /// into separate multiplies and adds.
    pub counting: &'static str,
    pub layers: Vec<LayerCostDoc>,
    pub image_macs: u64,
    pub patch_macs_per_pixel: u64,
    pub patch_macs_total: u64,
    pub image_elementwise: u64,
    pub patch_elementwise_per_pixel: u64,
    pub macs_ratio: f64,
    pub sample_size_squared: usize,
}

#[derive(Serialize)]
pub struct LayerCostDoc {
    pub index: usize,
    pub id: String,
    pub kind: String,
    pub image_macs: u64,
    pub patch_macs_per_pixel: u64,
    /// Whole-scene patch/image ratio when it is an exact integer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<u64>,
}

#[derive(Serialize)]
pub struct MachineDoc {
    pub os: &'static str,
    pub arch: &'static str,
    pub threads: usize,
}

impl MachineDoc {
    pub fn current() -> Self {
        MachineDoc {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Serialize)]
pub struct BenchModeDoc {
    pub mode: String,
    pub seconds_median: f64,
    pub seconds_min: f64,
    pub seconds_max: f64,
    /// Time spent cutting the scene into windows, measured by a
    /// dedicated extraction-only pass; patch mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extract_seconds_median: Option<f64>,
    pub macs: u64,
}

#[derive(Serialize)]
pub struct BenchDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub net: String,
    pub cube: String,
    pub seed: u64,
    pub runs: usize,
    pub machine: MachineDoc,
    pub modes: Vec<BenchModeDoc>,
    /// patch median / image median, when both modes were timed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

#[derive(Serialize)]
pub struct SweepRowDoc {
    pub m: usize,
    pub patch_time: f64,
    pub image_time: f64,
    pub patch_flops: u64,
    pub image_flops: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oa: Option<f64>,
}

#[derive(Serialize)]
pub struct SweepDoc {
    pub schema_version: u64,
    pub report: &'static str,
    pub cube: String,
    pub seed: u64,
    pub runs: usize,
    pub machine: MachineDoc,
    pub rows: Vec<SweepRowDoc>,
}

pub fn macs_u64(value: u128, what: &str) -> Result<u64, CliError> {
    u64::try_from(value)
        .map_err(|_| CliError::Usage(format!("{what} of {value} MACs overflows the report format")))
}

pub fn write_json<T: Serialize>(doc: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(doc).expect("report types serialize");
    std::fs::write(path, text).map_err(CliError::io(path))
}
