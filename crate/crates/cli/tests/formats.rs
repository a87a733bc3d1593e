//! File-format contracts: bit-exact round trips, rejection of
//! malformed input with precise paths and counts, the pixmap byte
//! layout, and golden-file locks on every report schema.

use std::path::Path;

use tppi_cli::error::CliError;
use tppi_cli::netfile::{load_network, network_from_json, save_network};
use tppi_cli::raster::{
    load_cube, load_gt, load_split_mask, map_to_ppm, parse_palette, palette_to_text, save_cube,
    save_gt, save_probability_planes, save_split_mask, SplitMask,
};
use tppi_cli::report::{self, write_json};

use tppi_core::infer::{ClassificationMap, MapProvenance, PredictMode};
use tppi_core::metrics::MetricsReport;
use tppi_core::presets::{random_tppi_net, small_tppi, ssrn_like};
use tppi_core::scene::{gen_synthetic, GroundTruth, SceneSpec};
use tppi_core::train::{EpochRecord, TrainLog};
use tppi_core::transform::transform;

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

#[test]
fn network_round_trip_is_bit_exact() {
    let dir = tmp();
    for seed in [0u64, 5, 11] {
        let net = random_tppi_net(seed, 6, 4);
        let path = dir.path().join(format!("net{seed}.json"));
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back, net);
    }
    // A network spanning every layer kind, including head layers that
    // the random generator never emits.
    let net = ssrn_like(12, 5);
    let path = dir.path().join("full.json");
    save_network(&net, &path).unwrap();
    assert_eq!(load_network(&path).unwrap(), net);
}

fn load_with(mutate: impl FnOnce(&mut serde_json::Value)) -> Result<(), String> {
    let mut net = small_tppi(4, 3);
    tppi_core::presets::init_weights(&mut net, 1);
    let mut doc = tppi_cli::netfile::network_to_json(&net);
    mutate(&mut doc);
    network_from_json(&doc).map(|_| ()).map_err(|e| e.to_string())
}

#[test]
fn schema_violations_carry_pointer_paths() {
    let err = load_with(|doc| {
        doc["layers"][0]["stride"][0] = serde_json::json!(0);
    })
    .unwrap_err();
    assert_eq!(err, "/layers/0/stride/0: 0 is not allowed, minimum is 1");

    let err = load_with(|doc| {
        doc["layers"][2]["weights"] = serde_json::json!("AAAAAA==");
    })
    .unwrap_err();
    assert_eq!(err, "/layers/2/weights: expected 5184 values, found 1");

    let err = load_with(|doc| {
        doc["layers"][1]["type"] = serde_json::json!("tanh");
    })
    .unwrap_err();
    assert_eq!(err, "/layers/1/type: unknown layer type \"tanh\"");

    let err = load_with(|doc| {
        doc.as_object_mut().unwrap().remove("bands");
    })
    .unwrap_err();
    assert_eq!(err, "/bands: missing field");

    let err = load_with(|doc| {
        doc["input_rank"] = serde_json::json!(5);
    })
    .unwrap_err();
    assert_eq!(err, "/input_rank: expected 3 or 4");

    let err = load_with(|doc| {
        doc["format_version"] = serde_json::json!(99);
    })
    .unwrap_err();
    assert!(err.starts_with("/format_version: unsupported version 99"));

    // Blob whose byte length cannot hold whole f32 values.
    let err = load_with(|doc| {
        doc["layers"][0]["bias"] = serde_json::json!("AAAA");
    })
    .unwrap_err();
    assert!(err.contains("/layers/0/bias"), "{err}");
    assert!(err.contains("not a multiple of 4"), "{err}");
}

#[test]
fn cube_round_trip_and_size_checks() {
    let dir = tmp();
    let (cube, _) = gen_synthetic(&SceneSpec::new(9, 7, 5, 3)).unwrap();
    let cube = cube.normalize();
    let path = dir.path().join("scene.cube.json");
    save_cube(&cube, &path).unwrap();
    let back = load_cube(&path).unwrap();
    assert_eq!(back.name, cube.name);
    assert_eq!(
        (back.height, back.width, back.bands),
        (cube.height, cube.width, cube.bands)
    );
    for (a, b) in back.data().iter().zip(cube.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(back.normalization, cube.normalization);

    // Truncated payload is rejected with byte counts, not truncated in.
    let raw = dir.path().join("scene.cube.raw");
    let bytes = std::fs::read(&raw).unwrap();
    std::fs::write(&raw, &bytes[..bytes.len() - 4]).unwrap();
    let err = load_cube(&path).unwrap_err().to_string();
    assert!(err.contains(&format!("payload holds {} bytes", bytes.len() - 4)), "{err}");
    assert!(err.contains(&format!("requires {}", bytes.len())), "{err}");

    // A non-finite value in the payload is rejected with a count.
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&raw, &bad).unwrap();
    let err = load_cube(&path).unwrap_err().to_string();
    assert!(err.contains("1 non-finite value"), "{err}");
}

#[test]
fn gt_round_trip_keeps_names_and_palette() {
    let dir = tmp();
    let gt = GroundTruth::with_names_palette(
        2,
        3,
        vec![0, 1, 2, 2, 1, 0],
        vec!["meadow".to_string(), "road".to_string()],
        vec![[10, 200, 30], [90, 90, 90]],
    )
    .unwrap();
    let path = dir.path().join("labels.gt.json");
    save_gt(&gt, &path).unwrap();
    let back = load_gt(&path).unwrap();
    assert_eq!(back.labels, gt.labels);
    assert_eq!(back.class_names, gt.class_names);
    assert_eq!(back.palette, gt.palette);
    assert_eq!(back.num_classes, 2);
}

#[test]
fn split_mask_round_trip_and_code_bound() {
    let dir = tmp();
    let mask = SplitMask {
        height: 2,
        width: 2,
        codes: vec![0, 1, 2, 3],
    };
    let path = dir.path().join("roles.json");
    save_split_mask(&mask, &path).unwrap();
    let back = load_split_mask(&path).unwrap();
    assert_eq!(back.codes, mask.codes);

    std::fs::write(dir.path().join("roles.raw"), 9u16.to_le_bytes()).unwrap();
    let bad = SplitMask {
        height: 1,
        width: 1,
        codes: vec![0],
    };
    save_split_mask(&bad, &path).unwrap();
    std::fs::write(dir.path().join("roles.raw"), 9u16.to_le_bytes()).unwrap();
    let err = load_split_mask(&path).unwrap_err().to_string();
    assert!(err.contains("split code 9"), "{err}");
}

fn map_2x2() -> ClassificationMap {
    ClassificationMap {
        height: 2,
        width: 2,
        num_classes: 2,
        class_of: vec![1, 2, 2, 1],
        logits: None,
        provenance: MapProvenance {
            mode: PredictMode::Image,
            padded: true,
            net: "test".to_string(),
        },
    }
}

#[test]
fn ppm_bytes_are_exact() {
    let palette = [[255, 0, 0], [0, 255, 0]];
    let ppm = map_to_ppm(&map_2x2(), &palette).unwrap();
    let mut want = b"P6\n2 2\n255\n".to_vec();
    want.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 255, 0, 255, 0, 0]);
    assert_eq!(ppm, want);

    // Class 0 renders black even with no palette entry for it.
    let mut map = map_2x2();
    map.class_of[3] = 0;
    let ppm = map_to_ppm(&map, &palette).unwrap();
    assert_eq!(&ppm[ppm.len() - 3..], &[0, 0, 0]);

    let missing = map_to_ppm(&map_2x2(), &palette[..1]);
    assert!(missing.unwrap_err().to_string().contains("class 2"));
}

#[test]
fn palette_text_round_trips_and_rejects_gaps() {
    let names = vec!["water".to_string(), "dry soil".to_string()];
    let palette = vec![[0, 0, 255], [120, 80, 10]];
    let text = palette_to_text(&names, &palette);
    assert_eq!(text, "1 0 0 255 water\n2 120 80 10 dry soil\n");
    let (back_names, back_palette) = parse_palette(&text, Path::new("mem")).unwrap();
    assert_eq!(back_names, names);
    assert_eq!(back_palette, palette);

    let err = parse_palette("1 0 0 255 water\n3 1 2 3 x\n", Path::new("mem"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("missing 2"), "{err}");
    let err = parse_palette("1 0 0\n", Path::new("mem")).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn probability_planes_are_normalized() {
    let dir = tmp();
    let mut map = map_2x2();
    map.logits = Some(vec![2.0, -1.0, 0.0, 3.5, -4.0, 4.0, 0.25, 0.25]);
    let path = dir.path().join("probs.json");
    save_probability_planes(&map, &path).unwrap();

    let bytes = std::fs::read(dir.path().join("probs.raw")).unwrap();
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    assert_eq!(values.len(), 2 * 4);
    for pixel in 0..4 {
        let sum = values[pixel] + values[4 + pixel];
        assert!((sum - 1.0).abs() <= 1e-6, "pixel {pixel} sums to {sum}");
    }
    // Higher logit, higher probability.
    assert!(values[0] > values[4]);

    let header: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(header["planes"], 2);
    assert_eq!(header["order"], "class-sequential");

    let bare = map_2x2();
    assert!(matches!(
        save_probability_planes(&bare, &path),
        Err(CliError::Usage(_))
    ));
}

// Golden-file locks: serializing each report document must produce the
// committed JSON. Set BLESS=1 to regenerate after an intentional schema
// change.
fn check_golden<T: serde::Serialize>(doc: &T, name: &str) {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("BLESS").is_some() {
        write_json(doc, &golden).unwrap();
        return;
    }
    let want: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&golden).unwrap_or_else(|_| {
            panic!("missing golden file {}; run with BLESS=1", golden.display())
        }))
        .unwrap();
    let got = serde_json::to_value(doc).unwrap();
    assert_eq!(got, want, "schema drift in {name}; run with BLESS=1 if intended");
}

#[test]
fn report_schemas_match_golden_files() {
    let net = ssrn_like(20, 9);
    let (rewritten, rep) = transform(&net).unwrap();
    check_golden(
        &report::TransformDoc::new(&net.name, &rewritten.name, &rep),
        "transform.json",
    );

    let metrics = MetricsReport::from_confusion(&[40, 10, 10, 40], 2).unwrap();
    check_golden(
        &report::PredictDoc {
            schema_version: report::SCHEMA_VERSION,
            report: "predict",
            net: "small-tppi".to_string(),
            cube: "synthetic".to_string(),
            mode: "image".to_string(),
            padded: true,
            height: 10,
            width: 10,
            seconds: 0.125,
            metrics: Some(report::MetricsDoc::new(&metrics)),
        },
        "predict.json",
    );

    check_golden(
        &report::VerifyDoc::new(
            "small-tppi",
            "synthetic",
            &tppi_core::infer::EquivalenceReport {
                pixels_compared: 100,
                max_abs_logit_diff: 0.0,
                argmax_disagreements: 0,
                disagreeing_pixels: vec![],
                tolerance: 0.0,
                passed: true,
            },
        ),
        "verify.json",
    );

    let log = TrainLog {
        epochs: vec![
            EpochRecord {
                epoch: 1,
                train_loss: 1.2,
                val_oa: 0.5,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.9,
                val_oa: 0.75,
            },
        ],
        best_epoch: 2,
        best_val_oa: 0.75,
        wall_seconds: 3.5,
        notes: vec!["normalization statistics calibrated on 100 patches".to_string()],
    };
    check_golden(&report::TrainDoc::new("small-tppi", "synthetic", &log), "train.json");

    let flops = tppi_core::flops::count_flops(&small_tppi(8, 4), 16, 16).unwrap();
    let layers = flops
        .layers
        .iter()
        .map(|l| report::LayerCostDoc {
            index: l.index,
            id: l.id.clone(),
            kind: l.kind.to_string(),
            image_macs: l.image_macs as u64,
            patch_macs_per_pixel: l.patch_macs_per_pixel as u64,
            ratio: l.macs_ratio_exact(flops.num_pixels).map(|r| r as u64),
        })
        .collect();
    check_golden(
        &report::FlopsDoc {
            schema_version: report::SCHEMA_VERSION,
            report: "flops",
            net: "small-tppi".to_string(),
            height: 16,
            width: 16,
            sample_size: flops.sample_size,
            counting: "macs",
            layers,
            image_macs: flops.image_macs as u64,
            patch_macs_per_pixel: flops.patch_macs_per_pixel as u64,
            patch_macs_total: flops.patch_macs_total() as u64,
            image_elementwise: flops.image_elementwise as u64,
            patch_elementwise_per_pixel: flops.patch_elementwise_per_pixel as u64,
            macs_ratio: flops.macs_ratio(),
            sample_size_squared: flops.sample_size * flops.sample_size,
        },
        "flops.json",
    );

    let machine = report::MachineDoc {
        os: "linux",
        arch: "x86_64",
        threads: 2,
    };
    check_golden(
        &report::BenchDoc {
            schema_version: report::SCHEMA_VERSION,
            report: "bench",
            net: "small-tppi".to_string(),
            cube: "synthetic".to_string(),
            seed: 1,
            runs: 5,
            machine,
            modes: vec![
                report::BenchModeDoc {
                    mode: "patch".to_string(),
                    seconds_median: 1.5,
                    seconds_min: 1.4,
                    seconds_max: 1.7,
                    extract_seconds_median: Some(0.2),
                    macs: 1_000_000,
                },
                report::BenchModeDoc {
                    mode: "image".to_string(),
                    seconds_median: 0.1,
                    seconds_min: 0.09,
                    seconds_max: 0.12,
                    extract_seconds_median: None,
                    macs: 40_000,
                },
            ],
            speedup: Some(15.0),
        },
        "bench.json",
    );

    check_golden(
        &report::SweepDoc {
            schema_version: report::SCHEMA_VERSION,
            report: "sweep",
            cube: "synthetic".to_string(),
            seed: 1,
            runs: 3,
            machine: report::MachineDoc {
                os: "linux",
                arch: "x86_64",
                threads: 2,
            },
            rows: vec![
                report::SweepRowDoc {
                    m: 3,
                    patch_time: 0.5,
                    image_time: 0.05,
                    patch_flops: 9_000,
                    image_flops: 1_000,
                    oa: Some(0.93),
                },
                report::SweepRowDoc {
                    m: 5,
                    patch_time: 1.0,
                    image_time: 0.05,
                    patch_flops: 25_000,
                    image_flops: 1_000,
                    oa: None,
                },
            ],
        },
        "sweep.json",
    );
}
