//! Raster containers. Every format is a small JSON header plus a raw
//! little-endian payload file named by the header's `payload` field and
//! resolved relative to the header's directory:
//!
//! - cube: `dtype: "f32le"`, band-sequential planes
//! - ground truth, class map, split mask: `dtype: "u16le"`, row-major
//! - probability planes: `dtype: "f32le"`, class-sequential planes
//!
//! Loaders reject size mismatches outright rather than truncate, and
//! round trips are bit-exact.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use tppi_core::infer::{ClassificationMap, MapProvenance, PredictMode};
use tppi_core::scene::{GroundTruth, HsiCube};

use crate::error::CliError;

pub const RASTER_FORMAT_VERSION: u64 = 1;

fn write_header(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value is a tree");
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn read_header(path: &Path, want_kind: &str) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.into(),
        message: format!("not valid JSON: {e}"),
    })?;
    let obj = root
        .as_object()
        .ok_or_else(|| format_err(path, "expected a JSON object"))?
        .clone();
    let version = obj.get("format_version").and_then(Value::as_u64);
    if version != Some(RASTER_FORMAT_VERSION) {
        return Err(format_err(
            path,
            format!("format_version must be {RASTER_FORMAT_VERSION}"),
        ));
    }
    let kind = obj.get("kind").and_then(Value::as_str).unwrap_or("");
    if kind != want_kind {
        return Err(format_err(
            path,
            format!("kind is {kind:?}, expected {want_kind:?}"),
        ));
    }
    Ok(obj)
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.into(),
        message: message.into(),
    }
}

fn header_usize(obj: &Map<String, Value>, key: &str, path: &Path) -> Result<usize, CliError> {
    obj.get(key)
        .and_then(Value::as_u64)
        .map(|n| n as usize)
        .ok_or_else(|| format_err(path, format!("missing or non-integer field {key:?}")))
}

/// Payload file sits beside the header; the header stores only its
/// file name so the pair can be moved together.
fn payload_path(header: &Path) -> PathBuf {
    let mut p = header.to_path_buf();
    p.set_extension("raw");
    p
}

fn payload_name(header: &Path) -> Result<String, CliError> {
    payload_path(header)
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| format_err(header, "cannot derive a payload file name"))
}

fn resolve_payload(header: &Path, obj: &Map<String, Value>) -> Result<PathBuf, CliError> {
    let name = obj
        .get("payload")
        .and_then(Value::as_str)
        .ok_or_else(|| format_err(header, "missing payload field"))?;
    Ok(header.parent().unwrap_or(Path::new(".")).join(name))
}

fn read_exact_payload(path: &Path, expected_bytes: usize) -> Result<Vec<u8>, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    if bytes.len() != expected_bytes {
        return Err(format_err(
            path,
            format!(
                "payload holds {} bytes, header requires {expected_bytes}",
                bytes.len()
            ),
        ));
    }
    Ok(bytes)
}

fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn u16_to_bytes(values: &[u16]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 2);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn bytes_to_u16(bytes: &[u8]) -> Vec<u16> {
    bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect()
}

pub fn save_cube(cube: &HsiCube, header: &Path) -> Result<(), CliError> {
    let normalization: Value = match &cube.normalization {
        Some(ranges) => ranges
            .iter()
            .map(|r| json!({"min": r.min, "max": r.max}))
            .collect(),
        None => Value::Null,
    };
    write_header(
        header,
        &json!({
            "format_version": RASTER_FORMAT_VERSION,
            "kind": "cube",
            "name": cube.name,
            "height": cube.height,
            "width": cube.width,
            "bands": cube.bands,
            "dtype": "f32le",
            "order": "band-sequential",
            "payload": payload_name(header)?,
            "normalization": normalization,
        }),
    )?;
    let payload = payload_path(header);
    std::fs::write(&payload, f32_to_bytes(cube.data())).map_err(CliError::io(&payload))
}

pub fn load_cube(header: &Path) -> Result<HsiCube, CliError> {
    let obj = read_header(header, "cube")?;
    let h = header_usize(&obj, "height", header)?;
    let w = header_usize(&obj, "width", header)?;
    let b = header_usize(&obj, "bands", header)?;
    for (key, want) in [("dtype", "f32le"), ("order", "band-sequential")] {
        let got = obj.get(key).and_then(Value::as_str).unwrap_or("");
        if got != want {
            return Err(format_err(header, format!("{key} is {got:?}, not {want:?}")));
        }
    }
    let name = obj.get("name").and_then(Value::as_str).unwrap_or("cube");
    let payload = resolve_payload(header, &obj)?;
    let bytes = read_exact_payload(&payload, b * h * w * 4)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut cube = HsiCube::new(name, h, w, b, data)?;
    if let Some(ranges) = obj.get("normalization").and_then(Value::as_array) {
        let mut rec = Vec::with_capacity(ranges.len());
        for r in ranges {
            let min = r.get("min").and_then(Value::as_f64);
            let max = r.get("max").and_then(Value::as_f64);
            match (min, max) {
                (Some(min), Some(max)) => rec.push(tppi_core::scene::BandRange {
                    min: min as f32,
                    max: max as f32,
                }),
                _ => return Err(format_err(header, "malformed normalization record")),
            }
        }
        if rec.len() != b {
            return Err(format_err(
                header,
                format!("normalization lists {} bands, cube has {b}", rec.len()),
            ));
        }
        cube.normalization = Some(rec);
    }
    Ok(cube)
}

pub fn save_gt(gt: &GroundTruth, header: &Path) -> Result<(), CliError> {
    let classes: Vec<Value> = (0..gt.num_classes)
        .map(|i| {
            json!({
                "id": i + 1,
                "name": gt.class_names[i],
                "rgb": gt.palette[i],
            })
        })
        .collect();
    write_header(
        header,
        &json!({
            "format_version": RASTER_FORMAT_VERSION,
            "kind": "ground-truth",
            "height": gt.height,
            "width": gt.width,
            "dtype": "u16le",
            "payload": payload_name(header)?,
            "classes": classes,
        }),
    )?;
    let payload = payload_path(header);
    std::fs::write(&payload, u16_to_bytes(&gt.labels)).map_err(CliError::io(&payload))
}

pub fn load_gt(header: &Path) -> Result<GroundTruth, CliError> {
    let obj = read_header(header, "ground-truth")?;
    let h = header_usize(&obj, "height", header)?;
    let w = header_usize(&obj, "width", header)?;
    let payload = resolve_payload(header, &obj)?;
    let labels = bytes_to_u16(&read_exact_payload(&payload, h * w * 2)?);
    let classes = obj
        .get("classes")
        .and_then(Value::as_array)
        .ok_or_else(|| format_err(header, "missing classes array"))?;
    let mut names = Vec::with_capacity(classes.len());
    let mut palette = Vec::with_capacity(classes.len());
    for (i, c) in classes.iter().enumerate() {
        let id = c.get("id").and_then(Value::as_u64);
        if id != Some(i as u64 + 1) {
            return Err(format_err(
                header,
                format!("classes[{i}] id must be {}", i + 1),
            ));
        }
        names.push(
            c.get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| format_err(header, format!("classes[{i}] has no name")))?
                .to_string(),
        );
        let rgb = c.get("rgb").and_then(Value::as_array);
        let rgb: Vec<u8> = rgb
            .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as u8).collect())
            .unwrap_or_default();
        if rgb.len() != 3 {
            return Err(format_err(header, format!("classes[{i}] rgb must be [r, g, b]")));
        }
        palette.push([rgb[0], rgb[1], rgb[2]]);
    }
    Ok(GroundTruth::with_names_palette(h, w, labels, names, palette)?)
}

/// Pixel roles assigned by a dataset split, stored like a label raster:
/// 0 none, 1 train, 2 validation, 3 test.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMask {
    pub height: usize,
    pub width: usize,
    pub codes: Vec<u16>,
}

pub const SPLIT_NONE: u16 = 0;
pub const SPLIT_TRAIN: u16 = 1;
pub const SPLIT_VAL: u16 = 2;
pub const SPLIT_TEST: u16 = 3;

pub fn save_split_mask(mask: &SplitMask, header: &Path) -> Result<(), CliError> {
    write_header(
        header,
        &json!({
            "format_version": RASTER_FORMAT_VERSION,
            "kind": "split-mask",
            "height": mask.height,
            "width": mask.width,
            "dtype": "u16le",
            "payload": payload_name(header)?,
            "codes": {"0": "none", "1": "train", "2": "val", "3": "test"},
        }),
    )?;
    let payload = payload_path(header);
    std::fs::write(&payload, u16_to_bytes(&mask.codes)).map_err(CliError::io(&payload))
}

pub fn load_split_mask(header: &Path) -> Result<SplitMask, CliError> {
    let obj = read_header(header, "split-mask")?;
    let h = header_usize(&obj, "height", header)?;
    let w = header_usize(&obj, "width", header)?;
    let payload = resolve_payload(header, &obj)?;
    let codes = bytes_to_u16(&read_exact_payload(&payload, h * w * 2)?);
    if let Some(badv) = codes.iter().find(|&&c| c > SPLIT_TEST) {
        return Err(format_err(
            &payload,
            format!("split code {badv} is outside 0..=3"),
        ));
    }
    Ok(SplitMask {
        height: h,
        width: w,
        codes,
    })
}

/// The class raster payload carries only the per-pixel decisions, so
/// maps produced by different prediction modes can be compared byte for
/// byte; mode and provenance live in the header.
pub fn save_map(map: &ClassificationMap, header: &Path) -> Result<(), CliError> {
    write_header(
        header,
        &json!({
            "format_version": RASTER_FORMAT_VERSION,
            "kind": "class-map",
            "height": map.height,
            "width": map.width,
            "num_classes": map.num_classes,
            "dtype": "u16le",
            "payload": payload_name(header)?,
            "mode": map.provenance.mode.as_str(),
            "padded": map.provenance.padded,
            "net": map.provenance.net,
        }),
    )?;
    let payload = payload_path(header);
    std::fs::write(&payload, u16_to_bytes(&map.class_of)).map_err(CliError::io(&payload))
}

pub fn load_map(header: &Path) -> Result<ClassificationMap, CliError> {
    let obj = read_header(header, "class-map")?;
    let h = header_usize(&obj, "height", header)?;
    let w = header_usize(&obj, "width", header)?;
    let num_classes = header_usize(&obj, "num_classes", header)?;
    let payload = resolve_payload(header, &obj)?;
    let class_of = bytes_to_u16(&read_exact_payload(&payload, h * w * 2)?);
    if let Some(badv) = class_of.iter().find(|&&c| c as usize > num_classes) {
        return Err(format_err(
            &payload,
            format!("class {badv} exceeds declared class count {num_classes}"),
        ));
    }
    let mode = match obj.get("mode").and_then(Value::as_str) {
        Some("patch") => PredictMode::Patch,
        Some("tiled") => PredictMode::Tiled,
        _ => PredictMode::Image,
    };
    Ok(ClassificationMap {
        height: h,
        width: w,
        num_classes,
        class_of,
        logits: None,
        provenance: MapProvenance {
            mode,
            padded: obj.get("padded").and_then(Value::as_bool).unwrap_or(false),
            net: obj
                .get("net")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string(),
        },
    })
}

/// Binary portable pixmap (P6): `P6\n<width> <height>\n255\n` followed
/// by row-major RGB bytes. Class 0 renders black.
pub fn map_to_ppm(map: &ClassificationMap, palette: &[[u8; 3]]) -> Result<Vec<u8>, CliError> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.reserve(map.class_of.len() * 3);
    for &class in &map.class_of {
        let rgb = if class == 0 {
            [0, 0, 0]
        } else {
            *palette
                .get(class as usize - 1)
                .ok_or_else(|| CliError::Usage(format!("class {class} has no palette entry")))?
        };
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}

pub fn save_ppm(map: &ClassificationMap, palette: &[[u8; 3]], path: &Path) -> Result<(), CliError> {
    std::fs::write(path, map_to_ppm(map, palette)?).map_err(CliError::io(path))
}

/// Palette text format: one `class_id R G B name` line per class.
pub fn palette_to_text(names: &[String], palette: &[[u8; 3]]) -> String {
    let mut out = String::new();
    for (i, rgb) in palette.iter().enumerate() {
        let name = names.get(i).map(String::as_str).unwrap_or("unnamed");
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            i + 1,
            rgb[0],
            rgb[1],
            rgb[2],
            name
        ));
    }
    out
}

pub fn parse_palette(text: &str, path: &Path) -> Result<(Vec<String>, Vec<[u8; 3]>), CliError> {
    let mut entries: Vec<(usize, [u8; 3], String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse_num = |p: Option<&str>| p.and_then(|s| s.parse::<usize>().ok());
        let id = parse_num(parts.next());
        let r = parse_num(parts.next());
        let g = parse_num(parts.next());
        let b = parse_num(parts.next());
        let name = parts.collect::<Vec<_>>().join(" ");
        match (id, r, g, b) {
            (Some(id), Some(r), Some(g), Some(b))
                if id >= 1 && r <= 255 && g <= 255 && b <= 255 && !name.is_empty() =>
            {
                entries.push((id, [r as u8, g as u8, b as u8], name));
            }
            _ => {
                return Err(format_err(
                    path,
                    format!("line {}: expected \"class_id R G B name\"", lineno + 1),
                ));
            }
        }
    }
    entries.sort_by_key(|e| e.0);
    for (i, e) in entries.iter().enumerate() {
        if e.0 != i + 1 {
            return Err(format_err(
                path,
                format!("class ids must cover 1..=N exactly, missing {}", i + 1),
            ));
        }
    }
    Ok(entries
        .into_iter()
        .map(|(_, rgb, name)| (name, rgb))
        .unzip())
}

/// Converts retained logits into per-class probability planes and
/// writes them class-sequentially. Every pixel's probabilities must sum
/// to 1 within 1e-6, which holds for any finite logit vector.
pub fn save_probability_planes(map: &ClassificationMap, header: &Path) -> Result<(), CliError> {
    let logits = map.logits.as_ref().ok_or_else(|| {
        CliError::Usage("map carries no scores; predict with --logits".to_string())
    })?;
    let (hw, c) = (map.height * map.width, map.num_classes);
    let mut planes = vec![0.0f32; c * hw];
    for pixel in 0..hw {
        let z = &logits[pixel * c..(pixel + 1) * c];
        let mx = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = z.iter().map(|v| (v - mx).exp()).collect();
        let sum: f32 = exps.iter().sum();
        let mut check = 0.0f32;
        for (class, e) in exps.iter().enumerate() {
            let p = e / sum;
            planes[class * hw + pixel] = p;
            check += p;
        }
        if (check - 1.0).abs() > 1e-6 {
            return Err(CliError::Usage(format!(
                "probabilities at pixel {pixel} sum to {check}, expected 1"
            )));
        }
    }
    write_header(
        header,
        &json!({
            "format_version": RASTER_FORMAT_VERSION,
            "kind": "prob-planes",
            "height": map.height,
            "width": map.width,
            "planes": c,
            "dtype": "f32le",
            "order": "class-sequential",
            "payload": payload_name(header)?,
        }),
    )?;
    let payload = payload_path(header);
    std::fs::write(&payload, f32_to_bytes(&planes)).map_err(CliError::io(&payload))
}
