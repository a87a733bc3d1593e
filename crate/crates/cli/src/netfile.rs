//! Network file format: one UTF-8 JSON document holding the graph
//! header and a layer array, with weight buffers embedded as base64
//! little-endian 32-bit floats in `[out, in, (depth), height, width]`
//! order. Round trips are bit-exact.
//!
//! Load errors carry a JSON-pointer-style path to the offending field.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Map, Value};

use tppi_core::ir::{
    AvgPool2dLayer, BatchNormLayer, Conv2dLayer, Conv3dLayer, FcLayer, InputRank, InputSpec,
    LayerKind, LayerSpec, NetworkGraph,
};
use tppi_core::tensor::BatchNormParams;

use crate::error::CliError;

pub const NETWORK_FORMAT_VERSION: u64 = 1;

/// A schema violation at `path` (JSON-pointer syntax, e.g.
/// `/layers/3/stride`).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

fn bad(path: &str, message: impl Into<String>) -> SchemaError {
    SchemaError {
        path: path.to_string(),
        message: message.into(),
    }
}

fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f32(text: &str, expected: usize, path: &str) -> Result<Vec<f32>, SchemaError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| bad(path, format!("invalid base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(bad(
            path,
            format!("payload is {} bytes, not a multiple of 4", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.len() != expected {
        return Err(bad(
            path,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn weights_json(values: &Option<Vec<f32>>) -> Value {
    match values {
        Some(v) => Value::String(encode_f32(v)),
        None => Value::Null,
    }
}

fn layer_json(layer: &LayerSpec) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), json!(layer.id));
    obj.insert("type".into(), json!(layer.kind.name()));
    match &layer.kind {
        LayerKind::Conv2d(c) => {
            obj.insert("in_channels".into(), json!(c.in_channels));
            obj.insert("out_channels".into(), json!(c.out_channels));
            obj.insert("kernel".into(), json!([c.kh, c.kw]));
            obj.insert("stride".into(), json!([c.stride_h, c.stride_w]));
            obj.insert("pad".into(), json!(c.pad));
            obj.insert("weights".into(), weights_json(&c.weights));
            obj.insert("bias".into(), weights_json(&c.bias));
        }
        LayerKind::Conv3d(c) => {
            obj.insert("in_channels".into(), json!(c.in_channels));
            obj.insert("out_channels".into(), json!(c.out_channels));
            obj.insert("kernel".into(), json!([c.kd, c.kh, c.kw]));
            obj.insert(
                "stride".into(),
                json!([c.stride_d, c.stride_h, c.stride_w]),
            );
            obj.insert("pad".into(), json!([c.pad_d, c.pad_hw]));
            obj.insert("weights".into(), weights_json(&c.weights));
            obj.insert("bias".into(), weights_json(&c.bias));
        }
        LayerKind::BatchNorm(b) => {
            obj.insert("channels".into(), json!(b.channels));
            obj.insert("epsilon".into(), json!(b.epsilon));
            let stats = match &b.params {
                Some(p) => json!({
                    "gamma": encode_f32(&p.gamma),
                    "beta": encode_f32(&p.beta),
                    "mean": encode_f32(&p.running_mean),
                    "var": encode_f32(&p.running_var),
                }),
                None => Value::Null,
            };
            obj.insert("stats".into(), stats);
        }
        LayerKind::AvgPool2d(p) => {
            obj.insert("kernel".into(), json!([p.kernel.0, p.kernel.1]));
            obj.insert("stride".into(), json!([p.stride.0, p.stride.1]));
        }
        LayerKind::Fc(f) => {
            obj.insert("in_features".into(), json!(f.in_features));
            obj.insert("out_features".into(), json!(f.out_features));
            obj.insert("weights".into(), weights_json(&f.weights));
            obj.insert("bias".into(), weights_json(&f.bias));
        }
        LayerKind::Relu
        | LayerKind::GlobalAvgPool
        | LayerKind::Softmax
        | LayerKind::CollapseSpectral
        | LayerKind::ResidualBegin
        | LayerKind::ResidualEnd => {}
    }
    Value::Object(obj)
}

pub fn network_to_json(net: &NetworkGraph) -> Value {
    json!({
        "format_version": NETWORK_FORMAT_VERSION,
        "name": net.name,
        "bands": net.input.bands,
        "sample_size_m": net.input.sample_size,
        "num_classes": net.num_classes,
        "input_rank": match net.input.rank { InputRank::Rank3 => 3, InputRank::Rank4 => 4 },
        "layers": net.layers.iter().map(layer_json).collect::<Vec<_>>(),
    })
}

fn field<'v>(obj: &'v Map<String, Value>, key: &str, at: &str) -> Result<&'v Value, SchemaError> {
    obj.get(key)
        .ok_or_else(|| bad(&format!("{at}/{key}"), "missing field"))
}

fn as_object<'v>(v: &'v Value, at: &str) -> Result<&'v Map<String, Value>, SchemaError> {
    v.as_object().ok_or_else(|| bad(at, "expected an object"))
}

fn usize_field(obj: &Map<String, Value>, key: &str, at: &str) -> Result<usize, SchemaError> {
    let v = field(obj, key, at)?;
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| bad(&format!("{at}/{key}"), "expected a nonnegative integer"))
}

fn str_field<'v>(
    obj: &'v Map<String, Value>,
    key: &str,
    at: &str,
) -> Result<&'v str, SchemaError> {
    field(obj, key, at)?
        .as_str()
        .ok_or_else(|| bad(&format!("{at}/{key}"), "expected a string"))
}

fn f32_field(obj: &Map<String, Value>, key: &str, at: &str) -> Result<f32, SchemaError> {
    let v = field(obj, key, at)?
        .as_f64()
        .ok_or_else(|| bad(&format!("{at}/{key}"), "expected a number"))?;
    Ok(v as f32)
}

/// Fixed-length array of positive integers; zero is rejected so a
/// malformed stride can never reach the kernels.
fn dims_field(
    obj: &Map<String, Value>,
    key: &str,
    len: usize,
    min: u64,
    at: &str,
) -> Result<Vec<usize>, SchemaError> {
    let path = format!("{at}/{key}");
    let arr = field(obj, key, at)?
        .as_array()
        .ok_or_else(|| bad(&path, format!("expected an array of {len} integers")))?;
    if arr.len() != len {
        return Err(bad(
            &path,
            format!("expected {len} entries, found {}", arr.len()),
        ));
    }
    let mut out = Vec::with_capacity(len);
    for (i, v) in arr.iter().enumerate() {
        let n = v
            .as_u64()
            .ok_or_else(|| bad(&format!("{path}/{i}"), "expected an integer"))?;
        if n < min {
            return Err(bad(
                &format!("{path}/{i}"),
                format!("{n} is not allowed, minimum is {min}"),
            ));
        }
        out.push(n as usize);
    }
    Ok(out)
}

/// Base64 f32 buffer or null.
fn optional_blob(
    obj: &Map<String, Value>,
    key: &str,
    expected: usize,
    at: &str,
) -> Result<Option<Vec<f32>>, SchemaError> {
    let path = format!("{at}/{key}");
    match field(obj, key, at)? {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(decode_f32(s, expected, &path)?)),
        _ => Err(bad(&path, "expected a base64 string or null")),
    }
}

fn required_blob(
    obj: &Map<String, Value>,
    key: &str,
    expected: usize,
    at: &str,
) -> Result<Vec<f32>, SchemaError> {
    let path = format!("{at}/{key}");
    let s = field(obj, key, at)?
        .as_str()
        .ok_or_else(|| bad(&path, "expected a base64 string"))?;
    decode_f32(s, expected, &path)
}

fn layer_from_json(v: &Value, at: &str) -> Result<LayerSpec, SchemaError> {
    let obj = as_object(v, at)?;
    let id = str_field(obj, "id", at)?;
    if id.is_empty() {
        return Err(bad(&format!("{at}/id"), "layer id must not be empty"));
    }
    let kind_name = str_field(obj, "type", at)?;
    let kind = match kind_name {
        "conv2d" => {
            let ci = usize_field(obj, "in_channels", at)?;
            let co = usize_field(obj, "out_channels", at)?;
            let k = dims_field(obj, "kernel", 2, 1, at)?;
            let s = dims_field(obj, "stride", 2, 1, at)?;
            let pad = usize_field(obj, "pad", at)?;
            LayerKind::Conv2d(Conv2dLayer {
                in_channels: ci,
                out_channels: co,
                kh: k[0],
                kw: k[1],
                stride_h: s[0],
                stride_w: s[1],
                pad,
                weights: optional_blob(obj, "weights", co * ci * k[0] * k[1], at)?,
                bias: optional_blob(obj, "bias", co, at)?,
            })
        }
        "conv3d" => {
            let ci = usize_field(obj, "in_channels", at)?;
            let co = usize_field(obj, "out_channels", at)?;
            let k = dims_field(obj, "kernel", 3, 1, at)?;
            let s = dims_field(obj, "stride", 3, 1, at)?;
            let p = dims_field(obj, "pad", 2, 0, at)?;
            LayerKind::Conv3d(Conv3dLayer {
                in_channels: ci,
                out_channels: co,
                kd: k[0],
                kh: k[1],
                kw: k[2],
                stride_d: s[0],
                stride_h: s[1],
                stride_w: s[2],
                pad_d: p[0],
                pad_hw: p[1],
                weights: optional_blob(obj, "weights", co * ci * k[0] * k[1] * k[2], at)?,
                bias: optional_blob(obj, "bias", co, at)?,
            })
        }
        "batchnorm" => {
            let channels = usize_field(obj, "channels", at)?;
            let epsilon = f32_field(obj, "epsilon", at)?;
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(bad(
                    &format!("{at}/epsilon"),
                    "must be a finite positive number",
                ));
            }
            let params = match field(obj, "stats", at)? {
                Value::Null => None,
                stats @ Value::Object(_) => {
                    let sat = format!("{at}/stats");
                    let sobj = as_object(stats, &sat)?;
                    Some(BatchNormParams {
                        gamma: required_blob(sobj, "gamma", channels, &sat)?,
                        beta: required_blob(sobj, "beta", channels, &sat)?,
                        running_mean: required_blob(sobj, "mean", channels, &sat)?,
                        running_var: required_blob(sobj, "var", channels, &sat)?,
                        epsilon,
                    })
                }
                _ => return Err(bad(&format!("{at}/stats"), "expected an object or null")),
            };
            LayerKind::BatchNorm(BatchNormLayer {
                channels,
                epsilon,
                params,
            })
        }
        "avgpool2d" => {
            let k = dims_field(obj, "kernel", 2, 1, at)?;
            let s = dims_field(obj, "stride", 2, 1, at)?;
            LayerKind::AvgPool2d(AvgPool2dLayer {
                kernel: (k[0], k[1]),
                stride: (s[0], s[1]),
            })
        }
        "fc" => {
            let fi = usize_field(obj, "in_features", at)?;
            let fo = usize_field(obj, "out_features", at)?;
            LayerKind::Fc(FcLayer {
                in_features: fi,
                out_features: fo,
                weights: optional_blob(obj, "weights", fo * fi, at)?,
                bias: optional_blob(obj, "bias", fo, at)?,
            })
        }
        "relu" => LayerKind::Relu,
        "global_avgpool" => LayerKind::GlobalAvgPool,
        "softmax" => LayerKind::Softmax,
        "collapse_spectral" => LayerKind::CollapseSpectral,
        "residual_begin" => LayerKind::ResidualBegin,
        "residual_end" => LayerKind::ResidualEnd,
        other => {
            return Err(bad(
                &format!("{at}/type"),
                format!("unknown layer type {other:?}"),
            ));
        }
    };
    Ok(LayerSpec::new(id, kind))
}

pub fn network_from_json(root: &Value) -> Result<NetworkGraph, SchemaError> {
    let obj = as_object(root, "")?;
    let version = field(obj, "format_version", "")?
        .as_u64()
        .ok_or_else(|| bad("/format_version", "expected an integer"))?;
    if version != NETWORK_FORMAT_VERSION {
        return Err(bad(
            "/format_version",
            format!("unsupported version {version}, this build reads {NETWORK_FORMAT_VERSION}"),
        ));
    }
    let name = str_field(obj, "name", "")?;
    let bands = usize_field(obj, "bands", "")?;
    let sample_size = usize_field(obj, "sample_size_m", "")?;
    let num_classes = usize_field(obj, "num_classes", "")?;
    let rank = match field(obj, "input_rank", "")?.as_u64() {
        Some(3) => InputRank::Rank3,
        Some(4) => InputRank::Rank4,
        _ => return Err(bad("/input_rank", "expected 3 or 4")),
    };
    let layers_value = field(obj, "layers", "")?
        .as_array()
        .ok_or_else(|| bad("/layers", "expected an array"))?;
    let mut layers = Vec::with_capacity(layers_value.len());
    for (i, v) in layers_value.iter().enumerate() {
        layers.push(layer_from_json(v, &format!("/layers/{i}"))?);
    }
    Ok(NetworkGraph {
        name: name.to_string(),
        input: InputSpec {
            bands,
            sample_size,
            rank,
        },
        num_classes,
        layers,
    })
}

pub fn save_network(net: &NetworkGraph, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&network_to_json(net)).expect("value is a tree");
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn load_network(path: &Path) -> Result<NetworkGraph, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.into(),
        message: format!("not valid JSON: {e}"),
    })?;
    network_from_json(&root).map_err(|e| CliError::Format {
        path: path.into(),
        message: e.to_string(),
    })
}
