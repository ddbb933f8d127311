//! `rvd-mlp-v1` weight documents.
//!
//! ```json
//! {
//!   "format": "rvd-mlp-v1",
//!   "observation_layout": ["x", "y", "z", "vx", "vy", "vz", "mass"],
//!   "shapes": {"W1": [7, 256], "b1": [256], ...},
//!   "tensors": {"W1": [...], "b1": [...], ...}
//! }
//! ```
//!
//! Matrices are row-major with rows indexing the layer input. Numbers are
//! written in shortest round-trip decimal form, so a save/load cycle is exact.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::{MlpParams, PolicyError, OBS_DIM, TENSOR_NAMES};

pub const FORMAT_TAG: &str = "rvd-mlp-v1";
const OBS_LAYOUT: [&str; OBS_DIM] = ["x", "y", "z", "vx", "vy", "vz", "mass"];

pub fn to_json_string(params: &MlpParams) -> String {
    let shapes = MlpParams::shapes(params.hidden());
    let mut shape_map = Map::new();
    let mut tensor_map = Map::new();
    for ((name, t), shape) in TENSOR_NAMES.iter().zip(params.tensors()).zip(shapes) {
        shape_map.insert(name.to_string(), json!(shape));
        tensor_map.insert(name.to_string(), json!(t));
    }
    let doc = json!({
        "format": FORMAT_TAG,
        "observation_layout": OBS_LAYOUT,
        "shapes": shape_map,
        "tensors": tensor_map,
    });
    serde_json::to_string(&doc).expect("weight document serializes")
}

pub fn save(params: &MlpParams, path: impl AsRef<Path>) -> Result<(), PolicyError> {
    let path = path.as_ref();
    std::fs::write(path, to_json_string(params)).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpParams, PolicyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_str(&text)
}

fn shape_of(shapes: &Map<String, Value>, name: &'static str) -> Result<Vec<usize>, PolicyError> {
    let v = shapes
        .get(name)
        .ok_or_else(|| PolicyError::Parse(format!("missing shapes.{name}")))?;
    let arr = v
        .as_array()
        .ok_or_else(|| PolicyError::Parse(format!("shapes.{name} is not an array")))?;
    arr.iter()
        .map(|d| {
            d.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| PolicyError::Parse(format!("shapes.{name} has a non-integer dimension")))
        })
        .collect()
}

pub fn load_str(text: &str) -> Result<MlpParams, PolicyError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| PolicyError::Parse("document is not an object".into()))?;
    match obj.get("format").and_then(Value::as_str) {
        Some(FORMAT_TAG) => {}
        Some(other) => return Err(PolicyError::Parse(format!("unsupported format {other:?}"))),
        None => return Err(PolicyError::Parse("missing format tag".into())),
    }
    let shapes = obj
        .get("shapes")
        .and_then(Value::as_object)
        .ok_or_else(|| PolicyError::Parse("missing shapes".into()))?;
    let tensors = obj
        .get("tensors")
        .and_then(Value::as_object)
        .ok_or_else(|| PolicyError::Parse("missing tensors".into()))?;

    // The hidden width is read from b1; every other tensor must agree with it.
    let b1 = shape_of(shapes, "b1")?;
    let hidden = match b1.as_slice() {
        [h] if *h > 0 => *h,
        _ => {
            return Err(PolicyError::Shape {
                field: "b1",
                expected: vec![0],
                found: b1,
            })
        }
    };
    let expected = MlpParams::shapes(hidden);
    let mut params = MlpParams::zeros(hidden);
    for ((name, want), slot) in TENSOR_NAMES.iter().zip(expected).zip(params.tensors_mut()) {
        let found = shape_of(shapes, name)?;
        if found != want {
            return Err(PolicyError::Shape {
                field: name,
                expected: want,
                found,
            });
        }
        let values = tensors
            .get(*name)
            .and_then(Value::as_array)
            .ok_or_else(|| PolicyError::Parse(format!("missing tensors.{name}")))?;
        let n: usize = want.iter().product();
        if values.len() != n {
            return Err(PolicyError::Shape {
                field: name,
                expected: want,
                found: vec![values.len()],
            });
        }
        slot.clear();
        for (i, v) in values.iter().enumerate() {
            match v.as_f64() {
                Some(x) if x.is_finite() => slot.push(x),
                _ => return Err(PolicyError::NonFinite { field: name, index: i }),
            }
        }
    }
    params.validate()?;
    Ok(params)
}
