//! Tensor JSON: `{"width": W, "channels": C, "data": [...]}` where `data` is a
//! row-major nested array, `W × W` for one channel and `W × W × C` otherwise.

use std::path::Path;

use serde_json::{json, Value};

use super::Image;
use crate::error::{Error, Result};

pub fn tensor_from_json(value: &Value, source_name: &str) -> Result<Image> {
    let fail = |msg: String| Error::format(source_name, msg);
    let field = |key: &str| {
        value
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| fail(format!("missing or non-integer \"{key}\"")))
    };
    let width = field("width")? as usize;
    let channels = field("channels")? as usize;
    let rows = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("missing \"data\" array".into()))?;
    if rows.len() != width {
        return Err(fail(format!("expected {width} rows, found {}", rows.len())));
    }
    let mut data = Vec::with_capacity(width * width * channels);
    for (r, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .filter(|row| row.len() == width)
            .ok_or_else(|| fail(format!("row {r} is not an array of {width} entries")))?;
        for (col, entry) in row.iter().enumerate() {
            if channels == 1 && entry.is_number() {
                data.push(entry.as_f64().unwrap());
                continue;
            }
            let px = entry
                .as_array()
                .filter(|px| px.len() == channels)
                .ok_or_else(|| fail(format!("pixel ({r}, {col}) does not hold {channels} channels")))?;
            for v in px {
                data.push(v.as_f64().ok_or_else(|| fail(format!("non-numeric value at ({r}, {col})")))?);
            }
        }
    }
    Image::new(width, channels, data).map_err(|e| fail(e.to_string()))
}

pub fn tensor_to_json(image: &Image) -> Value {
    let w = image.width();
    let rows: Vec<Value> = (1..=w)
        .map(|i| {
            let row: Vec<Value> = (1..=w)
                .map(|j| {
                    let px = image.pixel(i, j);
                    if image.channels() == 1 {
                        json!(px[0])
                    } else {
                        json!(px)
                    }
                })
                .collect();
            Value::Array(row)
        })
        .collect();
    json!({"width": w, "channels": image.channels(), "data": rows})
}

pub fn load_tensor_json(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format(&name, e.to_string()))?;
    tensor_from_json(&value, &name)
}

pub fn save_tensor_json(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tensor_to_json(image).to_string()).map_err(|e| Error::io(path, e))
}
