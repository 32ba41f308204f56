//! Output schemas.
//!
//! Each scenario ships `schemas/<scenario>.schema.json` listing its files.
//! CSV entries give ordered column types; JSON entries carry a JSON Schema
//! restricted to `type`, `required`, `properties`, `items`, `enum`,
//! `minimum`, `maximum` and `additionalProperties: false`.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub fn scenario_schema(name: &str) -> Option<&'static str> {
    Some(match name {
        "potential-sweep" => include_str!("../../schemas/potential-sweep.schema.json"),
        "j-vs-cycle" => include_str!("../../schemas/j-vs-cycle.schema.json"),
        "dcphase-map" => include_str!("../../schemas/dcphase-map.schema.json"),
        "cz-fidelity-budget" => include_str!("../../schemas/cz-fidelity-budget.schema.json"),
        "rb" => include_str!("../../schemas/rb.schema.json"),
        "irb" => include_str!("../../schemas/irb.schema.json"),
        "cz-calibration" => include_str!("../../schemas/cz-calibration.schema.json"),
        "teleport-rabi" => include_str!("../../schemas/teleport-rabi.schema.json"),
        "teleport-phase-map" => include_str!("../../schemas/teleport-phase-map.schema.json"),
        "teleport-qpt" => include_str!("../../schemas/teleport-qpt.schema.json"),
        _ => return None,
    })
}

pub const MANIFEST_SCHEMA: &str = include_str!("../../schemas/manifest.schema.json");

/// Check every file the scenario schema lists under `dir`.
pub fn validate_outputs(scenario: &str, dir: &Path) -> Result<()> {
    let text = scenario_schema(scenario).ok_or_else(|| Error::Config(format!("unknown scenario {scenario}")))?;
    let schema: Value = serde_json::from_str(text)?;
    let files = schema["files"].as_object().ok_or_else(|| Error::Numerical("schema lacks files".into()))?;
    for (name, spec) in files {
        let path = dir.join(name);
        let body = std::fs::read_to_string(&path)
            .map_err(|e| Error::Numerical(format!("expected output {name} missing: {e}")))?;
        match spec["kind"].as_str() {
            Some("csv") => validate_csv(&body, spec).map_err(|e| Error::Numerical(format!("{name}: {e}")))?,
            Some("json") => {
                let v: Value = serde_json::from_str(&body)?;
                validate_json(&v, &spec["schema"], "$").map_err(|e| Error::Numerical(format!("{name}: {e}")))?;
            }
            _ => return Err(Error::Numerical(format!("schema entry {name} has no kind"))),
        }
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let ms: Value = serde_json::from_str(MANIFEST_SCHEMA)?;
    validate_json(&manifest, &ms, "$").map_err(|e| Error::Numerical(format!("manifest.json: {e}")))
}

fn cell_ok(cell: &str, ty: &str) -> bool {
    match ty {
        "number" => cell.parse::<f64>().is_ok(),
        "integer" => cell.parse::<i64>().is_ok(),
        "boolean" => cell == "true" || cell == "false",
        "string" => true,
        _ => false,
    }
}

pub fn validate_csv(body: &str, spec: &Value) -> std::result::Result<(), String> {
    let cols = spec["columns"].as_array().ok_or("csv schema lacks columns")?;
    let names: Vec<&str> = cols.iter().filter_map(|c| c["name"].as_str()).collect();
    let types: Vec<&str> = cols.iter().filter_map(|c| c["type"].as_str()).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if header != names {
        return Err(format!("header {header:?} != {names:?}"));
    }
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        for (cell, (ty, name)) in rec.iter().zip(types.iter().zip(&names)) {
            if !cell_ok(cell, ty) {
                return Err(format!("row {i}, column {name}: '{cell}' is not {ty}"));
            }
        }
        rows += 1;
    }
    let min_rows = spec["min_rows"].as_u64().unwrap_or(1) as usize;
    if rows < min_rows {
        return Err(format!("{rows} rows, expected at least {min_rows}"));
    }
    Ok(())
}

fn type_matches(v: &Value, ty: &str) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

pub fn validate_json(v: &Value, schema: &Value, at: &str) -> std::result::Result<(), String> {
    let Some(s) = schema.as_object() else { return Ok(()) };
    if let Some(ty) = s.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(v, t),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(v, t)),
            _ => false,
        };
        if !ok {
            return Err(format!("{at}: expected type {ty}, got {v}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(v) {
            return Err(format!("{at}: {v} not in {options:?}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(lo) = s.get("minimum").and_then(Value::as_f64) {
            if x < lo {
                return Err(format!("{at}: {x} < minimum {lo}"));
            }
        }
        if let Some(hi) = s.get("maximum").and_then(Value::as_f64) {
            if x > hi {
                return Err(format!("{at}: {x} > maximum {hi}"));
            }
        }
    }
    if let Some(obj) = v.as_object() {
        validate_object(obj, s, at)?;
    }
    if let (Some(items), Some(arr)) = (s.get("items"), v.as_array()) {
        for (i, e) in arr.iter().enumerate() {
            validate_json(e, items, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

fn validate_object(obj: &Map<String, Value>, s: &Map<String, Value>, at: &str) -> std::result::Result<(), String> {
    if let Some(Value::Array(req)) = s.get("required") {
        for r in req.iter().filter_map(Value::as_str) {
            if !obj.contains_key(r) {
                return Err(format!("{at}: missing required key {r}"));
            }
        }
    }
    let props = s.get("properties").and_then(Value::as_object);
    if let Some(props) = props {
        for (k, sub) in props {
            if let Some(val) = obj.get(k) {
                validate_json(val, sub, &format!("{at}.{k}"))?;
            }
        }
    }
    if s.get("additionalProperties") == Some(&Value::Bool(false)) {
        for k in obj.keys() {
            if !props.is_some_and(|p| p.contains_key(k)) {
                return Err(format!("{at}: unexpected key {k}"));
            }
        }
    }
    Ok(())
}
