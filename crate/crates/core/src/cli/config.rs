//! Scenario configuration files.
//!
//! A config is a TOML document. Top-level `include = ["other.toml"]` pulls
//! in other files first (paths relative to the including file), then the
//! including file's own keys override them table by table.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};

/// A config with all includes resolved.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub table: Table,
    /// Directory of the top-level file; relative data paths resolve here.
    pub base_dir: PathBuf,
}

impl ResolvedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let table = load_table(path, &mut seen)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { table, base_dir })
    }

    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self> {
        let table: Table = text.parse()?;
        if table.contains_key("include") {
            return Err(Error::Config("include is only supported for configs loaded from a file".into()));
        }
        Ok(Self { table, base_dir: base_dir.to_path_buf() })
    }

    /// `scenario = "..."` when present.
    pub fn scenario(&self) -> Result<Option<String>> {
        match self.table.get("scenario") {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::Config("scenario must be a string".into())),
        }
    }

    /// Deserialize the section named `key` (an absent section gives the
    /// type's defaults through an empty table).
    pub fn section<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.table.get(key).cloned().unwrap_or_else(|| Value::Table(Table::new()));
        v.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[{key}] {}", e.message())))
    }

    /// Canonical text of the resolved config (keys sorted).
    pub fn canonical(&self) -> String {
        toml::to_string(&self.table).unwrap_or_default()
    }

    pub fn sha256(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_table(path: &Path, seen: &mut BTreeSet<PathBuf>) -> Result<Table> {
    let canon =
        path.canonicalize().map_err(|e| Error::Config(format!("cannot open config {}: {e}", path.display())))?;
    if !seen.insert(canon.clone()) {
        return Err(Error::Config(format!("include cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(&canon)?;
    let mut own: Table = text.parse()?;
    let includes = match own.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(Error::Config("include entries must be strings".into())),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(Error::Config("include must be a string or an array of strings".into())),
    };
    let dir = canon.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut merged = Table::new();
    for inc in includes {
        let sub = load_table(&dir.join(inc), seen)?;
        merge(&mut merged, sub);
    }
    merge(&mut merged, own);
    seen.remove(&canon);
    Ok(merged)
}

/// Deep merge: tables merge recursively, everything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
