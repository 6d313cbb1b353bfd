//! Output files. Each artifact carries the tool version and config hash, is
//! written atomically, and is removed again if the command fails later on.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use imc::estimation::RegimeModel;
use imc::market_data::{DiscreteReturnSeries, DiscretizationMap};
use imc::Matrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const TOOL: &str = "imc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamp {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
}

pub struct Artifacts {
    dir: PathBuf,
    stamp: Stamp,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Artifacts {
    pub fn create(dir: &Path, command: &str, config_hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))
            .map_err(CliError::Input)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            stamp: Stamp {
                tool: TOOL.into(),
                version: VERSION.into(),
                command: command.into(),
                config_hash,
            },
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    /// `{"provenance": …, "<kind>": value}`.
    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut envelope = serde_json::Map::new();
        envelope.insert("provenance".into(), serde_json::to_value(&self.stamp)?);
        envelope.insert(kind.into(), serde_json::to_value(value)?);
        let mut body = serde_json::to_string_pretty(&Value::Object(envelope))?;
        body.push('\n');
        self.write(name, body.as_bytes())
    }

    /// CSV preceded by a `#` provenance line.
    pub fn csv(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> imc::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let s = &self.stamp;
        let mut body = format!("# {} {} {} config={}\n", s.tool, s.version, s.command, s.config_hash).into_bytes();
        fill(&mut body)?;
        self.write(name, &body)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, body.as_bytes())
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(|e| {
                let _ = fs::remove_file(&tmp);
                CliError::Input(e)
            })?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Keep everything written so far.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.written {
                let _ = fs::remove_file(path);
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::Input)
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("{} is not valid JSON", path.display()))
        .map_err(CliError::Input)
}

/// The `kind` member of an artifact envelope, or the whole document.
fn unwrap_kind(mut doc: Value, kind: &str) -> Value {
    if doc.get("provenance").is_none() {
        return doc;
    }
    match doc.get_mut(kind) {
        Some(inner) => inner.take(),
        None => doc,
    }
}

fn parse_as<T: serde::de::DeserializeOwned>(value: Value, path: &Path, what: &str) -> Result<T, CliError> {
    serde_json::from_value(value)
        .with_context(|| format!("{} does not hold a valid {what}", path.display()))
        .map_err(CliError::Input)
}

pub fn read_model(path: &Path) -> Result<RegimeModel, CliError> {
    parse_as(unwrap_kind(read_json(path)?, "model"), path, "model")
}

pub fn read_map(path: &Path) -> Result<DiscretizationMap, CliError> {
    parse_as(unwrap_kind(read_json(path)?, "map"), path, "discretization map")
}

pub fn read_returns(path: &Path, map: DiscretizationMap) -> Result<DiscreteReturnSeries, CliError> {
    let file = fs::File::open(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::Input)?;
    DiscreteReturnSeries::read_csv(file, map)
        .map_err(|e| CliError::Input(anyhow!(e).context(format!("in {}", path.display()))))
}

/// Matrices from a plain `[[…], …]` JSON array, a list of such arrays, or a model.
pub fn read_matrices(path: &Path) -> Result<Vec<Matrix>, CliError> {
    let doc = unwrap_kind(read_json(path)?, "model");
    if doc.get("matrices").is_some() {
        return Ok(read_model(path)?
            .matrices
            .iter()
            .map(|m| m.as_matrix().clone())
            .collect());
    }
    let nested = matches!(&doc, Value::Array(rows) if rows.first().is_some_and(|r| r.get(0).is_some_and(Value::is_array)));
    let raw: Vec<Vec<Vec<f64>>> = if nested {
        parse_as(doc, path, "list of matrices")?
    } else {
        vec![parse_as(doc, path, "matrix")?]
    };
    raw.into_iter()
        .map(|rows| Matrix::from_rows(rows).map_err(|e| CliError::Input(anyhow!(e).context(format!("in {}", path.display())))))
        .collect()
}
