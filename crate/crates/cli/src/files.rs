use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use triage_core::artifact::load_model;
use triage_core::{EngineConfig, Model};

use crate::fail::{CmdResult, Failure};

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CmdResult<Vec<T>> {
    let file = File::open(path).map_err(|e| Failure::input(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Failure::input(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Failure::usage(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CmdResult<()> {
    let file = File::create(path).map_err(|e| Failure::output(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Failure::output(path, e))?;
        w.write_all(b"\n").map_err(|e| Failure::output(path, e))?;
    }
    w.flush().map_err(|e| Failure::output(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::output(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Failure::output(path, e))
}

/// Engine config from a file, or the defaults.
pub fn engine_config(path: Option<&Path>) -> CmdResult<EngineConfig> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(Failure::input(p, "config file not found"));
            }
            Ok(EngineConfig::load(p)?)
        }
        None => Ok(EngineConfig::default()),
    }
}

/// A TOML or JSON document; `.json` selects JSON.
pub fn read_document<T: DeserializeOwned>(path: &Path) -> CmdResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Failure::input(path, e))
    } else {
        toml::from_str(&text).map_err(|e| Failure::input(path, e))
    }
}

pub fn model(path: &Path) -> CmdResult<Model> {
    if !path.exists() {
        return Err(Failure::input(path, "model artifact not found"));
    }
    load_model(path).map_err(|e| Failure::input(path, e))
}
