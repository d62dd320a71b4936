//! Datasets: synthetic generation, CSV and JSON-lines storage, manifests and shifted windows.

mod csv;
mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use self::csv::{format_sig, load_csv, load_csv_file, save_csv, CsvOptions, CSV_HEADER, SIGNIFICANT_DIGITS};
pub use self::synthetic::{generate, generate_labeled, JunctionBranch, ModeMix, MotionMode, SyntheticLabel, SyntheticSpec};

use crate::error::{Error, Result};
use crate::scenario::{Scenario, Window};

/// Model inputs for the same scenario at `t = 0` and `shift` frames later.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPair {
    /// Window ending at `t = 0`, carrying the ground-truth future.
    pub a: Window,
    /// Window ending at `t = shift`; no future attached.
    pub b: Window,
    pub shift: usize,
}

/// Cuts the two windows `frames 1..M` and `frames 1+s..M+s`, each in its own agent frame.
pub fn make_shift_pair(scenario: &Scenario, shift: usize) -> Result<ShiftPair> {
    make_shift_pair_with_heading(scenario, shift, 0.0)
}

/// As [`make_shift_pair`], with both agent frames rotated by an extra `heading_offset`.
pub fn make_shift_pair_with_heading(scenario: &Scenario, shift: usize, heading_offset: f64) -> Result<ShiftPair> {
    let end_a = scenario.current_frame();
    let needed = scenario.history_len + shift;
    let available = scenario.target()?.observed_prefix();
    if available < needed || end_a + shift >= scenario.total_frames() {
        return Err(Error::InsufficientFrames { scenario_id: scenario.scenario_id.clone(), needed, available });
    }
    Ok(ShiftPair {
        a: Window::cut(scenario, end_a, heading_offset, true)?,
        b: Window::cut(scenario, end_a + shift, heading_offset, false)?,
        shift,
    })
}

/// Train and validation scenarios.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Scenario>,
    pub val: Vec<Scenario>,
}

/// File lists for each split, relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub val: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// One scenario per line.
pub fn save_jsonl(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenarios {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scenario = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

/// Loads a `.jsonl` file, a `.csv` file, or a directory of CSV files.
pub fn load_scenarios(path: impl AsRef<Path>, csv: &CsvOptions) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => load_jsonl(path),
        _ => load_csv(path, csv),
    }
}

/// Loads every split listed in a manifest.
pub fn load_manifest(path: impl AsRef<Path>, csv: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest = Manifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let load = |files: &[PathBuf]| -> Result<Vec<Scenario>> {
        let mut out = Vec::new();
        for f in files {
            out.extend(load_scenarios(base.join(f), csv)?);
        }
        Ok(out)
    };
    Ok(Dataset { train: load(&manifest.train)?, val: load(&manifest.val)? })
}

/// Loads a dataset from a manifest (`.json`) or treats any other path as a training split.
pub fn load_dataset(path: impl AsRef<Path>, csv: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        load_manifest(path, csv)
    } else {
        Ok(Dataset { train: load_scenarios(path, csv)?, val: Vec::new() })
    }
}
