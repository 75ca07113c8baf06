//! Dataset CSV, model JSON and trace CSV, all written atomically.

use std::fs;
use std::io::Write;
use std::path::Path;

use padr_core::smm::IterationRecord;
use padr_core::{Dataset, FeatureScaler, HypothesisConfig, Theta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().ok_or_else(|| Error::format(path, "not a file path"))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Parses a header of the form `x1,…,xp,y1,…,ym` and returns `(p, m)`.
fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<(usize, usize)> {
    let mut p = 0;
    let mut m = 0;
    for (j, name) in header.iter().enumerate() {
        let name = name.trim();
        let expect_x = format!("x{}", p + 1);
        let expect_y = format!("y{}", m + 1);
        if m == 0 && name == expect_x {
            p += 1;
        } else if name == expect_y {
            m += 1;
        } else {
            return Err(Error::format(path, format!("column {} is `{name}`, expected `{expect_x}` or `{expect_y}`", j + 1)));
        }
    }
    if m == 0 {
        return Err(Error::format(path, "header has no outcome columns (y1, …)"));
    }
    Ok((p, m))
}

pub fn parse_dataset(path: &Path, text: &[u8]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let (p, m) = parse_header(path, &header)?;
    let mut features = Vec::new();
    let mut outcomes = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != p + m {
            return Err(Error::format(path, format!("row {} has {} fields, expected {}", row + 1, rec.len(), p + m)));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {}, column `{}`: `{field}` is not a number", row + 1, &header[j])))?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {}, column `{}`: value is not finite", row + 1, &header[j])));
            }
            if j < p {
                features.push(v);
            } else {
                outcomes.push(v);
            }
        }
    }
    Ok(Dataset::new(p, m, features, outcomes)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(path, &text)
}

pub fn dataset_to_csv(data: &Dataset) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> =
        (1..=data.p()).map(|j| format!("x{j}")).chain((1..=data.m()).map(|j| format!("y{j}"))).collect();
    w.write_record(&header).expect("in-memory write");
    for s in 0..data.n() {
        let row: Vec<String> = data.x(s).iter().chain(data.y(s)).map(|v| v.to_string()).collect();
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    atomic_write(path, &dataset_to_csv(data))
}

/// Versioned model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub cfg: HypothesisConfig,
    pub theta_flat: Vec<f64>,
    /// Feature map applied before the rule, when training used one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<FeatureScaler>,
}

impl ModelFile {
    pub fn new(theta: &Theta, scaler: Option<FeatureScaler>) -> Self {
        Self { version: MODEL_VERSION, cfg: *theta.cfg(), theta_flat: theta.as_slice().to_vec(), scaler }
    }

    pub fn theta(&self) -> Result<Theta> {
        Ok(Theta::from_flat(self.cfg, self.theta_flat.clone())?)
    }

    /// Applies the stored scaler (if any) to a dataset's features.
    pub fn prepare(&self, data: &Dataset) -> Result<Dataset> {
        match &self.scaler {
            Some(s) => Ok(s.transform(data)?),
            None => Ok(data.clone()),
        }
    }
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(model).map_err(|e| Error::format(path, e.to_string()))?;
    text.push(b'\n');
    atomic_write(path, &text)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model: ModelFile = serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if model.version != MODEL_VERSION {
        return Err(Error::format(path, format!("model version {} is not supported (expected {MODEL_VERSION})", model.version)));
    }
    model.theta().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(model)
}

/// One CSV row per iteration, columns named after the record fields.
pub fn trace_to_csv(records: &[IterationRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory write");
    }
    if records.is_empty() {
        w.write_record([
            "nu",
            "batch_size",
            "distinct_samples",
            "epsilon",
            "accepted",
            "minibatch_objective",
            "surrogate_value",
            "step_norm",
            "delta",
            "objective_after",
            "solver_iterations",
            "solver_status",
            "wall_seconds",
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Serializes rows with `csv`'s serde support.
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_vec_pretty(value).expect("serializable value");
    text.push(b'\n');
    text
}
