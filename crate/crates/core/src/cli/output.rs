//! CSV / JSON result files.
//!
//! CSV files start with `# key: value` metadata lines followed by a header
//! row; floats are written as `{:.16e}` so they parse back bit-exactly.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::presets::ResultRow;

pub const FORMAT_VERSION: &str = "1";

pub const COLUMNS: &[&str] = &[
    "preset",
    "series",
    "x_name",
    "x",
    "trials",
    "mean_f_r",
    "sigma_f_r",
    "min_f_r",
    "max_f_r",
    "mean_f_a",
    "mean_abs_gap",
    "frac_clean",
    "frac_x",
    "frac_z",
    "frac_y",
    "frac_other",
    "mean_throughput",
    "mean_raw_rate",
    "mean_elapsed_s",
    "timed_out",
    "undefined",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub config_hash: String,
    pub seed_base: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: String,
    pub metadata: Metadata,
    pub rows: Vec<ResultRow>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("refusing to write an empty result table")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed result file: {0}")]
    Malformed(String),
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn record(r: &ResultRow) -> Vec<String> {
    vec![
        r.preset.clone(),
        r.series.clone(),
        r.x_name.clone(),
        f(r.x),
        r.trials.to_string(),
        f(r.mean_f_r),
        f(r.sigma_f_r),
        f(r.min_f_r),
        f(r.max_f_r),
        f(r.mean_f_a),
        f(r.mean_abs_gap),
        f(r.frac_clean),
        f(r.frac_x),
        f(r.frac_z),
        f(r.frac_y),
        f(r.frac_other),
        f(r.mean_throughput),
        f(r.mean_raw_rate),
        f(r.mean_elapsed_s),
        r.timed_out.to_string(),
        r.undefined.to_string(),
    ]
}

pub fn to_csv(rows: &[ResultRow], meta: &Metadata) -> Result<String, OutputError> {
    if rows.is_empty() {
        return Err(OutputError::Empty);
    }
    let mut head = format!(
        "# version: {}\n# config_hash: {}\n# seed_base: {}\n",
        meta.version, meta.config_hash, meta.seed_base
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(record(r))?;
    }
    let body = w
        .into_inner()
        .map_err(|e| OutputError::Io(e.into_error()))?;
    head.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
    Ok(head)
}

pub fn to_json(rows: &[ResultRow], meta: &Metadata) -> Result<String, OutputError> {
    if rows.is_empty() {
        return Err(OutputError::Empty);
    }
    let file = ResultFile {
        version: meta.version.clone(),
        metadata: meta.clone(),
        rows: rows.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_csv(text: &str) -> Result<(Metadata, Vec<ResultRow>), OutputError> {
    let mut meta = Metadata {
        version: String::new(),
        config_hash: String::new(),
        seed_base: 0,
    };
    let mut body = String::new();
    for line in text.lines() {
        if let Some(m) = line.strip_prefix("# ") {
            let (k, v) = m
                .split_once(": ")
                .ok_or_else(|| OutputError::Malformed(line.into()))?;
            match k {
                "version" => meta.version = v.into(),
                "config_hash" => meta.config_hash = v.into(),
                "seed_base" => {
                    meta.seed_base = v.parse().map_err(|_| OutputError::Malformed(line.into()))?
                }
                _ => {}
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let rows = rd.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok((meta, rows))
}

pub fn parse_json(text: &str) -> Result<(Metadata, Vec<ResultRow>), OutputError> {
    let f: ResultFile = serde_json::from_str(text)?;
    Ok((f.metadata, f.rows))
}

pub fn emit_results(
    rows: &[ResultRow],
    meta: &Metadata,
    format: Format,
    path: &Path,
) -> Result<(), OutputError> {
    let text = match format {
        Format::Csv => to_csv(rows, meta)?,
        Format::Json => to_json(rows, meta)?,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}
