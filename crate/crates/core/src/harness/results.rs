//! Result files: one line-delimited record file per run, an index of runs
//! and a flat `variant,horizon,mse,mae` table.

use std::fs::{self, File, OpenOptions};
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::ExperimentRecord;
use crate::error::Result;

pub const INDEX_FILE: &str = "index.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNS_DIR: &str = "runs";

pub fn to_json_line(record: &ExperimentRecord) -> Result<String> {
    Ok(serde_json::to_string(record)?)
}

pub fn from_json_line(line: &str) -> Result<ExperimentRecord> {
    Ok(serde_json::from_str(line)?)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(from_json_line(&line)?);
        }
    }
    Ok(out)
}

/// One row of the index and of the flat summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
}

impl From<&ExperimentRecord> for SummaryRow {
    fn from(r: &ExperimentRecord) -> Self {
        Self {
            variant: r.variant.clone(),
            horizon: r.model.horizon,
            mse: r.test.mse,
            mae: r.test.mae,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub dataset: String,
    #[serde(flatten)]
    pub summary: SummaryRow,
    pub best_epoch: usize,
    pub diverged: bool,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// A results directory. Run files are named from the variant and a hash of
/// the full record configuration, and are only ever appended to.
#[derive(Clone, Debug)]
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(RUNS_DIR))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_path(&self, record: &ExperimentRecord) -> PathBuf {
        let slug: String = record
            .variant
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        let mut h = std::collections::hash_map::DefaultHasher::new();
        record.dataset.hash(&mut h);
        serde_json::to_string(&(&record.model, &record.train))
            .unwrap_or_default()
            .hash(&mut h);
        self.root.join(RUNS_DIR).join(format!("{slug}-{:016x}.jsonl", h.finish()))
    }

    /// Appends the record to its run file and the index; returns the run file.
    pub fn append(&self, record: &ExperimentRecord) -> Result<PathBuf> {
        let path = self.run_path(record);
        append_line(&path, &to_json_line(record)?)?;
        let entry = IndexEntry {
            file: path
                .strip_prefix(&self.root)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned(),
            dataset: record.dataset.clone(),
            summary: record.into(),
            best_epoch: record.best_epoch,
            diverged: record.diverged_epoch.is_some(),
        };
        append_line(&self.root.join(INDEX_FILE), &serde_json::to_string(&entry)?)?;
        Ok(path)
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>> {
        let path = self.root.join(INDEX_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn write_summary(&self, records: &[ExperimentRecord]) -> Result<PathBuf> {
        let path = self.root.join(SUMMARY_FILE);
        let rows: Vec<SummaryRow> = records.iter().map(SummaryRow::from).collect();
        write_summary(&path, &rows)?;
        Ok(path)
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}
