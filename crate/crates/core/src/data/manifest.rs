//! TOML dataset manifest.
//!
//! ```toml
//! name = "ETTh1"
//! path = "ETTh1.csv"        # relative to the manifest file
//! frequency = "1h"
//! target = "OT"
//! forward_fill = false
//!
//! [split]
//! kind = "months"
//! train = 12
//! val = 4
//! test = 4
//! ```
//!
//! A file may instead hold several `[[dataset]]` tables of the same shape.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ingest_csv, CsvOptions, Frequency, RawSeries, SplitSpec};
use crate::error::{Error, Result};

pub const MANIFEST_ENV: &str = "YFORMER_MANIFEST";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub path: PathBuf,
    pub frequency: Frequency,
    /// Column forecast in the univariate setting.
    pub target: String,
    #[serde(default)]
    pub forward_fill: bool,
    pub split: SplitSpec,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Many { dataset: Vec<DatasetManifest> },
    One(DatasetManifest),
}

impl DatasetManifest {
    pub fn load_series(&self) -> Result<RawSeries> {
        let opts = CsvOptions {
            forward_fill: self.forward_fill,
            frequency: Some(self.frequency),
        };
        ingest_csv(&self.path, opts)
    }
}

/// Reads every dataset entry, resolving relative CSV paths against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<DatasetManifest>> {
    let text = std::fs::read_to_string(path)?;
    let parsed: ManifestFile = toml::from_str(&text)?;
    let mut entries = match parsed {
        ManifestFile::Many { dataset } => dataset,
        ManifestFile::One(m) => vec![m],
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for m in &mut entries {
        if m.path.is_relative() {
            m.path = base.join(&m.path);
        }
    }
    Ok(entries)
}

/// Picks `name` from the manifest at `path`, or from `$YFORMER_MANIFEST`
/// when no path is given. A single-entry manifest matches any name.
pub fn find_dataset(path: Option<&Path>, name: Option<&str>) -> Result<DatasetManifest> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(MANIFEST_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("no manifest given and {MANIFEST_ENV} is unset")))?,
    };
    let entries = load_manifest(&path)?;
    match name {
        Some(n) => entries
            .iter()
            .find(|m| m.name == n)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: no dataset named {n:?}", path.display()))),
        None if entries.len() == 1 => Ok(entries[0].clone()),
        None => Err(Error::Config(format!(
            "{} lists {} datasets; pick one by name",
            path.display(),
            entries.len()
        ))),
    }
}
