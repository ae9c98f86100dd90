//! Series ingestion, standardization, calendar features, chronological
//! splits, windowed instances, synthetic series and dataset manifests.

mod features;
mod ingest;
mod manifest;
mod synth;
mod window;

pub use features::{standardize, time_features, time_features_at, Standardizer};
pub use ingest::{ingest_csv, parse_csv, CsvOptions, Frequency, RawSeries, DATE_FORMAT};
pub use manifest::{find_dataset, load_manifest, DatasetManifest, MANIFEST_ENV};
pub use synth::{synth_series, SynthKind};
pub use window::{
    window_count, window_starts, Batch, Dataset, DatasetSpec, SplitBounds, SplitSpec, WindowSpec,
    WindowedDataset,
};
