//! CSV ingestion: a `date` column followed by numeric channels.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Sampling interval of a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Frequency {
    pub minutes: i64,
}

impl Frequency {
    pub const HOURLY: Frequency = Frequency { minutes: 60 };
    pub const QUARTER_HOURLY: Frequency = Frequency { minutes: 15 };

    pub fn step(&self) -> TimeDelta {
        TimeDelta::minutes(self.minutes)
    }

    /// Sub-hourly data carries a minute-of-hour feature on top of
    /// month, day, weekday and hour.
    pub fn time_feature_count(&self) -> usize {
        if self.minutes % 60 == 0 {
            4
        } else {
            5
        }
    }
}

impl TryFrom<String> for Frequency {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Frequency> for String {
    fn from(f: Frequency) -> String {
        f.to_string()
    }
}

impl std::str::FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (num, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len()));
        let n: i64 = if num.is_empty() { 1 } else { num.parse().map_err(|_| format!("bad frequency {s:?}"))? };
        let minutes = match unit {
            "h" | "H" | "hour" | "hours" => n * 60,
            "min" | "m" | "T" | "minutes" => n,
            _ => return Err(format!("bad frequency {s:?}, expected e.g. \"1h\" or \"15min\"")),
        };
        if minutes <= 0 {
            return Err(format!("frequency must be positive, got {s:?}"));
        }
        Ok(Frequency { minutes })
    }
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.minutes % 60 == 0 {
            write!(f, "{}h", self.minutes / 60)
        } else {
            write!(f, "{}min", self.minutes)
        }
    }
}

/// Equally spaced multichannel series, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub names: Vec<String>,
    /// `rows * channels` values.
    pub values: Vec<f64>,
    pub frequency: Frequency,
}

impl RawSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, names: Vec<String>, values: Vec<f64>, frequency: Frequency) -> Result<Self> {
        if values.len() != timestamps.len() * names.len() {
            return Err(Error::Data(format!(
                "{} rows of {} channels need {} values, got {}",
                timestamps.len(),
                names.len(),
                timestamps.len() * names.len(),
                values.len()
            )));
        }
        Ok(Self {
            timestamps,
            names,
            values,
            frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("no column named {name:?}; have {:?}", self.names)))
    }

    pub fn get(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channels() + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.get(r, channel)).collect()
    }

    /// The named columns only, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let idx: Vec<usize> = names.iter().map(|n| self.channel_index(n)).collect::<Result<_>>()?;
        let values = (0..self.len())
            .flat_map(|r| idx.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        Self::new(
            self.timestamps.clone(),
            names.iter().map(|n| n.to_string()).collect(),
            values,
            self.frequency,
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let c = self.channels();
        for (r, ts) in self.timestamps.iter().enumerate() {
            let mut row = vec![ts.format(DATE_FORMAT).to_string()];
            row.extend(self.values[r * c..(r + 1) * c].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Replace empty or NaN cells by the previous row's value.
    pub forward_fill: bool,
    /// Expected spacing; inferred from the first two rows when absent.
    pub frequency: Option<Frequency>,
}

pub fn ingest_csv(path: &Path, opts: CsvOptions) -> Result<RawSeries> {
    let file = std::fs::File::open(path)?;
    parse_csv(file, &path.display().to_string(), opts)
}

/// Parses CSV text; `label` names the source in error messages.
pub fn parse_csv<R: Read>(input: R, label: &str, opts: CsvOptions) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("date") {
        return Err(Error::Data(format!("{label}: first column must be \"date\"")));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Data(format!("{label}: no value columns")));
    }
    let cell_err = |row: usize, column: &str, message: String| Error::Cell {
        path: label.to_string(),
        row,
        column: column.to_string(),
        message,
    };

    let mut timestamps = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let stamp = record.get(0).unwrap_or_default();
        let ts = NaiveDateTime::parse_from_str(stamp, DATE_FORMAT)
            .map_err(|e| cell_err(row, "date", format!("cannot parse {stamp:?}: {e}")))?;
        if record.len() != names.len() + 1 {
            return Err(cell_err(row, "date", format!("expected {} fields, got {}", names.len() + 1, record.len())));
        }
        for (c, name) in names.iter().enumerate() {
            let cell = record.get(c + 1).unwrap_or_default();
            let parsed = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| cell_err(row, name, format!("not a number: {cell:?}")))?;
                (!v.is_nan()).then_some(v)
            };
            let v = match parsed {
                Some(v) if v.is_finite() => v,
                Some(v) => return Err(cell_err(row, name, format!("non-finite value {v}"))),
                None if opts.forward_fill && !timestamps.is_empty() => values[values.len() - names.len()],
                None => return Err(cell_err(row, name, "missing value".into())),
            };
            values.push(v);
        }
        timestamps.push(ts);
    }
    if timestamps.is_empty() {
        return Err(Error::Data(format!("{label}: no data rows")));
    }

    let frequency = match opts.frequency {
        Some(f) => f,
        None if timestamps.len() >= 2 => {
            let minutes = (timestamps[1] - timestamps[0]).num_minutes();
            if minutes <= 0 {
                return Err(Error::Data(format!("{label}: timestamps are not increasing at row 2")));
            }
            Frequency { minutes }
        }
        None => Frequency::HOURLY,
    };
    check_spacing(label, &timestamps, frequency)?;
    RawSeries::new(timestamps, names, values, frequency)
}

fn check_spacing(label: &str, timestamps: &[NaiveDateTime], frequency: Frequency) -> Result<()> {
    let step = frequency.step();
    for (i, pair) in timestamps.windows(2).enumerate() {
        let expected = pair[0] + step;
        if pair[1] == expected {
            continue;
        }
        if pair[1] > expected {
            return Err(Error::Gap {
                path: label.to_string(),
                after: pair[0],
                expected,
                found: pair[1],
            });
        }
        return Err(Error::Data(format!(
            "{label}: row {} at {} breaks the {frequency} spacing after {}",
            i + 2,
            pair[1],
            pair[0]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RawSeries> {
        parse_csv(text.as_bytes(), "inline", CsvOptions::default())
    }

    #[test]
    fn well_formed_hourly_file() {
        let s = parse("date,a,OT\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3,4\n2016-07-01 02:00:00,5,6\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.names, vec!["a", "OT"]);
        assert_eq!(s.frequency, Frequency::HOURLY);
        assert_eq!(s.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(s.channel_index("OT").unwrap(), 1);
        let only = s.select(&["OT"]).unwrap();
        assert_eq!((only.names.clone(), only.values.clone()), (vec!["OT".to_string()], vec![2.0, 4.0, 6.0]));
        assert_eq!(s.select(&["OT", "a"]).unwrap().values, vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0]);
        assert!(s.select(&["b"]).is_err());
    }

    #[test]
    fn skipped_hour_reports_the_gap() {
        let err = parse("date,v\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,1\n2016-07-01 03:00:00,1\n").unwrap_err();
        match err {
            Error::Gap { after, expected, found, .. } => {
                assert_eq!(after.to_string(), "2016-07-01 01:00:00");
                assert_eq!(expected.to_string(), "2016-07-01 02:00:00");
                assert_eq!(found.to_string(), "2016-07-01 03:00:00");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let err = parse("date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,1,oops\n").unwrap_err();
        match err {
            Error::Cell { row, column, .. } => assert_eq!((row, column.as_str()), (2, "b")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("date,a\n2016-07-01 00:00,1\n"), Err(Error::Cell { .. })));
        assert!(parse("time,a\n2016-07-01 00:00:00,1\n").is_err());
    }

    #[test]
    fn forward_fill_is_opt_in() {
        let text = "date,a\n2016-07-01 00:00:00,1.5\n2016-07-01 00:15:00,\n2016-07-01 00:30:00,NaN\n";
        assert!(parse(text).is_err());
        let opts = CsvOptions {
            forward_fill: true,
            ..Default::default()
        };
        let s = parse_csv(text.as_bytes(), "inline", opts).unwrap();
        assert_eq!(s.values, vec![1.5, 1.5, 1.5]);
        assert_eq!(s.frequency, Frequency::QUARTER_HOURLY);
        assert_eq!(s.frequency.time_feature_count(), 5);
    }

    #[test]
    fn frequency_strings() {
        assert_eq!("1h".parse::<Frequency>().unwrap(), Frequency::HOURLY);
        assert_eq!("15min".parse::<Frequency>().unwrap(), Frequency::QUARTER_HOURLY);
        assert_eq!(Frequency::QUARTER_HOURLY.to_string(), "15min");
        assert!("fortnight".parse::<Frequency>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = parse("date,a,b\n2016-07-01 00:00:00,0.1,-2.5e-7\n2016-07-01 01:00:00,3,4\n").unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice(), "again", CsvOptions::default()).unwrap(), s);
    }
}
