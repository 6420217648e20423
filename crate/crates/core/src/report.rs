//! Result files: a per-round CSV table and a JSON document with the full
//! per-client detail and the experiment config.
//!
//! CSV columns, in order:
//!
//! `round,mean_accuracy,rand_index,j_objective,effective_k,cond1_count,cond2_count`
//!
//! Absent optional values (`rand_index` outside case-study sample rounds,
//! `j_objective` for algorithms without clustering) are empty cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::sim::RoundRecord;

pub const CSV_HEADER: [&str; 7] = [
    "round",
    "mean_accuracy",
    "rand_index",
    "j_objective",
    "effective_k",
    "cond1_count",
    "cond2_count",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
}

fn optional(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn csv_row(r: &RoundRecord) -> [String; 7] {
    [
        r.round.to_string(),
        r.mean_accuracy.to_string(),
        optional(r.rand_index),
        optional(r.j_objective),
        r.effective_k.to_string(),
        r.cond1_count.to_string(),
        r.cond2_count.to_string(),
    ]
}

/// Writes the header and one row per record.
pub fn write_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(records: &[RoundRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

/// Streams rows to `<dir>/<stem>.csv` as rounds finish, and writes
/// `<dir>/<stem>.json` on [`RecordSink::finish`].
pub struct RecordSink {
    csv_path: PathBuf,
    json_path: PathBuf,
    csv: csv::Writer<BufWriter<File>>,
    records: Vec<RoundRecord>,
}

impl RecordSink {
    pub fn create(dir: &Path, stem: &str) -> Result<Self, ReportError> {
        std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = File::create(&csv_path).map_err(|source| ReportError::Io {
            path: csv_path.clone(),
            source,
        })?;
        let mut sink = Self {
            json_path: dir.join(format!("{stem}.json")),
            csv: csv::Writer::from_writer(BufWriter::new(file)),
            csv_path,
            records: Vec::new(),
        };
        sink.write_row(CSV_HEADER.map(String::from))?;
        Ok(sink)
    }

    fn write_row(&mut self, row: [String; 7]) -> Result<(), ReportError> {
        let wrap = |path: &Path, source| ReportError::Csv {
            path: path.to_owned(),
            source,
        };
        self.csv.write_record(row).map_err(|e| wrap(&self.csv_path, e))?;
        self.csv.flush().map_err(|source| ReportError::Io {
            path: self.csv_path.clone(),
            source,
        })
    }

    pub fn push(&mut self, record: &RoundRecord) -> Result<(), ReportError> {
        self.write_row(csv_row(record))?;
        self.records.push(record.clone());
        Ok(())
    }

    pub fn csv_path(&self) -> &Path {
        &self.csv_path
    }

    pub fn json_path(&self) -> &Path {
        &self.json_path
    }

    /// Writes the JSON document with every record pushed so far.
    pub fn finish(self, config: &ExperimentConfig) -> Result<Vec<RoundRecord>, ReportError> {
        let doc = ResultDocument {
            config: config.clone(),
            records: self.records,
        };
        write_json(&doc, &self.json_path)?;
        Ok(doc.records)
    }
}

pub fn write_json(doc: &ResultDocument, path: &Path) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, doc).map_err(|source| ReportError::Json {
        path: path.to_owned(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| ReportError::Io {
            path: path.to_owned(),
            source,
        })
}

pub fn read_json(path: &Path) -> Result<ResultDocument, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Writes both files at once.
pub fn write_records(
    dir: &Path,
    stem: &str,
    config: &ExperimentConfig,
    records: &[RoundRecord],
) -> Result<(PathBuf, PathBuf), ReportError> {
    let mut sink = RecordSink::create(dir, stem)?;
    for r in records {
        sink.push(r)?;
    }
    let paths = (sink.csv_path().to_owned(), sink.json_path().to_owned());
    sink.finish(config)?;
    Ok(paths)
}
