//! CSV and JSON export of learner matrices and analytics.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::activity::{LearnerMatrix, LearnerRow};
use crate::analytics::{ActivitySummary, CorrelationMatrix, PerformanceReport, PosttestMatrix};
use crate::canonical::to_canonical_vec;
use crate::store::SessionRecord;
use crate::timeline::SessionWindow;
use crate::types::{PretestMatrix, SignalKind, TimestampMs};

pub const LM_HEADER: &[&str] = &["t_ms", "value", "window", "activity_id"];

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("unknown export format `{0}` (expected csv or json)")]
    UnknownFormat(String),
    #[error("line {0}: malformed learner matrix row")]
    MalformedRow(usize),
    #[error("bad learner matrix header")]
    BadHeader,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(ExportError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn lm_file_name(kind: SignalKind) -> String {
    format!("lm_{}.csv", kind.token())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `t_ms,value,window,activity_id`. Reals use the shortest
/// representation that parses back to the same value.
pub fn write_learner_matrix_csv<W: Write>(lm: &LearnerMatrix, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LM_HEADER)?;
    for row in &lm.rows {
        w.write_record([
            row.t.0.to_string(),
            row.value.to_string(),
            row.window.to_string(),
            row.activity_id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_learner_matrix_csv<R: Read>(
    input: R,
    kind: SignalKind,
    window: SessionWindow,
) -> Result<LearnerMatrix, ExportError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(LM_HEADER.iter().copied()) {
        return Err(ExportError::BadHeader);
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = || ExportError::MalformedRow(line);
        if rec.len() != 4 {
            return Err(bad());
        }
        rows.push(LearnerRow {
            t: TimestampMs(rec[0].parse().map_err(|_| bad())?),
            value: rec[1].parse().map_err(|_| bad())?,
            window: rec[2].parse().map_err(|_| bad())?,
            activity_id: rec[3].to_string(),
        });
    }
    Ok(LearnerMatrix { kind, window, rows })
}

fn write_correlations_csv<W: Write>(c: &CorrelationMatrix, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["kind".to_string()];
    header.extend(c.kinds.iter().map(|k| k.token().to_string()));
    w.write_record(&header)?;
    for (kind, row) in c.kinds.iter().zip(&c.r) {
        let mut rec = vec![kind.token().to_string()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_performance_csv<W: Write>(p: &PerformanceReport, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item", "pre", "post"])?;
    for row in &p.per_item {
        w.write_record([row.item.clone(), opt(row.pre), opt(row.post)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_summaries_csv<W: Write>(s: &ActivitySummary, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "kind",
        "activity_id",
        "mean",
        "min",
        "max",
        "sample_count",
        "duration_share",
    ])?;
    for row in &s.rows {
        w.write_record([
            row.kind.token().to_string(),
            row.activity_id.clone(),
            opt(row.mean),
            opt(row.min),
            opt(row.max),
            row.sample_count.to_string(),
            row.duration_share.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AnalyticsBundle<'a> {
    session_id: &'a str,
    window: SessionWindow,
    correlations: &'a CorrelationMatrix,
    performance: &'a PerformanceReport,
    summaries: &'a ActivitySummary,
    pretest: &'a PretestMatrix,
    posttest: &'a PosttestMatrix,
}

/// Writes the session's learner matrices and analytics under `dir`, returning
/// the files written.
pub fn export_session(record: &SessionRecord, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut create = |name: String| -> Result<(fs::File, PathBuf), ExportError> {
        let path = dir.join(name);
        let file = fs::File::create(&path)?;
        written.push(path.clone());
        Ok((file, path))
    };
    match format {
        ExportFormat::Csv => {
            for (kind, lm) in &record.learner_matrices {
                write_learner_matrix_csv(lm, io::BufWriter::new(create(lm_file_name(*kind))?.0))?;
            }
            write_correlations_csv(&record.correlations, create("correlations.csv".into())?.0)?;
            write_performance_csv(&record.performance, create("performance.csv".into())?.0)?;
            write_summaries_csv(&record.summaries, create("summaries.csv".into())?.0)?;
        }
        ExportFormat::Json => {
            let (mut f, _) = create("learner_matrices.json".into())?;
            f.write_all(&to_canonical_vec(&record.learner_matrices)?)?;
            let bundle = AnalyticsBundle {
                session_id: &record.session_id,
                window: record.window,
                correlations: &record.correlations,
                performance: &record.performance,
                summaries: &record.summaries,
                pretest: &record.pretest,
                posttest: &record.posttest,
            };
            let (mut f, _) = create("analytics.json".into())?;
            f.write_all(&to_canonical_vec(&bundle)?)?;
        }
    }
    Ok(written)
}
