//! Parsers for the raw session sources: edX tracking log, LOGGE CSV, signal
//! exports, pretest answers, video frame indexes and learner profiles.
//!
//! Line numbers in errors are 1-based and count the CSV header as line 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::timeline::normalize_timestamp;
use crate::types::{
    BlinkEvents, EegBand, FrameStamp, ItemScore, LearnerProfile, PretestMatrix, Sample, SignalKind, SignalSeries,
    TimestampMs, VideoFrameIndex,
};

pub const LOGGE_HEADER: &[&str] = &["time", "activity_id", "marker"];
pub const SIGNAL_HEADER: &[&str] = &["t_ms", "value"];
pub const EEG_HEADER: &[&str] = &[
    "t_ms",
    "delta",
    "theta",
    "alpha",
    "beta",
    "gamma",
    "attention",
    "meditation",
    "blink",
];
pub const PRETEST_HEADER: &[&str] = &["item", "answer"];
pub const FRAME_HEADER: &[&str] = &["frame", "t_ms"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {0}: malformed event")]
    MalformedEvent(usize),
    #[error("line {0}: missing field `{1}`")]
    MissingField(usize, &'static str),
    #[error("line {0}: malformed row")]
    MalformedRow(usize),
    #[error("line {0}: unknown marker")]
    UnknownMarker(usize),
    #[error("line {0}: invalid timestamp")]
    InvalidTimestamp(usize),
    #[error("line {0}: timestamps not strictly increasing")]
    NonMonotonicTimestamps(usize),
    #[error("line {0}: non-finite value")]
    NonFiniteValue(usize),
    #[error("series has no samples")]
    EmptySeries,
    #[error("line {0}: blink flag must be 0 or 1")]
    InvalidBlinkFlag(usize),
    #[error("frequency must be positive")]
    NonPositiveFrequency,
    #[error("answered item `{0}` has no key entry")]
    UnknownItem(String),
    #[error("duplicate item `{0}`")]
    DuplicateItem(String),
    #[error("line {0}: frame numbers not strictly increasing")]
    NonMonotonicFrames(usize),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("invalid learner profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One edX tracking-log event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdxEvent {
    pub username: String,
    pub event_type: String,
    pub time: TimestampMs,
    pub resource_id: Option<String>,
    /// Fields of the `event` body, scalars verbatim and nested values as JSON text.
    pub payload: BTreeMap<String, String>,
    /// Unrecognized top-level fields, same encoding as `payload`.
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Start,
    End,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggeEvent {
    pub time: TimestampMs,
    pub activity_id: String,
    pub marker: Marker,
}

/// Everything an EEG headset export yields.
#[derive(Clone, Debug, PartialEq)]
pub struct EegExport {
    /// Delta through Gamma.
    pub bands: [SignalSeries; 5],
    pub attention: SignalSeries,
    pub meditation: SignalSeries,
    pub blinks: BlinkEvents,
}

impl EegExport {
    pub fn into_series(self) -> Vec<SignalSeries> {
        let mut out = vec![self.attention, self.meditation];
        out.extend(self.bands);
        out
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn flatten(map: &serde_json::Map<String, Value>) -> BTreeMap<String, String> {
    map.iter().map(|(k, v)| (k.clone(), scalar_text(v))).collect()
}

const RESOURCE_KEYS: &[&str] = &["id", "problem_id", "module_id"];

/// Parses a JSON Lines edX log. Blank lines are skipped.
pub fn parse_edx_log<R: Read>(stream: R) -> Result<Vec<EdxEvent>, IngestError> {
    let mut events = Vec::new();
    for (i, line) in BufReader::new(stream).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Value::Object(mut obj) =
            serde_json::from_str::<Value>(&line).map_err(|_| IngestError::MalformedEvent(line_no))?
        else {
            return Err(IngestError::MalformedEvent(line_no));
        };
        let mut take_str = |field: &'static str| match obj.remove(field) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s),
            Some(Value::Null) | None => Err(IngestError::MissingField(line_no, field)),
            Some(_) => Err(IngestError::MalformedEvent(line_no)),
        };
        let username = take_str("username")?;
        let event_type = take_str("event_type")?;
        let time_raw = take_str("time")?;
        let time = normalize_timestamp(&time_raw).map_err(|_| IngestError::InvalidTimestamp(line_no))?;

        // Browser-side events carry `event` as a JSON-encoded string.
        let body = match obj.remove("event") {
            Some(Value::Object(m)) => Some(m),
            Some(Value::String(s)) => match serde_json::from_str::<Value>(&s) {
                Ok(Value::Object(m)) => Some(m),
                _ => {
                    obj.insert("event".into(), Value::String(s));
                    None
                }
            },
            Some(other) => {
                obj.insert("event".into(), other);
                None
            }
            None => None,
        };
        let payload = body.as_ref().map(flatten).unwrap_or_default();
        let resource_id = RESOURCE_KEYS
            .iter()
            .find_map(|k| payload.get(*k).filter(|s| !s.is_empty()).cloned())
            .or_else(|| match obj.get("page") {
                Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
                _ => None,
            });
        events.push(EdxEvent {
            username,
            event_type,
            time,
            resource_id,
            payload,
            extra: flatten(&obj),
        });
    }
    Ok(events)
}

/// CSV reader over one of the fixed-header formats. Yields `(line_no, record)`.
struct CsvRows<R: Read> {
    reader: csv::Reader<R>,
}

impl<R: Read> CsvRows<R> {
    fn open(stream: R, expected: &[&str]) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(stream);
        let headers = reader.headers().map_err(|e| csv_error(e, 1))?;
        if headers.iter().ne(expected.iter().copied()) {
            return Err(IngestError::BadHeader {
                expected: expected.join(","),
                found: headers.iter().collect::<Vec<_>>().join(","),
            });
        }
        Ok(CsvRows { reader })
    }

    fn for_each(
        mut self,
        width: usize,
        mut f: impl FnMut(usize, &csv::StringRecord) -> Result<(), IngestError>,
    ) -> Result<(), IngestError> {
        let mut record = csv::StringRecord::new();
        let mut last_line = 1usize;
        loop {
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| csv_error(e, last_line + 1))?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(last_line + 1, |p| p.line() as usize);
            last_line = line;
            if record.len() == 1 && record[0].is_empty() && width > 1 {
                continue;
            }
            if record.len() != width {
                return Err(IngestError::MalformedRow(line));
            }
            f(line, &record)?;
        }
    }
}

fn csv_error(e: csv::Error, fallback_line: usize) -> IngestError {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return IngestError::Io(io);
        }
        return IngestError::MalformedRow(fallback_line);
    }
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    IngestError::MalformedRow(line)
}

/// Parses the LOGGE activity log (`time,activity_id,marker`).
pub fn parse_logge_csv<R: Read>(stream: R) -> Result<Vec<LoggeEvent>, IngestError> {
    let mut out = Vec::new();
    CsvRows::open(stream, LOGGE_HEADER)?.for_each(3, |line, rec| {
        let time = normalize_timestamp(&rec[0]).map_err(|_| IngestError::InvalidTimestamp(line))?;
        let activity_id = rec[1].to_string();
        if activity_id.is_empty() {
            return Err(IngestError::MalformedRow(line));
        }
        let marker = match &rec[2] {
            "start" => Marker::Start,
            "end" => Marker::End,
            _ => return Err(IngestError::UnknownMarker(line)),
        };
        out.push(LoggeEvent {
            time,
            activity_id,
            marker,
        });
        Ok(())
    })?;
    Ok(out)
}

fn parse_t_ms(field: &str, line: usize) -> Result<TimestampMs, IngestError> {
    match field.parse::<i64>() {
        Ok(t) if t >= 0 => Ok(TimestampMs(t)),
        _ => Err(IngestError::MalformedRow(line)),
    }
}

fn parse_value(field: &str, line: usize) -> Result<f64, IngestError> {
    let v: f64 = field.parse().map_err(|_| IngestError::MalformedRow(line))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IngestError::NonFiniteValue(line))
    }
}

/// Parses a single-variable export (`t_ms,value`).
pub fn parse_signal_csv<R: Read>(stream: R, kind: SignalKind) -> Result<SignalSeries, IngestError> {
    let mut samples: Vec<Sample> = Vec::new();
    CsvRows::open(stream, SIGNAL_HEADER)?.for_each(2, |line, rec| {
        let t = parse_t_ms(&rec[0], line)?;
        if samples.last().is_some_and(|prev| prev.t >= t) {
            return Err(IngestError::NonMonotonicTimestamps(line));
        }
        let value = parse_value(&rec[1], line)?;
        samples.push(Sample { t, value });
        Ok(())
    })?;
    if samples.is_empty() {
        return Err(IngestError::EmptySeries);
    }
    Ok(SignalSeries::new(kind, samples))
}

/// Parses the EEG headset export into five band series, attention,
/// meditation and blink instants.
pub fn parse_eeg_csv<R: Read>(stream: R) -> Result<EegExport, IngestError> {
    // column order after t_ms
    let kinds: [SignalKind; 7] = [
        SignalKind::Eeg(EegBand::Delta),
        SignalKind::Eeg(EegBand::Theta),
        SignalKind::Eeg(EegBand::Alpha),
        SignalKind::Eeg(EegBand::Beta),
        SignalKind::Eeg(EegBand::Gamma),
        SignalKind::Attention,
        SignalKind::Meditation,
    ];
    let mut columns: [Vec<Sample>; 7] = Default::default();
    let mut blinks = Vec::new();
    let mut last_t: Option<TimestampMs> = None;
    CsvRows::open(stream, EEG_HEADER)?.for_each(EEG_HEADER.len(), |line, rec| {
        let t = parse_t_ms(&rec[0], line)?;
        if last_t.is_some_and(|prev| prev >= t) {
            return Err(IngestError::NonMonotonicTimestamps(line));
        }
        last_t = Some(t);
        for (col, samples) in columns.iter_mut().enumerate() {
            samples.push(Sample {
                t,
                value: parse_value(&rec[col + 1], line)?,
            });
        }
        match &rec[8] {
            "0" => {}
            "1" => blinks.push(t),
            _ => return Err(IngestError::InvalidBlinkFlag(line)),
        }
        Ok(())
    })?;
    if columns[0].is_empty() {
        return Err(IngestError::EmptySeries);
    }
    let mut series = kinds
        .into_iter()
        .zip(columns)
        .map(|(kind, samples)| SignalSeries::new(kind, samples));
    let mut next = || series.next().expect("seven columns");
    let bands = [next(), next(), next(), next(), next()];
    Ok(EegExport {
        bands,
        attention: next(),
        meditation: next(),
        blinks: BlinkEvents { times: blinks },
    })
}

/// EEG band for a frequency, using half-open ranges `[lo, hi)`.
pub fn classify_band(freq_hz: f64) -> Result<EegBand, IngestError> {
    if freq_hz.is_nan() || freq_hz <= 0.0 {
        return Err(IngestError::NonPositiveFrequency);
    }
    Ok(EegBand::ALL
        .into_iter()
        .find(|b| freq_hz < b.range_hz().1)
        .unwrap_or(EegBand::Gamma))
}

fn read_item_answers<R: Read>(stream: R) -> Result<Vec<(String, String)>, IngestError> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    CsvRows::open(stream, PRETEST_HEADER)?.for_each(2, |line, rec| {
        let item = rec[0].to_string();
        if item.is_empty() {
            return Err(IngestError::MalformedRow(line));
        }
        if !seen.insert(item.clone()) {
            return Err(IngestError::DuplicateItem(item));
        }
        rows.push((item, rec[1].to_string()));
        Ok(())
    })?;
    Ok(rows)
}

/// Grades pretest answers against the key by exact, case-sensitive match.
pub fn parse_pretest<A: Read, K: Read>(answers: A, key: K) -> Result<PretestMatrix, IngestError> {
    let answers = read_item_answers(answers)?;
    let key: HashMap<String, String> = read_item_answers(key)?.into_iter().collect();
    let rows = answers
        .into_iter()
        .map(|(item, answer)| {
            let expected = key.get(&item).ok_or_else(|| IngestError::UnknownItem(item.clone()))?;
            let score = if *expected == answer { 1.0 } else { 0.0 };
            Ok(ItemScore { item, score })
        })
        .collect::<Result<_, IngestError>>()?;
    Ok(PretestMatrix { rows })
}

/// Parses a per-video frame timestamp table (`frame,t_ms`).
pub fn parse_frame_index<R: Read>(stream: R, video_id: &str) -> Result<VideoFrameIndex, IngestError> {
    let mut rows: Vec<FrameStamp> = Vec::new();
    CsvRows::open(stream, FRAME_HEADER)?.for_each(2, |line, rec| {
        let frame_no: u64 = rec[0].parse().map_err(|_| IngestError::MalformedRow(line))?;
        let t = parse_t_ms(&rec[1], line)?;
        if let Some(prev) = rows.last() {
            if prev.frame_no >= frame_no {
                return Err(IngestError::NonMonotonicFrames(line));
            }
            if prev.t > t {
                return Err(IngestError::NonMonotonicTimestamps(line));
            }
        }
        rows.push(FrameStamp { frame_no, t });
        Ok(())
    })?;
    Ok(VideoFrameIndex {
        video_id: video_id.to_string(),
        rows,
    })
}

/// Parses `{"learner_id": ..., "attributes": {...}}`. Non-string attribute
/// values are kept as their JSON text.
pub fn parse_learner_profile<R: Read>(stream: R) -> Result<LearnerProfile, IngestError> {
    let invalid = |msg: &str| IngestError::InvalidProfile(msg.to_string());
    let value: Value = serde_json::from_reader(stream).map_err(|e| IngestError::InvalidProfile(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| invalid("expected a JSON object"))?;
    let learner_id = match obj.get("learner_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        _ => return Err(invalid("learner_id must be a non-empty string")),
    };
    let attributes = match obj.get("attributes") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => flatten(m),
        Some(_) => return Err(invalid("attributes must be an object")),
    };
    Ok(LearnerProfile { learner_id, attributes })
}
