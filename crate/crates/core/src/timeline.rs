//! Time normalization, stream synchronization and trailing-window aggregates.

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::activity::{ActivityInterval, ActivityMatrix};
use crate::types::{SignalKind, SignalSeries, TimestampMs};

/// Default trailing-window width.
pub const DEFAULT_WINDOW_MS: i64 = 30_000;
/// Default resampling grid step for correlations.
pub const DEFAULT_GRID_MS: i64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimelineError {
    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),
    #[error("streams do not overlap in time")]
    NoTemporalOverlap,
    #[error("no series to synchronize")]
    NoSeries,
    #[error("series `{0}` is empty")]
    EmptySeries(SignalKind),
    #[error("no samples in window ending at {0}")]
    EmptyWindow(TimestampMs),
    #[error("window width must be positive, got {0}")]
    InvalidWidth(i64),
    #[error("grid step must be positive, got {0}")]
    InvalidGridStep(i64),
    #[error("session window start {start} is not before end {end}")]
    InvalidWindow { start: TimestampMs, end: TimestampMs },
}

/// Parses an ISO-8601 / RFC 3339 timestamp with explicit offset into epoch milliseconds.
pub fn normalize_timestamp(iso: &str) -> Result<TimestampMs, TimelineError> {
    let invalid = || TimelineError::InvalidTimestamp(iso.to_string());
    let parsed = DateTime::parse_from_rfc3339(iso.trim()).map_err(|_| invalid())?;
    let ms = parsed.timestamp_millis();
    if ms < 0 {
        return Err(invalid());
    }
    Ok(TimestampMs(ms))
}

/// The common time span of all streams after synchronization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SessionWindow {
    pub start: TimestampMs,
    pub end: TimestampMs,
}

impl SessionWindow {
    pub fn new(start: TimestampMs, end: TimestampMs) -> Result<Self, TimelineError> {
        if start < end {
            Ok(SessionWindow { start, end })
        } else {
            Err(TimelineError::InvalidWindow { start, end })
        }
    }

    pub fn contains(&self, t: TimestampMs) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len_ms(&self) -> i64 {
        self.end.0 - self.start.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedRow {
    pub t: TimestampMs,
    pub value: f64,
    pub window: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedSeries {
    pub kind: SignalKind,
    pub rows: Vec<WindowedRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub t: TimestampMs,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampledSeries {
    pub kind: SignalKind,
    pub grid_step_ms: i64,
    pub window: SessionWindow,
    pub points: Vec<GridPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synchronized {
    pub window: SessionWindow,
    pub series: Vec<SignalSeries>,
    pub matrices: Vec<ActivityMatrix>,
}

/// Intersection of all series spans: `(max first, min last)`.
pub fn session_window(series: &[SignalSeries]) -> Result<SessionWindow, TimelineError> {
    if series.is_empty() {
        return Err(TimelineError::NoSeries);
    }
    let mut start = TimestampMs(i64::MIN);
    let mut end = TimestampMs(i64::MAX);
    for s in series {
        let (first, last) = match (s.first_t(), s.last_t()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(TimelineError::EmptySeries(s.kind)),
        };
        start = start.max(first);
        end = end.min(last);
    }
    if start >= end {
        return Err(TimelineError::NoTemporalOverlap);
    }
    Ok(SessionWindow { start, end })
}

/// Clips every series and activity matrix to the common session window.
pub fn synchronize(
    series_set: Vec<SignalSeries>,
    matrices: Vec<ActivityMatrix>,
) -> Result<Synchronized, TimelineError> {
    let window = session_window(&series_set)?;
    let series = series_set
        .into_iter()
        .map(|mut s| {
            s.samples.retain(|x| window.contains(x.t));
            s
        })
        .collect();
    let matrices = matrices.into_iter().map(|m| clip_matrix(m, window)).collect();
    Ok(Synchronized {
        window,
        series,
        matrices,
    })
}

fn clip_matrix(matrix: ActivityMatrix, window: SessionWindow) -> ActivityMatrix {
    let intervals = matrix
        .intervals
        .into_iter()
        .filter(|iv| iv.t_end >= window.start && iv.t_start <= window.end)
        .map(|iv| ActivityInterval {
            t_start: iv.t_start.max(window.start),
            t_end: iv.t_end.min(window.end),
            ..iv
        })
        .collect();
    ActivityMatrix::new(matrix.source, intervals)
}

fn check_width(width_ms: i64) -> Result<(), TimelineError> {
    if width_ms <= 0 {
        Err(TimelineError::InvalidWidth(width_ms))
    } else {
        Ok(())
    }
}

/// Compensated (Neumaier) running sum. Supports removal so a sliding window
/// keeps error proportional to the window contents rather than the history.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut acc = CompensatedSum::default();
    let mut n = 0usize;
    for v in values {
        acc.add(v);
        n += 1;
    }
    (n > 0).then(|| acc.value() / n as f64)
}

/// Index range of samples with timestamps in the closed interval `[lo, hi]`.
fn range_indices(series: &SignalSeries, lo: i64, hi: i64) -> std::ops::Range<usize> {
    let a = series.samples.partition_point(|s| s.t.0 < lo);
    let b = series.samples.partition_point(|s| s.t.0 <= hi);
    a..b.max(a)
}

/// Mean of the samples in the closed trailing interval `[t - width_ms, t]`.
pub fn window_average(series: &SignalSeries, t: TimestampMs, width_ms: i64) -> Result<f64, TimelineError> {
    check_width(width_ms)?;
    let range = range_indices(series, t.0.saturating_sub(width_ms), t.0);
    mean_of(series.samples[range].iter().map(|s| s.value)).ok_or(TimelineError::EmptyWindow(t))
}

/// Attaches the trailing-window mean to every sample.
pub fn annotate_windows(series: &SignalSeries, width_ms: i64) -> Result<WindowedSeries, TimelineError> {
    check_width(width_ms)?;
    let samples = &series.samples;
    let mut rows = Vec::with_capacity(samples.len());
    let mut acc = CompensatedSum::default();
    let mut lo = 0usize;
    for (hi, s) in samples.iter().enumerate() {
        acc.add(s.value);
        let cutoff = s.t.0.saturating_sub(width_ms);
        while samples[lo].t.0 < cutoff {
            acc.add(-samples[lo].value);
            lo += 1;
        }
        let n = hi + 1 - lo;
        // The incremental sum can drift when values span many magnitudes;
        // recompute from scratch when the compensation term gets large.
        if acc.comp.abs() > acc.sum.abs() * 1e-6 {
            acc = CompensatedSum::default();
            for x in &samples[lo..=hi] {
                acc.add(x.value);
            }
        }
        rows.push(WindowedRow {
            t: s.t,
            value: s.value,
            window: acc.value() / n as f64,
        });
    }
    Ok(WindowedSeries {
        kind: series.kind,
        rows,
    })
}

/// Samples the trailing-window mean on a regular grid anchored at `window.start`.
///
/// An empty window falls back to the most recent earlier sample; grid points
/// with no earlier sample at all are missing.
pub fn resample(
    series: &SignalSeries,
    window: SessionWindow,
    grid_step_ms: i64,
    width_ms: i64,
) -> Result<ResampledSeries, TimelineError> {
    if grid_step_ms <= 0 {
        return Err(TimelineError::InvalidGridStep(grid_step_ms));
    }
    check_width(width_ms)?;
    let count = (window.len_ms() / grid_step_ms) as usize + 1;
    let points = (0..count)
        .map(|k| {
            let t = window.start.0 + k as i64 * grid_step_ms;
            let lo = t.saturating_sub(width_ms);
            let range = range_indices(series, lo, t);
            let value = if range.is_empty() {
                // range.start is the first index with t >= lo, so anything before it is older.
                range.start.checked_sub(1).map(|i| series.samples[i].value)
            } else {
                mean_of(series.samples[range].iter().map(|s| s.value))
            };
            GridPoint {
                t: TimestampMs(t),
                value,
            }
        })
        .collect();
    Ok(ResampledSeries {
        kind: series.kind,
        grid_step_ms,
        window,
        points,
    })
}
