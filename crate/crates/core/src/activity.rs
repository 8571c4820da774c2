//! Activity matrices from LOGGE and edX logs, MOOC-priority merging and the
//! learner-matrix join.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ingest::{EdxEvent, LoggeEvent, Marker};
use crate::timeline::{SessionWindow, WindowedSeries};
use crate::types::{SignalKind, TimestampMs};

/// Reserved id for samples not covered by any activity interval.
pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActivityError {
    #[error("end marker for `{activity_id}` at {t} has no matching start")]
    EndWithoutStart { activity_id: String, t: TimestampMs },
    #[error("invalid boundary config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivityInterval {
    pub activity_id: String,
    pub t_start: TimestampMs,
    pub t_end: TimestampMs,
}

impl ActivityInterval {
    pub fn new(activity_id: impl Into<String>, t_start: i64, t_end: i64) -> Self {
        ActivityInterval {
            activity_id: activity_id.into(),
            t_start: TimestampMs(t_start),
            t_end: TimestampMs(t_end),
        }
    }

    pub fn covers(&self, t: TimestampMs) -> bool {
        self.t_start <= t && t <= self.t_end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixSource {
    Logge,
    Mooc,
    Merged,
}

/// Source-tagged activity intervals, kept sorted by `(t_start, activity_id, t_end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityMatrix {
    pub source: MatrixSource,
    pub intervals: Vec<ActivityInterval>,
}

impl ActivityMatrix {
    pub fn new(source: MatrixSource, mut intervals: Vec<ActivityInterval>) -> Self {
        sort_intervals(&mut intervals);
        ActivityMatrix { source, intervals }
    }

    pub fn empty(source: MatrixSource) -> Self {
        ActivityMatrix {
            source,
            intervals: Vec::new(),
        }
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.intervals.iter().map(|iv| iv.activity_id.as_str()).collect()
    }

    pub fn is_sorted(&self) -> bool {
        self.intervals
            .windows(2)
            .all(|w| interval_key(&w[0]) <= interval_key(&w[1]))
    }
}

fn interval_key(iv: &ActivityInterval) -> (TimestampMs, &str, TimestampMs) {
    (iv.t_start, iv.activity_id.as_str(), iv.t_end)
}

fn sort_intervals(intervals: &mut [ActivityInterval]) {
    intervals.sort_by(|a, b| interval_key(a).cmp(&interval_key(b)));
}

/// Pairs LOGGE start/end markers FIFO per activity id. A start that never
/// ends is closed at the end of the session window.
pub fn logge_to_activity_matrix(events: &[LoggeEvent], window: SessionWindow) -> Result<ActivityMatrix, ActivityError> {
    let mut open: HashMap<&str, VecDeque<TimestampMs>> = HashMap::new();
    let mut intervals = Vec::new();
    for ev in events {
        match ev.marker {
            Marker::Start => open.entry(ev.activity_id.as_str()).or_default().push_back(ev.time),
            Marker::End => {
                let start = open
                    .get_mut(ev.activity_id.as_str())
                    .and_then(VecDeque::pop_front)
                    .ok_or_else(|| ActivityError::EndWithoutStart {
                        activity_id: ev.activity_id.clone(),
                        t: ev.time,
                    })?;
                intervals.push(ActivityInterval {
                    activity_id: ev.activity_id.clone(),
                    t_start: start,
                    t_end: ev.time.max(start),
                });
            }
        }
    }
    for (id, starts) in open {
        for start in starts {
            intervals.push(ActivityInterval {
                activity_id: id.to_string(),
                t_start: start,
                t_end: window.end.max(start),
            });
        }
    }
    Ok(ActivityMatrix::new(MatrixSource::Logge, intervals))
}

/// What an edX event type does to the current activity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum BoundaryAction {
    /// Starts `label` (with `{id}` replaced by the resource id), closing any open activity.
    Opens {
        label: String,
    },
    Closes,
    Ignored,
}

/// Maps edX event types to activity boundaries. Unmapped types are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub event_types: BTreeMap<String, BoundaryAction>,
}

/// Substituted for `{id}` when an opening event carries no resource id.
pub const UNKNOWN_RESOURCE: &str = "unknown";

impl Default for BoundaryConfig {
    fn default() -> Self {
        let opens = |label: &str| BoundaryAction::Opens {
            label: label.to_string(),
        };
        let event_types = [
            ("play_video", opens("video:{id}")),
            ("pause_video", BoundaryAction::Closes),
            ("stop_video", BoundaryAction::Closes),
            ("seq_goto", opens("sequence:{id}")),
            ("page_close", BoundaryAction::Closes),
            ("problem_check", BoundaryAction::Ignored),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        BoundaryConfig { event_types }
    }
}

impl BoundaryConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ActivityError> {
        let config: BoundaryConfig =
            serde_json::from_slice(bytes).map_err(|e| ActivityError::InvalidConfig(e.to_string()))?;
        for (event_type, action) in &config.event_types {
            if let BoundaryAction::Opens { label } = action {
                if label.is_empty() {
                    return Err(ActivityError::InvalidConfig(format!("empty label for `{event_type}`")));
                }
            }
        }
        Ok(config)
    }

    pub fn action(&self, event_type: &str) -> &BoundaryAction {
        self.event_types.get(event_type).unwrap_or(&BoundaryAction::Ignored)
    }
}

/// Builds the MOOC activity matrix with the boundary-event model.
pub fn edx_to_activity_matrix(events: &[EdxEvent], window: SessionWindow, mapping: &BoundaryConfig) -> ActivityMatrix {
    let mut intervals = Vec::new();
    let mut current: Option<(String, TimestampMs)> = None;
    let mut close = |current: &mut Option<(String, TimestampMs)>, at: TimestampMs| {
        if let Some((activity_id, t_start)) = current.take() {
            intervals.push(ActivityInterval {
                activity_id,
                t_start,
                t_end: at.max(t_start),
            });
        }
    };
    for ev in events {
        match mapping.action(&ev.event_type) {
            BoundaryAction::Opens { label } => {
                close(&mut current, ev.time);
                let id = ev.resource_id.as_deref().unwrap_or(UNKNOWN_RESOURCE);
                current = Some((label.replace("{id}", id), ev.time));
            }
            BoundaryAction::Closes => close(&mut current, ev.time),
            BoundaryAction::Ignored => {}
        }
    }
    close(&mut current, window.end);
    ActivityMatrix::new(MatrixSource::Mooc, intervals)
}

/// Combines LOGGE and MOOC matrices. Ids present in both sources keep only
/// their MOOC intervals; ids present in one source keep all of theirs.
pub fn merge_activity_matrices(logge: &ActivityMatrix, mooc: &ActivityMatrix) -> ActivityMatrix {
    let mooc_ids = mooc.ids();
    let intervals = logge
        .intervals
        .iter()
        .filter(|iv| !mooc_ids.contains(iv.activity_id.as_str()))
        .chain(mooc.intervals.iter())
        .cloned()
        .collect();
    ActivityMatrix::new(MatrixSource::Merged, intervals)
}

fn better(candidate: &ActivityInterval, best: Option<&ActivityInterval>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.t_start > b.t_start || (candidate.t_start == b.t_start && candidate.activity_id < b.activity_id)
        }
    }
}

/// Activity at `t`: the covering interval with the latest start, ties broken by
/// the smallest id; [`UNLABELED`] when nothing covers `t`.
pub fn activity_at(matrix: &ActivityMatrix, t: TimestampMs) -> &str {
    let mut best: Option<&ActivityInterval> = None;
    for iv in matrix.intervals.iter().filter(|iv| iv.covers(t)) {
        if better(iv, best) {
            best = Some(iv);
        }
    }
    best.map_or(UNLABELED, |iv| iv.activity_id.as_str())
}

/// Sorted view over a matrix answering [`activity_at`] queries without a full scan.
pub struct ActivityIndex<'a> {
    intervals: Vec<&'a ActivityInterval>,
    // max t_end over intervals[..=i]
    prefix_max_end: Vec<TimestampMs>,
}

impl<'a> ActivityIndex<'a> {
    pub fn new(matrix: &'a ActivityMatrix) -> Self {
        let mut intervals: Vec<&ActivityInterval> = matrix.intervals.iter().collect();
        intervals.sort_by(|a, b| interval_key(a).cmp(&interval_key(b)));
        let mut prefix_max_end = Vec::with_capacity(intervals.len());
        let mut running = TimestampMs(i64::MIN);
        for iv in &intervals {
            running = running.max(iv.t_end);
            prefix_max_end.push(running);
        }
        ActivityIndex {
            intervals,
            prefix_max_end,
        }
    }

    pub fn lookup(&self, t: TimestampMs) -> &'a str {
        let upto = self.intervals.partition_point(|iv| iv.t_start <= t);
        let mut best: Option<&ActivityInterval> = None;
        for i in (0..upto).rev() {
            if self.prefix_max_end[i] < t {
                break;
            }
            let iv = self.intervals[i];
            if let Some(b) = best {
                if iv.t_start < b.t_start {
                    break;
                }
            }
            if iv.t_end >= t && better(iv, best) {
                best = Some(iv);
            }
        }
        best.map_or(UNLABELED, |iv| iv.activity_id.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerRow {
    pub t: TimestampMs,
    pub value: f64,
    pub window: f64,
    pub activity_id: String,
}

/// Per-signal joined table: timestamp, value, trailing-window mean, activity id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerMatrix {
    pub kind: SignalKind,
    pub window: SessionWindow,
    pub rows: Vec<LearnerRow>,
}

pub fn build_learner_matrix(series: &WindowedSeries, merged: &ActivityMatrix, window: SessionWindow) -> LearnerMatrix {
    let index = ActivityIndex::new(merged);
    let rows = series
        .rows
        .iter()
        .map(|r| LearnerRow {
            t: r.t,
            value: r.value,
            window: r.window,
            activity_id: index.lookup(r.t).to_string(),
        })
        .collect();
    LearnerMatrix {
        kind: series.kind,
        window,
        rows,
    }
}
