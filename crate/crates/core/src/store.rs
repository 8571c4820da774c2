//! Session persistence: one canonical JSON document per session plus a media
//! directory, behind a pluggable [`SessionStore`] interface.
//!
//! Layout of the file-backed store:
//!
//! ```text
//! <root>/catalog.json
//! <root>/sessions/<id>/record.json
//! <root>/media/<id>/<name>
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, Read, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityMatrix, LearnerMatrix, UNLABELED};
use crate::analytics::{ActivitySummary, CorrelationMatrix, PerformanceReport, PosttestMatrix};
use crate::canonical::to_canonical_vec;
use crate::timeline::SessionWindow;
use crate::types::{BlinkEvents, LearnerProfile, PretestMatrix, SignalKind, TimestampMs, VideoFrameIndex};

/// Environment variable overriding the store root.
pub const STORE_ROOT_ENV: &str = "M2LADS_STORE_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("media `{0}` already exists")]
    NameCollision(String),
    #[error("path `{0}` escapes the media directory")]
    PathViolation(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("corrupt document {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Everything produced for one learning session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub learner: LearnerProfile,
    pub window: SessionWindow,
    pub merged_matrix: ActivityMatrix,
    pub learner_matrices: std::collections::BTreeMap<SignalKind, LearnerMatrix>,
    pub blinks: BlinkEvents,
    pub pretest: PretestMatrix,
    pub posttest: PosttestMatrix,
    pub performance: PerformanceReport,
    pub correlations: CorrelationMatrix,
    pub summaries: ActivitySummary,
    pub frame_indexes: Vec<VideoFrameIndex>,
    pub created_at: TimestampMs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub session_id: String,
    pub learner_id: String,
    pub window: SessionWindow,
    pub created_at: TimestampMs,
}

impl CatalogEntry {
    fn of(record: &SessionRecord) -> Self {
        CatalogEntry {
            session_id: record.session_id.clone(),
            learner_id: record.learner.learner_id.clone(),
            window: record.window,
            created_at: record.created_at,
        }
    }
}

/// Conjunctive catalog filter. The time range keeps sessions whose window
/// overlaps `[from, to]`.
#[derive(Clone, Debug, Default)]
pub struct SessionFilter {
    pub learner_id: Option<String>,
    pub from: Option<TimestampMs>,
    pub to: Option<TimestampMs>,
}

impl SessionFilter {
    pub fn matches(&self, e: &CatalogEntry) -> bool {
        self.learner_id.as_ref().is_none_or(|l| *l == e.learner_id)
            && self.from.is_none_or(|f| e.window.end >= f)
            && self.to.is_none_or(|t| e.window.start <= t)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub session_id: String,
    pub name: String,
    /// Relative to the session's media directory.
    pub relative_path: String,
    pub byte_size: u64,
}

pub trait MediaRead: Read + Seek + Send {}
impl<T: Read + Seek + Send> MediaRead for T {}

pub struct MediaStream {
    pub media: MediaRef,
    pub reader: Box<dyn MediaRead>,
}

/// One downsampled (or raw) chart point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPoint {
    pub t: TimestampMs,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub activity_id: String,
}

pub trait SessionStore: Send + Sync {
    fn put_session(&self, record: &SessionRecord) -> Result<String, StoreError>;
    fn get_session(&self, session_id: &str) -> Result<Arc<SessionRecord>, StoreError>;
    /// Sorted by `created_at` descending, then session id.
    fn list_sessions(&self, filter: &SessionFilter) -> Result<Vec<CatalogEntry>, StoreError>;
    fn attach_media(&self, session_id: &str, name: &str, source: &Path) -> Result<MediaRef, StoreError>;
    fn open_media(&self, session_id: &str, name: &str) -> Result<MediaStream, StoreError>;
    fn list_media(&self, session_id: &str) -> Result<Vec<MediaRef>, StoreError>;

    fn query_signal(
        &self,
        session_id: &str,
        kind: SignalKind,
        from: TimestampMs,
        to: TimestampMs,
        max_points: usize,
    ) -> Result<Vec<SignalPoint>, StoreError> {
        if from > to {
            return Err(StoreError::InvalidRange(format!("from {from} is after to {to}")));
        }
        let record = self.get_session(session_id)?;
        let lm = record
            .learner_matrices
            .get(&kind)
            .ok_or_else(|| StoreError::NotFound(format!("signal `{kind}` in session `{session_id}`")))?;
        downsample(lm, from, to, max_points)
    }
}

/// Rows of `lm` in `[from, to]`, reduced to at most `max_points` equal-time
/// buckets. Each bucket reports the mean, min and max value, the timestamp and
/// activity id of its first row. At most `max_points` rows pass through unchanged.
pub fn downsample(
    lm: &LearnerMatrix,
    from: TimestampMs,
    to: TimestampMs,
    max_points: usize,
) -> Result<Vec<SignalPoint>, StoreError> {
    if from > to {
        return Err(StoreError::InvalidRange(format!("from {from} is after to {to}")));
    }
    if max_points == 0 {
        return Err(StoreError::InvalidRange("max_points must be positive".into()));
    }
    let lo = lm.rows.partition_point(|r| r.t < from);
    let hi = lm.rows.partition_point(|r| r.t <= to);
    let rows = &lm.rows[lo..hi.max(lo)];
    if rows.len() <= max_points {
        return Ok(rows
            .iter()
            .map(|r| SignalPoint {
                t: r.t,
                mean: r.value,
                min: r.value,
                max: r.value,
                activity_id: r.activity_id.clone(),
            })
            .collect());
    }
    let span = (to.0 - from.0) as i128 + 1;
    let buckets = max_points as i128;
    let mut out: Vec<SignalPoint> = Vec::with_capacity(max_points);
    let mut current: Option<(i128, f64, usize)> = None;
    for r in rows {
        let b = (r.t.0 - from.0) as i128 * buckets / span;
        match current {
            Some((cb, ref mut sum, ref mut n)) if cb == b => {
                let p = out.last_mut().expect("open bucket");
                *sum += r.value;
                *n += 1;
                p.min = p.min.min(r.value);
                p.max = p.max.max(r.value);
                p.mean = *sum / *n as f64;
            }
            _ => {
                current = Some((b, r.value, 1));
                out.push(SignalPoint {
                    t: r.t,
                    mean: r.value,
                    min: r.value,
                    max: r.value,
                    activity_id: r.activity_id.clone(),
                });
            }
        }
    }
    Ok(out)
}

fn is_safe_segment(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Checks the cross-field invariants of a record before it is stored.
pub fn validate_record(record: &SessionRecord) -> Result<(), StoreError> {
    let fail = |msg: String| Err(StoreError::ValidationFailed(msg));
    if !is_safe_segment(&record.session_id) {
        return fail(format!("session id `{}` is not a safe path segment", record.session_id));
    }
    if record.learner.learner_id.is_empty() {
        return fail("learner_id is empty".into());
    }
    let w = record.window;
    if w.start >= w.end || w.start.0 < 0 {
        return fail("session window is empty".into());
    }
    if !record.merged_matrix.is_sorted() {
        return fail("merged matrix is not sorted".into());
    }
    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for iv in &record.merged_matrix.intervals {
        if iv.activity_id.is_empty() || iv.t_start > iv.t_end || !w.contains(iv.t_start) || !w.contains(iv.t_end) {
            return fail(format!(
                "activity interval `{}` outside the session window",
                iv.activity_id
            ));
        }
        ids.insert(iv.activity_id.as_str());
    }
    for (kind, lm) in &record.learner_matrices {
        if lm.kind != *kind {
            return fail(format!("learner matrix under `{kind}` has kind `{}`", lm.kind));
        }
        if lm.window != w {
            return fail(format!(
                "learner matrix `{kind}` window differs from the session window"
            ));
        }
        if lm.rows.windows(2).any(|p| p[0].t >= p[1].t) {
            return fail(format!("learner matrix `{kind}` timestamps not strictly increasing"));
        }
        for row in &lm.rows {
            if !w.contains(row.t) || !row.value.is_finite() || !row.window.is_finite() {
                return fail(format!("learner matrix `{kind}` has an invalid row at {}", row.t));
            }
            if row.activity_id != UNLABELED && !ids.contains(row.activity_id.as_str()) {
                return fail(format!(
                    "learner matrix `{kind}` references unknown activity `{}`",
                    row.activity_id
                ));
            }
        }
    }
    if record.blinks.times.windows(2).any(|p| p[0] >= p[1]) || record.blinks.times.iter().any(|t| !w.contains(*t)) {
        return fail("blink events must be increasing and inside the window".into());
    }
    let scores = record.pretest.rows.iter().chain(&record.posttest.rows);
    if scores.clone().any(|r| !(0.0..=1.0).contains(&r.score)) {
        return fail("item scores must lie in [0, 1]".into());
    }
    for (name, rows) in [("pretest", &record.pretest.rows), ("posttest", &record.posttest.rows)] {
        let unique: BTreeSet<&str> = rows.iter().map(|r| r.item.as_str()).collect();
        if unique.len() != rows.len() {
            return fail(format!("duplicate {name} items"));
        }
    }
    let p = &record.performance;
    let per_item_ok = p
        .per_item
        .iter()
        .all(|r| r.pre.is_none_or(f64::is_finite) && r.post.is_none_or(f64::is_finite));
    if !per_item_ok || ![p.pre_mean, p.post_mean, p.gain].iter().all(|x| x.is_finite()) {
        return fail("performance report contains non-finite values".into());
    }
    let c = &record.correlations;
    if c.r.len() != c.kinds.len() || c.r.iter().any(|row| row.len() != c.kinds.len()) {
        return fail("correlation matrix is not square".into());
    }
    if c.r.iter().flatten().flatten().any(|r| !(-1.0..=1.0).contains(r)) {
        return fail("correlation outside [-1, 1]".into());
    }
    for row in &record.summaries.rows {
        let stats_ok = [row.mean, row.min, row.max]
            .iter()
            .all(|v| v.is_none_or(f64::is_finite));
        if !stats_ok || !(0.0..=1.0).contains(&row.duration_share) {
            return fail(format!("summary row `{}` is invalid", row.activity_id));
        }
    }
    let videos: BTreeSet<&str> = record.frame_indexes.iter().map(|f| f.video_id.as_str()).collect();
    if videos.len() != record.frame_indexes.len() {
        return fail("duplicate frame index video ids".into());
    }
    Ok(())
}

/// Writes `bytes` to `path` via a temporary file in the same directory and an
/// atomic rename, so readers see either the old or the new file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("absolute document path");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt {
        path: path.to_path_buf(),
        source,
    })
}

/// Default store: plain directories and canonical JSON files.
pub struct FileStore {
    root: PathBuf,
    // serializes catalog updates within this process
    writer: Mutex<()>,
    // records are immutable once written
    cache: RwLock<HashMap<String, Arc<SessionRecord>>>,
}

impl FileStore {
    /// Opens (creating if needed) a store rooted at `root`. Sessions whose
    /// record exists but which are missing from the catalog are re-indexed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("media"))?;
        let store = FileStore {
            root,
            writer: Mutex::new(()),
            cache: RwLock::new(HashMap::new()),
        };
        store.reconcile_catalog()?;
        Ok(store)
    }

    /// Opens an existing store without creating anything.
    pub fn open_existing(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(StoreError::NotFound(format!("store root {}", root.display())));
        }
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn catalog_path(&self) -> PathBuf {
        self.root.join("catalog.json")
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("record.json")
    }

    fn media_dir(&self, id: &str) -> PathBuf {
        self.root.join("media").join(id)
    }

    fn read_catalog(&self) -> Result<Vec<CatalogEntry>, StoreError> {
        let path = self.catalog_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_json(&path)
    }

    fn write_catalog(&self, mut entries: Vec<CatalogEntry>) -> Result<(), StoreError> {
        entries.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let bytes = to_canonical_vec(&entries).map_err(io::Error::other)?;
        write_atomic(&self.catalog_path(), &bytes)?;
        Ok(())
    }

    fn reconcile_catalog(&self) -> Result<(), StoreError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut entries = self.read_catalog()?;
        let known: BTreeSet<String> = entries.iter().map(|e| e.session_id.clone()).collect();
        let mut changed = !self.catalog_path().exists();
        for dir in fs::read_dir(self.root.join("sessions"))? {
            let dir = dir?;
            let id = dir.file_name().to_string_lossy().into_owned();
            if known.contains(&id) || !dir.path().join("record.json").is_file() {
                continue;
            }
            let record: SessionRecord = read_json(&dir.path().join("record.json"))?;
            entries.push(CatalogEntry::of(&record));
            changed = true;
        }
        if changed {
            self.write_catalog(entries)?;
        }
        Ok(())
    }

    fn check_session(&self, id: &str) -> Result<(), StoreError> {
        if is_safe_segment(id) && self.record_path(id).is_file() {
            Ok(())
        } else {
            Err(StoreError::NotFound(format!("session `{id}`")))
        }
    }

    fn media_ref(&self, session_id: &str, name: &str) -> Result<MediaRef, StoreError> {
        let path = self.media_dir(session_id).join(name);
        let meta = fs::metadata(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound(format!("media `{name}` in session `{session_id}`")),
            _ => StoreError::Io(e),
        })?;
        Ok(MediaRef {
            session_id: session_id.to_string(),
            name: name.to_string(),
            relative_path: name.to_string(),
            byte_size: meta.len(),
        })
    }
}

fn check_media_name(name: &str) -> Result<(), StoreError> {
    if is_safe_segment(name) {
        Ok(())
    } else {
        Err(StoreError::PathViolation(name.to_string()))
    }
}

impl SessionStore for FileStore {
    fn put_session(&self, record: &SessionRecord) -> Result<String, StoreError> {
        validate_record(record)?;
        let id = record.session_id.clone();
        let bytes = to_canonical_vec(record).map_err(io::Error::other)?;
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        // create_dir fails when the directory exists, which also guards
        // against another process claiming the same id.
        match fs::create_dir(self.session_dir(&id)) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(StoreError::DuplicateSession(id)),
            Err(e) => return Err(e.into()),
        }
        write_atomic(&self.record_path(&id), &bytes)?;
        let mut entries = self.read_catalog()?;
        entries.push(CatalogEntry::of(record));
        self.write_catalog(entries)?;
        Ok(id)
    }

    fn get_session(&self, session_id: &str) -> Result<Arc<SessionRecord>, StoreError> {
        if let Some(hit) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(session_id) {
            return Ok(hit.clone());
        }
        self.check_session(session_id)?;
        let record: Arc<SessionRecord> = Arc::new(read_json(&self.record_path(session_id))?);
        self.cache
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(session_id.to_string(), record.clone());
        Ok(record)
    }

    fn list_sessions(&self, filter: &SessionFilter) -> Result<Vec<CatalogEntry>, StoreError> {
        let mut entries: Vec<CatalogEntry> = self.read_catalog()?.into_iter().filter(|e| filter.matches(e)).collect();
        entries.sort_by(|a, b| {
            b.created_at
                .cmp(&a.created_at)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        Ok(entries)
    }

    fn attach_media(&self, session_id: &str, name: &str, source: &Path) -> Result<MediaRef, StoreError> {
        check_media_name(name)?;
        self.check_session(session_id)?;
        let dir = self.media_dir(session_id);
        fs::create_dir_all(&dir)?;
        let dest = dir.join(name);
        let mut src = File::open(source)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        io::copy(&mut src, &mut tmp)?;
        tmp.as_file().sync_all()?;
        // persist_noclobber refuses to replace an existing file
        tmp.persist_noclobber(&dest).map_err(|e| match e.error.kind() {
            io::ErrorKind::AlreadyExists => StoreError::NameCollision(name.to_string()),
            _ => StoreError::Io(e.error),
        })?;
        self.media_ref(session_id, name)
    }

    fn open_media(&self, session_id: &str, name: &str) -> Result<MediaStream, StoreError> {
        check_media_name(name)?;
        self.check_session(session_id)?;
        let media = self.media_ref(session_id, name)?;
        let file = File::open(self.media_dir(session_id).join(name))?;
        Ok(MediaStream {
            media,
            reader: Box::new(file),
        })
    }

    fn list_media(&self, session_id: &str) -> Result<Vec<MediaRef>, StoreError> {
        self.check_session(session_id)?;
        let dir = self.media_dir(session_id);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            // skip in-flight temp files
            if entry.file_type()?.is_file() && is_safe_segment(&name) && !name.starts_with(".tmp") {
                names.push(name);
            }
        }
        names.sort();
        names.iter().map(|n| self.media_ref(session_id, n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::{ActivityInterval, LearnerRow, MatrixSource};
    use crate::analytics::{ActivitySummaryRow, ItemComparison};
    use crate::types::ItemScore;

    pub(crate) fn sample_record(id: &str, learner: &str, created_at: i64) -> SessionRecord {
        let window = SessionWindow::new(TimestampMs(1_000), TimestampMs(11_000)).unwrap();
        let merged = ActivityMatrix::new(MatrixSource::Merged, vec![ActivityInterval::new("A", 1_000, 6_000)]);
        let rows = (0..100)
            .map(|i| LearnerRow {
                t: TimestampMs(1_000 + i * 100),
                value: i as f64,
                window: i as f64 / 2.0,
                activity_id: if i <= 50 { "A".into() } else { UNLABELED.into() },
            })
            .collect();
        let lm = LearnerMatrix {
            kind: SignalKind::HeartRate,
            window,
            rows,
        };
        SessionRecord {
            session_id: id.into(),
            learner: LearnerProfile {
                learner_id: learner.into(),
                attributes: Default::default(),
            },
            window,
            merged_matrix: merged,
            learner_matrices: [(SignalKind::HeartRate, lm)].into_iter().collect(),
            blinks: BlinkEvents {
                times: vec![TimestampMs(2_000)],
            },
            pretest: PretestMatrix {
                rows: vec![ItemScore {
                    item: "q1".into(),
                    score: 0.0,
                }],
            },
            posttest: PosttestMatrix {
                rows: vec![ItemScore {
                    item: "q1".into(),
                    score: 1.0,
                }],
            },
            performance: PerformanceReport {
                per_item: vec![ItemComparison {
                    item: "q1".into(),
                    pre: Some(0.0),
                    post: Some(1.0),
                }],
                pre_mean: 0.0,
                post_mean: 1.0,
                gain: 1.0,
            },
            correlations: CorrelationMatrix {
                kinds: vec![SignalKind::HeartRate],
                r: vec![vec![Some(1.0)]],
            },
            summaries: ActivitySummary {
                rows: vec![ActivitySummaryRow {
                    activity_id: "A".into(),
                    kind: SignalKind::HeartRate,
                    mean: Some(25.0),
                    min: Some(0.0),
                    max: Some(50.0),
                    sample_count: 51,
                    duration_share: 0.5,
                }],
            },
            frame_indexes: vec![],
            created_at: TimestampMs(created_at),
        }
    }

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let rec = sample_record("s1", "u1", 5);
        assert_eq!(store.put_session(&rec).unwrap(), "s1");
        assert_eq!(*store.get_session("s1").unwrap(), rec);
        assert!(matches!(store.put_session(&rec), Err(StoreError::DuplicateSession(_))));
        assert!(matches!(store.get_session("nope"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.get_session("../s1"), Err(StoreError::NotFound(_))));

        let mut again = (*store.get_session("s1").unwrap()).clone();
        again.session_id = "s2".into();
        store.put_session(&again).unwrap();
        let mut back = (*store.get_session("s2").unwrap()).clone();
        back.session_id = "s1".into();
        assert_eq!(back, rec);
    }

    #[test]
    fn rejects_mismatched_lm_window() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let mut rec = sample_record("s1", "u1", 0);
        let lm = rec.learner_matrices.get_mut(&SignalKind::HeartRate).unwrap();
        lm.window = SessionWindow::new(TimestampMs(0), TimestampMs(11_000)).unwrap();
        assert!(matches!(store.put_session(&rec), Err(StoreError::ValidationFailed(_))));
        assert!(store.list_sessions(&SessionFilter::default()).unwrap().is_empty());

        let mut rec = sample_record("bad/id", "u1", 0);
        assert!(matches!(validate_record(&rec), Err(StoreError::ValidationFailed(_))));
        rec.session_id = "ok".into();
        rec.learner_matrices.get_mut(&SignalKind::HeartRate).unwrap().rows[3].activity_id = "ghost".into();
        assert!(matches!(validate_record(&rec), Err(StoreError::ValidationFailed(_))));
    }

    #[test]
    fn catalog_listing_and_filters() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert!(store.list_sessions(&SessionFilter::default()).unwrap().is_empty());
        store.put_session(&sample_record("a", "u1", 10)).unwrap();
        store.put_session(&sample_record("b", "u2", 30)).unwrap();
        store.put_session(&sample_record("c", "u3", 20)).unwrap();
        let all: Vec<String> = store
            .list_sessions(&SessionFilter::default())
            .unwrap()
            .into_iter()
            .map(|e| e.session_id)
            .collect();
        assert_eq!(all, vec!["b", "c", "a"]);
        let only = store
            .list_sessions(&SessionFilter {
                learner_id: Some("u1".into()),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].session_id, "a");
        let none = store
            .list_sessions(&SessionFilter {
                from: Some(TimestampMs(50_000)),
                ..Default::default()
            })
            .unwrap();
        assert!(none.is_empty());
        let overlapping = store
            .list_sessions(&SessionFilter {
                from: Some(TimestampMs(0)),
                to: Some(TimestampMs(1_000)),
                learner_id: Some("u2".into()),
            })
            .unwrap();
        assert_eq!(overlapping.len(), 1);
    }

    #[test]
    fn survives_reopen_and_reindexes() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = FileStore::open(dir.path()).unwrap();
            store.put_session(&sample_record("s1", "u1", 1)).unwrap();
        }
        fs::remove_file(dir.path().join("catalog.json")).unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert_eq!(store.list_sessions(&SessionFilter::default()).unwrap().len(), 1);
        assert_eq!(*store.get_session("s1").unwrap(), sample_record("s1", "u1", 1));
    }

    #[test]
    fn media_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path().join("store")).unwrap();
        store.put_session(&sample_record("s1", "u1", 1)).unwrap();
        let src = dir.path().join("clip.mp4");
        let bytes: Vec<u8> = (0..=255u8).cycle().take(10_000).collect();
        fs::write(&src, &bytes).unwrap();

        let media = store.attach_media("s1", "front_cam.mp4", &src).unwrap();
        assert_eq!(media.byte_size, 10_000);
        assert_eq!(media.relative_path, "front_cam.mp4");
        let mut back = Vec::new();
        store
            .open_media("s1", "front_cam.mp4")
            .unwrap()
            .reader
            .read_to_end(&mut back)
            .unwrap();
        assert_eq!(back, bytes);
        assert_eq!(store.list_media("s1").unwrap(), vec![media]);

        assert!(matches!(
            store.attach_media("s1", "front_cam.mp4", &src),
            Err(StoreError::NameCollision(_))
        ));
        for bad in ["../x", "..", "a/b", "", "/etc/passwd"] {
            assert!(
                matches!(store.attach_media("s1", bad, &src), Err(StoreError::PathViolation(_))),
                "{bad}"
            );
        }
        assert!(matches!(
            store.open_media("s1", "screen.mp4"),
            Err(StoreError::NotFound(_))
        ));
        assert!(matches!(
            store.attach_media("nope", "x.mp4", &src),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn query_signal_raw_and_bucketed() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        store.put_session(&sample_record("s1", "u1", 1)).unwrap();
        let kind = SignalKind::HeartRate;

        let raw = store
            .query_signal("s1", kind, TimestampMs(1_000), TimestampMs(1_400), 10)
            .unwrap();
        assert_eq!(raw.len(), 5);
        assert_eq!(raw[4].mean, 4.0);

        // rows every 100 ms over [1000, 10900]: 100 rows, 10 buckets of 10 rows
        let b = store
            .query_signal("s1", kind, TimestampMs(1_000), TimestampMs(10_999), 10)
            .unwrap();
        assert_eq!(b.len(), 10);
        for (k, p) in b.iter().enumerate() {
            let first = (k * 10) as f64;
            assert_eq!(p.mean, first + 4.5);
            assert_eq!((p.min, p.max), (first, first + 9.0));
        }
        assert_eq!(b[9].activity_id, UNLABELED);

        assert!(store
            .query_signal("s1", kind, TimestampMs(50_000), TimestampMs(60_000), 10)
            .unwrap()
            .is_empty());
        assert!(matches!(
            store.query_signal("s1", kind, TimestampMs(5), TimestampMs(1), 10),
            Err(StoreError::InvalidRange(_))
        ));
        assert!(matches!(
            store.query_signal("s1", SignalKind::Attention, TimestampMs(0), TimestampMs(1), 10),
            Err(StoreError::NotFound(_))
        ));
    }
}
