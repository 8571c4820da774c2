//! End-to-end session processing: manifest → parse → synchronize → activity
//! matrices → learner matrices → analytics → [`SessionRecord`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{
    build_learner_matrix, edx_to_activity_matrix, logge_to_activity_matrix, merge_activity_matrices, ActivityError,
    BoundaryConfig, LearnerMatrix,
};
use crate::analytics::{
    compare_performance, correlation_matrix, score_posttest, summarize_by_activity, ActivitySummary, AnalyticsError,
};
use crate::ingest::{self, IngestError};
use crate::store::{SessionRecord, SessionStore, StoreError};
use crate::timeline::{
    annotate_windows, resample, session_window, synchronize, TimelineError, DEFAULT_GRID_MS, DEFAULT_WINDOW_MS,
};
use crate::types::{BlinkEvents, SignalKind, TimestampMs};

/// Environment variable pinning `created_at` (epoch ms) for reproducible runs.
pub const FAKE_NOW_ENV: &str = "M2LADS_FAKE_NOW";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid manifest: {0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Activity(#[from] ActivityError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PipelineError {
    /// True for failures of the environment (unreadable files, store I/O)
    /// rather than of the input data.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            PipelineError::Io { .. }
                | PipelineError::Ingest {
                    source: IngestError::Io(_),
                    ..
                }
                | PipelineError::Store(StoreError::Io(_))
        )
    }
}

fn default_window_ms() -> i64 {
    DEFAULT_WINDOW_MS
}

fn default_grid_ms() -> i64 {
    DEFAULT_GRID_MS
}

/// Describes the files making up one recorded session. Relative paths are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestManifest {
    pub session_id: String,
    pub learner_profile_path: PathBuf,
    pub edx_log_path: PathBuf,
    pub logge_csv_path: PathBuf,
    pub pretest_answers_path: PathBuf,
    pub pretest_key_path: PathBuf,
    pub eeg_csv_path: PathBuf,
    #[serde(default)]
    pub signal_csv_paths: BTreeMap<SignalKind, PathBuf>,
    #[serde(default)]
    pub frame_index_paths: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub media_paths: BTreeMap<String, PathBuf>,
    /// Falls back to [`BoundaryConfig::default`].
    #[serde(default)]
    pub boundary_config_path: Option<PathBuf>,
    #[serde(default = "default_window_ms")]
    pub window_ms: i64,
    #[serde(default = "default_grid_ms")]
    pub grid_ms: i64,
}

impl IngestManifest {
    pub fn from_json(bytes: &[u8], base_dir: &Path) -> Result<Self, PipelineError> {
        let mut manifest: IngestManifest =
            serde_json::from_slice(bytes).map_err(|e| PipelineError::Validation(e.to_string()))?;
        manifest.resolve(base_dir);
        Ok(manifest)
    }

    /// Reads a manifest file. A missing or unreadable file is an I/O error.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&bytes, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.learner_profile_path,
            &mut self.edx_log_path,
            &mut self.logge_csv_path,
            &mut self.pretest_answers_path,
            &mut self.pretest_key_path,
            &mut self.eeg_csv_path,
        ] {
            fix(p);
        }
        self.signal_csv_paths.values_mut().for_each(fix);
        self.frame_index_paths.values_mut().for_each(fix);
        self.media_paths.values_mut().for_each(fix);
        if let Some(p) = self.boundary_config_path.as_mut() {
            fix(p);
        }
    }

    fn all_paths(&self) -> Vec<&Path> {
        let mut paths: Vec<&Path> = vec![
            &self.learner_profile_path,
            &self.edx_log_path,
            &self.logge_csv_path,
            &self.pretest_answers_path,
            &self.pretest_key_path,
            &self.eeg_csv_path,
        ];
        paths.extend(self.signal_csv_paths.values().map(PathBuf::as_path));
        paths.extend(self.frame_index_paths.values().map(PathBuf::as_path));
        paths.extend(self.media_paths.values().map(PathBuf::as_path));
        paths.extend(self.boundary_config_path.as_deref());
        paths
    }

    /// Static checks: identifiers, parameters and that every referenced file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::Validation(msg));
        let safe = |s: &str| {
            !s.is_empty() && s != "." && s != ".." && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
        };
        if !safe(&self.session_id) {
            return fail(format!(
                "session_id `{}` must be a non-empty [A-Za-z0-9._-] token",
                self.session_id
            ));
        }
        if self.window_ms <= 0 {
            return fail(format!("window_ms must be positive, got {}", self.window_ms));
        }
        if self.grid_ms <= 0 {
            return fail(format!("grid_ms must be positive, got {}", self.grid_ms));
        }
        for kind in self.signal_csv_paths.keys() {
            if matches!(
                kind,
                SignalKind::Attention | SignalKind::Meditation | SignalKind::Eeg(_)
            ) {
                return fail(format!(
                    "signal `{kind}` comes from the EEG export and cannot be given separately"
                ));
            }
        }
        if let Some(name) = self.media_paths.keys().find(|n| !safe(n)) {
            return fail(format!("media name `{name}` is not a safe file name"));
        }
        if self.frame_index_paths.keys().any(|v| v.is_empty()) {
            return fail("empty video id in frame_index_paths".into());
        }
        if let Some(missing) = self.all_paths().into_iter().find(|p| !p.is_file()) {
            return fail(format!("referenced file {} does not exist", missing.display()));
        }
        Ok(())
    }
}

/// Processing knobs that can override the manifest.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub window_ms: Option<i64>,
    pub grid_ms: Option<i64>,
}

impl IngestManifest {
    pub fn apply(&mut self, overrides: Overrides) {
        if let Some(w) = overrides.window_ms {
            self.window_ms = w;
        }
        if let Some(g) = overrides.grid_ms {
            self.grid_ms = g;
        }
    }
}

/// `created_at` for new records: `M2LADS_FAKE_NOW` when set, else the wall clock.
pub fn created_at_now() -> Result<TimestampMs, PipelineError> {
    match std::env::var(FAKE_NOW_ENV) {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .ok()
            .filter(|ms| *ms >= 0)
            .map(TimestampMs)
            .ok_or_else(|| PipelineError::Validation(format!("{FAKE_NOW_ENV} must be epoch milliseconds, got `{v}`"))),
        Err(_) => Ok(TimestampMs(chrono::Utc::now().timestamp_millis())),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn parsed<T>(path: &Path, r: Result<T, IngestError>) -> Result<T, PipelineError> {
    r.map_err(|source| PipelineError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every processing stage and assembles the session record. Touches no store.
pub fn build_record(manifest: &IngestManifest, created_at: TimestampMs) -> Result<SessionRecord, PipelineError> {
    manifest.validate()?;

    let learner = parsed(
        &manifest.learner_profile_path,
        ingest::parse_learner_profile(open(&manifest.learner_profile_path)?),
    )?;
    let mut edx = parsed(
        &manifest.edx_log_path,
        ingest::parse_edx_log(open(&manifest.edx_log_path)?),
    )?;
    let mut logge = parsed(
        &manifest.logge_csv_path,
        ingest::parse_logge_csv(open(&manifest.logge_csv_path)?),
    )?;
    let pretest = parsed(
        &manifest.pretest_answers_path,
        ingest::parse_pretest(open(&manifest.pretest_answers_path)?, open(&manifest.pretest_key_path)?),
    )?;
    let eeg = parsed(
        &manifest.eeg_csv_path,
        ingest::parse_eeg_csv(open(&manifest.eeg_csv_path)?),
    )?;
    let boundary = match &manifest.boundary_config_path {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            BoundaryConfig::from_json(&bytes)?
        }
        None => BoundaryConfig::default(),
    };
    let blinks = eeg.blinks.clone();
    let mut series = eeg.into_series();
    for (kind, path) in &manifest.signal_csv_paths {
        series.push(parsed(path, ingest::parse_signal_csv(open(path)?, *kind))?);
    }
    series.sort_by_key(|s| s.kind);
    let mut frame_indexes = manifest
        .frame_index_paths
        .iter()
        .map(|(video, path)| parsed(path, ingest::parse_frame_index(open(path)?, video)))
        .collect::<Result<Vec<_>, _>>()?;
    frame_indexes.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    // stable sorts keep file order for simultaneous events
    edx.sort_by_key(|e| e.time);
    logge.sort_by_key(|e| e.time);

    let provisional = session_window(&series)?;
    let logge_matrix = logge_to_activity_matrix(&logge, provisional)?;
    let mooc_matrix = edx_to_activity_matrix(&edx, provisional, &boundary);
    let synced = synchronize(series, vec![logge_matrix, mooc_matrix])?;
    let window = synced.window;
    let merged = merge_activity_matrices(&synced.matrices[0], &synced.matrices[1]);

    let width = manifest.window_ms;
    let grid = manifest.grid_ms;
    let per_signal = synced
        .series
        .par_iter()
        .map(|s| {
            let windowed = annotate_windows(s, width)?;
            let lm = build_learner_matrix(&windowed, &merged, window);
            let grid = resample(s, window, grid, width)?;
            Ok((lm, grid))
        })
        .collect::<Result<Vec<_>, TimelineError>>()?;
    let (lms, grids): (Vec<LearnerMatrix>, Vec<_>) = per_signal.into_iter().unzip();

    let correlations = correlation_matrix(grids)?;
    let posttest = score_posttest(&edx)?;
    let performance = compare_performance(&pretest, &posttest);
    let summaries = ActivitySummary {
        rows: lms
            .iter()
            .flat_map(|lm| summarize_by_activity(lm, window, &merged).rows)
            .collect(),
    };
    let blinks = BlinkEvents {
        times: blinks.times.into_iter().filter(|t| window.contains(*t)).collect(),
    };

    Ok(SessionRecord {
        session_id: manifest.session_id.clone(),
        learner,
        window,
        merged_matrix: merged,
        learner_matrices: lms.into_iter().map(|lm| (lm.kind, lm)).collect(),
        blinks,
        pretest,
        posttest,
        performance,
        correlations,
        summaries,
        frame_indexes,
        created_at,
    })
}

/// Builds the record, stores it and attaches the session's media files.
pub fn ingest_session(
    manifest: &IngestManifest,
    store: &dyn SessionStore,
    created_at: TimestampMs,
) -> Result<String, PipelineError> {
    let record = build_record(manifest, created_at)?;
    let id = store.put_session(&record)?;
    for (name, path) in &manifest.media_paths {
        store.attach_media(&id, name, path)?;
    }
    Ok(id)
}
