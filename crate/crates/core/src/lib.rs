//! Multimodal learning-session analytics.
//!
//! Raw session sources (edX tracking log, LOGGE activity log, pretest answers,
//! EEG / heart-rate / pupil exports, video frame indexes) are parsed by
//! [`ingest`], aligned to a common window by [`timeline`], turned into activity
//! matrices and per-signal learner matrices by [`activity`], analysed by
//! [`analytics`] and persisted by [`store`]. [`pipeline`] wires the stages
//! together.

pub mod activity;
pub mod analytics;
pub mod canonical;
pub mod export;
pub mod ingest;
pub mod pipeline;
pub mod store;
pub mod timeline;
pub mod types;

pub use activity::{ActivityInterval, ActivityMatrix, LearnerMatrix, LearnerRow, MatrixSource, UNLABELED};
pub use store::{FileStore, SessionRecord, SessionStore};
pub use timeline::SessionWindow;
pub use types::{EegBand, SignalKind, SignalSeries, TimestampMs};
