//! Correlations, posttest scoring, pre/post comparison and per-activity summaries.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityMatrix, LearnerMatrix, UNLABELED};
use crate::ingest::EdxEvent;
use crate::timeline::{ResampledSeries, SessionWindow};
use crate::types::{ItemScore, PretestMatrix, SignalKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("resampled series do not share a grid")]
    GridMismatch,
    #[error("signal kind `{0}` appears more than once")]
    DuplicateKind(SignalKind),
    #[error("invalid grade for item `{0}`")]
    InvalidGrade(String),
    #[error("graded problem_check event without a problem id")]
    MissingProblemId,
}

/// Sample Pearson correlation. `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewPoints(n));
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(Some(r.clamp(-1.0, 1.0)))
}

/// Pairwise Pearson coefficients; `None` cells are undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub kinds: Vec<SignalKind>,
    pub r: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: SignalKind, b: SignalKind) -> Option<f64> {
        let i = self.kinds.iter().position(|k| *k == a)?;
        let j = self.kinds.iter().position(|k| *k == b)?;
        self.r[i][j]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.kinds.len();
        (0..n).all(|i| (0..n).all(|j| self.r[i][j] == self.r[j][i]))
    }
}

fn pairwise_complete(a: &ResampledSeries, b: &ResampledSeries) -> (Vec<f64>, Vec<f64>) {
    a.points
        .iter()
        .zip(&b.points)
        .filter_map(|(p, q)| Some((p.value?, q.value?)))
        .unzip()
}

/// Correlates every pair of resampled series over the grid points where both
/// have values. Output follows the fixed [`SignalKind`] order.
pub fn correlation_matrix(mut resampled: Vec<ResampledSeries>) -> Result<CorrelationMatrix, AnalyticsError> {
    if let Some(first) = resampled.first() {
        let (step, window, len) = (first.grid_step_ms, first.window, first.points.len());
        if resampled
            .iter()
            .any(|s| s.grid_step_ms != step || s.window != window || s.points.len() != len)
        {
            return Err(AnalyticsError::GridMismatch);
        }
    }
    resampled.sort_by_key(|s| s.kind);
    if let Some(w) = resampled.windows(2).find(|w| w[0].kind == w[1].kind) {
        return Err(AnalyticsError::DuplicateKind(w[0].kind));
    }
    let n = resampled.len();
    let mut r = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let (x, y) = pairwise_complete(&resampled[i], &resampled[j]);
            let cell = if x.len() < 2 { None } else { pearson(&x, &y)? };
            r[i][j] = cell;
            r[j][i] = cell;
        }
    }
    Ok(CorrelationMatrix {
        kinds: resampled.iter().map(|s| s.kind).collect(),
        r,
    })
}

/// Graded MOOC assignments, one row per item.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosttestMatrix {
    pub rows: Vec<ItemScore>,
}

fn grade_field<'a>(event: &'a EdxEvent, key: &str) -> Option<&'a str> {
    event.payload.get(key).map(String::as_str)
}

/// Scores `problem_check` events as `grade / max_grade`; the last attempt per
/// item wins. Events without grade fields (browser-side echoes) are skipped.
pub fn score_posttest(events: &[EdxEvent]) -> Result<PosttestMatrix, AnalyticsError> {
    let mut order: Vec<String> = Vec::new();
    let mut scores: HashMap<String, f64> = HashMap::new();
    for ev in events.iter().filter(|e| e.event_type == "problem_check") {
        let (Some(grade), Some(max_grade)) = (grade_field(ev, "grade"), grade_field(ev, "max_grade")) else {
            continue;
        };
        let item = ev.resource_id.clone().ok_or(AnalyticsError::MissingProblemId)?;
        let invalid = || AnalyticsError::InvalidGrade(item.clone());
        let grade: f64 = grade.trim().parse().map_err(|_| invalid())?;
        let max_grade: f64 = max_grade.trim().parse().map_err(|_| invalid())?;
        let valid = max_grade.is_finite() && max_grade > 0.0 && grade >= 0.0 && grade <= max_grade;
        if !valid {
            return Err(invalid());
        }
        if scores.insert(item.clone(), grade / max_grade).is_none() {
            order.push(item);
        }
    }
    let rows = order
        .into_iter()
        .map(|item| {
            let score = scores[&item];
            ItemScore { item, score }
        })
        .collect();
    Ok(PosttestMatrix { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemComparison {
    pub item: String,
    pub pre: Option<f64>,
    pub post: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub per_item: Vec<ItemComparison>,
    pub pre_mean: f64,
    pub post_mean: f64,
    pub gain: f64,
}

fn mean_score(rows: &[ItemScore]) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.score).sum::<f64>() / rows.len() as f64
    }
}

/// Pairs pretest and posttest scores over the union of items.
/// Pretest items come first in pretest order, then posttest-only items.
pub fn compare_performance(pre: &PretestMatrix, post: &PosttestMatrix) -> PerformanceReport {
    let post_scores: HashMap<&str, f64> = post.rows.iter().map(|r| (r.item.as_str(), r.score)).collect();
    let pre_items: HashSet<&str> = pre.rows.iter().map(|r| r.item.as_str()).collect();
    let mut per_item: Vec<ItemComparison> = pre
        .rows
        .iter()
        .map(|r| ItemComparison {
            item: r.item.clone(),
            pre: Some(r.score),
            post: post_scores.get(r.item.as_str()).copied(),
        })
        .collect();
    per_item.extend(
        post.rows
            .iter()
            .filter(|r| !pre_items.contains(r.item.as_str()))
            .map(|r| ItemComparison {
                item: r.item.clone(),
                pre: None,
                post: Some(r.score),
            }),
    );
    let pre_mean = mean_score(&pre.rows);
    let post_mean = mean_score(&post.rows);
    PerformanceReport {
        per_item,
        pre_mean,
        post_mean,
        gain: post_mean - pre_mean,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivitySummaryRow {
    pub activity_id: String,
    pub kind: SignalKind,
    /// `None` when the activity covers time but no sample fell inside it.
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub sample_count: usize,
    pub duration_share: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivitySummary {
    pub rows: Vec<ActivitySummaryRow>,
}

/// Milliseconds of `window` attributed to each activity id under the
/// latest-start / smallest-id rule, including [`UNLABELED`].
pub fn activity_durations(window: SessionWindow, merged: &ActivityMatrix) -> BTreeMap<String, i64> {
    let mut cuts: Vec<i64> = vec![window.start.0, window.end.0];
    for iv in &merged.intervals {
        for t in [iv.t_start.0, iv.t_end.0] {
            if t > window.start.0 && t < window.end.0 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    let mut out: BTreeMap<String, i64> = BTreeMap::new();
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        // the open segment (a, b) is covered by an interval iff it spans [a, b]
        let owner = merged
            .intervals
            .iter()
            .filter(|iv| iv.t_start.0 <= a && iv.t_end.0 >= b)
            .min_by(|x, y| {
                y.t_start
                    .cmp(&x.t_start)
                    .then_with(|| x.activity_id.cmp(&y.activity_id))
            })
            .map_or(UNLABELED, |iv| iv.activity_id.as_str());
        *out.entry(owner.to_string()).or_default() += b - a;
    }
    out
}

#[derive(Default)]
struct Stats {
    sum: f64,
    min: f64,
    max: f64,
    count: usize,
}

/// Per-activity statistics of one learner matrix. Rows are ordered by activity id.
pub fn summarize_by_activity(lm: &LearnerMatrix, window: SessionWindow, merged: &ActivityMatrix) -> ActivitySummary {
    if lm.rows.is_empty() {
        return ActivitySummary::default();
    }
    let mut stats: BTreeMap<&str, Stats> = BTreeMap::new();
    for row in &lm.rows {
        let s = stats.entry(row.activity_id.as_str()).or_insert(Stats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            ..Stats::default()
        });
        s.sum += row.value;
        s.min = s.min.min(row.value);
        s.max = s.max.max(row.value);
        s.count += 1;
    }
    let durations = activity_durations(window, merged);
    let total = window.len_ms() as f64;
    let mut ids: Vec<&str> = stats.keys().copied().collect();
    ids.extend(durations.keys().map(String::as_str));
    ids.sort_unstable();
    ids.dedup();
    let rows = ids
        .into_iter()
        .map(|id| {
            let s = stats.get(id);
            ActivitySummaryRow {
                activity_id: id.to_string(),
                kind: lm.kind,
                mean: s.map(|s| s.sum / s.count as f64),
                min: s.map(|s| s.min),
                max: s.map(|s| s.max),
                sample_count: s.map_or(0, |s| s.count),
                duration_share: durations.get(id).copied().unwrap_or(0) as f64 / total,
            }
        })
        .collect();
    ActivitySummary { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::{ActivityInterval, LearnerRow, MatrixSource};
    use crate::timeline::GridPoint;
    use crate::types::TimestampMs;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    #[test]
    fn pearson_examples() {
        assert!(close(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap().unwrap(), 1.0));
        assert!(close(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap().unwrap(), -1.0));
        // mean 2.5 each; sxy = 2.25+(-0.25)+(-0.25)+2.25 = 4, sxx = syy = 5
        assert!(close(
            pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap().unwrap(),
            0.8
        ));
        assert_eq!(pearson(&[1., 1., 1.], &[1., 2., 3.]).unwrap(), None);
        assert_eq!(pearson(&[1., 2.], &[1.]), Err(AnalyticsError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.], &[1.]), Err(AnalyticsError::TooFewPoints(1)));
    }

    fn grid(kind: SignalKind, values: &[Option<f64>]) -> ResampledSeries {
        let window = SessionWindow::new(TimestampMs(0), TimestampMs((values.len() as i64 - 1) * 1000)).unwrap();
        ResampledSeries {
            kind,
            grid_step_ms: 1000,
            window,
            points: values
                .iter()
                .enumerate()
                .map(|(i, v)| GridPoint {
                    t: TimestampMs(i as i64 * 1000),
                    value: *v,
                })
                .collect(),
        }
    }

    #[test]
    fn correlation_identical_and_constant() {
        let v = [Some(1.0), Some(3.0), Some(2.0), Some(5.0)];
        let m = correlation_matrix(vec![
            grid(SignalKind::HeartRate, &v),
            grid(SignalKind::Attention, &v),
            grid(SignalKind::Meditation, &[Some(4.0); 4]),
        ])
        .unwrap();
        assert_eq!(
            m.kinds,
            vec![SignalKind::Attention, SignalKind::Meditation, SignalKind::HeartRate]
        );
        assert!(close(m.get(SignalKind::Attention, SignalKind::HeartRate).unwrap(), 1.0));
        assert!(close(m.r[0][0].unwrap(), 1.0));
        assert!(m.r[1].iter().all(Option::is_none));
        assert!(m.is_symmetric());
    }

    #[test]
    fn correlation_pairwise_complete() {
        let a = grid(SignalKind::Attention, &[None, None, Some(1.0), Some(2.0), Some(3.0)]);
        let b = grid(
            SignalKind::HeartRate,
            &[Some(9.0), Some(1.0), Some(2.0), Some(4.0), Some(6.0)],
        );
        let m = correlation_matrix(vec![a, b]).unwrap();
        assert!(close(m.r[0][1].unwrap(), 1.0));
        let sparse = grid(SignalKind::Meditation, &[Some(1.0), None, None, None, None]);
        let m = correlation_matrix(vec![sparse, grid(SignalKind::Attention, &[Some(1.0); 5])]).unwrap();
        assert_eq!(m.r[0][1], None);
    }

    #[test]
    fn correlation_rejects_mismatch() {
        let a = grid(SignalKind::Attention, &[Some(1.0), Some(2.0)]);
        let b = grid(SignalKind::HeartRate, &[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(
            correlation_matrix(vec![a.clone(), b]),
            Err(AnalyticsError::GridMismatch)
        );
        assert_eq!(
            correlation_matrix(vec![a.clone(), a]),
            Err(AnalyticsError::DuplicateKind(SignalKind::Attention))
        );
        assert!(correlation_matrix(vec![]).unwrap().kinds.is_empty());
    }

    fn check(t: i64, id: &str, grade: &str, max: &str) -> EdxEvent {
        EdxEvent {
            username: "u1".into(),
            event_type: "problem_check".into(),
            time: TimestampMs(t),
            resource_id: Some(id.into()),
            payload: [
                ("grade".to_string(), grade.to_string()),
                ("max_grade".to_string(), max.to_string()),
            ]
            .into_iter()
            .collect(),
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn posttest_examples() {
        let m = score_posttest(&[check(0, "q1", "2", "2")]).unwrap();
        assert_eq!(
            m.rows,
            vec![ItemScore {
                item: "q1".into(),
                score: 1.0
            }]
        );
        let m = score_posttest(&[check(0, "q1", "0", "2"), check(5, "q1", "1", "2")]).unwrap();
        assert_eq!(
            m.rows,
            vec![ItemScore {
                item: "q1".into(),
                score: 0.5
            }]
        );
        assert!(score_posttest(&[]).unwrap().rows.is_empty());
    }

    #[test]
    fn posttest_invalid_grades() {
        for (g, m) in [("3", "2"), ("1", "0"), ("-1", "2"), ("x", "2")] {
            assert_eq!(
                score_posttest(&[check(0, "q1", g, m)]),
                Err(AnalyticsError::InvalidGrade("q1".into()))
            );
        }
        let mut no_id = check(0, "q", "1", "1");
        no_id.resource_id = None;
        assert_eq!(score_posttest(&[no_id]), Err(AnalyticsError::MissingProblemId));
        let mut browser = check(0, "q", "1", "1");
        browser.payload.clear();
        assert!(score_posttest(&[browser]).unwrap().rows.is_empty());
    }

    fn scores(rows: &[(&str, f64)]) -> Vec<ItemScore> {
        rows.iter()
            .map(|(i, s)| ItemScore {
                item: i.to_string(),
                score: *s,
            })
            .collect()
    }

    #[test]
    fn performance_examples() {
        let pre = PretestMatrix {
            rows: scores(&[("q1", 0.0), ("q2", 1.0)]),
        };
        let post = PosttestMatrix {
            rows: scores(&[("q1", 1.0), ("q2", 1.0)]),
        };
        let r = compare_performance(&pre, &post);
        assert_eq!((r.pre_mean, r.post_mean, r.gain), (0.5, 1.0, 0.5));

        let same = compare_performance(&pre, &PosttestMatrix { rows: pre.rows.clone() });
        assert_eq!(same.gain, 0.0);

        let post = PosttestMatrix {
            rows: scores(&[("q3", 0.5)]),
        };
        let r = compare_performance(&pre, &post);
        assert_eq!(r.per_item.len(), 3);
        assert_eq!(
            r.per_item[2],
            ItemComparison {
                item: "q3".into(),
                pre: None,
                post: Some(0.5)
            }
        );
        assert_eq!(r.per_item[0].post, None);
    }

    fn lm(rows: &[(i64, f64, &str)], window: SessionWindow) -> LearnerMatrix {
        LearnerMatrix {
            kind: SignalKind::HeartRate,
            window,
            rows: rows
                .iter()
                .map(|(t, v, id)| LearnerRow {
                    t: TimestampMs(*t),
                    value: *v,
                    window: *v,
                    activity_id: id.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn summary_single_activity() {
        let window = SessionWindow::new(TimestampMs(0), TimestampMs(100)).unwrap();
        let merged = ActivityMatrix::new(MatrixSource::Merged, vec![ActivityInterval::new("A", 0, 100)]);
        let s = summarize_by_activity(
            &lm(&[(0, 1.0), (50, 2.0), (100, 6.0)].map(|(t, v)| (t, v, "A")), window),
            window,
            &merged,
        );
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].mean, Some(3.0));
        assert_eq!(s.rows[0].duration_share, 1.0);
    }

    #[test]
    fn summary_two_activities() {
        let window = SessionWindow::new(TimestampMs(0), TimestampMs(100)).unwrap();
        let merged = ActivityMatrix::new(
            MatrixSource::Merged,
            vec![ActivityInterval::new("A", 0, 50), ActivityInterval::new("B", 50, 100)],
        );
        let rows = [(10, 10.0, "A"), (20, 10.0, "A"), (60, 30.0, "B"), (90, 30.0, "B")];
        let s = summarize_by_activity(&lm(&rows, window), window, &merged);
        let got: Vec<_> = s
            .rows
            .iter()
            .map(|r| (r.activity_id.as_str(), r.mean, r.duration_share))
            .collect();
        assert_eq!(got, vec![("A", Some(10.0), 0.5), ("B", Some(30.0), 0.5)]);
        assert!(summarize_by_activity(&lm(&[], window), window, &merged).rows.is_empty());
    }

    #[test]
    fn summary_includes_unlabeled_and_sampleless_ids() {
        let window = SessionWindow::new(TimestampMs(0), TimestampMs(100)).unwrap();
        let merged = ActivityMatrix::new(
            MatrixSource::Merged,
            vec![ActivityInterval::new("A", 0, 40), ActivityInterval::new("B", 20, 30)],
        );
        let s = summarize_by_activity(&lm(&[(5, 1.0, "A"), (80, 2.0, UNLABELED)], window), window, &merged);
        let got: Vec<_> = s
            .rows
            .iter()
            .map(|r| (r.activity_id.as_str(), r.sample_count, r.duration_share))
            .collect();
        assert_eq!(got, vec![("A", 1, 0.3), ("B", 0, 0.1), (UNLABELED, 1, 0.6)]);
        let total: f64 = s.rows.iter().map(|r| r.duration_share).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
