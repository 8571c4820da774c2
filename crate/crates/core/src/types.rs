//! Domain types shared across the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Milliseconds since the Unix epoch, UTC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimestampMs(pub i64);

impl TimestampMs {
    pub const fn as_i64(self) -> i64 {
        self.0
    }
}

impl fmt::Display for TimestampMs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for TimestampMs {
    fn from(v: i64) -> Self {
        TimestampMs(v)
    }
}

/// EEG frequency bands, lowest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EegBand {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl EegBand {
    pub const ALL: [EegBand; 5] = [
        EegBand::Delta,
        EegBand::Theta,
        EegBand::Alpha,
        EegBand::Beta,
        EegBand::Gamma,
    ];

    /// Half-open frequency range `[lo, hi)` in Hz. Delta starts at 0 (exclusive),
    /// Gamma is unbounded above.
    pub fn range_hz(self) -> (f64, f64) {
        match self {
            EegBand::Delta => (0.0, 4.0),
            EegBand::Theta => (4.0, 8.0),
            EegBand::Alpha => (8.0, 13.0),
            EegBand::Beta => (13.0, 30.0),
            EegBand::Gamma => (30.0, f64::INFINITY),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EegBand::Delta => "delta",
            EegBand::Theta => "theta",
            EegBand::Alpha => "alpha",
            EegBand::Beta => "beta",
            EegBand::Gamma => "gamma",
        }
    }
}

/// Physical unit attached to a signal kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// Dimensionless 0-100 score.
    Score,
    BeatsPerMinute,
    Millimeters,
    /// Band power, arbitrary units.
    BandPower,
}

/// Which biometric variable a series carries.
///
/// The derived ordering is the fixed presentation order used by correlation
/// matrices and every map keyed by kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SignalKind {
    Attention,
    Meditation,
    HeartRate,
    PupilDiameterLeft,
    PupilDiameterRight,
    Eeg(EegBand),
}

impl SignalKind {
    pub const ALL: [SignalKind; 10] = [
        SignalKind::Attention,
        SignalKind::Meditation,
        SignalKind::HeartRate,
        SignalKind::PupilDiameterLeft,
        SignalKind::PupilDiameterRight,
        SignalKind::Eeg(EegBand::Delta),
        SignalKind::Eeg(EegBand::Theta),
        SignalKind::Eeg(EegBand::Alpha),
        SignalKind::Eeg(EegBand::Beta),
        SignalKind::Eeg(EegBand::Gamma),
    ];

    pub fn unit(self) -> Unit {
        match self {
            SignalKind::Attention | SignalKind::Meditation => Unit::Score,
            SignalKind::HeartRate => Unit::BeatsPerMinute,
            SignalKind::PupilDiameterLeft | SignalKind::PupilDiameterRight => Unit::Millimeters,
            SignalKind::Eeg(_) => Unit::BandPower,
        }
    }

    /// Stable snake_case token used in URLs, file names and JSON keys.
    pub fn token(self) -> &'static str {
        match self {
            SignalKind::Attention => "attention",
            SignalKind::Meditation => "meditation",
            SignalKind::HeartRate => "heart_rate",
            SignalKind::PupilDiameterLeft => "pupil_left",
            SignalKind::PupilDiameterRight => "pupil_right",
            SignalKind::Eeg(EegBand::Delta) => "eeg_delta",
            SignalKind::Eeg(EegBand::Theta) => "eeg_theta",
            SignalKind::Eeg(EegBand::Alpha) => "eeg_alpha",
            SignalKind::Eeg(EegBand::Beta) => "eeg_beta",
            SignalKind::Eeg(EegBand::Gamma) => "eeg_gamma",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown signal kind `{0}`")]
pub struct UnknownSignalKind(pub String);

impl FromStr for SignalKind {
    type Err = UnknownSignalKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SignalKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| UnknownSignalKind(s.to_string()))
    }
}

impl Serialize for SignalKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for SignalKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: TimestampMs,
    pub value: f64,
}

/// One biometric variable over time. Timestamps strictly increase and values are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSeries {
    pub kind: SignalKind,
    pub samples: Vec<Sample>,
}

impl SignalSeries {
    pub fn new(kind: SignalKind, samples: Vec<Sample>) -> Self {
        SignalSeries { kind, samples }
    }

    pub fn from_pairs(kind: SignalKind, pairs: impl IntoIterator<Item = (i64, f64)>) -> Self {
        let samples = pairs
            .into_iter()
            .map(|(t, value)| Sample {
                t: TimestampMs(t),
                value,
            })
            .collect();
        SignalSeries { kind, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_t(&self) -> Option<TimestampMs> {
        self.samples.first().map(|s| s.t)
    }

    pub fn last_t(&self) -> Option<TimestampMs> {
        self.samples.last().map(|s| s.t)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlinkEvents {
    pub times: Vec<TimestampMs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item: String,
    pub score: f64,
}

/// Pretest answers graded against the key, one row per answered item.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretestMatrix {
    pub rows: Vec<ItemScore>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStamp {
    pub frame_no: u64,
    pub t: TimestampMs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoFrameIndex {
    pub video_id: String,
    pub rows: Vec<FrameStamp>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub learner_id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_tokens_round_trip() {
        for kind in SignalKind::ALL {
            assert_eq!(kind.token().parse::<SignalKind>().unwrap(), kind);
        }
        assert!("pupil".parse::<SignalKind>().is_err());
    }

    #[test]
    fn kind_order_is_presentation_order() {
        let mut sorted = SignalKind::ALL;
        sorted.reverse();
        sorted.sort();
        assert_eq!(sorted, SignalKind::ALL);
    }

    #[test]
    fn units() {
        assert_eq!(SignalKind::Attention.unit(), Unit::Score);
        assert_eq!(SignalKind::HeartRate.unit(), Unit::BeatsPerMinute);
        assert_eq!(SignalKind::PupilDiameterRight.unit(), Unit::Millimeters);
        assert_eq!(SignalKind::Eeg(EegBand::Beta).unit(), Unit::BandPower);
    }

    #[test]
    fn kind_serializes_as_token() {
        let json = serde_json::to_string(&SignalKind::Eeg(EegBand::Alpha)).unwrap();
        assert_eq!(json, "\"eeg_alpha\"");
        let mut map = BTreeMap::new();
        map.insert(SignalKind::HeartRate, 1);
        assert_eq!(serde_json::to_string(&map).unwrap(), r#"{"heart_rate":1}"#);
    }
}
