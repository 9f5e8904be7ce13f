//! Confidence scores, the intervention threshold, and the gate predicate that
//! ties them together.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("confidence score {0} outside 1..=5")]
    Confidence(i64),
    #[error("intervention threshold {0} outside 0..=5")]
    Threshold(i64),
}

/// Agent confidence in an action, an integer in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Confidence(u8);

impl Confidence {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(value: i64) -> Result<Self, ScoreError> {
        if (Self::MIN as i64..=Self::MAX as i64).contains(&value) {
            Ok(Confidence(value as u8))
        } else {
            Err(ScoreError::Confidence(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Confidence> {
        (Self::MIN..=Self::MAX).map(Confidence)
    }
}

impl TryFrom<i64> for Confidence {
    type Error = ScoreError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Confidence::new(v)
    }
}

impl From<Confidence> for u8 {
    fn from(c: Confidence) -> u8 {
        c.0
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Intervention threshold γ in `0..=5`. Scores at or below it request help.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Gamma(u8);

impl Gamma {
    pub const MAX: u8 = 5;

    pub fn new(value: i64) -> Result<Self, ScoreError> {
        if (0..=Self::MAX as i64).contains(&value) {
            Ok(Gamma(value as u8))
        } else {
            Err(ScoreError::Threshold(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Gamma> {
        (0..=Self::MAX).map(Gamma)
    }

    /// `true` when a step with this confidence runs without intervention.
    pub fn autonomous(self, confidence: Confidence) -> bool {
        decision(confidence, self)
    }
}

impl TryFrom<i64> for Gamma {
    type Error = ScoreError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Gamma::new(v)
    }
}

impl From<Gamma> for u8 {
    fn from(g: Gamma) -> u8 {
        g.0
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The gate: autonomous iff `c > γ`. Used by the runtime loop, the preference
/// forge and the confusion taxonomy alike.
pub fn decision(confidence: Confidence, gamma: Gamma) -> bool {
    confidence.0 > gamma.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: i64) -> Confidence {
        Confidence::new(v).unwrap()
    }
    fn g(v: i64) -> Gamma {
        Gamma::new(v).unwrap()
    }

    #[test]
    fn gate_boundary() {
        assert!(!decision(c(3), g(3)));
        assert!(decision(c(4), g(3)));
        assert!(decision(c(1), g(0)));
        assert!(Confidence::all().all(|s| !decision(s, g(5))));
    }

    #[test]
    fn ranges() {
        assert!(Confidence::new(0).is_err());
        assert!(Confidence::new(6).is_err());
        assert!(Gamma::new(-1).is_err());
        assert!(Gamma::new(6).is_err());
        assert!(serde_json::from_str::<Confidence>("6").is_err());
        assert_eq!(serde_json::from_str::<Gamma>("0").unwrap(), g(0));
    }
}
