//! The valence/arousal point and its `V#A` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const VA_MIN: f64 = 1.0;
pub const VA_MAX: f64 = 9.0;
pub const VA_MID: f64 = 5.0;

/// A (valence, arousal) point. Both coordinates are always inside `[1, 9]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaPair {
    valence: f64,
    arousal: f64,
}

impl VaPair {
    pub const MIDPOINT: VaPair = VaPair {
        valence: VA_MID,
        arousal: VA_MID,
    };

    pub fn new(valence: f64, arousal: f64) -> Result<Self> {
        check_range("valence", valence)?;
        check_range("arousal", arousal)?;
        Ok(Self { valence, arousal })
    }

    /// Projects each coordinate onto `[1, 9]`. NaN maps to the scale midpoint.
    pub fn clipped(valence: f64, arousal: f64) -> Self {
        Self {
            valence: clip(valence),
            arousal: clip(arousal),
        }
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }

    /// Canonical two-decimal `V#A` form.
    pub fn to_va_string(&self) -> String {
        format_va_string(self)
    }
}

fn check_range(dimension: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && (VA_MIN..=VA_MAX).contains(&value) {
        Ok(())
    } else {
        Err(Error::VaRange { dimension, value })
    }
}

fn clip(value: f64) -> f64 {
    if value.is_nan() {
        VA_MID
    } else {
        value.clamp(VA_MIN, VA_MAX)
    }
}

/// Parses a `real#real` string into a range-checked pair. No clipping.
pub fn parse_va_string(s: &str) -> Result<VaPair> {
    let err = |reason: &str| Error::VaParse {
        input: s.to_string(),
        reason: reason.to_string(),
    };
    let mut parts = s.trim().split('#');
    let (v, a) = match (parts.next(), parts.next(), parts.next()) {
        (Some(v), Some(a), None) => (v, a),
        (_, None, _) => return Err(err("missing '#' separator")),
        _ => return Err(err("expected exactly two fields")),
    };
    let v = parse_real(v).ok_or_else(|| err("valence is not a number"))?;
    let a = parse_real(a).ok_or_else(|| err("arousal is not a number"))?;
    VaPair::new(v, a)
}

fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    // Rust accepts "inf"/"NaN"; only plain decimals are valid here.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+')) {
        return None;
    }
    s.parse::<f64>().ok()
}

pub fn format_va_string(pair: &VaPair) -> String {
    format!("{:.2}#{:.2}", pair.valence, pair.arousal)
}

impl fmt::Display for VaPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_va_string(self))
    }
}

impl FromStr for VaPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_va_string(s)
    }
}

impl Serialize for VaPair {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_va_string(self))
    }
}

impl<'de> Deserialize<'de> for VaPair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_va_string(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_examples() {
        let p = parse_va_string("7.50#6.80").unwrap();
        assert_eq!((p.valence(), p.arousal()), (7.50, 6.80));
        let p = parse_va_string("5.00#5.00").unwrap();
        assert_eq!((p.valence(), p.arousal()), (5.0, 5.0));
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(parse_va_string("7.5"), Err(Error::VaParse { .. })));
        assert!(matches!(parse_va_string("1#2#3"), Err(Error::VaParse { .. })));
        assert!(matches!(parse_va_string("x#2"), Err(Error::VaParse { .. })));
        assert!(matches!(parse_va_string("NaN#2"), Err(Error::VaParse { .. })));
        assert!(matches!(parse_va_string("#"), Err(Error::VaParse { .. })));
    }

    #[test]
    fn range_is_enforced_for_gold() {
        match parse_va_string("10.0#4.0") {
            Err(Error::VaRange { dimension, .. }) => assert_eq!(dimension, "valence"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_va_string("5.0#0.99").is_err());
        assert!(parse_va_string("1.00#9.00").is_ok());
    }

    #[test]
    fn clipping_projects_onto_bounds() {
        let p = VaPair::clipped(9.8, 0.2);
        assert_eq!((p.valence(), p.arousal()), (9.0, 1.0));
        assert_eq!(VaPair::clipped(f64::NAN, 3.0).valence(), 5.0);
    }

    #[test]
    fn serde_uses_va_string() {
        let p = VaPair::new(8.5, 8.25).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"8.50#8.25\"");
        let back: VaPair = serde_json::from_str("\"8.50#8.25\"").unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn canonical_strings_round_trip(v in 100u32..=900, a in 100u32..=900) {
            let s = format!("{}.{:02}#{}.{:02}", v / 100, v % 100, a / 100, a % 100);
            prop_assert_eq!(format_va_string(&parse_va_string(&s).unwrap()), s);
        }
    }
}
