//! Shared vocabulary: integer-microsecond virtual time, requests, execution
//! mode and SLA policy.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MICROS_PER_SEC: u64 = 1_000_000;

/// Converts non-negative seconds to whole microseconds, rounding to nearest.
fn secs_to_micros(secs: f64) -> u64 {
    debug_assert!(secs.is_finite() && secs >= 0.0);
    (secs * MICROS_PER_SEC as f64).round() as u64
}

fn fmt_micros(micros: u64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    write!(f, "{}.{:06}", micros / MICROS_PER_SEC, micros % MICROS_PER_SEC)
}

/// Instant on the virtual clock, in microseconds since run start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimePoint(u64);

/// Non-negative duration in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeSpan(u64);

impl TimePoint {
    pub const ZERO: TimePoint = TimePoint(0);

    pub const fn from_micros(micros: u64) -> Self {
        TimePoint(micros)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        TimePoint(secs_to_micros(secs))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    /// Elapsed time since `earlier`, or `None` if `earlier` is later than `self`.
    pub fn checked_since(self, earlier: TimePoint) -> Option<TimeSpan> {
        self.0.checked_sub(earlier.0).map(TimeSpan)
    }

    /// Elapsed time since `earlier`, clamped at zero.
    pub fn saturating_since(self, earlier: TimePoint) -> TimeSpan {
        TimeSpan(self.0.saturating_sub(earlier.0))
    }

    /// `self - span`, clamped at zero.
    pub fn saturating_sub(self, span: TimeSpan) -> TimePoint {
        TimePoint(self.0.saturating_sub(span.0))
    }
}

impl TimeSpan {
    pub const ZERO: TimeSpan = TimeSpan(0);

    pub const fn from_micros(micros: u64) -> Self {
        TimeSpan(micros)
    }

    pub const fn from_secs(secs: u64) -> Self {
        TimeSpan(secs * MICROS_PER_SEC)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        TimeSpan(secs_to_micros(secs))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, other: TimeSpan) -> Option<TimeSpan> {
        self.0.checked_sub(other.0).map(TimeSpan)
    }

    pub fn saturating_sub(self, other: TimeSpan) -> TimeSpan {
        TimeSpan(self.0.saturating_sub(other.0))
    }
}

impl Add<TimeSpan> for TimePoint {
    type Output = TimePoint;
    fn add(self, rhs: TimeSpan) -> TimePoint {
        TimePoint(self.0 + rhs.0)
    }
}

impl AddAssign<TimeSpan> for TimePoint {
    fn add_assign(&mut self, rhs: TimeSpan) {
        self.0 += rhs.0;
    }
}

impl Add for TimeSpan {
    type Output = TimeSpan;
    fn add(self, rhs: TimeSpan) -> TimeSpan {
        TimeSpan(self.0 + rhs.0)
    }
}

impl AddAssign for TimeSpan {
    fn add_assign(&mut self, rhs: TimeSpan) {
        self.0 += rhs.0;
    }
}

impl Sub for TimeSpan {
    type Output = TimeSpan;
    /// Panics on underflow; use [`TimeSpan::checked_sub`] when that can happen.
    fn sub(self, rhs: TimeSpan) -> TimeSpan {
        TimeSpan(self.0.checked_sub(rhs.0).expect("TimeSpan subtraction underflow"))
    }
}

impl std::iter::Sum for TimeSpan {
    fn sum<I: Iterator<Item = TimeSpan>>(iter: I) -> TimeSpan {
        TimeSpan(iter.map(|s| s.0).sum())
    }
}

/// Renders as seconds with six decimals, e.g. `31.010000`.
impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_micros(self.0, f)
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_micros(self.0, f)
    }
}

/// Parses decimal seconds with at most six fractional digits, exactly.
fn parse_secs(s: &str) -> Option<u64> {
    let s = s.trim();
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if frac.len() > 6 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        // Fall back to float parsing for exotic forms (exponents, long fractions).
        let v: f64 = s.parse().ok()?;
        return (v.is_finite() && v >= 0.0).then(|| secs_to_micros(v));
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let mut frac_micros: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    for _ in frac.len()..6 {
        frac_micros *= 10;
    }
    int.checked_mul(MICROS_PER_SEC)?.checked_add(frac_micros)
}

impl FromStr for TimePoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_secs(s)
            .map(TimePoint)
            .ok_or_else(|| Error::param("time", format!("`{s}` is not a non-negative number of seconds")))
    }
}

impl FromStr for TimeSpan {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_secs(s)
            .map(TimeSpan)
            .ok_or_else(|| Error::param("duration", format!("`{s}` is not a non-negative number of seconds")))
    }
}

macro_rules! serde_as_seconds {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_as_seconds!(TimePoint);
serde_as_seconds!(TimeSpan);

/// GPU operating mode: confidential compute on or off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExecMode {
    #[serde(rename = "cc")]
    Cc,
    #[serde(rename = "nocc")]
    NoCc,
}

impl ExecMode {
    pub const ALL: [ExecMode; 2] = [ExecMode::Cc, ExecMode::NoCc];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecMode::Cc => "cc",
            ExecMode::NoCc => "nocc",
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExecMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cc" => Ok(ExecMode::Cc),
            "nocc" => Ok(ExecMode::NoCc),
            _ => Err(Error::param("mode", format!("expected `cc` or `nocc`, got `{s}`"))),
        }
    }
}

/// Model name key, cheap to clone.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(Arc<str>);

impl ModelId {
    pub fn new(name: impl AsRef<str>) -> Self {
        ModelId(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId::new(s)
    }
}

/// One inference demand and its lifecycle timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub model: ModelId,
    pub arrival: TimePoint,
    /// Start of the inference pass that served this request.
    pub dispatch: Option<TimePoint>,
    pub completion: Option<TimePoint>,
    pub batch_id: Option<u64>,
}

impl Request {
    pub fn new(id: u64, model: ModelId, arrival: TimePoint) -> Self {
        Request {
            id,
            model,
            arrival,
            dispatch: None,
            completion: None,
            batch_id: None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.completion.is_some()
    }

    /// End-to-end latency, `None` while unfulfilled.
    pub fn latency(&self) -> Option<TimeSpan> {
        self.completion.map(|c| {
            c.checked_since(self.arrival)
                .expect("request completed before it arrived")
        })
    }

    /// Completed within the SLA limit (inclusive). Unfulfilled requests never meet it.
    pub fn meets_sla(&self, sla: SlaPolicy) -> bool {
        self.latency().is_some_and(|l| l <= sla.limit())
    }
}

/// End-to-end latency budget for every request of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlaPolicy {
    limit: TimeSpan,
}

impl SlaPolicy {
    pub fn new(limit: TimeSpan) -> Result<Self> {
        if limit.is_zero() {
            return Err(Error::param("sla_s", "SLA limit must be positive"));
        }
        Ok(SlaPolicy { limit })
    }

    pub fn from_secs_f64(secs: f64) -> Result<Self> {
        if !(secs.is_finite() && secs > 0.0) {
            return Err(Error::param("sla_s", format!("SLA limit must be positive, got {secs}")));
        }
        SlaPolicy::new(TimeSpan::from_secs_f64(secs))
    }

    pub fn limit(self) -> TimeSpan {
        self.limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn secs(s: f64) -> TimePoint {
        TimePoint::from_secs_f64(s)
    }

    fn completed(arrival: f64, completion: f64) -> Request {
        let mut r = Request::new(1, ModelId::new("a"), secs(arrival));
        r.dispatch = Some(secs(arrival));
        r.completion = Some(secs(completion));
        r.batch_id = Some(0);
        r
    }

    #[test]
    fn latency_examples() {
        assert_eq!(completed(0.0, 21.0).latency(), Some(TimeSpan::from_secs(21)));
        assert_eq!(completed(5.0, 5.0).latency(), Some(TimeSpan::ZERO));
        let pending = Request::new(3, ModelId::new("a"), secs(10.0));
        assert_eq!(pending.latency(), None);
    }

    #[test]
    fn sla_boundary_is_inclusive() {
        let sla = SlaPolicy::from_secs_f64(40.0).unwrap();
        assert!(completed(0.0, 39.9).meets_sla(sla));
        assert!(completed(0.0, 40.0).meets_sla(sla));
        assert!(!completed(0.0, 40.000001).meets_sla(sla));
        let pending = Request::new(3, ModelId::new("a"), secs(10.0));
        assert!(!pending.meets_sla(SlaPolicy::from_secs_f64(80.0).unwrap()));
    }

    #[test]
    fn sla_must_be_positive() {
        assert!(SlaPolicy::new(TimeSpan::ZERO).is_err());
        assert!(SlaPolicy::from_secs_f64(-1.0).is_err());
        assert!(SlaPolicy::from_secs_f64(f64::NAN).is_err());
    }

    #[test]
    fn renders_six_decimal_seconds() {
        assert_eq!(TimePoint::from_micros(31_010_000).to_string(), "31.010000");
        assert_eq!(TimeSpan::from_micros(7).to_string(), "0.000007");
        assert_eq!(TimeSpan::ZERO.to_string(), "0.000000");
    }

    #[test]
    fn parses_seconds_exactly() {
        assert_eq!(
            "31.01".parse::<TimePoint>().unwrap(),
            TimePoint::from_micros(31_010_000)
        );
        assert_eq!("0.000001".parse::<TimeSpan>().unwrap(), TimeSpan::from_micros(1));
        assert_eq!("12".parse::<TimeSpan>().unwrap(), TimeSpan::from_secs(12));
        assert!("-1".parse::<TimeSpan>().is_err());
        assert!("abc".parse::<TimePoint>().is_err());
    }

    #[test]
    fn exec_mode_parsing() {
        assert_eq!("cc".parse::<ExecMode>().unwrap(), ExecMode::Cc);
        assert_eq!("No-CC".parse::<ExecMode>().unwrap(), ExecMode::NoCc);
        assert!("tee".parse::<ExecMode>().is_err());
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(micros in 0u64..10_000_000_000_000) {
            let t = TimePoint::from_micros(micros);
            prop_assert_eq!(t.to_string().parse::<TimePoint>().unwrap(), t);
        }

        #[test]
        fn meets_sla_monotone_in_limit(lat in 0u64..200_000_000, a in 1u64..200_000_000, extra in 0u64..100_000_000) {
            let mut r = Request::new(0, ModelId::new("m"), TimePoint::ZERO);
            r.completion = Some(TimePoint::from_micros(lat));
            r.batch_id = Some(0);
            let small = SlaPolicy::new(TimeSpan::from_micros(a)).unwrap();
            let large = SlaPolicy::new(TimeSpan::from_micros(a + extra)).unwrap();
            prop_assert!(!r.meets_sla(small) || r.meets_sla(large));
        }
    }
}
