//! Dyadic time grid `n * 2^-N` and the thin category of its backward arrows.
//!
//! Times are exact `(step, resolution)` pairs. Equality, ordering and hashing
//! follow the represented rational value, so `1/2` at resolution 1 equals
//! `2/4` at resolution 2. Grid enumeration and arrows, on the other hand,
//! only accept operands that share a resolution.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

/// Largest resolution accepted anywhere in the crate.
pub const MAX_RESOLUTION: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("resolution mismatch: {left} is on grid 2^-{left_res}, {right} on grid 2^-{right_res}")]
    ResolutionMismatch {
        left: GridTime,
        left_res: u32,
        right: GridTime,
        right_res: u32,
    },
    #[error("time ordering violated: expected {earlier} <= {later}")]
    Order { earlier: GridTime, later: GridTime },
    #[error("resolution {0} exceeds the supported maximum {MAX_RESOLUTION}")]
    ResolutionTooLarge(u32),
    #[error("{time} is not aligned to the grid 2^-{resolution}")]
    NotAligned { time: GridTime, resolution: u32 },
    #[error("cannot parse time {0:?}")]
    Parse(String),
}

/// A point `step * 2^-resolution` of the dyadic grid.
#[derive(Clone, Copy)]
pub struct GridTime {
    step: u64,
    resolution: u32,
}

impl GridTime {
    pub fn new(step: u64, resolution: u32) -> Result<Self, TimeError> {
        if resolution > MAX_RESOLUTION {
            return Err(TimeError::ResolutionTooLarge(resolution));
        }
        Ok(Self { step, resolution })
    }

    pub fn zero(resolution: u32) -> Self {
        Self { step: 0, resolution }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn value(&self) -> f64 {
        self.step as f64 / (1u64 << self.resolution) as f64
    }

    pub fn is_zero(&self) -> bool {
        self.step == 0
    }

    /// The next grid point, `t + 2^-N`.
    pub fn succ(&self) -> Self {
        Self {
            step: self.step + 1,
            resolution: self.resolution,
        }
    }

    /// The previous grid point, `t - 2^-N`; `None` at zero.
    pub fn pred(&self) -> Option<Self> {
        self.step.checked_sub(1).map(|step| Self {
            step,
            resolution: self.resolution,
        })
    }

    /// Re-expresses this time on the grid `2^-resolution`, if it lies on it.
    pub fn on_grid(&self, resolution: u32) -> Result<Self, TimeError> {
        if resolution > MAX_RESOLUTION {
            return Err(TimeError::ResolutionTooLarge(resolution));
        }
        let (num, res) = self.reduced();
        if res > resolution {
            return Err(TimeError::NotAligned {
                time: *self,
                resolution,
            });
        }
        Ok(Self {
            step: num << (resolution - res),
            resolution,
        })
    }

    /// Lowest-terms form `(numerator, exponent)` of the dyadic value.
    fn reduced(&self) -> (u64, u32) {
        if self.step == 0 {
            return (0, 0);
        }
        let shift = self.step.trailing_zeros().min(self.resolution);
        (self.step >> shift, self.resolution - shift)
    }

    /// Parses `"3/8"`, `"1/2^3"`, `"0.375"` or `"1"`, requiring alignment with
    /// the grid `2^-resolution`.
    pub fn parse_on_grid(text: &str, resolution: u32) -> Result<Self, TimeError> {
        Self::parse_dyadic(text)?.on_grid(resolution)
    }

    /// Parses any non-negative dyadic rational, at its own lowest resolution.
    pub fn parse_dyadic(text: &str) -> Result<Self, TimeError> {
        let err = || TimeError::Parse(text.to_string());
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let num: u64 = num.trim().parse().map_err(|_| err())?;
            let den = den.trim();
            let exponent = if let Some(exp) = den.strip_prefix("2^") {
                exp.parse::<u32>().map_err(|_| err())?
            } else {
                let den: u64 = den.parse().map_err(|_| err())?;
                if den == 0 || !den.is_power_of_two() {
                    return Err(err());
                }
                den.trailing_zeros()
            };
            return Self::new(num, exponent).map_err(|_| err()).map(|t| t.canonical());
        }
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let frac_part = frac_part.trim_end_matches('0');
        let int_val: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| err())?
        };
        // value = int + frac / 10^k; dyadic iff frac / 10^k = m / 2^k with 5^k | frac
        let k = frac_part.len() as u32;
        if k > 19 {
            return Err(err());
        }
        let frac_val: u128 = if k == 0 {
            0
        } else {
            frac_part.parse().map_err(|_| err())?
        };
        let five_k = 5u128.pow(k);
        if !frac_val.is_multiple_of(five_k) {
            return Err(err());
        }
        let m = (frac_val / five_k) as u64;
        if k > MAX_RESOLUTION {
            return Err(err());
        }
        let step = int_val
            .checked_mul(1u64 << k)
            .and_then(|v| v.checked_add(m))
            .ok_or_else(err)?;
        Ok(Self { step, resolution: k }.canonical())
    }

    fn canonical(self) -> Self {
        let (step, resolution) = self.reduced();
        Self { step, resolution }
    }
}

impl PartialEq for GridTime {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for GridTime {}

impl PartialOrd for GridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GridTime {
    fn cmp(&self, other: &Self) -> Ordering {
        let res = self.resolution.max(other.resolution);
        let lhs = (self.step as u128) << (res - self.resolution);
        let rhs = (other.step as u128) << (res - other.resolution);
        lhs.cmp(&rhs)
    }
}

impl Hash for GridTime {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.reduced().hash(state);
    }
}

impl fmt::Debug for GridTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridTime({}/2^{})", self.step, self.resolution)
    }
}

/// Lowest-terms fraction, e.g. `0`, `1`, `3/8`, `5/4`.
impl fmt::Display for GridTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (num, res) = self.reduced();
        if res == 0 {
            write!(f, "{num}")
        } else {
            write!(f, "{num}/{}", 1u64 << res)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    /// `[s, t]`
    Closed,
    /// `(s, t]`
    LeftOpen,
    /// `[s, t)`
    RightOpen,
    /// `(s, t)`
    Open,
}

fn same_resolution(a: GridTime, b: GridTime) -> Result<(), TimeError> {
    if a.resolution != b.resolution {
        return Err(TimeError::ResolutionMismatch {
            left: a,
            left_res: a.resolution,
            right: b,
            right_res: b.resolution,
        });
    }
    Ok(())
}

/// Grid points of the requested interval between `s` and `t`, ascending.
pub fn grid_points(kind: IntervalKind, s: GridTime, t: GridTime) -> Result<Vec<GridTime>, TimeError> {
    same_resolution(s, t)?;
    if s > t {
        return Err(TimeError::Order { earlier: s, later: t });
    }
    let lo = match kind {
        IntervalKind::Closed | IntervalKind::RightOpen => s.step,
        IntervalKind::LeftOpen | IntervalKind::Open => s.step + 1,
    };
    let hi = match kind {
        IntervalKind::Closed | IntervalKind::LeftOpen => t.step + 1,
        IntervalKind::RightOpen | IntervalKind::Open => t.step,
    };
    Ok((lo..hi.max(lo))
        .map(|step| GridTime {
            step,
            resolution: s.resolution,
        })
        .collect())
}

/// All grid points `0, 2^-N, ..., horizon`.
pub fn times_through(horizon: GridTime) -> Vec<GridTime> {
    (0..=horizon.step)
        .map(|step| GridTime {
            step,
            resolution: horizon.resolution,
        })
        .collect()
}

/// The unique arrow `t -> s` of the grid category, for `s <= t`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeArrow {
    source: GridTime,
    target: GridTime,
}

impl TimeArrow {
    /// Later endpoint.
    pub fn source(&self) -> GridTime {
        self.source
    }

    /// Earlier endpoint.
    pub fn target(&self) -> GridTime {
        self.target
    }

    pub fn is_identity(&self) -> bool {
        self.source == self.target
    }

    pub fn identity(t: GridTime) -> Self {
        Self { source: t, target: t }
    }

    /// `self ∘ inner`, where `inner: u -> t` and `self: t -> s`.
    pub fn compose(&self, inner: &TimeArrow) -> Result<TimeArrow, TimeError> {
        same_resolution(self.source, inner.target)?;
        if self.source != inner.target {
            return Err(TimeError::Order {
                earlier: inner.target,
                later: self.source,
            });
        }
        arrow(self.target, inner.source)
    }
}

impl fmt::Debug for TimeArrow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ι[{} <- {}]", self.target, self.source)
    }
}

impl fmt::Display for TimeArrow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.source, self.target)
    }
}

/// The arrow from `t` back to `s`.
pub fn arrow(s: GridTime, t: GridTime) -> Result<TimeArrow, TimeError> {
    same_resolution(s, t)?;
    if s > t {
        return Err(TimeError::Order { earlier: s, later: t });
    }
    Ok(TimeArrow { source: t, target: s })
}

/// One-step arrow `t + 2^-N -> t`.
pub fn step_arrow(t: GridTime) -> TimeArrow {
    TimeArrow {
        source: t.succ(),
        target: t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: u64, res: u32) -> GridTime {
        GridTime::new(n, res).unwrap()
    }

    #[test]
    fn left_open_unit_interval_at_quarter_resolution() {
        let pts = grid_points(IntervalKind::LeftOpen, g(0, 2), g(4, 2)).unwrap();
        let vals: Vec<f64> = pts.iter().map(|t| t.value()).collect();
        assert_eq!(vals, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn empty_interval() {
        for res in 0..4 {
            let pts = grid_points(IntervalKind::LeftOpen, g(0, res), g(0, res)).unwrap();
            assert!(pts.is_empty());
        }
        assert!(grid_points(IntervalKind::Open, g(1, 3), g(2, 3)).unwrap().is_empty());
    }

    #[test]
    fn closed_window_three_eighths_to_five_eighths() {
        let pts = grid_points(IntervalKind::Closed, g(3, 3), g(5, 3)).unwrap();
        assert_eq!(pts, vec![g(3, 3), g(4, 3), g(5, 3)]);
    }

    #[test]
    fn mismatched_resolutions_rejected() {
        assert!(matches!(
            grid_points(IntervalKind::Closed, g(1, 2), g(1, 3)),
            Err(TimeError::ResolutionMismatch { .. })
        ));
        assert!(matches!(
            arrow(g(0, 2), g(1, 3)),
            Err(TimeError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn arrows() {
        let a = arrow(g(0, 2), g(4, 2)).unwrap();
        assert_eq!(a.source(), g(4, 2));
        assert_eq!(a.target(), g(0, 2));
        assert!(arrow(g(2, 2), g(2, 2)).unwrap().is_identity());
        assert!(matches!(arrow(g(3, 2), g(1, 2)), Err(TimeError::Order { .. })));

        let st = arrow(g(0, 2), g(2, 2)).unwrap();
        let tu = arrow(g(2, 2), g(4, 2)).unwrap();
        assert_eq!(st.compose(&tu).unwrap(), arrow(g(0, 2), g(4, 2)).unwrap());
        assert!(tu.compose(&st).is_err());
    }

    #[test]
    fn value_semantics_across_resolutions() {
        assert_eq!(g(1, 1), g(4, 3));
        assert!(g(3, 3) < g(1, 1));
        assert_eq!(g(4, 3).on_grid(1).unwrap().step(), 1);
        assert!(g(3, 3).on_grid(2).is_err());
        assert_eq!(g(3, 3).to_string(), "3/8");
        assert_eq!(g(8, 3).to_string(), "1");
        assert_eq!(g(0, 3).to_string(), "0");
    }

    #[test]
    fn parsing() {
        assert_eq!(GridTime::parse_dyadic("3/8").unwrap(), g(3, 3));
        assert_eq!(GridTime::parse_dyadic("1/2^3").unwrap(), g(1, 3));
        assert_eq!(GridTime::parse_dyadic("0.375").unwrap(), g(3, 3));
        assert_eq!(GridTime::parse_dyadic("1").unwrap(), g(1, 0));
        assert_eq!(GridTime::parse_dyadic("0.50").unwrap(), g(1, 1));
        assert!(GridTime::parse_dyadic("0.1").is_err());
        assert!(GridTime::parse_dyadic("1/3").is_err());
        assert!(GridTime::parse_dyadic("-1").is_err());
        assert!(GridTime::parse_on_grid("0.375", 2).is_err());
        assert_eq!(GridTime::parse_on_grid("0.75", 2).unwrap().step(), 3);
    }

    proptest::proptest! {
        #[test]
        fn composition_is_unique(res in 0u32..5, a in 0u64..20, b in 0u64..20, c in 0u64..20) {
            let mut v = [a, b, c];
            v.sort();
            let (s, t, u) = (g(v[0], res), g(v[1], res), g(v[2], res));
            let composed = arrow(s, t).unwrap().compose(&arrow(t, u).unwrap()).unwrap();
            proptest::prop_assert_eq!(composed, arrow(s, u).unwrap());
        }

        #[test]
        fn interval_count_matches_length(res in 0u32..6, a in 0u64..40, b in 0u64..40) {
            let (lo, hi) = (a.min(b), a.max(b));
            let pts = grid_points(IntervalKind::LeftOpen, g(lo, res), g(hi, res)).unwrap();
            proptest::prop_assert_eq!(pts.len() as u64, hi - lo);
            proptest::prop_assert!(pts.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn ordering_matches_rational_value(a in 0u64..1000, ra in 0u32..8, b in 0u64..1000, rb in 0u32..8) {
            let (x, y) = (g(a, ra), g(b, rb));
            let lhs = a as f64 / (1u64 << ra) as f64;
            let rhs = b as f64 / (1u64 << rb) as f64;
            proptest::prop_assert_eq!(x.cmp(&y), lhs.partial_cmp(&rhs).unwrap());
        }
    }
}
