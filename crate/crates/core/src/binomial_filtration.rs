//! Binomial path spaces `B_t = {0,1}^{(0,t]}`, the `full` and `drop` maps
//! between them, and filtrations built from those maps.
//!
//! A [`Filtration`] assigns a finite space of [`Path`]s to every grid time and
//! a map to every backward arrow. [`check_functor_laws`] verifies the unit and
//! composition laws together with null-preservation, for any implementor.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::prob_core::{FinProbSpace, ProbError, ProbMorphism, RandomVariable, EPS_MASS};
use crate::timegrid::{arrow, times_through, GridTime, TimeArrow, TimeError};

/// Default limit on the number of bits per path (about a million paths).
pub const DEFAULT_MAX_BITS: u32 = 20;
/// Hard upper bound on path length.
pub const ABSOLUTE_MAX_BITS: u32 = 30;
/// Environment variable that overrides [`DEFAULT_MAX_BITS`].
pub const MAX_BITS_ENV: &str = "GENFIL_MAX_BITS";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FiltrationError {
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("path space at {time} needs {bits} bits, above the enumeration cap of {cap}")]
    TooManyBits { time: GridTime, bits: u64, cap: u32 },
    #[error("drop is undefined when landing at time 0")]
    DropAtRoot,
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("xi is undefined at time 0")]
    XiAtRoot,
    #[error("drop window is empty: alpha {alpha} > beta {beta}")]
    EmptyWindow { alpha: GridTime, beta: GridTime },
    #[error("time {time} is beyond the horizon {horizon}")]
    BeyondHorizon { time: GridTime, horizon: GridTime },
    #[error("invalid path {0:?}")]
    BadPath(String),
    #[error("path {path} has {got} bits, expected {expected}")]
    PathLength { path: Path, expected: u64, got: u32 },
}

/// A bit sequence indexed by `(0, t]`, earliest time first.
///
/// Stored as an integer whose most significant used bit is the earliest time,
/// so integer order is lexicographic order and the integer is the index of the
/// path in its space.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    len: u32,
    bits: u64,
}

impl Path {
    /// The unique path of `B_0`.
    pub const EMPTY: Path = Path { len: 0, bits: 0 };

    pub fn from_bits(bits: u64, len: u32) -> Self {
        debug_assert!(len <= 63 && (len == 63 || bits < (1u64 << len)));
        Self { len, bits }
    }

    pub fn from_slice(bits: &[u8]) -> Self {
        let mut p = Self::EMPTY;
        for &b in bits {
            p = p.push(b);
        }
        p
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Integer encoding; also the index of the path within its space.
    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn index(&self) -> usize {
        self.bits as usize
    }

    /// Bit at time `k * 2^-N`, for `1 <= k <= len`.
    pub fn bit(&self, k: u32) -> u8 {
        assert!(k >= 1 && k <= self.len, "bit {k} out of range 1..={}", self.len);
        ((self.bits >> (self.len - k)) & 1) as u8
    }

    /// Bit at the final time of the path.
    pub fn last(&self) -> Option<u8> {
        (self.len > 0).then_some((self.bits & 1) as u8)
    }

    /// Restriction to the first `m` coordinates.
    pub fn restrict(&self, m: u32) -> Self {
        assert!(m <= self.len);
        Self {
            len: m,
            bits: self.bits >> (self.len - m),
        }
    }

    /// Concatenation `ω d`.
    pub fn push(&self, d: u8) -> Self {
        Self {
            len: self.len + 1,
            bits: (self.bits << 1) | (d as u64 & 1),
        }
    }

    /// Same path with coordinate `k` set to `d`.
    pub fn with_bit(&self, k: u32, d: u8) -> Self {
        assert!(k >= 1 && k <= self.len);
        let mask = 1u64 << (self.len - k);
        let bits = if d == 0 { self.bits & !mask } else { self.bits | mask };
        Self { len: self.len, bits }
    }

    /// Path without its final coordinate.
    pub fn parent(&self) -> Option<Self> {
        (self.len > 0).then(|| self.restrict(self.len - 1))
    }

    /// All `2^len` paths of the given length, in lexicographic order.
    pub fn all(len: u32) -> impl Iterator<Item = Path> {
        (0..(1u64 << len)).map(move |bits| Path { len, bits })
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return write!(f, "*");
        }
        for k in 1..=self.len {
            write!(f, "{}", self.bit(k))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Path {
    type Err = FiltrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "*" || s.is_empty() {
            return Ok(Path::EMPTY);
        }
        if s.len() > ABSOLUTE_MAX_BITS as usize {
            return Err(FiltrationError::BadPath(s.to_string()));
        }
        let mut p = Path::EMPTY;
        for c in s.chars() {
            match c {
                '0' => p = p.push(0),
                '1' => p = p.push(1),
                _ => return Err(FiltrationError::BadPath(s.to_string())),
            }
        }
        Ok(p)
    }
}

/// Limit on path length for exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationCap(pub u32);

impl Default for EnumerationCap {
    fn default() -> Self {
        Self(DEFAULT_MAX_BITS)
    }
}

impl EnumerationCap {
    /// Reads [`MAX_BITS_ENV`]; falls back to the default when unset or invalid.
    pub fn from_env() -> Self {
        std::env::var(MAX_BITS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<u32>().ok())
            .map(|b| Self(b.min(ABSOLUTE_MAX_BITS)))
            .unwrap_or_default()
    }

    pub fn check(&self, t: GridTime) -> Result<u32, FiltrationError> {
        let bits = t.step();
        if bits > self.0.min(ABSOLUTE_MAX_BITS) as u64 {
            return Err(FiltrationError::TooManyBits {
                time: t,
                bits,
                cap: self.0,
            });
        }
        Ok(bits as u32)
    }
}

/// Success probabilities `p_s` of the coin at each grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliParams {
    default: f64,
    overrides: BTreeMap<GridTime, f64>,
}

fn check_probability(p: f64) -> Result<f64, FiltrationError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(FiltrationError::BadProbability(p))
    }
}

impl BernoulliParams {
    pub fn constant(p: f64) -> Result<Self, FiltrationError> {
        Ok(Self {
            default: check_probability(p)?,
            overrides: BTreeMap::new(),
        })
    }

    pub fn with_override(mut self, t: GridTime, p: f64) -> Result<Self, FiltrationError> {
        self.overrides.insert(t, check_probability(p)?);
        Ok(self)
    }

    pub fn p_at(&self, t: GridTime) -> f64 {
        self.overrides.get(&t).copied().unwrap_or(self.default)
    }

    /// True when every `p_s` for `s` in `(0, horizon]` lies in `{0, 1}`.
    pub fn is_trivial_through(&self, horizon: GridTime) -> bool {
        times_through(horizon).into_iter().skip(1).all(|s| {
            let p = self.p_at(s);
            p == 0.0 || p == 1.0
        })
    }
}

/// Product-measure weights of all paths in `B_t`, indexed by path bits.
pub fn product_weights(t: GridTime, params: &BernoulliParams) -> Vec<f64> {
    let mut weights = vec![1.0];
    let mut s = GridTime::zero(t.resolution());
    for _ in 0..t.step() {
        s = s.succ();
        let p = params.p_at(s);
        weights = weights.iter().flat_map(|&w| [w * (1.0 - p), w * p]).collect();
    }
    weights
}

/// The space `B_t` with the product measure of `params`.
pub fn build_space(
    resolution: u32,
    t: GridTime,
    params: &BernoulliParams,
    cap: EnumerationCap,
) -> Result<FinProbSpace<Path>, FiltrationError> {
    let t = t.on_grid(resolution)?;
    let bits = cap.check(t)?;
    let outcomes = Path::all(bits).collect();
    Ok(FinProbSpace::from_sorted(outcomes, product_weights(t, params))?)
}

/// Errors unless `path` has one bit per grid step of `t`.
pub fn check_path(path: &Path, t: GridTime) -> Result<(), FiltrationError> {
    if path.len() as u64 != t.step() {
        return Err(FiltrationError::PathLength {
            path: *path,
            expected: t.step(),
            got: path.len(),
        });
    }
    Ok(())
}

/// `full_{s,t}`: restriction of a path in `B_t` to `(0, s]`.
pub fn full_path(s: GridTime, path: &Path) -> Path {
    path.restrict(s.step() as u32)
}

/// `drop_{s,t}`: restriction to `(0, s]` with the coordinate at `s` zeroed.
pub fn drop_path(s: GridTime, path: &Path) -> Result<Path, FiltrationError> {
    if s.is_zero() {
        return Err(FiltrationError::DropAtRoot);
    }
    let restricted = full_path(s, path);
    Ok(restricted.with_bit(restricted.len(), 0))
}

fn product_morphism(
    s: GridTime,
    t: GridTime,
    params: &BernoulliParams,
    cap: EnumerationCap,
    f: impl Fn(&Path) -> Path,
) -> Result<ProbMorphism<Path>, FiltrationError> {
    let res = t.resolution();
    let src = Arc::new(build_space(res, t, params, cap)?);
    let tgt = Arc::new(build_space(res, s, params, cap)?);
    Ok(ProbMorphism::new(src, tgt, f)?)
}

/// `full_{s,t}` as a map between product spaces.
pub fn full_map(
    s: GridTime,
    t: GridTime,
    params: &BernoulliParams,
    cap: EnumerationCap,
) -> Result<ProbMorphism<Path>, FiltrationError> {
    arrow(s, t)?;
    product_morphism(s, t, params, cap, |p| full_path(s, p))
}

/// `drop_{s,t}` as a map between product spaces; rejects `s = 0`.
pub fn drop_map(
    s: GridTime,
    t: GridTime,
    params: &BernoulliParams,
    cap: EnumerationCap,
) -> Result<ProbMorphism<Path>, FiltrationError> {
    arrow(s, t)?;
    if s.is_zero() {
        return Err(FiltrationError::DropAtRoot);
    }
    product_morphism(s, t, params, cap, |p| drop_path(s, p).expect("s > 0"))
}

/// Which of the shipped maps a filtration assigns to an arrow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArrowKind {
    Identity,
    Full,
    Drop,
}

impl fmt::Display for ArrowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArrowKind::Identity => "identity",
            ArrowKind::Full => "full",
            ArrowKind::Drop => "drop",
        })
    }
}

/// A functor from the grid category into finite probability spaces of paths.
pub trait Filtration {
    fn resolution(&self) -> u32;

    /// The space attached to `t`.
    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError>;

    /// The underlying function of the map attached to `arrow`.
    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path;

    /// Label of the map on `arrow`, when the filtration knows it.
    fn arrow_kind(&self, _arrow: TimeArrow) -> Option<ArrowKind> {
        None
    }

    fn morphism(&self, arrow: TimeArrow) -> Result<ProbMorphism<Path>, FiltrationError> {
        let src = self.space(arrow.source())?;
        let tgt = self.space(arrow.target())?;
        Ok(ProbMorphism::new(src, tgt, |p| self.apply(arrow, p))?)
    }
}

impl<T: Filtration + ?Sized> Filtration for &T {
    fn resolution(&self) -> u32 {
        (**self).resolution()
    }
    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
        (**self).space(t)
    }
    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path {
        (**self).apply(arrow, path)
    }
    fn arrow_kind(&self, arrow: TimeArrow) -> Option<ArrowKind> {
        (**self).arrow_kind(arrow)
    }
    fn morphism(&self, arrow: TimeArrow) -> Result<ProbMorphism<Path>, FiltrationError> {
        (**self).morphism(arrow)
    }
}

/// Rule selecting full or drop per arrow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiltrationKind {
    Full,
    /// Drop on arrows landing at `s ∈ [alpha, beta]` from a strictly later
    /// time; `alpha` and `beta` may lie off the grid.
    Drop {
        alpha: GridTime,
        beta: GridTime,
    },
}

/// `Full^N` or `Drop^N_{α,β}` over product spaces.
#[derive(Debug)]
pub struct BinomialFiltration {
    resolution: u32,
    params: BernoulliParams,
    kind: FiltrationKind,
    cap: EnumerationCap,
    cache: Mutex<BTreeMap<u64, Arc<FinProbSpace<Path>>>>,
}

impl Clone for BinomialFiltration {
    fn clone(&self) -> Self {
        Self::new(self.resolution, self.params.clone(), self.kind, self.cap)
    }
}

impl BinomialFiltration {
    pub fn new(resolution: u32, params: BernoulliParams, kind: FiltrationKind, cap: EnumerationCap) -> Self {
        Self {
            resolution,
            params,
            kind,
            cap,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn params(&self) -> &BernoulliParams {
        &self.params
    }

    pub fn kind(&self) -> FiltrationKind {
        self.kind
    }

    pub fn cap(&self) -> EnumerationCap {
        self.cap
    }

    pub fn with_cap(mut self, cap: EnumerationCap) -> Self {
        self.cap = cap;
        self.cache = Mutex::new(BTreeMap::new());
        self
    }

    fn in_window(&self, s: GridTime) -> bool {
        match self.kind {
            FiltrationKind::Full => false,
            FiltrationKind::Drop { alpha, beta } => alpha <= s && s <= beta,
        }
    }

    fn kind_of(&self, arrow: TimeArrow) -> ArrowKind {
        let s = arrow.target();
        if arrow.is_identity() {
            ArrowKind::Identity
        } else if !s.is_zero() && self.in_window(s) {
            // B_0 has no coordinate to zero, so an arrow into 0 stays full
            ArrowKind::Drop
        } else {
            ArrowKind::Full
        }
    }
}

/// The classical filtration: `full` on every arrow.
pub fn make_full_filtration(resolution: u32, params: BernoulliParams) -> BinomialFiltration {
    BinomialFiltration::new(resolution, params, FiltrationKind::Full, EnumerationCap::default())
}

/// The dropped filtration forgetting events at times in `[alpha, beta]`.
pub fn make_drop_filtration(
    resolution: u32,
    params: BernoulliParams,
    alpha: GridTime,
    beta: GridTime,
) -> Result<BinomialFiltration, FiltrationError> {
    if alpha > beta {
        return Err(FiltrationError::EmptyWindow { alpha, beta });
    }
    Ok(BinomialFiltration::new(
        resolution,
        params,
        FiltrationKind::Drop { alpha, beta },
        EnumerationCap::default(),
    ))
}

impl Filtration for BinomialFiltration {
    fn resolution(&self) -> u32 {
        self.resolution
    }

    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
        let t = t.on_grid(self.resolution)?;
        let mut cache = self.cache.lock().expect("space cache poisoned");
        if let Some(space) = cache.get(&t.step()) {
            return Ok(space.clone());
        }
        let space = Arc::new(build_space(self.resolution, t, &self.params, self.cap)?);
        cache.insert(t.step(), space.clone());
        Ok(space)
    }

    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path {
        let s = arrow.target();
        match self.kind_of(arrow) {
            ArrowKind::Identity => *path,
            ArrowKind::Full => full_path(s, path),
            ArrowKind::Drop => drop_path(s, path).expect("drop never lands at 0"),
        }
    }

    fn arrow_kind(&self, arrow: TimeArrow) -> Option<ArrowKind> {
        Some(self.kind_of(arrow))
    }
}

/// `ξ_t(ω) = 2 ω(t) - 1` on the space of `filtration` at `t > 0`.
pub fn xi<F: Filtration + ?Sized>(filtration: &F, t: GridTime) -> Result<RandomVariable<Path>, FiltrationError> {
    if t.is_zero() {
        return Err(FiltrationError::XiAtRoot);
    }
    let space = filtration.space(t)?;
    Ok(RandomVariable::from_fn(space, |p| {
        2.0 * p.last().unwrap_or(0) as f64 - 1.0
    }))
}

/// `I_t(j, ω)`: paths of the fiber over `ω` whose final coordinate is `j`.
///
/// `step` must be the one-step map `t + 2^-N -> t` of the filtration.
pub fn fiber_i(j: u8, omega: &Path, step: &ProbMorphism<Path>) -> Vec<Path> {
    match step.target().index_of(omega) {
        Some(idx) => step
            .fiber(idx)
            .into_iter()
            .filter(|p| p.last() == Some(j))
            .copied()
            .collect(),
        None => Vec::new(),
    }
}

/// Counting form `#f^{-1}(ω) p_{t+δ} - #I_t(0, ω)` of `E^f(ξ_{t+δ})(ω)`.
///
/// Agrees with the conditional expectation when every fiber path has weight
/// ratio `p` or `1 - p` to `ω`: always on full steps, on drop steps only when
/// the forgotten coin is fair. In general the expectation is `(2p - 1) E^f(1)`.
pub fn xi_counting_formula(omega: &Path, step: &ProbMorphism<Path>, p_next: f64) -> f64 {
    let ones = fiber_i(1, omega, step).len() as f64;
    let zeros = fiber_i(0, omega, step).len() as f64;
    (ones + zeros) * p_next - zeros
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitViolation {
    pub time: GridTime,
    pub path: Path,
    pub image: Path,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionViolation {
    pub s: GridTime,
    pub t: GridTime,
    pub u: GridTime,
    pub path: Path,
    /// `f_{s,u}(ω)`
    pub direct: Path,
    /// `f_{s,t}(f_{t,u}(ω))`
    pub composed: Path,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrowViolation {
    pub arrow: TimeArrow,
    pub detail: String,
}

/// Result of [`check_functor_laws`]; violations are data, not errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FunctorLawReport {
    pub arrows_checked: usize,
    pub triples_checked: usize,
    pub unit_violations: Vec<UnitViolation>,
    pub composition_violations: Vec<CompositionViolation>,
    /// Arrows whose map is not null-preserving, or does not land in the target space.
    pub null_violations: Vec<ArrowViolation>,
}

impl FunctorLawReport {
    pub fn is_filtration(&self) -> bool {
        self.unit_violations.is_empty() && self.composition_violations.is_empty() && self.null_violations.is_empty()
    }

    pub fn violation_count(&self) -> usize {
        self.unit_violations.len() + self.composition_violations.len() + self.null_violations.len()
    }
}

/// Checks the unit law, the composition law over every grid triple
/// `s <= t <= u <= horizon`, and null-preservation of every arrow.
pub fn check_functor_laws<F: Filtration + ?Sized>(
    filtration: &F,
    horizon: GridTime,
) -> Result<FunctorLawReport, FiltrationError> {
    let horizon = horizon.on_grid(filtration.resolution())?;
    let times = times_through(horizon);
    let mut report = FunctorLawReport::default();
    let spaces = times
        .iter()
        .map(|&t| filtration.space(t))
        .collect::<Result<Vec<_>, _>>()?;

    for (&t, space) in times.iter().zip(&spaces) {
        let id = TimeArrow::identity(t);
        for p in space.outcomes() {
            let image = filtration.apply(id, p);
            if image != *p {
                report.unit_violations.push(UnitViolation {
                    time: t,
                    path: *p,
                    image,
                });
            }
        }
    }

    for (i, &s) in times.iter().enumerate() {
        for (j, &t) in times.iter().enumerate().skip(i) {
            let st = arrow(s, t)?;
            report.arrows_checked += 1;
            match filtration.morphism(st) {
                Ok(m) => {
                    let check = m.is_null_preserving(EPS_MASS);
                    if !check.holds {
                        report.null_violations.push(ArrowViolation {
                            arrow: st,
                            detail: format!(
                                "target {} is null but receives mass {}",
                                check.witness.expect("witness"),
                                check.witness_mass
                            ),
                        });
                    }
                }
                Err(e) => report.null_violations.push(ArrowViolation {
                    arrow: st,
                    detail: e.to_string(),
                }),
            }
            for (k, &u) in times.iter().enumerate().skip(j) {
                let tu = arrow(t, u)?;
                let su = arrow(s, u)?;
                report.triples_checked += 1;
                for p in spaces[k].outcomes() {
                    let direct = filtration.apply(su, p);
                    let composed = filtration.apply(st, &filtration.apply(tu, p));
                    if direct != composed {
                        report.composition_violations.push(CompositionViolation {
                            s,
                            t,
                            u,
                            path: *p,
                            direct,
                            composed,
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Differences between two filtrations up to a horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FiltrationComparison {
    pub space_mismatches: Vec<GridTime>,
    pub morphism_mismatches: Vec<(TimeArrow, Path)>,
}

impl FiltrationComparison {
    pub fn equal(&self) -> bool {
        self.space_mismatches.is_empty() && self.morphism_mismatches.is_empty()
    }
}

/// Compares outcome sets, weights (to `eps`) and maps of two filtrations.
pub fn compare_filtrations<A, B>(
    a: &A,
    b: &B,
    horizon: GridTime,
    eps: f64,
) -> Result<FiltrationComparison, FiltrationError>
where
    A: Filtration + ?Sized,
    B: Filtration + ?Sized,
{
    let mut out = FiltrationComparison::default();
    let times = times_through(horizon.on_grid(a.resolution())?);
    for &t in &times {
        let (sa, sb) = (a.space(t)?, b.space(t)?);
        let same =
            sa.outcomes() == sb.outcomes() && sa.weights().iter().zip(sb.weights()).all(|(x, y)| (x - y).abs() <= eps);
        if !same {
            out.space_mismatches.push(t);
        }
    }
    for (i, &s) in times.iter().enumerate() {
        for &t in &times[i..] {
            let st = arrow(s, t)?;
            for p in a.space(t)?.outcomes() {
                if a.apply(st, p) != b.apply(st, p) {
                    out.morphism_mismatches.push((st, *p));
                }
            }
        }
    }
    Ok(out)
}
