//! Scenario files: JSON in, validated grid objects out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path as FsPath;
use std::sync::Arc;

use genfil_core::binomial_filtration::{build_space, ArrowKind, EnumerationCap, FiltrationError};
use genfil_core::{
    BernoulliParams, BinomialFiltration, Filtration, FiltrationKind, FinProbSpace, FreeQ, GridTime, MarketParams, Path,
    TimeArrow,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub field: String,
    pub message: String,
}

impl InputError {
    fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for InputError {}

#[derive(Deserialize)]
#[serde(untagged)]
enum TimeText {
    Text(String),
    Number(serde_json::Number),
}

impl TimeText {
    fn text(&self) -> String {
        match self {
            TimeText::Text(s) => s.clone(),
            TimeText::Number(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawP {
    Scalar(f64),
    Table(BTreeMap<String, f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    mu: f64,
    sigma: f64,
    r: f64,
    s0: f64,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawFiltration {
    Full,
    Drop {
        alpha: TimeText,
        beta: TimeText,
    },
    Custom {
        steps: BTreeMap<String, BTreeMap<String, String>>,
    },
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum RawPayoff {
    Call { strike: f64 },
    Put { strike: f64 },
    Digital { strike: f64 },
    Table(BTreeMap<String, f64>),
    Bond,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClaim {
    maturity: TimeText,
    payoff: RawPayoff,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    eq: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(rename = "N")]
    n: u32,
    horizon: TimeText,
    p: RawP,
    market: RawMarket,
    filtration: RawFiltration,
    #[serde(default)]
    claim: Option<RawClaim>,
    #[serde(default)]
    free_q: BTreeMap<String, f64>,
    #[serde(default)]
    tolerances: Option<RawTolerances>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FiltrationSpec {
    Full,
    Drop {
        alpha: GridTime,
        beta: GridTime,
    },
    /// One-step maps by step index; missing steps are full.
    Custom(BTreeMap<u64, Vec<Path>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayoffSpec {
    Call(f64),
    Put(f64),
    Digital(f64),
    Table(BTreeMap<Path, f64>),
    Bond,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSpec {
    pub maturity: GridTime,
    pub payoff: PayoffSpec,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub hash: String,
    pub resolution: u32,
    pub horizon: GridTime,
    pub bernoulli: BernoulliParams,
    pub market: MarketParams,
    pub filtration: FiltrationSpec,
    pub claim: Option<ClaimSpec>,
    pub free_q: FreeQ,
    pub eq_tol: f64,
    pub cap: EnumerationCap,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

fn grid_time(field: &str, text: &TimeText, res: u32) -> Result<GridTime, InputError> {
    GridTime::parse_on_grid(&text.text(), res).map_err(|e| InputError::new(field, e))
}

fn parse_path(field: &str, text: &str, len: u32) -> Result<Path, InputError> {
    let path: Path = text.parse().map_err(|e| InputError::new(field, e))?;
    if path.len() != len {
        return Err(InputError::new(field, format!("path {text} should have {len} bits")));
    }
    Ok(path)
}

/// `"default"` or the path of an up-child, with a value in `[0, 1]`.
pub fn apply_free_q(free: &mut FreeQ, field: &str, key: &str, value: f64) -> Result<(), InputError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(InputError::new(field, format!("free q {value} is outside [0, 1]")));
    }
    if key == "default" {
        free.default = Some(value);
    } else {
        let node: Path = key.parse().map_err(|e| InputError::new(field, e))?;
        free.nodes.insert(node, value);
    }
    Ok(())
}

impl Scenario {
    pub fn load(file: &FsPath) -> Result<Self, InputError> {
        let bytes =
            std::fs::read(file).map_err(|e| InputError::new("", format!("cannot read {}: {e}", file.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InputError> {
        let hash = hex::encode(Sha256::digest(bytes));
        let mut de = serde_json::Deserializer::from_slice(bytes);
        let raw: RawScenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            InputError::new(if field == "." { String::new() } else { field }, e.into_inner())
        })?;
        Self::resolve(raw, hash)
    }

    fn resolve(raw: RawScenario, hash: String) -> Result<Self, InputError> {
        let res = raw.n;
        let horizon = grid_time("horizon", &raw.horizon, res)?;
        let cap = EnumerationCap::from_env();
        cap.check(horizon).map_err(|e| InputError::new("horizon", e))?;

        let bernoulli = match raw.p {
            RawP::Scalar(p) => BernoulliParams::constant(p).map_err(|e| InputError::new("p", e))?,
            RawP::Table(table) => {
                let default = table.get("default").copied().unwrap_or(0.5);
                let mut params = BernoulliParams::constant(default).map_err(|e| InputError::new("p.default", e))?;
                for (key, p) in table.iter().filter(|(k, _)| k.as_str() != "default") {
                    let field = format!("p.{key}");
                    let t = GridTime::parse_on_grid(key, res).map_err(|e| InputError::new(&field, e))?;
                    if t.is_zero() || t > horizon {
                        return Err(InputError::new(&field, "time must lie in (0, horizon]"));
                    }
                    params = params.with_override(t, *p).map_err(|e| InputError::new(&field, e))?;
                }
                params
            }
        };

        let m = raw.market;
        let market = MarketParams::new(m.mu, m.sigma, m.r, m.s0, res).map_err(|e| InputError::new("market", e))?;

        let filtration = match raw.filtration {
            RawFiltration::Full => FiltrationSpec::Full,
            RawFiltration::Drop { alpha, beta } => {
                let parse = |field: &str, t: &TimeText| {
                    GridTime::parse_dyadic(&t.text()).map_err(|e| InputError::new(field, e))
                };
                let (alpha, beta) = (parse("filtration.alpha", &alpha)?, parse("filtration.beta", &beta)?);
                if alpha > beta {
                    return Err(InputError::new(
                        "filtration",
                        format!("alpha {alpha} exceeds beta {beta}"),
                    ));
                }
                FiltrationSpec::Drop { alpha, beta }
            }
            RawFiltration::Custom { steps } => {
                let mut out = BTreeMap::new();
                for (key, table) in &steps {
                    let field = format!("filtration.steps.{key}");
                    let t = GridTime::parse_on_grid(key, res).map_err(|e| InputError::new(&field, e))?;
                    if t.is_zero() || t > horizon {
                        return Err(InputError::new(&field, "step time must lie in (0, horizon]"));
                    }
                    let k = t.step() as u32;
                    let mut map = vec![None; 1 << k];
                    for (from, to) in table {
                        let f = format!("{field}.{from}");
                        let source = parse_path(&f, from, k)?;
                        map[source.index()] = Some(parse_path(&f, to, k - 1)?);
                    }
                    let map = Path::all(k)
                        .map(|p| {
                            map[p.index()].ok_or_else(|| InputError::new(&field, format!("no image for path {p}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    out.insert(t.step(), map);
                }
                FiltrationSpec::Custom(out)
            }
        };

        let claim = match raw.claim {
            None => None,
            Some(c) => {
                let maturity = grid_time("claim.maturity", &c.maturity, res)?;
                if maturity > horizon {
                    return Err(InputError::new(
                        "claim.maturity",
                        format!("{maturity} is after the horizon {horizon}"),
                    ));
                }
                let payoff = match c.payoff {
                    RawPayoff::Call { strike } => PayoffSpec::Call(strike),
                    RawPayoff::Put { strike } => PayoffSpec::Put(strike),
                    RawPayoff::Digital { strike } => PayoffSpec::Digital(strike),
                    RawPayoff::Bond => PayoffSpec::Bond,
                    RawPayoff::Table(table) => {
                        let len = maturity.step() as u32;
                        let mut out = BTreeMap::new();
                        for (key, v) in &table {
                            out.insert(parse_path(&format!("claim.payoff.table.{key}"), key, len)?, *v);
                        }
                        if let Some(p) = Path::all(len).find(|p| !out.contains_key(p)) {
                            return Err(InputError::new("claim.payoff.table", format!("no value for path {p}")));
                        }
                        PayoffSpec::Table(out)
                    }
                };
                Some(ClaimSpec { maturity, payoff })
            }
        };

        let mut free_q = FreeQ::default();
        for (key, value) in &raw.free_q {
            apply_free_q(&mut free_q, &format!("free_q.{key}"), key, *value)?;
        }

        let eq_tol = match raw.tolerances {
            Some(t) if !(t.eq > 0.0) => return Err(InputError::new("tolerances.eq", "must be positive")),
            Some(t) => t.eq,
            None => DEFAULT_TOLERANCE,
        };

        Ok(Self {
            hash,
            resolution: res,
            horizon,
            bernoulli,
            market,
            filtration,
            claim,
            free_q,
            eq_tol,
            cap,
        })
    }

    pub fn base_filtration(&self) -> ScenarioFiltration {
        match &self.filtration {
            FiltrationSpec::Full => ScenarioFiltration::Binomial(BinomialFiltration::new(
                self.resolution,
                self.bernoulli.clone(),
                FiltrationKind::Full,
                self.cap,
            )),
            FiltrationSpec::Drop { alpha, beta } => ScenarioFiltration::Binomial(BinomialFiltration::new(
                self.resolution,
                self.bernoulli.clone(),
                FiltrationKind::Drop {
                    alpha: *alpha,
                    beta: *beta,
                },
                self.cap,
            )),
            FiltrationSpec::Custom(steps) => ScenarioFiltration::Custom(StepTableFiltration {
                resolution: self.resolution,
                params: self.bernoulli.clone(),
                cap: self.cap,
                steps: Arc::new(steps.clone()),
            }),
        }
    }
}

/// Product spaces with user-given one-step maps; longer arrows compose them.
#[derive(Debug, Clone)]
pub struct StepTableFiltration {
    resolution: u32,
    params: BernoulliParams,
    cap: EnumerationCap,
    steps: Arc<BTreeMap<u64, Vec<Path>>>,
}

impl Filtration for StepTableFiltration {
    fn resolution(&self) -> u32 {
        self.resolution
    }

    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
        Ok(Arc::new(build_space(self.resolution, t, &self.params, self.cap)?))
    }

    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path {
        let mut p = *path;
        for k in (arrow.target().step() + 1..=arrow.source().step()).rev() {
            p = match self.steps.get(&k) {
                Some(map) => map[p.index()],
                None => p.restrict(k as u32 - 1),
            };
        }
        p
    }
}

#[derive(Debug, Clone)]
pub enum ScenarioFiltration {
    Binomial(BinomialFiltration),
    Custom(StepTableFiltration),
}

impl Filtration for ScenarioFiltration {
    fn resolution(&self) -> u32 {
        match self {
            Self::Binomial(f) => f.resolution(),
            Self::Custom(f) => f.resolution(),
        }
    }

    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
        match self {
            Self::Binomial(f) => f.space(t),
            Self::Custom(f) => f.space(t),
        }
    }

    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path {
        match self {
            Self::Binomial(f) => f.apply(arrow, path),
            Self::Custom(f) => f.apply(arrow, path),
        }
    }

    fn arrow_kind(&self, arrow: TimeArrow) -> Option<ArrowKind> {
        match self {
            Self::Binomial(f) => f.arrow_kind(arrow),
            Self::Custom(f) => f.arrow_kind(arrow),
        }
    }
}
