//! Stock and bond driven by a filtration, trading strategies, their value and
//! gain processes, self-financing checks and arbitrage construction.
//!
//! The stock moves by `1 + 2^-N μ ± 2^-N/2 σ` per step, applied to the price
//! the filtration's one-step map reports for the previous time. Under a drop
//! step both branches of a forgotten coin therefore continue from the same
//! prior price.

use std::fmt;

use thiserror::Error;

use crate::binomial_filtration::{Filtration, FiltrationError, Path};
use crate::prob_core::{RandomVariable, EPS_MASS};
use crate::timegrid::{arrow, GridTime, TimeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error(transparent)]
    Filtration(#[from] FiltrationError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),
    #[error("filtration has resolution {filtration}, market parameters {market}")]
    ResolutionMismatch { filtration: u32, market: u32 },
    #[error("strategy has no portfolio for time {0}")]
    MissingPortfolio(GridTime),
    #[error("process is not defined at {time} (horizon {horizon})")]
    BeyondHorizon { time: GridTime, horizon: GridTime },
    #[error("every coin through the horizon is deterministic; positive gain probability cannot be certified")]
    TrivialFiltration,
}

/// Drift, volatility, rate, initial price and grid resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub s0: f64,
    pub resolution: u32,
}

impl MarketParams {
    pub fn new(mu: f64, sigma: f64, r: f64, s0: f64, resolution: u32) -> Result<Self, MarketError> {
        let p = Self {
            mu,
            sigma,
            r,
            s0,
            resolution,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |msg: String| Err(MarketError::InvalidParams(msg));
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.r > -1.0) {
            return bad(format!("r must exceed -1, got {}", self.r));
        }
        if !(self.mu > self.sigma - 1.0) {
            return bad(format!(
                "mu must exceed sigma - 1, got mu={} sigma={}",
                self.mu, self.sigma
            ));
        }
        if !(self.s0 > 0.0) {
            return bad(format!("s0 must be positive, got {}", self.s0));
        }
        // mu > sigma - 1 only covers N = 0
        if !(self.down_factor() > 0.0) {
            return bad(format!(
                "down factor 1 + 2^-N mu - 2^-N/2 sigma = {} is not positive at N = {}",
                self.down_factor(),
                self.resolution
            ));
        }
        Ok(())
    }

    /// Step length `2^-N`.
    pub fn dt(&self) -> f64 {
        (-(self.resolution as f64)).exp2()
    }

    /// `2^-N/2`.
    pub fn sqrt_dt(&self) -> f64 {
        (-(self.resolution as f64) / 2.0).exp2()
    }

    pub fn up_factor(&self) -> f64 {
        1.0 + self.dt() * self.mu + self.sqrt_dt() * self.sigma
    }

    pub fn down_factor(&self) -> f64 {
        1.0 + self.dt() * self.mu - self.sqrt_dt() * self.sigma
    }

    /// One-step bond growth `1 + 2^-N r`.
    pub fn growth(&self) -> f64 {
        1.0 + self.dt() * self.r
    }

    /// `2^{N/2} σ`, the no-arbitrage bound on `|μ - r|`.
    pub fn arbitrage_bound(&self) -> f64 {
        (self.resolution as f64 / 2.0).exp2() * self.sigma
    }

    /// Stock factor for final coin `d`.
    pub fn factor(&self, d: u8) -> f64 {
        if d == 1 {
            self.up_factor()
        } else {
            self.down_factor()
        }
    }
}

/// A process with one value per path of `B_t`, for every grid time up to a horizon.
#[derive(Clone, PartialEq)]
pub struct AdaptedProcess {
    resolution: u32,
    slices: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn from_slices(resolution: u32, slices: Vec<Vec<f64>>) -> Self {
        debug_assert!(slices.iter().enumerate().all(|(k, s)| s.len() == 1 << k));
        Self { resolution, slices }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn horizon(&self) -> GridTime {
        GridTime::new(self.slices.len() as u64 - 1, self.resolution).expect("resolution checked on construction")
    }

    fn step_of(&self, t: GridTime) -> Result<usize, MarketError> {
        let t = t.on_grid(self.resolution)?;
        if t > self.horizon() {
            return Err(MarketError::BeyondHorizon {
                time: t,
                horizon: self.horizon(),
            });
        }
        Ok(t.step() as usize)
    }

    /// All values at `t`, indexed by path bits.
    pub fn slice(&self, t: GridTime) -> Result<&[f64], MarketError> {
        Ok(&self.slices[self.step_of(t)?])
    }

    pub fn value(&self, t: GridTime, path: &Path) -> Result<f64, MarketError> {
        Ok(self.slice(t)?[path.index()])
    }

    /// The slice at `t` as a random variable on the filtration's space.
    pub fn random_variable<F: Filtration + ?Sized>(
        &self,
        filtration: &F,
        t: GridTime,
    ) -> Result<RandomVariable<Path>, MarketError> {
        let slice = self.slice(t)?;
        let space = filtration.space(t)?;
        Ok(RandomVariable::from_fn(space, |p| slice[p.index()]))
    }
}

impl fmt::Debug for AdaptedProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (k, slice) in self.slices.iter().enumerate() {
            for (i, v) in slice.iter().enumerate() {
                m.entry(&format_args!("{k}/{}", Path::from_bits(i as u64, k as u32)), v);
            }
        }
        m.finish()
    }
}

fn check_setup<F: Filtration + ?Sized>(
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<GridTime, MarketError> {
    params.validate()?;
    if filtration.resolution() != params.resolution {
        return Err(MarketError::ResolutionMismatch {
            filtration: filtration.resolution(),
            market: params.resolution,
        });
    }
    let horizon = horizon.on_grid(params.resolution)?;
    // enforces the enumeration cap
    filtration.space(horizon)?;
    Ok(horizon)
}

/// Image of `path` (at `t`) under the one-step map `t -> t - 2^-N`.
fn prior<F: Filtration + ?Sized>(filtration: &F, t: GridTime, path: &Path) -> Path {
    let prev = t.pred().expect("t > 0");
    filtration.apply(arrow(prev, t).expect("prev < t"), path)
}

/// Builds a process by the recursion `X_{t+δ}(ω) = X_t(f(ω)) * step(ω)`.
fn recursive_process<F: Filtration + ?Sized>(
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
    initial: f64,
    step: impl Fn(&Path) -> f64,
) -> Result<AdaptedProcess, MarketError> {
    let horizon = check_setup(filtration, params, horizon)?;
    let mut slices = vec![vec![initial]];
    let mut t = GridTime::zero(params.resolution);
    while t < horizon {
        let next = t.succ();
        let prev_slice = slices.last().expect("non-empty");
        let slice = Path::all(next.step() as u32)
            .map(|p| prev_slice[prior(filtration, next, &p).index()] * step(&p))
            .collect();
        slices.push(slice);
        t = next;
    }
    Ok(AdaptedProcess::from_slices(params.resolution, slices))
}

pub fn stock_process<F: Filtration + ?Sized>(
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<AdaptedProcess, MarketError> {
    recursive_process(filtration, params, horizon, params.s0, |p| {
        params.factor(p.last().expect("t > 0"))
    })
}

pub fn bond_process<F: Filtration + ?Sized>(
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<AdaptedProcess, MarketError> {
    let growth = params.growth();
    recursive_process(filtration, params, horizon, 1.0, |_| growth)
}

/// Closed form of the bond, `(1 + 2^-N r)^{2^N t}`.
pub fn bond_closed_form(params: &MarketParams, t: GridTime) -> f64 {
    params.growth().powi(t.step() as i32)
}

/// `S_t / b_t`.
pub fn discounted_stock<F: Filtration + ?Sized>(
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<AdaptedProcess, MarketError> {
    let stock = stock_process(filtration, params, horizon)?;
    let bond = bond_process(filtration, params, horizon)?;
    let slices = stock
        .slices
        .iter()
        .zip(&bond.slices)
        .map(|(s, b)| s.iter().zip(b).map(|(s, b)| s / b).collect())
        .collect();
    Ok(AdaptedProcess::from_slices(params.resolution, slices))
}

/// Holdings `(φ_t, ψ_t)` for `t` in `(0, horizon]`, each a function on `B_{t-δ}`.
#[derive(Clone, PartialEq)]
pub struct Strategy {
    resolution: u32,
    phi: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
}

impl Strategy {
    /// `f(t, ω)` gives the portfolio held over `(t - δ, t]` after observing `ω ∈ B_{t-δ}`.
    pub fn from_fn(
        resolution: u32,
        horizon: GridTime,
        f: impl Fn(GridTime, &Path) -> (f64, f64),
    ) -> Result<Self, MarketError> {
        let horizon = horizon.on_grid(resolution)?;
        let mut phi = Vec::new();
        let mut psi = Vec::new();
        for k in 0..horizon.step() {
            let t = GridTime::new(k + 1, resolution)?;
            let (a, b): (Vec<f64>, Vec<f64>) = Path::all(k as u32).map(|p| f(t, &p)).unzip();
            phi.push(a);
            psi.push(b);
        }
        Ok(Self { resolution, phi, psi })
    }

    pub fn zero(resolution: u32, horizon: GridTime) -> Result<Self, MarketError> {
        Self::from_fn(resolution, horizon, |_, _| (0.0, 0.0))
    }

    pub fn from_tables(resolution: u32, phi: Vec<Vec<f64>>, psi: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(phi.len(), psi.len());
        Self { resolution, phi, psi }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// Last time with a portfolio.
    pub fn horizon(&self) -> GridTime {
        GridTime::new(self.phi.len() as u64, self.resolution).expect("valid resolution")
    }

    fn slot(&self, t: GridTime) -> Option<usize> {
        let t = t.on_grid(self.resolution).ok()?;
        (t.step() >= 1 && t.step() as usize <= self.phi.len()).then(|| t.step() as usize - 1)
    }

    /// `φ_t(ω)` for `ω ∈ B_{t-δ}`.
    pub fn phi(&self, t: GridTime, path: &Path) -> Option<f64> {
        self.slot(t).map(|k| self.phi[k][path.index()])
    }

    pub fn psi(&self, t: GridTime, path: &Path) -> Option<f64> {
        self.slot(t).map(|k| self.psi[k][path.index()])
    }

    pub fn phi_table(&self) -> &[Vec<f64>] {
        &self.phi
    }

    pub fn psi_table(&self) -> &[Vec<f64>] {
        &self.psi
    }
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (k, (a, b)) in self.phi.iter().zip(&self.psi).enumerate() {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                m.entry(
                    &format_args!("{}:{}", k + 1, Path::from_bits(i as u64, k as u32)),
                    &(x, y),
                );
            }
        }
        m.finish()
    }
}

/// Value of the held portfolio:
/// `V_0 = S_0 φ_δ + b_0 ψ_δ`, and `V_t = S_t (φ_t ∘ f) + b_t (ψ_t ∘ f)` for `t > 0`.
pub fn portfolio_value<F: Filtration + ?Sized>(
    strategy: &Strategy,
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<AdaptedProcess, MarketError> {
    let horizon = check_setup(filtration, params, horizon)?;
    let first = GridTime::new(1, params.resolution)?;
    let needed = if horizon.is_zero() { first } else { horizon };
    if strategy.horizon() < needed {
        return Err(MarketError::MissingPortfolio(strategy.horizon().succ()));
    }
    let stock = stock_process(filtration, params, horizon)?;
    let bond = bond_process(filtration, params, horizon)?;
    let root = Path::EMPTY;
    let mut slices = vec![vec![
        params.s0 * strategy.phi(first, &root).expect("checked") + strategy.psi(first, &root).expect("checked"),
    ]];
    for k in 1..=horizon.step() {
        let t = GridTime::new(k, params.resolution)?;
        let (s, b) = (stock.slice(t)?, bond.slice(t)?);
        let slice = Path::all(k as u32)
            .map(|p| {
                let q = prior(filtration, t, &p);
                s[p.index()] * strategy.phi(t, &q).expect("checked")
                    + b[p.index()] * strategy.psi(t, &q).expect("checked")
            })
            .collect();
        slices.push(slice);
    }
    Ok(AdaptedProcess::from_slices(params.resolution, slices))
}

/// Gain process: `G_0 = -V_0`; for `t > 0`, value of the old portfolio minus
/// cost of the new one. At the strategy's last time the position is closed,
/// so the new portfolio costs nothing.
pub fn gain_process<F: Filtration + ?Sized>(
    strategy: &Strategy,
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<AdaptedProcess, MarketError> {
    let value = portfolio_value(strategy, filtration, params, horizon)?;
    let stock = stock_process(filtration, params, horizon)?;
    let bond = bond_process(filtration, params, horizon)?;
    let mut slices = vec![vec![-value.slices[0][0]]];
    for k in 1..value.slices.len() {
        let t = GridTime::new(k as u64, params.resolution)?;
        let next = t.succ();
        let (s, b) = (stock.slice(t)?, bond.slice(t)?);
        let slice = Path::all(k as u32)
            .map(|p| {
                let cost = match (strategy.phi(next, &p), strategy.psi(next, &p)) {
                    (Some(a), Some(c)) => s[p.index()] * a + b[p.index()] * c,
                    _ => 0.0,
                };
                value.slices[k][p.index()] - cost
            })
            .collect();
        slices.push(slice);
    }
    Ok(AdaptedProcess::from_slices(params.resolution, slices))
}

/// A node of the path tree together with a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeResidual {
    pub time: GridTime,
    pub path: Path,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelfFinancingReport {
    pub nodes_checked: usize,
    pub violations: Vec<NodeResidual>,
}

impl SelfFinancingReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.violations.iter().map(|v| v.residual.abs()).fold(0.0, f64::max)
    }
}

/// Checks `S_t φ_{t+δ} + b_t ψ_{t+δ} = V_t` for every `t > 0` at which the
/// strategy continues, on every path.
pub fn is_self_financing<F: Filtration + ?Sized>(
    strategy: &Strategy,
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
    eps: f64,
) -> Result<SelfFinancingReport, MarketError> {
    self_financing_on(strategy, filtration, params, horizon, eps, |_, _| true)
}

/// [`is_self_financing`] restricted to nodes selected by `include`.
pub fn self_financing_on<F: Filtration + ?Sized>(
    strategy: &Strategy,
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
    eps: f64,
    include: impl Fn(GridTime, &Path) -> bool,
) -> Result<SelfFinancingReport, MarketError> {
    let value = portfolio_value(strategy, filtration, params, horizon)?;
    let stock = stock_process(filtration, params, horizon)?;
    let bond = bond_process(filtration, params, horizon)?;
    let mut report = SelfFinancingReport::default();
    for k in 1..value.slices.len() as u64 {
        let t = GridTime::new(k, params.resolution)?;
        let next = t.succ();
        if strategy.slot(next).is_none() {
            break;
        }
        let (s, b, v) = (stock.slice(t)?, bond.slice(t)?, value.slice(t)?);
        for p in Path::all(k as u32) {
            if !include(t, &p) {
                continue;
            }
            report.nodes_checked += 1;
            let i = p.index();
            let residual =
                s[i] * strategy.phi(next, &p).expect("slot") + b[i] * strategy.psi(next, &p).expect("slot") - v[i];
            if residual.abs() > eps {
                report.violations.push(NodeResidual {
                    time: t,
                    path: p,
                    residual,
                });
            }
        }
    }
    Ok(report)
}

/// True when some coin through the horizon has `0 < p < 1` under the
/// filtration's own measures.
pub fn is_non_trivial<F: Filtration + ?Sized>(filtration: &F, horizon: GridTime) -> Result<bool, MarketError> {
    let horizon = horizon.on_grid(filtration.resolution())?;
    for k in 1..=horizon.step() {
        let t = GridTime::new(k, filtration.resolution())?;
        let space = filtration.space(t)?;
        let up: f64 = space.iter().filter(|(p, _)| p.last() == Some(1)).map(|(_, w)| w).sum();
        if up > EPS_MASS && up < 1.0 - EPS_MASS {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Constructs a zero-cost arbitrage when `|μ - r| >= 2^{N/2} σ`: long one
/// share when the drift dominates, short one share when the rate does, with
/// the bond leg `ψ = -(S/b) φ` financing it. Returns `None` inside the bound.
pub fn detect_arbitrage<F: Filtration + ?Sized>(
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<Option<Strategy>, MarketError> {
    let horizon = check_setup(filtration, params, horizon)?;
    let excess = params.mu - params.r;
    let bound = params.arbitrage_bound();
    let phi = if excess >= bound {
        1.0
    } else if -excess >= bound {
        -1.0
    } else {
        return Ok(None);
    };
    if !is_non_trivial(filtration, horizon)? {
        return Err(MarketError::TrivialFiltration);
    }
    let stock = stock_process(filtration, params, horizon)?;
    let bond = bond_process(filtration, params, horizon)?;
    let strategy = Strategy::from_fn(params.resolution, horizon, |t, p| {
        let prev = t.pred().expect("t > 0");
        let s = stock.value(prev, p).expect("within horizon");
        let b = bond.value(prev, p).expect("within horizon");
        (phi, -(s / b) * phi)
    })?;
    Ok(Some(strategy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageReport {
    pub is_arbitrage: bool,
    /// Smallest gain over all positive-probability nodes.
    pub min_gain: f64,
    /// First time at which the gain is positive with positive probability.
    pub positive_at: Option<GridTime>,
    pub positive_probability: f64,
    /// A positive-probability node with negative gain, if any.
    pub loss_witness: Option<NodeResidual>,
}

/// Checks `P_t(G_t >= 0) = 1` for every `t` and `P_{t0}(G_{t0} > 0) > 0` for some `t0`.
pub fn is_arbitrage<F: Filtration + ?Sized>(
    strategy: &Strategy,
    filtration: &F,
    params: &MarketParams,
    horizon: GridTime,
    eps: f64,
) -> Result<ArbitrageReport, MarketError> {
    let gain = gain_process(strategy, filtration, params, horizon)?;
    let mut min_gain = f64::INFINITY;
    let mut positive_at = None;
    let mut positive_probability = 0.0;
    let mut loss_witness = None;
    for (k, slice) in gain.slices.iter().enumerate() {
        let t = GridTime::new(k as u64, params.resolution)?;
        let space = filtration.space(t)?;
        let mut positive_mass = 0.0;
        for (p, w) in space.iter() {
            if w <= EPS_MASS {
                continue;
            }
            let g = slice[p.index()];
            min_gain = min_gain.min(g);
            if g < -eps && loss_witness.is_none() {
                loss_witness = Some(NodeResidual {
                    time: t,
                    path: *p,
                    residual: g,
                });
            }
            if g > eps {
                positive_mass += w;
            }
        }
        if positive_at.is_none() && positive_mass > EPS_MASS {
            positive_at = Some(t);
            positive_probability = positive_mass;
        }
    }
    Ok(ArbitrageReport {
        is_arbitrage: loss_witness.is_none() && positive_at.is_some(),
        min_gain,
        positive_at,
        positive_probability,
        loss_witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial_filtration::{make_drop_filtration, make_full_filtration, BernoulliParams};
    use crate::prob_core::{conditional_expectation, EPS_EQ};

    fn g(n: u64) -> GridTime {
        GridTime::new(n, 2).unwrap()
    }

    fn p(s: &str) -> Path {
        s.parse().unwrap()
    }

    fn reference_market() -> MarketParams {
        MarketParams::new(0.1, 0.2, 0.02, 100.0, 2).unwrap()
    }

    fn half() -> BernoulliParams {
        BernoulliParams::constant(0.5).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(MarketParams::new(0.1, 0.0, 0.0, 1.0, 0).is_err());
        assert!(MarketParams::new(0.1, 0.2, -1.0, 1.0, 0).is_err());
        assert!(MarketParams::new(-0.9, 0.2, 0.0, 1.0, 0).is_err());
        assert!(MarketParams::new(0.0, 1.0, 0.0, 1.0, 0).is_err());
        assert!(MarketParams::new(0.6, 1.5, 0.0, 1.0, 2).is_ok());
        // mu > sigma - 1 holds but the N = 2 down factor is negative
        assert!(MarketParams::new(3.5, 4.0, 0.0, 1.0, 2).is_err());
    }

    #[test]
    fn stock_under_full() {
        let f = make_full_filtration(2, half());
        let s = stock_process(&f, &reference_market(), g(4)).unwrap();
        assert!((reference_market().up_factor() - 1.125).abs() < 1e-15);
        assert!((reference_market().down_factor() - 0.925).abs() < 1e-15);
        assert!((s.value(g(1), &p("1")).unwrap() - 112.5).abs() < 1e-12);
        assert!((s.value(g(1), &p("0")).unwrap() - 92.5).abs() < 1e-12);
        assert!((s.value(g(2), &p("01")).unwrap() - 104.0625).abs() < 1e-12);
        assert_eq!(s.value(g(0), &Path::EMPTY).unwrap(), 100.0);
    }

    #[test]
    fn stock_under_drop_continues_from_forgotten_branch() {
        let f = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        let s = stock_process(&f, &reference_market(), g(2)).unwrap();
        assert!((s.value(g(2), &p("11")).unwrap() - 92.5 * 1.125).abs() < 1e-12);
        assert!((s.value(g(2), &p("01")).unwrap() - 92.5 * 1.125).abs() < 1e-12);
        assert!((s.value(g(2), &p("10")).unwrap() - 92.5 * 0.925).abs() < 1e-12);
    }

    #[test]
    fn bond_values() {
        let f = make_full_filtration(2, half());
        let b = bond_process(&f, &reference_market(), g(4)).unwrap();
        assert!((b.value(g(1), &p("0")).unwrap() - 1.005).abs() < 1e-15);
        assert!((b.value(g(4), &p("0110")).unwrap() - 1.020150500625).abs() < 1e-12);
        let drop = make_drop_filtration(2, half(), g(1), g(2)).unwrap();
        let b = bond_process(&drop, &reference_market(), g(4)).unwrap();
        for k in 0..=4 {
            for v in b.slice(g(k)).unwrap() {
                assert!((v - bond_closed_form(&reference_market(), g(k))).abs() < EPS_EQ);
            }
        }
        let flat = MarketParams {
            r: 0.0,
            ..reference_market()
        };
        let b = bond_process(&f, &flat, g(4)).unwrap();
        assert!(b.slice(g(4)).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn discounted() {
        let f = make_full_filtration(2, half());
        let d = discounted_stock(&f, &reference_market(), g(2)).unwrap();
        assert_eq!(d.value(g(0), &Path::EMPTY).unwrap(), 100.0);
        assert!((d.value(g(1), &p("1")).unwrap() - 112.5 / 1.005).abs() < 1e-12);
        let flat = MarketParams {
            r: 0.0,
            ..reference_market()
        };
        assert_eq!(
            discounted_stock(&f, &flat, g(2)).unwrap(),
            stock_process(&f, &flat, g(2)).unwrap()
        );
    }

    #[test]
    fn expected_stock_step_identity() {
        for drop in [false, true] {
            let params = BernoulliParams::constant(0.3).unwrap();
            let f = if drop {
                make_drop_filtration(2, params, g(2), g(2)).unwrap()
            } else {
                make_full_filtration(2, params)
            };
            let m = reference_market();
            let s = stock_process(&f, &m, g(4)).unwrap();
            for k in 0..4 {
                let (t, next) = (g(k), g(k + 1));
                let step = f.morphism(arrow(t, next).unwrap()).unwrap();
                let lhs = conditional_expectation(&s.random_variable(&f, next).unwrap(), &step).unwrap();
                let one =
                    conditional_expectation(&RandomVariable::constant(step.source().clone(), 1.0), &step).unwrap();
                let xi = conditional_expectation(&crate::binomial_filtration::xi(&f, next).unwrap(), &step).unwrap();
                let pushed = step.pushforward();
                for (i, (w, pt)) in step.target().iter().enumerate() {
                    if pt <= EPS_MASS {
                        continue;
                    }
                    let rhs = s.value(t, w).unwrap()
                        * ((1.0 + m.dt() * m.mu) * one.values()[i] + m.sqrt_dt() * m.sigma * xi.values()[i]);
                    assert!((lhs.values()[i] - rhs).abs() < 1e-10);
                    assert!((one.values()[i] - pushed[i] / pt).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn value_and_gain_of_simple_strategies() {
        let f = make_full_filtration(2, half());
        let m = reference_market();
        let bond_only = Strategy::from_fn(2, g(4), |_, _| (0.0, 1.0)).unwrap();
        let v = portfolio_value(&bond_only, &f, &m, g(4)).unwrap();
        assert_eq!(v, bond_process(&f, &m, g(4)).unwrap());
        let gain = gain_process(&bond_only, &f, &m, g(4)).unwrap();
        for k in 1..4 {
            assert!(gain.slice(g(k)).unwrap().iter().all(|v| v.abs() < 1e-12));
        }
        assert!(is_self_financing(&bond_only, &f, &m, g(4), EPS_EQ).unwrap().holds());

        let stock_only = Strategy::from_fn(2, g(1), |_, _| (1.0, 0.0)).unwrap();
        let v = portfolio_value(&stock_only, &f, &m, g(1)).unwrap();
        assert_eq!(v.value(g(0), &Path::EMPTY).unwrap(), 100.0);
        assert_eq!(
            v.slice(g(1)).unwrap(),
            stock_process(&f, &m, g(1)).unwrap().slice(g(1)).unwrap()
        );

        let injected = Strategy::from_fn(2, g(3), |t, _| (0.0, t.step() as f64)).unwrap();
        let r = is_self_financing(&injected, &f, &m, g(3), EPS_EQ).unwrap();
        assert!(!r.holds());
        assert_eq!(r.violations[0].time, g(1));

        assert!(matches!(
            portfolio_value(&stock_only, &f, &m, g(2)),
            Err(MarketError::MissingPortfolio(_))
        ));
    }

    #[test]
    fn zero_cost_gain_identity() {
        let m = reference_market();
        for f in [
            make_full_filtration(2, half()),
            make_drop_filtration(2, half(), g(1), g(2)).unwrap(),
        ] {
            let s = stock_process(&f, &m, g(4)).unwrap();
            let b = bond_process(&f, &m, g(4)).unwrap();
            let strat = Strategy::from_fn(2, g(4), |t, w| {
                let prev = t.pred().unwrap();
                let phi = (w.bits() as f64 + 1.0) * if t.step() % 2 == 0 { 1.0 } else { -0.5 };
                (phi, -s.value(prev, w).unwrap() / b.value(prev, w).unwrap() * phi)
            })
            .unwrap();
            let v = portfolio_value(&strat, &f, &m, g(4)).unwrap();
            for k in 1..=4u64 {
                let t = g(k);
                for w in Path::all(k as u32) {
                    let q = f.apply(arrow(g(k - 1), t).unwrap(), &w);
                    let xi = 2.0 * w.last().unwrap() as f64 - 1.0;
                    let expected = (m.dt() * m.mu + m.sqrt_dt() * m.sigma * xi - m.dt() * m.r)
                        * s.value(g(k - 1), &q).unwrap()
                        * strat.phi(t, &q).unwrap();
                    assert!((v.value(t, &w).unwrap() - expected).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn long_share_gain_one_step() {
        let f = make_full_filtration(2, half());
        let m = reference_market();
        let strat = Strategy::from_fn(2, g(1), |_, _| (1.0, -100.0)).unwrap();
        let gain = gain_process(&strat, &f, &m, g(1)).unwrap();
        assert!(gain.value(g(0), &Path::EMPTY).unwrap().abs() < 1e-12);
        assert!((gain.value(g(1), &p("1")).unwrap() - 12.0).abs() < 1e-10);
        assert!((gain.value(g(1), &p("0")).unwrap() + 8.0).abs() < 1e-10);
        let r = is_arbitrage(&strat, &f, &m, g(1), EPS_EQ).unwrap();
        assert!(!r.is_arbitrage);
        assert_eq!(r.loss_witness.unwrap().path, p("0"));
    }

    #[test]
    fn arbitrage_detection() {
        let f = make_full_filtration(2, half());
        assert!(detect_arbitrage(&f, &reference_market(), g(4)).unwrap().is_none());

        let rich_rate = MarketParams {
            r: 0.6,
            ..reference_market()
        };
        let strat = detect_arbitrage(&f, &rich_rate, g(4)).unwrap().unwrap();
        assert_eq!(strat.phi(g(1), &Path::EMPTY), Some(-1.0));
        let gain = gain_process(&strat, &f, &rich_rate, g(1)).unwrap();
        let s = 100.0;
        assert!((gain.value(g(1), &p("0")).unwrap() - 0.25 * 0.9 * s).abs() < 1e-10);
        assert!((gain.value(g(1), &p("1")).unwrap() - 0.25 * 0.1 * s).abs() < 1e-10);
        assert!(is_arbitrage(&strat, &f, &rich_rate, g(4), EPS_EQ).unwrap().is_arbitrage);

        let zero = Strategy::zero(2, g(4)).unwrap();
        assert!(
            !is_arbitrage(&zero, &f, &reference_market(), g(4), EPS_EQ)
                .unwrap()
                .is_arbitrage
        );
    }

    #[test]
    fn arbitrage_at_the_boundary() {
        let f = make_full_filtration(2, half());
        let edge = MarketParams {
            mu: 0.1,
            r: 0.1 - 0.4,
            ..reference_market()
        };
        assert!((edge.mu - edge.r - edge.arbitrage_bound()).abs() < 1e-15);
        let strat = detect_arbitrage(&f, &edge, g(2)).unwrap().unwrap();
        let gain = gain_process(&strat, &f, &edge, g(2)).unwrap();
        assert!(gain.value(g(1), &p("0")).unwrap().abs() < 1e-10);
        assert!(gain.value(g(1), &p("1")).unwrap() > 0.0);
        assert!(is_arbitrage(&strat, &f, &edge, g(2), EPS_EQ).unwrap().is_arbitrage);
    }

    #[test]
    fn trivial_filtration_cannot_certify() {
        let f = make_full_filtration(2, BernoulliParams::constant(1.0).unwrap());
        let rich_rate = MarketParams {
            r: 0.6,
            ..reference_market()
        };
        assert!(matches!(
            detect_arbitrage(&f, &rich_rate, g(2)),
            Err(MarketError::TrivialFiltration)
        ));
    }
}
