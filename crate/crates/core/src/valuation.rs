//! Claim prices along a risk-neutral filtration and replicating strategies.
//!
//! `price` returns `E(Y / b_T | t)`, discounted to time 0; `b_t` times that is
//! the nodal price the replicating portfolio carries.
//!
//! Replication works one step at a time through `g_t` with
//! `f_{t,t+δ} = g_t ∘ full_{t,t+δ}`. The hedge at `x` is read off one
//! preimage `ω` of `x` under `g_t`, preferring a `Q`-positive one; nodes
//! outside the image of `g_t` hold nothing.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::binomial_filtration::{Filtration, FiltrationError, Path};
use crate::market::{
    bond_closed_form, bond_process, portfolio_value, self_financing_on, stock_process, AdaptedProcess, MarketError,
    MarketParams, NodeResidual, SelfFinancingReport, Strategy,
};
use crate::prob_core::{conditional_expectation, ProbError, ProbMorphism, RandomVariable, EPS_MASS};
use crate::timegrid::{arrow, GridTime, TimeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValuationError {
    #[error(transparent)]
    Filtration(#[from] FiltrationError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("time {time} is after the maturity {maturity}")]
    AfterMaturity { time: GridTime, maturity: GridTime },
    #[error("payoff has {got} values, maturity {maturity} needs {expected}")]
    PayoffLength {
        maturity: GridTime,
        expected: usize,
        got: usize,
    },
    #[error("payoff table has no value for path {0}")]
    MissingPayoff(Path),
    #[error("payoff table path {path} does not have length {expected}")]
    PayoffPathLength { path: Path, expected: u32 },
    #[error("step into {time} does not factor through full: {left} -> {left_image} but {right} -> {right_image}")]
    NotFactorable {
        time: GridTime,
        left: Path,
        left_image: Path,
        right: Path,
        right_image: Path,
    },
    #[error("stock price vanishes at {time}, path {path}")]
    ZeroStock { time: GridTime, path: Path },
}

/// A payoff at a fixed maturity, one value per path of `B_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    maturity: GridTime,
    payoff: Vec<f64>,
}

impl Claim {
    pub fn new(maturity: GridTime, payoff: Vec<f64>) -> Result<Self, ValuationError> {
        let expected = 1usize << maturity.step();
        if payoff.len() != expected {
            return Err(ValuationError::PayoffLength {
                maturity,
                expected,
                got: payoff.len(),
            });
        }
        Ok(Self { maturity, payoff })
    }

    pub fn from_fn(maturity: GridTime, f: impl Fn(&Path) -> f64) -> Self {
        Self {
            maturity,
            payoff: Path::all(maturity.step() as u32).map(|p| f(&p)).collect(),
        }
    }

    /// Requires a value for every path of `B_T`.
    pub fn from_table(maturity: GridTime, table: &BTreeMap<Path, f64>) -> Result<Self, ValuationError> {
        let len = maturity.step() as u32;
        if let Some(p) = table.keys().find(|p| p.len() != len) {
            return Err(ValuationError::PayoffPathLength {
                path: *p,
                expected: len,
            });
        }
        let payoff = Path::all(len)
            .map(|p| table.get(&p).copied().ok_or(ValuationError::MissingPayoff(p)))
            .collect::<Result<_, _>>()?;
        Ok(Self { maturity, payoff })
    }

    /// Payoff `h(S_T)` with the stock driven by `filtration`.
    pub fn on_stock<F: Filtration + ?Sized>(
        filtration: &F,
        params: &MarketParams,
        maturity: GridTime,
        h: impl Fn(f64) -> f64,
    ) -> Result<Self, ValuationError> {
        let stock = stock_process(filtration, params, maturity)?;
        Ok(Self {
            maturity: stock.horizon(),
            payoff: stock.slice(stock.horizon())?.iter().map(|&s| h(s)).collect(),
        })
    }

    pub fn call<F: Filtration + ?Sized>(
        f: &F,
        params: &MarketParams,
        maturity: GridTime,
        strike: f64,
    ) -> Result<Self, ValuationError> {
        Self::on_stock(f, params, maturity, |s| (s - strike).max(0.0))
    }

    pub fn put<F: Filtration + ?Sized>(
        f: &F,
        params: &MarketParams,
        maturity: GridTime,
        strike: f64,
    ) -> Result<Self, ValuationError> {
        Self::on_stock(f, params, maturity, |s| (strike - s).max(0.0))
    }

    /// Pays 1 when `S_T > K`.
    pub fn digital<F: Filtration + ?Sized>(
        f: &F,
        params: &MarketParams,
        maturity: GridTime,
        strike: f64,
    ) -> Result<Self, ValuationError> {
        Self::on_stock(f, params, maturity, |s| if s > strike { 1.0 } else { 0.0 })
    }

    /// One unit of bond at maturity.
    pub fn bond(params: &MarketParams, maturity: GridTime) -> Result<Self, ValuationError> {
        let maturity = maturity.on_grid(params.resolution)?;
        let b = bond_closed_form(params, maturity);
        Ok(Self::from_fn(maturity, |_| b))
    }

    pub fn maturity(&self) -> GridTime {
        self.maturity
    }

    pub fn payoff(&self) -> &[f64] {
        &self.payoff
    }

    pub fn value(&self, path: &Path) -> f64 {
        self.payoff[path.index()]
    }
}

/// `Y_t = E(Y / b_T)` along the arrow `T -> t` of `rn`.
pub fn price<F: Filtration + ?Sized>(
    claim: &Claim,
    rn: &F,
    params: &MarketParams,
    t: GridTime,
) -> Result<RandomVariable<Path>, ValuationError> {
    let t = t.on_grid(rn.resolution())?;
    let maturity = claim.maturity.on_grid(rn.resolution())?;
    if t > maturity {
        return Err(ValuationError::AfterMaturity { time: t, maturity });
    }
    let discount = bond_closed_form(params, maturity);
    let m = rn.morphism(arrow(t, maturity)?)?;
    let y = RandomVariable::from_fn(m.source().clone(), |p| claim.value(p) / discount);
    Ok(conditional_expectation(&y, &m)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceLattice {
    /// `Y_t`, discounted to time 0.
    pub discounted: AdaptedProcess,
    /// `b_t Y_t`.
    pub nodal: AdaptedProcess,
}

pub fn price_lattice<F: Filtration + ?Sized>(
    claim: &Claim,
    rn: &F,
    params: &MarketParams,
) -> Result<PriceLattice, ValuationError> {
    let maturity = claim.maturity.on_grid(rn.resolution())?;
    let mut discounted = Vec::new();
    let mut nodal = Vec::new();
    for k in 0..=maturity.step() {
        let t = GridTime::new(k, rn.resolution())?;
        let y = price(claim, rn, params, t)?;
        let b = bond_closed_form(params, t);
        nodal.push(y.values().iter().map(|v| v * b).collect());
        discounted.push(y.values().to_vec());
    }
    Ok(PriceLattice {
        discounted: AdaptedProcess::from_slices(rn.resolution(), discounted),
        nodal: AdaptedProcess::from_slices(rn.resolution(), nodal),
    })
}

/// `g_t` on `B_t` with `f = g_t ∘ full`, indexed by path bits.
#[derive(Debug, Clone, PartialEq)]
pub struct GFactor {
    map: Vec<Path>,
}

impl GFactor {
    pub fn apply(&self, path: &Path) -> Path {
        self.map[path.index()]
    }

    pub fn map(&self) -> &[Path] {
        &self.map
    }

    /// Membership in the image, indexed by path bits.
    pub fn image_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.map.len()];
        for p in &self.map {
            mask[p.index()] = true;
        }
        mask
    }

    pub fn preimage(&self, x: &Path) -> Vec<Path> {
        let len = x.len();
        self.map
            .iter()
            .enumerate()
            .filter(|(_, y)| *y == x)
            .map(|(i, _)| Path::from_bits(i as u64, len))
            .collect()
    }
}

/// Factors the one-step morphism `B_{t+δ} -> B_t` through full, or names
/// the sibling pair it separates.
pub fn g_factorize(step: &ProbMorphism<Path>, t: GridTime) -> Result<GFactor, ValuationError> {
    let len = t.step() as u32;
    let mut map = Vec::with_capacity(1 << len);
    for w in Path::all(len) {
        let (down, up) = (w.push(0), w.push(1));
        let image = |p: &Path| {
            let i = step.source().index_of(p).expect("child path lies in the source space");
            step.target().outcomes()[step.image_index(i)]
        };
        let (a, b) = (image(&down), image(&up));
        if a != b {
            return Err(ValuationError::NotFactorable {
                time: t.succ(),
                left: down,
                left_image: a,
                right: up,
                right_image: b,
            });
        }
        map.push(a);
    }
    Ok(GFactor { map })
}

/// `g_t` for each `t` in `[0, T)`.
pub fn g_factors<F: Filtration + ?Sized>(rn: &F, maturity: GridTime) -> Result<Vec<GFactor>, ValuationError> {
    (0..maturity.step())
        .map(|k| {
            let t = GridTime::new(k, rn.resolution())?;
            g_factorize(&rn.morphism(arrow(t, t.succ())?)?, t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub strategy: Strategy,
    /// Value of the held portfolio, forward from `V_0`.
    pub value: AdaptedProcess,
    /// Backward targets: payoff at maturity, one-step risk-neutral values before.
    pub target: AdaptedProcess,
    /// Image of `g_t`, for `t` in `[0, T)`, indexed by path bits.
    pub covered: Vec<Vec<bool>>,
}

impl Replication {
    pub fn covered_nodes(&self) -> usize {
        self.covered.iter().map(|c| c.iter().filter(|&&b| b).count()).sum()
    }
}

/// Backward targets `W`, hedge `φ` from the up/down spread of a chosen
/// preimage, then a forward pass fixing `ψ` by self-financing.
pub fn replicate<F: Filtration + ?Sized>(
    claim: &Claim,
    rn: &F,
    params: &MarketParams,
) -> Result<Replication, ValuationError> {
    params.validate()?;
    let res = params.resolution;
    let maturity = claim.maturity.on_grid(res)?;
    let steps = maturity.step() as usize;
    let stock = stock_process(rn, params, maturity)?;
    let bond = bond_process(rn, params, maturity)?;
    let factors = g_factors(rn, maturity)?;
    let spread = 2.0 * params.sqrt_dt() * params.sigma;
    let bound = params.arbitrage_bound();
    let excess = params.mu - params.r;
    let denom = 2.0 * bound * params.growth();

    let mut target = vec![Vec::new(); steps + 1];
    target[steps] = claim.payoff.clone();
    let mut phi = vec![Vec::new(); steps];
    for k in (0..steps).rev() {
        let t = GridTime::new(k as u64, res)?;
        let g = &factors[k];
        let mass = rn.space(t)?;
        let s = stock.slice(t)?;
        let next = &target[k + 1];
        let mut w = vec![f64::NAN; 1 << k];
        let mut ph = vec![0.0; 1 << k];
        for x in Path::all(k as u32) {
            let pre = g.preimage(&x);
            let Some(rep) = pre
                .iter()
                .find(|p| mass.weights()[p.index()] > EPS_MASS)
                .or(pre.first())
            else {
                continue;
            };
            let sx = s[x.index()];
            if sx == 0.0 {
                return Err(ValuationError::ZeroStock { time: t, path: x });
            }
            let (up, down) = (next[rep.push(1).index()], next[rep.push(0).index()]);
            ph[x.index()] = (up - down) / (spread * sx);
            w[x.index()] = ((bound - excess) * up + (bound + excess) * down) / denom;
        }
        for x in Path::all(k as u32) {
            if w[x.index()].is_nan() {
                w[x.index()] = w[g.apply(&x).index()];
            }
        }
        target[k] = w;
        phi[k] = ph;
    }

    let mut value = vec![vec![target[0][0]]];
    let mut psi = vec![Vec::new(); steps];
    for k in 0..steps {
        let t = GridTime::new(k as u64, res)?;
        let (s, b) = (stock.slice(t)?, bond.slice(t)?);
        let mask = factors[k].image_mask();
        psi[k] = Path::all(k as u32)
            .map(|x| {
                let i = x.index();
                if mask[i] {
                    (value[k][i] - s[i] * phi[k][i]) / b[i]
                } else {
                    0.0
                }
            })
            .collect();
        let next = t.succ();
        let (s1, b1) = (stock.slice(next)?, bond.slice(next)?);
        let slice = Path::all(k as u32 + 1)
            .map(|p| {
                let x = factors[k].apply(&p.parent().expect("k + 1 >= 1"));
                s1[p.index()] * phi[k][x.index()] + b1[p.index()] * psi[k][x.index()]
            })
            .collect();
        value.push(slice);
    }

    Ok(Replication {
        strategy: Strategy::from_tables(res, phi, psi),
        value: AdaptedProcess::from_slices(res, value),
        target: AdaptedProcess::from_slices(res, target),
        covered: factors.iter().map(GFactor::image_mask).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    /// Self-financing on the image of `g_t`.
    pub self_financing: SelfFinancingReport,
    /// One-step value recursion through `g`, at every node and coin.
    pub recursion_violations: Vec<NodeResidual>,
    /// `V_T - Y` on `Q`-positive paths.
    pub payoff_mismatches: Vec<NodeResidual>,
    /// `V_t - b_t Y_t` on `Q`-positive nodes in the image of `g_t`.
    pub price_mismatches: Vec<NodeResidual>,
    pub max_payoff_error: f64,
}

impl ReplicationReport {
    pub fn holds(&self) -> bool {
        self.self_financing.holds()
            && self.recursion_violations.is_empty()
            && self.payoff_mismatches.is_empty()
            && self.price_mismatches.is_empty()
    }
}

pub fn replication_check<F: Filtration + ?Sized>(
    strategy: &Strategy,
    claim: &Claim,
    rn: &F,
    params: &MarketParams,
    eps: f64,
) -> Result<ReplicationReport, ValuationError> {
    let res = params.resolution;
    let maturity = claim.maturity.on_grid(res)?;
    let factors = g_factors(rn, maturity)?;
    let masks: Vec<Vec<bool>> = factors.iter().map(GFactor::image_mask).collect();
    let self_financing = self_financing_on(strategy, rn, params, maturity, eps, |t, p| {
        masks.get(t.step() as usize).is_some_and(|m| m[p.index()])
    })?;
    let value = portfolio_value(strategy, rn, params, maturity)?;
    let stock = stock_process(rn, params, maturity)?;
    let lattice = price_lattice(claim, rn, params)?;
    let growth = params.growth();

    let mut recursion_violations = Vec::new();
    for k in 0..maturity.step() {
        let t = GridTime::new(k, res)?;
        let next = t.succ();
        for w in Path::all(k as u32) {
            let x = factors[k as usize].apply(&w);
            let sphi = stock.value(t, &x)? * strategy.phi(next, &x).ok_or(MarketError::MissingPortfolio(next))?;
            for d in [0u8, 1] {
                let xi = 2.0 * d as f64 - 1.0;
                let expected = (params.dt() * (params.mu - params.r) + params.sqrt_dt() * params.sigma * xi) * sphi
                    + growth * value.value(t, &x)?;
                let child = w.push(d);
                let residual = value.value(next, &child)? - expected;
                if residual.abs() > eps {
                    recursion_violations.push(NodeResidual {
                        time: next,
                        path: child,
                        residual,
                    });
                }
            }
        }
    }

    let mut payoff_mismatches = Vec::new();
    let mut max_payoff_error: f64 = 0.0;
    let final_mass = rn.space(maturity)?;
    for (p, m) in final_mass.iter() {
        if m <= EPS_MASS {
            continue;
        }
        let residual = value.value(maturity, p)? - claim.value(p);
        max_payoff_error = max_payoff_error.max(residual.abs());
        if residual.abs() > eps {
            payoff_mismatches.push(NodeResidual {
                time: maturity,
                path: *p,
                residual,
            });
        }
    }

    let mut price_mismatches = Vec::new();
    for k in 0..maturity.step() {
        let t = GridTime::new(k, res)?;
        let mass = rn.space(t)?;
        for (p, m) in mass.iter() {
            if m <= EPS_MASS || !masks[k as usize][p.index()] {
                continue;
            }
            let residual = value.value(t, p)? - lattice.nodal.value(t, p)?;
            if residual.abs() > eps {
                price_mismatches.push(NodeResidual {
                    time: t,
                    path: *p,
                    residual,
                });
            }
        }
    }

    Ok(ReplicationReport {
        self_financing,
        recursion_violations,
        payoff_mismatches,
        price_mismatches,
        max_payoff_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial_filtration::{make_drop_filtration, make_full_filtration, BernoulliParams};
    use crate::prob_core::EPS_EQ;
    use crate::risk_neutral::{build_rn_drop, build_rn_full, FreeQ, RiskNeutralFiltration};
    use crate::BinomialFiltration;

    fn g(n: u64) -> GridTime {
        GridTime::new(n, 2).unwrap()
    }

    fn p(s: &str) -> Path {
        s.parse().unwrap()
    }

    fn reference_market() -> MarketParams {
        MarketParams::new(0.1, 0.2, 0.02, 100.0, 2).unwrap()
    }

    fn full_rn(h: u64) -> RiskNeutralFiltration<BinomialFiltration> {
        build_rn_full(
            make_full_filtration(2, BernoulliParams::constant(0.5).unwrap()),
            &reference_market(),
            g(h),
        )
        .unwrap()
    }

    fn drop_rn(h: u64) -> RiskNeutralFiltration<BinomialFiltration> {
        let base = make_drop_filtration(2, BernoulliParams::constant(0.5).unwrap(), g(1), g(1)).unwrap();
        build_rn_drop(base, &reference_market(), g(h), &FreeQ::default()).unwrap()
    }

    #[test]
    fn one_period_call() {
        let rn = full_rn(1);
        let call = Claim::call(&rn, &reference_market(), g(1), 100.0).unwrap();
        let y0 = price(&call, &rn, &reference_market(), g(0)).unwrap();
        assert!((y0.values()[0] - 4.97512437811).abs() < 1e-9);
        let rep = replicate(&call, &rn, &reference_market()).unwrap();
        assert!((rep.strategy.phi(g(1), &Path::EMPTY).unwrap() - 0.625).abs() < 1e-12);
        assert!((rep.strategy.psi(g(1), &Path::EMPTY).unwrap() - (4.975124378109453 - 62.5)).abs() < 1e-9);
        assert!(
            replication_check(&rep.strategy, &call, &rn, &reference_market(), EPS_EQ)
                .unwrap()
                .holds()
        );
    }

    #[test]
    fn drop_call_price() {
        let rn = drop_rn(2);
        let call = Claim::call(&rn, &reference_market(), g(2), 100.0).unwrap();
        assert!((call.value(&p("01")) - 4.0625).abs() < 1e-12);
        assert!((call.value(&p("11")) - 4.0625).abs() < 1e-12);
        let y0 = price(&call, &rn, &reference_market(), g(0)).unwrap();
        assert!((y0.values()[0] - 1.625 / 1.010025).abs() < 1e-9);
    }

    #[test]
    fn bond_claim_prices_to_one() {
        for rn in [full_rn(3), drop_rn(3)] {
            let claim = Claim::bond(&reference_market(), g(3)).unwrap();
            let lattice = price_lattice(&claim, &rn, &reference_market()).unwrap();
            for k in 0..=3 {
                let q = rn.space(g(k)).unwrap();
                for (path, m) in q.iter() {
                    if m > EPS_MASS {
                        assert!((lattice.discounted.value(g(k), path).unwrap() - 1.0).abs() < 1e-12);
                    }
                }
            }
            let rep = replicate(&claim, &rn, &reference_market()).unwrap();
            assert!(rep.strategy.phi_table().iter().flatten().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn stock_claim_replicated_by_one_share() {
        let rn = full_rn(3);
        let claim = Claim::on_stock(&rn, &reference_market(), g(3), |s| s).unwrap();
        let rep = replicate(&claim, &rn, &reference_market()).unwrap();
        assert!(rep
            .strategy
            .phi_table()
            .iter()
            .flatten()
            .all(|v| (v - 1.0).abs() < 1e-12));
        assert!((rep.value.value(g(0), &Path::EMPTY).unwrap() - 100.0).abs() < 1e-10);
    }

    #[test]
    fn drop_lattice_discards_forgotten_branch() {
        let rn = drop_rn(3);
        let claim = Claim::from_fn(g(3), |w| w.bits() as f64 * 1.5 + 1.0);
        let lattice = price_lattice(&claim, &rn, &reference_market()).unwrap();
        // full step into a drop landing keeps only the 0 branch
        let y1 = lattice.discounted.slice(g(1)).unwrap();
        let y0 = lattice.discounted.value(g(0), &Path::EMPTY).unwrap();
        assert!((y0 - y1[0]).abs() < 1e-12);
        assert_eq!(y1[1], 0.0);
        let rep = replicate(&claim, &rn, &reference_market()).unwrap();
        let r = replication_check(&rep.strategy, &claim, &rn, &reference_market(), 1e-9).unwrap();
        assert!(r.holds(), "{r:?}");
        assert_eq!(rep.covered[1], vec![true, false]);
    }

    #[test]
    fn factorization() {
        let rn = full_rn(2);
        let g1 = g_factorize(&rn.morphism(arrow(g(1), g(2)).unwrap()).unwrap(), g(1)).unwrap();
        assert_eq!(g1.map(), &[p("0"), p("1")]);
        let rn = drop_rn(2);
        let g1 = g_factorize(&rn.morphism(arrow(g(1), g(2)).unwrap()).unwrap(), g(1)).unwrap();
        assert_eq!(g1.map(), &[p("0"), p("0")]);
        assert_eq!(g1.preimage(&p("0")), vec![p("0"), p("1")]);
        assert!(g1.preimage(&p("1")).is_empty());
    }

    #[test]
    fn non_factorable_step() {
        use crate::prob_core::FinProbSpace;
        use std::sync::Arc;
        let src = Arc::new(FinProbSpace::new(Path::all(2).map(|p| (p, 0.25))).unwrap());
        let tgt = Arc::new(FinProbSpace::new(Path::all(1).map(|p| (p, 0.5))).unwrap());
        let m = ProbMorphism::new(src, tgt, |w| Path::from_bits(w.bits() & 1, 1)).unwrap();
        assert!(matches!(
            g_factorize(&m, g(1)),
            Err(ValuationError::NotFactorable { .. })
        ));
    }

    #[test]
    fn zero_strategy_mismatch() {
        let rn = full_rn(2);
        let call = Claim::call(&rn, &reference_market(), g(2), 100.0).unwrap();
        let zero = Strategy::zero(2, g(2)).unwrap();
        let r = replication_check(&zero, &call, &rn, &reference_market(), EPS_EQ).unwrap();
        assert!(!r.holds());
        assert!(!r.payoff_mismatches.is_empty());
    }

    #[test]
    fn table_claims() {
        let mut table = BTreeMap::new();
        table.insert(p("1"), 2.0);
        assert!(matches!(
            Claim::from_table(g(1), &table),
            Err(ValuationError::MissingPayoff(_))
        ));
        table.insert(p("0"), 1.0);
        assert_eq!(Claim::from_table(g(1), &table).unwrap().payoff(), &[1.0, 2.0]);
        table.insert(p("01"), 1.0);
        assert!(matches!(
            Claim::from_table(g(1), &table),
            Err(ValuationError::PayoffPathLength { .. })
        ));
    }

    #[test]
    fn after_maturity() {
        let rn = full_rn(2);
        let c = Claim::bond(&reference_market(), g(1)).unwrap();
        assert!(matches!(
            price(&c, &rn, &reference_market(), g(2)),
            Err(ValuationError::AfterMaturity { .. })
        ));
    }
}
