//! Risk-neutral filtrations: the base filtration's outcome sets and maps with
//! product-form measures `Q` built from one-step probabilities `q`.
//!
//! Full steps use `q* = (q1, q0)` with `q1 = 1/2 - (μ - r) / (2^{N/2+1} σ)`,
//! the solution of `1 = c1 x + c0 (1 - x)`. Around a drop landing at `s` the
//! coin at `s` gets `q(ω1) = 0`, the children of `ω0` get `q*` and the
//! children of `ω1` (invisible, `Q = 0`) take a free value.
//!
//! The drop rule does not by itself make the discounted stock a martingale:
//! at the full step into `s` the one-step equation reads
//! `Q_{s-δ}(ω) = c0 Q_{s-δ}(ω)`, and `c0 < 1` inside the no-arbitrage bound.
//! [`martingale_check`] reports those nodes rather than hiding them.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::binomial_filtration::{drop_path, full_path, ArrowKind, Filtration, FiltrationError, Path};
use crate::market::{discounted_stock, MarketError, MarketParams, NodeResidual};
use crate::prob_core::{conditional_expectation, FinProbSpace, ProbError, ProbMorphism, EPS_MASS};
use crate::timegrid::{arrow, GridTime, TimeArrow, TimeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskNeutralError {
    #[error(transparent)]
    Filtration(#[from] FiltrationError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("|mu - r| = {excess} is not below 2^(N/2) sigma = {bound}; no risk-neutral q in (0,1)")]
    NoArbitrageBound { excess: f64, bound: f64 },
    #[error("step {0} is a drop; the full construction needs full steps throughout")]
    NotFull(TimeArrow),
    #[error("step {0} is neither full nor drop")]
    UnsupportedStep(TimeArrow),
    #[error("free value {value} at node {node} is outside [0, 1]")]
    FreeOutOfRange { node: Path, value: f64 },
    #[error("node {0} is not the up-child of an invisible node")]
    NotInvisible(Path),
    #[error("q at {time}, parent {parent}: siblings {q1} + {q0} do not form a distribution")]
    BadQ {
        time: GridTime,
        parent: Path,
        q1: f64,
        q0: f64,
    },
    #[error("time {time} is beyond the horizon {horizon}")]
    BeyondHorizon { time: GridTime, horizon: GridTime },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleConstants {
    pub c1: f64,
    pub c0: f64,
}

pub fn martingale_constants(params: &MarketParams) -> MartingaleConstants {
    MartingaleConstants {
        c1: params.up_factor() / params.growth(),
        c0: params.down_factor() / params.growth(),
    }
}

/// `(q1, q0)` solving `1 = c1 q1 + c0 q0`, `q1 + q0 = 1`.
pub fn q_star(params: &MarketParams) -> Result<(f64, f64), RiskNeutralError> {
    let excess = params.mu - params.r;
    let bound = params.arbitrage_bound();
    if !(excess.abs() < bound) {
        return Err(RiskNeutralError::NoArbitrageBound { excess, bound });
    }
    let q1 = 0.5 - excess / (2.0 * bound);
    Ok((q1, 1.0 - q1))
}

/// One-step probabilities: `q(t, ω)` for `ω ∈ B_t`, `t ∈ (0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    resolution: u32,
    layers: Vec<Vec<f64>>,
}

impl QFunction {
    /// `up(t, parent)` is the probability of `parent·1` given `parent ∈ B_{t-δ}`.
    pub fn from_up(
        resolution: u32,
        horizon: GridTime,
        up: impl Fn(GridTime, &Path) -> f64,
    ) -> Result<Self, RiskNeutralError> {
        let horizon = horizon.on_grid(resolution)?;
        let mut layers = Vec::new();
        for k in 1..=horizon.step() {
            let t = GridTime::new(k, resolution)?;
            let mut layer = vec![0.0; 1 << k];
            for parent in Path::all(k as u32 - 1) {
                let q1 = up(t, &parent);
                if !(0.0..=1.0).contains(&q1) {
                    return Err(RiskNeutralError::BadQ {
                        time: t,
                        parent,
                        q1,
                        q0: 1.0 - q1,
                    });
                }
                layer[parent.push(1).index()] = q1;
                layer[parent.push(0).index()] = 1.0 - q1;
            }
            layers.push(layer);
        }
        Ok(Self { resolution, layers })
    }

    /// Arbitrary per-node values, checked for sibling normalization.
    pub fn from_layers(resolution: u32, layers: Vec<Vec<f64>>, eps: f64) -> Result<Self, RiskNeutralError> {
        for (k, layer) in layers.iter().enumerate() {
            let t = GridTime::new(k as u64 + 1, resolution)?;
            for parent in Path::all(k as u32) {
                let (q1, q0) = (layer[parent.push(1).index()], layer[parent.push(0).index()]);
                if !(0.0..=1.0).contains(&q1) || !(0.0..=1.0).contains(&q0) || (q1 + q0 - 1.0).abs() > eps {
                    return Err(RiskNeutralError::BadQ {
                        time: t,
                        parent,
                        q1,
                        q0,
                    });
                }
            }
        }
        Ok(Self { resolution, layers })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn horizon(&self) -> GridTime {
        GridTime::new(self.layers.len() as u64, self.resolution).expect("valid resolution")
    }

    /// `q_t(ω)` for `ω ∈ B_t`, `t > 0`.
    pub fn q(&self, path: &Path) -> Option<f64> {
        let k = path.len() as usize;
        (k >= 1 && k <= self.layers.len()).then(|| self.layers[k - 1][path.index()])
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    /// Product weights `Q_t(ω) = Π q`, indexed by path bits.
    pub fn product_weights(&self, t: GridTime) -> Result<Vec<f64>, RiskNeutralError> {
        let t = t.on_grid(self.resolution)?;
        if t > self.horizon() {
            return Err(RiskNeutralError::BeyondHorizon {
                time: t,
                horizon: self.horizon(),
            });
        }
        let mut weights = vec![1.0];
        for layer in &self.layers[..t.step() as usize] {
            weights = (0..layer.len()).map(|i| weights[i >> 1] * layer[i]).collect();
        }
        Ok(weights)
    }
}

/// Free values on invisible nodes, keyed by the up-child `ω'11`;
/// the sibling `ω'10` gets the complement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreeQ {
    /// Used where no node entry exists; `None` means `q1` of `q*`.
    pub default: Option<f64>,
    pub nodes: BTreeMap<Path, f64>,
}

impl FreeQ {
    pub fn uniform(value: f64) -> Self {
        Self {
            default: Some(value),
            nodes: BTreeMap::new(),
        }
    }

    pub fn with_node(mut self, node: Path, value: f64) -> Self {
        self.nodes.insert(node, value);
        self
    }

    fn validate(&self) -> Result<(), RiskNeutralError> {
        let bad = self
            .default
            .into_iter()
            .map(|v| (Path::EMPTY, v))
            .chain(self.nodes.iter().map(|(p, v)| (*p, *v)));
        for (node, value) in bad {
            if !(0.0..=1.0).contains(&value) {
                return Err(RiskNeutralError::FreeOutOfRange { node, value });
            }
        }
        Ok(())
    }
}

/// The base filtration's data with measures from `q`.
#[derive(Debug, Clone)]
pub struct RiskNeutralFiltration<F> {
    base: F,
    q: QFunction,
    spaces: Vec<Arc<FinProbSpace<Path>>>,
}

impl<F: Filtration> RiskNeutralFiltration<F> {
    /// Any `q` whose resolution matches the base; measures are materialized here.
    pub fn new(base: F, q: QFunction) -> Result<Self, RiskNeutralError> {
        if base.resolution() != q.resolution() {
            return Err(MarketError::ResolutionMismatch {
                filtration: base.resolution(),
                market: q.resolution(),
            }
            .into());
        }
        // enforces the enumeration cap
        base.space(q.horizon())?;
        let mut spaces = Vec::new();
        for k in 0..=q.horizon().step() {
            let t = GridTime::new(k, q.resolution())?;
            let space = FinProbSpace::from_sorted(Path::all(k as u32).collect(), q.product_weights(t)?)?;
            spaces.push(Arc::new(space));
        }
        Ok(Self { base, q, spaces })
    }

    pub fn base(&self) -> &F {
        &self.base
    }

    pub fn q(&self) -> &QFunction {
        &self.q
    }

    pub fn horizon(&self) -> GridTime {
        self.q.horizon()
    }
}

impl<F: Filtration> Filtration for RiskNeutralFiltration<F> {
    fn resolution(&self) -> u32 {
        self.base.resolution()
    }

    fn space(&self, t: GridTime) -> Result<Arc<FinProbSpace<Path>>, FiltrationError> {
        let t = t.on_grid(self.resolution())?;
        self.spaces
            .get(t.step() as usize)
            .cloned()
            .ok_or(FiltrationError::BeyondHorizon {
                time: t,
                horizon: self.horizon(),
            })
    }

    fn apply(&self, arrow: TimeArrow, path: &Path) -> Path {
        self.base.apply(arrow, path)
    }

    fn arrow_kind(&self, arrow: TimeArrow) -> Option<ArrowKind> {
        self.base.arrow_kind(arrow)
    }
}

/// Classifies the one-step arrow `t -> t - δ` by comparing with full and drop.
pub fn step_kind<F: Filtration + ?Sized>(base: &F, t: GridTime) -> Result<ArrowKind, RiskNeutralError> {
    let prev = t.pred().ok_or(TimeError::Order { earlier: t, later: t })?;
    let a = arrow(prev, t)?;
    let paths = || Path::all(t.step() as u32);
    if paths().all(|p| base.apply(a, &p) == full_path(prev, &p)) {
        return Ok(ArrowKind::Full);
    }
    if !prev.is_zero() && paths().all(|p| Ok(base.apply(a, &p)) == drop_path(prev, &p)) {
        return Ok(ArrowKind::Drop);
    }
    Err(RiskNeutralError::UnsupportedStep(a))
}

fn step_kinds<F: Filtration + ?Sized>(base: &F, horizon: GridTime) -> Result<Vec<ArrowKind>, RiskNeutralError> {
    (1..=horizon.step())
        .map(|k| step_kind(base, GridTime::new(k, horizon.resolution())?))
        .collect()
}

fn check_horizon<F: Filtration + ?Sized>(
    base: &F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<GridTime, RiskNeutralError> {
    params.validate()?;
    if base.resolution() != params.resolution {
        return Err(MarketError::ResolutionMismatch {
            filtration: base.resolution(),
            market: params.resolution,
        }
        .into());
    }
    Ok(horizon.on_grid(params.resolution)?)
}

/// `q ≡ q*` over a filtration whose steps are all full.
pub fn build_rn_full<F: Filtration>(
    base: F,
    params: &MarketParams,
    horizon: GridTime,
) -> Result<RiskNeutralFiltration<F>, RiskNeutralError> {
    let horizon = check_horizon(&base, params, horizon)?;
    let (q1, _) = q_star(params)?;
    for (k, kind) in step_kinds(&base, horizon)?.into_iter().enumerate() {
        if kind == ArrowKind::Drop {
            let t = GridTime::new(k as u64 + 1, params.resolution)?;
            return Err(RiskNeutralError::NotFull(arrow(t.pred().expect("k >= 0"), t)?));
        }
    }
    let q = QFunction::from_up(params.resolution, horizon, |_, _| q1)?;
    RiskNeutralFiltration::new(base, q)
}

/// Drop-aware construction: at a landing `s` (arrow `s + δ -> s` is a drop
/// within the horizon) `q_s(ω1) = 0`; at `s + δ` children of `ω0` get `q*`
/// and children of `ω1` take the free value; all other steps use `q*`.
pub fn build_rn_drop<F: Filtration>(
    base: F,
    params: &MarketParams,
    horizon: GridTime,
    free: &FreeQ,
) -> Result<RiskNeutralFiltration<F>, RiskNeutralError> {
    let horizon = check_horizon(&base, params, horizon)?;
    let (q1, _) = q_star(params)?;
    free.validate()?;
    let kinds = step_kinds(&base, horizon)?;
    // landing[k]: the coin at time kδ is forgotten by the next step
    let landing = |k: u64| k >= 1 && (k as usize) < kinds.len() && kinds[k as usize] == ArrowKind::Drop;
    for node in free.nodes.keys() {
        let k = node.len() as u64;
        let invisible = k >= 2 && landing(k - 1) && node.last() == Some(1) && node.bit(k as u32 - 1) == 1;
        if !invisible {
            return Err(RiskNeutralError::NotInvisible(*node));
        }
    }
    let default = free.default.unwrap_or(q1);
    let q = QFunction::from_up(params.resolution, horizon, |t, parent| {
        let k = t.step();
        if landing(k) {
            0.0
        } else if landing(k - 1) && parent.last() == Some(1) {
            *free.nodes.get(&parent.push(1)).unwrap_or(&default)
        } else {
            q1
        }
    })?;
    RiskNeutralFiltration::new(base, q)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MartingaleReport {
    pub nodes_checked: usize,
    /// `Q_t(ω) - c1 Q(I(1, ω)) - c0 Q(I(0, ω))` beyond tolerance.
    pub equation_violations: Vec<NodeResidual>,
    /// `E(S'_{t+δ})(ω) - S'_t(ω)` beyond tolerance, on `Q_t(ω) > 0`.
    pub expectation_violations: Vec<NodeResidual>,
    /// One-step arrows along which the conditional expectation is undefined.
    pub undefined_steps: Vec<TimeArrow>,
}

impl MartingaleReport {
    pub fn holds(&self) -> bool {
        self.equation_violations.is_empty() && self.expectation_violations.is_empty() && self.undefined_steps.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.equation_violations
            .iter()
            .chain(&self.expectation_violations)
            .map(|v| v.residual.abs())
            .fold(0.0, f64::max)
    }
}

/// Checks both the one-step measure equation and `E(S'_{t+δ} | t) = S'_t`
/// at every node `t < horizon` of any filtration, under its own measures.
pub fn martingale_check<F: Filtration + ?Sized>(
    rn: &F,
    params: &MarketParams,
    horizon: GridTime,
    eps: f64,
) -> Result<MartingaleReport, RiskNeutralError> {
    let horizon = check_horizon(rn, params, horizon)?;
    let MartingaleConstants { c1, c0 } = martingale_constants(params);
    let discounted = discounted_stock(rn, params, horizon)?;
    let mut report = MartingaleReport::default();
    for k in 0..horizon.step() {
        let t = GridTime::new(k, params.resolution)?;
        let next = t.succ();
        let step = rn.morphism(arrow(t, next)?)?;
        let (here, there) = (step.target().weights(), step.source().weights());
        let mut up = vec![0.0; here.len()];
        let mut down = vec![0.0; here.len()];
        for (i, p) in step.source().outcomes().iter().enumerate() {
            let j = step.image_index(i);
            if p.last() == Some(1) {
                up[j] += there[i];
            } else {
                down[j] += there[i];
            }
        }
        for (j, w) in step.target().outcomes().iter().enumerate() {
            report.nodes_checked += 1;
            let residual = here[j] - c1 * up[j] - c0 * down[j];
            if residual.abs() > eps {
                report.equation_violations.push(NodeResidual {
                    time: t,
                    path: *w,
                    residual,
                });
            }
        }
        match conditional_expectation(&discounted.random_variable(rn, next)?, &step) {
            Ok(e) => {
                let current = discounted.slice(t)?;
                for (j, w) in step.target().outcomes().iter().enumerate() {
                    if here[j] <= EPS_MASS {
                        continue;
                    }
                    let residual = e.values()[j] - current[w.index()];
                    if residual.abs() > eps {
                        report.expectation_violations.push(NodeResidual {
                            time: t,
                            path: *w,
                            residual,
                        });
                    }
                }
            }
            Err(ProbError::NotNullPreserving { .. }) => report.undefined_steps.push(arrow(t, next)?),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(report)
}

/// Measures `Q_t` for `t = 0, δ, ..., horizon`, indexed by path bits.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFamily {
    pub resolution: u32,
    pub weights: Vec<Vec<f64>>,
}

impl MeasureFamily {
    pub fn from_filtration<F: Filtration + ?Sized>(
        filtration: &F,
        horizon: GridTime,
    ) -> Result<Self, RiskNeutralError> {
        let horizon = horizon.on_grid(filtration.resolution())?;
        let weights = (0..=horizon.step())
            .map(|k| {
                Ok(filtration
                    .space(GridTime::new(k, filtration.resolution())?)?
                    .weights()
                    .to_vec())
            })
            .collect::<Result<_, RiskNeutralError>>()?;
        Ok(Self {
            resolution: filtration.resolution(),
            weights,
        })
    }

    pub fn horizon(&self) -> GridTime {
        GridTime::new(self.weights.len() as u64 - 1, self.resolution).expect("valid resolution")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionResult {
    pub holds: bool,
    pub witnesses: Vec<NodeResidual>,
}

impl ConditionResult {
    fn from_witnesses(witnesses: Vec<NodeResidual>) -> Self {
        Self {
            holds: witnesses.is_empty(),
            witnesses,
        }
    }
}

/// Three characterizations of a measure family compatible with full steps.
#[derive(Debug, Clone, PartialEq)]
pub struct QcondReport {
    /// `Q_{t+δ}({ω0, ω1}) = Q_t({ω})`.
    pub sibling_sum: ConditionResult,
    /// `full_{t,t+δ}` pushes `Q_{t+δ}` forward to `Q_t`.
    pub full_preserving: ConditionResult,
    /// `Q` is the product of one-step `q` with `q(ω0) + q(ω1) = 1`.
    pub product_form: ConditionResult,
}

impl QcondReport {
    pub fn consistent(&self) -> bool {
        self.sibling_sum.holds == self.full_preserving.holds && self.full_preserving.holds == self.product_form.holds
    }

    pub fn all_hold(&self) -> bool {
        self.sibling_sum.holds && self.full_preserving.holds && self.product_form.holds
    }
}

/// Evaluates the three conditions by separate computations.
pub fn qcond_equivalences(family: &MeasureFamily, eps: f64) -> Result<QcondReport, RiskNeutralError> {
    let res = family.resolution;
    let w = &family.weights;
    let node = |k: usize, path: Path, residual: f64| -> Result<NodeResidual, RiskNeutralError> {
        Ok(NodeResidual {
            time: GridTime::new(k as u64, res)?,
            path,
            residual,
        })
    };

    let mut sibling = Vec::new();
    for k in 0..w.len() - 1 {
        for p in Path::all(k as u32) {
            let residual = w[k + 1][p.push(0).index()] + w[k + 1][p.push(1).index()] - w[k][p.index()];
            if residual.abs() > eps {
                sibling.push(node(k, p, residual)?);
            }
        }
    }

    let mut preserving = Vec::new();
    let mut spaces = Vec::new();
    for (k, weights) in w.iter().enumerate() {
        spaces.push(Arc::new(FinProbSpace::from_sorted(
            Path::all(k as u32).collect(),
            weights.clone(),
        )?));
    }
    for k in 0..w.len() - 1 {
        let s = GridTime::new(k as u64, res)?;
        let m = ProbMorphism::new(spaces[k + 1].clone(), spaces[k].clone(), |p| full_path(s, p))?;
        for (j, (pushed, q)) in m.pushforward().iter().zip(spaces[k].weights()).enumerate() {
            if (pushed - q).abs() > eps {
                preserving.push(node(k, spaces[k].outcomes()[j], pushed - q)?);
            }
        }
    }

    let mut product = Vec::new();
    if (w[0][0] - 1.0).abs() > eps {
        product.push(node(0, Path::EMPTY, w[0][0] - 1.0)?);
    }
    let mut rebuilt = vec![1.0];
    for k in 1..w.len() {
        let mut layer = vec![0.0; 1 << k];
        for parent in Path::all(k as u32 - 1) {
            let mass = w[k - 1][parent.index()];
            let (up, down) = (parent.push(1), parent.push(0));
            let (q1, q0) = if mass > 0.0 {
                (w[k][up.index()] / mass, w[k][down.index()] / mass)
            } else {
                (0.5, 0.5)
            };
            if (q1 + q0 - 1.0).abs() > eps || q1 < -eps || q0 < -eps {
                product.push(node(k, parent, q1 + q0 - 1.0)?);
            }
            layer[up.index()] = rebuilt[parent.index()] * q1;
            layer[down.index()] = rebuilt[parent.index()] * q0;
        }
        for (i, (r, actual)) in layer.iter().zip(&w[k]).enumerate() {
            if (r - actual).abs() > eps {
                product.push(node(k, Path::from_bits(i as u64, k as u32), actual - r)?);
            }
        }
        rebuilt = layer;
    }

    Ok(QcondReport {
        sibling_sum: ConditionResult::from_witnesses(sibling),
        full_preserving: ConditionResult::from_witnesses(preserving),
        product_form: ConditionResult::from_witnesses(product),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullViolation {
    pub arrow: TimeArrow,
    pub witness: Path,
    pub mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NullPreservationReport {
    pub arrows_checked: usize,
    pub violations: Vec<NullViolation>,
}

impl NullPreservationReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Null-preservation of every arrow `s <= t <= horizon` under the filtration's measures.
pub fn verify_null_preserving_under_q<F: Filtration + ?Sized>(
    rn: &F,
    horizon: GridTime,
) -> Result<NullPreservationReport, RiskNeutralError> {
    let horizon = horizon.on_grid(rn.resolution())?;
    let mut report = NullPreservationReport::default();
    for t in 0..=horizon.step() {
        for s in 0..=t {
            let a = arrow(GridTime::new(s, rn.resolution())?, GridTime::new(t, rn.resolution())?)?;
            let check = rn.morphism(a)?.is_null_preserving(EPS_MASS);
            report.arrows_checked += 1;
            if !check.holds {
                report.violations.push(NullViolation {
                    arrow: a,
                    witness: check.witness.expect("failing check has a witness"),
                    mass: check.witness_mass,
                });
            }
        }
    }
    Ok(report)
}

/// Nodes with `Q = 0 < P`, in time then path order.
pub fn equivalence_witnesses<Q: Filtration + ?Sized, P: Filtration + ?Sized>(
    rn: &Q,
    base: &P,
    horizon: GridTime,
) -> Result<Vec<(GridTime, Path)>, RiskNeutralError> {
    let horizon = horizon.on_grid(rn.resolution())?;
    let mut out = Vec::new();
    for k in 0..=horizon.step() {
        let t = GridTime::new(k, rn.resolution())?;
        let (q, p) = (rn.space(t)?, base.space(t)?);
        for ((path, wq), (_, wp)) in q.iter().zip(p.iter()) {
            if wq <= EPS_MASS && wp > EPS_MASS {
                out.push((t, *path));
            }
        }
    }
    Ok(out)
}

/// Nodes where two filtrations' measures differ by more than `eps`: `(t, ω, a, b)`.
pub fn measure_differences<A: Filtration + ?Sized, B: Filtration + ?Sized>(
    a: &A,
    b: &B,
    horizon: GridTime,
    eps: f64,
) -> Result<Vec<(GridTime, Path, f64, f64)>, RiskNeutralError> {
    let horizon = horizon.on_grid(a.resolution())?;
    let mut out = Vec::new();
    for k in 0..=horizon.step() {
        let t = GridTime::new(k, a.resolution())?;
        let (sa, sb) = (a.space(t)?, b.space(t)?);
        for ((path, wa), (_, wb)) in sa.iter().zip(sb.iter()) {
            if (wa - wb).abs() > eps {
                out.push((t, *path, wa, wb));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial_filtration::{make_drop_filtration, make_full_filtration, BernoulliParams};
    use crate::prob_core::EPS_EQ;

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
    fn constants() {
        let c = martingale_constants(&reference_market());
        assert!((c.c1 - 1.11940298507).abs() < 1e-11);
        assert!((c.c0 - 0.92039800995).abs() < 1e-11);
        let sym = MarketParams {
            r: 0.1,
            ..reference_market()
        };
        let c = martingale_constants(&sym);
        assert!((c.c1 + c.c0 - 2.0).abs() < 1e-15);
        let flat = MarketParams {
            mu: 0.0,
            r: 0.0,
            ..reference_market()
        };
        assert!((martingale_constants(&flat).c1 - 1.1).abs() < 1e-15);
    }

    #[test]
    fn q_star_values() {
        let (q1, q0) = q_star(&reference_market()).unwrap();
        assert!((q1 - 0.4).abs() < 1e-12 && (q0 - 0.6).abs() < 1e-12);
        let c = martingale_constants(&reference_market());
        assert!((c.c1 * q1 + c.c0 * q0 - 1.0).abs() < EPS_EQ);
        assert_eq!(
            q_star(&MarketParams {
                r: 0.1,
                ..reference_market()
            })
            .unwrap(),
            (0.5, 0.5)
        );
        let near = MarketParams {
            r: 0.1 - 0.4 + 1e-9,
            ..reference_market()
        };
        assert!(q_star(&near).unwrap().0 < 1e-8);
        assert!(matches!(
            q_star(&MarketParams {
                r: 0.6,
                ..reference_market()
            }),
            Err(RiskNeutralError::NoArbitrageBound { .. })
        ));
    }

    #[test]
    fn full_construction() {
        let rn = build_rn_full(make_full_filtration(2, half()), &reference_market(), g(4)).unwrap();
        let q1 = rn.space(g(1)).unwrap();
        assert!((q1.weight(&p("1")).unwrap() - 0.4).abs() < 1e-12);
        assert!((q1.weight(&p("0")).unwrap() - 0.6).abs() < 1e-12);
        assert!((rn.space(g(2)).unwrap().weight(&p("11")).unwrap() - 0.16).abs() < 1e-12);
        for k in 0..=4 {
            assert!((rn.space(g(k)).unwrap().total_mass() - 1.0).abs() < 1e-12);
        }
        let r = martingale_check(&rn, &reference_market(), g(4), EPS_EQ).unwrap();
        assert!(r.holds(), "{r:?}");
        assert_eq!(r.nodes_checked, 1 + 2 + 4 + 8);

        let sym = MarketParams {
            r: 0.1,
            ..reference_market()
        };
        let rn = build_rn_full(make_full_filtration(2, half()), &sym, g(2)).unwrap();
        assert!(rn.space(g(2)).unwrap().weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn full_rejects_drop_base() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        assert!(matches!(
            build_rn_full(base.clone(), &reference_market(), g(2)),
            Err(RiskNeutralError::NotFull(_))
        ));
        // the drop arrow lies past the horizon
        assert!(build_rn_full(base, &reference_market(), g(1)).is_ok());
    }

    #[test]
    fn physical_measure_is_not_risk_neutral() {
        let base = make_full_filtration(2, half());
        let r = martingale_check(&base, &reference_market(), g(2), EPS_EQ).unwrap();
        assert!(!r.holds());
        assert_eq!(r.equation_violations.len(), 3);
    }

    #[test]
    fn drop_construction_shape() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        for free in [0.2, 0.8] {
            let rn = build_rn_drop(base.clone(), &reference_market(), g(2), &FreeQ::uniform(free)).unwrap();
            let q2 = rn.space(g(2)).unwrap();
            assert!((q2.weight(&p("01")).unwrap() - 0.4).abs() < 1e-12);
            assert!((q2.weight(&p("00")).unwrap() - 0.6).abs() < 1e-12);
            assert_eq!(q2.weight(&p("11")), Some(0.0));
            assert_eq!(q2.weight(&p("10")), Some(0.0));
            assert_eq!(rn.q().q(&p("11")), Some(free));
            assert_eq!(equivalence_witnesses(&rn, &base, g(2)).unwrap()[0], (g(1), p("1")));
        }
    }

    #[test]
    fn drop_construction_fails_martingale_only_before_landing() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        let rn = build_rn_drop(base, &reference_market(), g(2), &FreeQ::default()).unwrap();
        let r = martingale_check(&rn, &reference_market(), g(2), EPS_EQ).unwrap();
        let c0 = martingale_constants(&reference_market()).c0;
        assert_eq!(r.equation_violations.len(), 1);
        assert_eq!(r.equation_violations[0].time, g(0));
        assert!((r.equation_violations[0].residual - (1.0 - c0)).abs() < 1e-12);
        assert_eq!(r.expectation_violations.len(), 1);
        assert!((r.expectation_violations[0].residual - (92.5 / 1.005 - 100.0)).abs() < 1e-10);
        assert!(r.undefined_steps.is_empty());
    }

    #[test]
    fn free_values_validated() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        assert!(matches!(
            build_rn_drop(base.clone(), &reference_market(), g(2), &FreeQ::uniform(1.5)),
            Err(RiskNeutralError::FreeOutOfRange { .. })
        ));
        assert!(matches!(
            build_rn_drop(
                base.clone(),
                &reference_market(),
                g(2),
                &FreeQ::default().with_node(p("01"), 0.3)
            ),
            Err(RiskNeutralError::NotInvisible(_))
        ));
        let rn = build_rn_drop(
            base,
            &reference_market(),
            g(2),
            &FreeQ::default().with_node(p("11"), 0.3),
        )
        .unwrap();
        assert_eq!(rn.q().q(&p("10")), Some(0.7));
    }

    #[test]
    fn null_preservation() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        let rn = build_rn_drop(base.clone(), &reference_market(), g(3), &FreeQ::default()).unwrap();
        assert!(verify_null_preserving_under_q(&rn, g(3)).unwrap().holds());
        let swapped = QFunction::from_up(2, g(3), |t, _| if t == g(1) { 1.0 } else { 0.4 }).unwrap();
        let bad = RiskNeutralFiltration::new(base, swapped).unwrap();
        let r = verify_null_preserving_under_q(&bad, g(3)).unwrap();
        assert!(!r.holds());
        assert!(r
            .violations
            .iter()
            .any(|v| v.witness == p("0") && v.arrow == arrow(g(1), g(2)).unwrap()));
    }

    #[test]
    fn qcond_on_built_and_broken_measures() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        let rn = build_rn_drop(base, &reference_market(), g(3), &FreeQ::default()).unwrap();
        let fam = MeasureFamily::from_filtration(&rn, g(3)).unwrap();
        let r = qcond_equivalences(&fam, EPS_EQ).unwrap();
        assert!(r.all_hold() && r.consistent());

        let mut broken = fam.clone();
        broken.weights[2][0] -= 0.05;
        broken.weights[2][2] += 0.05;
        let r = qcond_equivalences(&broken, EPS_EQ).unwrap();
        assert!(!r.sibling_sum.holds && r.consistent());
    }

    #[test]
    fn non_uniqueness() {
        let base = make_drop_filtration(2, half(), g(1), g(1)).unwrap();
        let a = build_rn_drop(base.clone(), &reference_market(), g(3), &FreeQ::uniform(0.2)).unwrap();
        let b = build_rn_drop(base, &reference_market(), g(3), &FreeQ::uniform(0.8)).unwrap();
        assert!(measure_differences(&a, &b, g(3), EPS_EQ).unwrap().is_empty());
        assert_ne!(a.q().q(&p("11")), b.q().q(&p("11")));
    }
}
