//! One function per subcommand; each returns a report or an error with its exit class.

use std::fmt;

use genfil_core::binomial_filtration::compare_filtrations;
use genfil_core::market::{MarketError, NodeResidual};
use genfil_core::risk_neutral::{martingale_constants, RiskNeutralError};
use genfil_core::valuation::{g_factorize, ValuationError};
use genfil_core::{
    arrow, build_rn_drop, build_rn_full, check_functor_laws, detect_arbitrage, equivalence_witnesses, experienced_path,
    is_arbitrage, martingale_check, naturality_check, price_lattice, q_star, qcond_equivalences, replicate,
    replication_check, tilde_filtration, verify_null_preserving_under_q, Claim, Filtration, FreeQ, GridTime,
    MeasureFamily, Path, RiskNeutralFiltration,
};
use serde_json::{json, Value};

use crate::report::{self, num, residual, Check, Report};
use crate::scenario::{apply_free_q, ClaimSpec, FiltrationSpec, InputError, PayoffSpec, Scenario, ScenarioFiltration};

#[derive(Debug)]
pub enum CommandError {
    /// Bad scenario or arguments; exit 2.
    Input(InputError),
    /// The computation itself failed; exit 1.
    Compute(String),
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(e) => write!(f, "input error: {e}"),
            Self::Compute(e) => write!(f, "computation failed: {e}"),
        }
    }
}

impl From<InputError> for CommandError {
    fn from(e: InputError) -> Self {
        Self::Input(e)
    }
}

macro_rules! compute_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CommandError {
            fn from(e: $t) -> Self {
                Self::Compute(e.to_string())
            }
        }
    )*};
}

compute_from!(
    RiskNeutralError,
    ValuationError,
    MarketError,
    genfil_core::binomial_filtration::FiltrationError,
    genfil_core::timegrid::TimeError
);

pub type Rn = RiskNeutralFiltration<ScenarioFiltration>;

/// Settings shared by every subcommand after the scenario is loaded.
#[derive(Debug, Clone)]
pub struct Context {
    pub scenario: Scenario,
    pub base: ScenarioFiltration,
    pub eps: f64,
}

impl Context {
    pub fn new(mut scenario: Scenario, tolerance: Option<f64>, free_q: &[String]) -> Result<Self, InputError> {
        for item in free_q {
            let (key, value) = item.split_once('=').ok_or_else(|| InputError {
                field: "--free-q".into(),
                message: format!("expected NODE=VALUE, got {item}"),
            })?;
            let value: f64 = value.trim().parse().map_err(|e| InputError {
                field: "--free-q".into(),
                message: format!("{value}: {e}"),
            })?;
            apply_free_q(&mut scenario.free_q, "--free-q", key.trim(), value)?;
        }
        let eps = match tolerance {
            Some(t) if !(t > 0.0) => {
                return Err(InputError {
                    field: "--tolerance".into(),
                    message: "must be positive".into(),
                })
            }
            Some(t) => t,
            None => scenario.eq_tol,
        };
        let base = scenario.base_filtration();
        Ok(Self { scenario, base, eps })
    }

    fn horizon(&self) -> GridTime {
        self.scenario.horizon
    }

    fn free_q(&self) -> &FreeQ {
        &self.scenario.free_q
    }

    pub fn risk_neutral(&self) -> Result<Rn, RiskNeutralError> {
        let (base, m, h) = (self.base.clone(), &self.scenario.market, self.horizon());
        match self.scenario.filtration {
            FiltrationSpec::Full => build_rn_full(base, m, h),
            _ => build_rn_drop(base, m, h, self.free_q()),
        }
    }

    fn claim_spec(&self) -> Result<&ClaimSpec, InputError> {
        self.scenario.claim.as_ref().ok_or_else(|| InputError {
            field: "claim".into(),
            message: "this command needs a claim".into(),
        })
    }

    pub fn claim(&self) -> Result<Claim, CommandError> {
        let spec = self.claim_spec()?;
        let (f, m, t) = (&self.base, &self.scenario.market, spec.maturity);
        Ok(match &spec.payoff {
            PayoffSpec::Call(k) => Claim::call(f, m, t, *k)?,
            PayoffSpec::Put(k) => Claim::put(f, m, t, *k)?,
            PayoffSpec::Digital(k) => Claim::digital(f, m, t, *k)?,
            PayoffSpec::Bond => Claim::bond(m, t)?,
            PayoffSpec::Table(table) => Claim::from_table(t, table)?,
        })
    }
}

fn residuals(list: &[NodeResidual]) -> impl Iterator<Item = Value> + '_ {
    list.iter().map(residual)
}

fn times(res: u32, last: GridTime) -> impl Iterator<Item = GridTime> {
    (0..=last.step()).map(move |k| GridTime::new(k, res).expect("within the horizon"))
}

/// Failed check recording why the risk-neutral family could not be built.
fn rn_failure(e: &RiskNeutralError) -> Check {
    Check::new("risk_neutral_measure", false, []).note(e.to_string())
}

pub fn check(ctx: &Context) -> Result<Report, CommandError> {
    let s = &ctx.scenario;
    let h = ctx.horizon();
    let mut r = Report::new("check", &s.hash);

    let laws = check_functor_laws(&ctx.base, h)?;
    let mut witnesses: Vec<Value> = laws
        .unit_violations
        .iter()
        .map(|v| json!({ "law": "unit", "t": report::time(v.time), "path": report::path(&v.path), "image": report::path(&v.image) }))
        .collect();
    witnesses.extend(laws.composition_violations.iter().map(|v| {
        json!({
            "law": "composition",
            "s": report::time(v.s), "t": report::time(v.t), "u": report::time(v.u),
            "path": report::path(&v.path), "direct": report::path(&v.direct), "composed": report::path(&v.composed),
        })
    }));
    witnesses.extend(
        laws.null_violations
            .iter()
            .map(|v| json!({ "law": "null_preserving", "arrow": v.arrow.to_string(), "detail": v.detail })),
    );
    r.check(Check::new("functor_laws", laws.is_filtration(), witnesses));

    let nat = naturality_check(&ctx.base, h)?;
    r.check(Check::new(
        "naturality",
        nat.holds(),
        nat.failures.iter().map(|f| {
            json!({
                "s": report::time(f.s), "t": report::time(f.t), "path": report::path(&f.path),
                "via_tilde": report::path(&f.via_tilde), "via_base": report::path(&f.via_base),
            })
        }),
    ));

    let m = &s.market;
    r.result("arbitrage_bound", num(m.arbitrage_bound()));
    match q_star(m) {
        Err(e) => {
            r.warn(format!("risk-neutral checks skipped: {e}"));
            r.result("q_star", Value::Null);
        }
        Ok((q1, q0)) => {
            let c = martingale_constants(m);
            r.result("q_star", json!([num(q1), num(q0)]));
            r.result("c1", num(c.c1));
            r.result("c0", num(c.c0));
            match ctx.risk_neutral() {
                Err(e) => r.check(rn_failure(&e)),
                Ok(rn) => rn_checks(ctx, &rn, &mut r)?,
            }
        }
    }
    Ok(r)
}

fn rn_checks(ctx: &Context, rn: &Rn, r: &mut Report) -> Result<(), CommandError> {
    let h = ctx.horizon();
    let mart = martingale_check(rn, &ctx.scenario.market, h, ctx.eps)?;
    let mut witnesses: Vec<Value> = mart
        .equation_violations
        .iter()
        .map(|v| json!({ "form": "equation", "t": report::time(v.time), "path": report::path(&v.path), "residual": num(v.residual) }))
        .collect();
    witnesses.extend(mart.expectation_violations.iter().map(|v| {
        json!({ "form": "expectation", "t": report::time(v.time), "path": report::path(&v.path), "residual": num(v.residual) })
    }));
    witnesses.extend(
        mart.undefined_steps
            .iter()
            .map(|a| json!({ "form": "undefined", "arrow": a.to_string() })),
    );
    r.check(Check::new("martingale", mart.holds(), witnesses).note(format!(
        "{} nodes checked, max residual {:.6e}",
        mart.nodes_checked,
        mart.max_residual()
    )));

    let qc = qcond_equivalences(&MeasureFamily::from_filtration(rn, h)?, ctx.eps)?;
    let conditions = [
        ("sibling_sum", &qc.sibling_sum),
        ("full_preserving", &qc.full_preserving),
        ("product_form", &qc.product_form),
    ];
    let witnesses = conditions.iter().flat_map(|(name, c)| {
        c.witnesses.iter().map(move |w| {
            json!({ "condition": name, "t": report::time(w.time), "path": report::path(&w.path), "residual": num(w.residual) })
        })
    });
    r.check(Check::new("qcond", qc.all_hold(), witnesses.collect::<Vec<_>>()));
    r.result(
        "qcond",
        json!({
            "sibling_sum": qc.sibling_sum.holds,
            "full_preserving": qc.full_preserving.holds,
            "product_form": qc.product_form.holds,
            "consistent": qc.consistent(),
        }),
    );

    let null = verify_null_preserving_under_q(rn, h)?;
    r.check(Check::new(
        "null_preserving_q",
        null.holds(),
        null.violations
            .iter()
            .map(|v| json!({ "arrow": v.arrow.to_string(), "witness": report::path(&v.witness), "mass": num(v.mass) })),
    ));

    let invisible = equivalence_witnesses(rn, &ctx.base, h)?;
    r.result(
        "non_equivalence_witnesses",
        Value::Array(invisible.iter().map(|(t, p)| report::node(*t, p)).collect()),
    );
    Ok(())
}

pub fn price(ctx: &Context) -> Result<Report, CommandError> {
    let s = &ctx.scenario;
    let claim = ctx.claim()?;
    let mut r = Report::new("price", &s.hash);
    let rn = match ctx.risk_neutral() {
        Ok(rn) => rn,
        Err(e) => {
            r.check(rn_failure(&e));
            return Ok(r);
        }
    };
    r.check(Check::new("risk_neutral_measure", true, []));
    let lattice = price_lattice(&claim, &rn, &s.market)?;
    let maturity = claim.maturity();
    let root = Path::EMPTY;
    let zero = GridTime::zero(s.resolution);
    r.result("maturity", report::time(maturity));
    r.result("root_price", num(lattice.discounted.value(zero, &root)?));
    r.result("root_nodal", num(lattice.nodal.value(zero, &root)?));
    let mut rows = Vec::new();
    for t in times(s.resolution, maturity) {
        let q = rn.space(t)?;
        let disc = lattice.discounted.slice(t)?;
        let nodal = lattice.nodal.slice(t)?;
        for (i, (p, mass)) in q.iter().enumerate() {
            rows.push(json!({
                "t": report::time(t), "path": report::path(p),
                "price": num(disc[i]), "nodal": num(nodal[i]), "Q": num(mass),
            }));
        }
    }
    r.result("lattice", Value::Array(rows));
    Ok(r)
}

pub fn replicate_cmd(ctx: &Context) -> Result<Report, CommandError> {
    let s = &ctx.scenario;
    let claim = ctx.claim()?;
    let maturity = claim.maturity();
    let mut r = Report::new("replicate", &s.hash);

    for k in 0..maturity.step() {
        let t = GridTime::new(k, s.resolution)?;
        let step = ctx.base.morphism(arrow(t, t.succ())?)?;
        if let Err(e) = g_factorize(&step, t) {
            let step = format!("{} -> {}", t.succ(), t);
            let witness = match &e {
                ValuationError::NotFactorable {
                    left,
                    left_image,
                    right,
                    right_image,
                    ..
                } => json!({
                    "step": step,
                    "left": report::path(left), "left_image": report::path(left_image),
                    "right": report::path(right), "right_image": report::path(right_image),
                }),
                other => json!({ "step": step, "error": other.to_string() }),
            };
            r.check(Check::new("factorization", false, [witness]).note(e.to_string()));
            return Ok(r);
        }
    }
    r.check(Check::new("factorization", true, []));

    let rn = match ctx.risk_neutral() {
        Ok(rn) => rn,
        Err(e) => {
            r.check(rn_failure(&e));
            return Ok(r);
        }
    };
    let rep = replicate(&claim, &rn, &s.market)?;
    let rc = replication_check(&rep.strategy, &claim, &rn, &s.market, ctx.eps)?;
    r.check(Check::new(
        "self_financing",
        rc.self_financing.holds(),
        residuals(&rc.self_financing.violations),
    ));
    r.check(Check::new(
        "value_recursion",
        rc.recursion_violations.is_empty(),
        residuals(&rc.recursion_violations),
    ));
    r.check(Check::new(
        "payoff_match",
        rc.payoff_mismatches.is_empty(),
        residuals(&rc.payoff_mismatches),
    ));
    r.check(Check::new(
        "price_match",
        rc.price_mismatches.is_empty(),
        residuals(&rc.price_mismatches),
    ));

    let zero = GridTime::zero(s.resolution);
    r.result("maturity", report::time(maturity));
    r.result("initial_value", num(rep.value.value(zero, &Path::EMPTY)?));
    r.result("max_payoff_error", num(rc.max_payoff_error));
    r.result("covered_nodes", json!(rep.covered_nodes()));
    let mut rows = Vec::new();
    for k in 0..maturity.step() {
        let t = GridTime::new(k + 1, s.resolution)?;
        for p in Path::all(k as u32) {
            rows.push(json!({
                "t": report::time(t), "path": report::path(&p),
                "phi": num(rep.strategy.phi(t, &p).unwrap_or(0.0)),
                "psi": num(rep.strategy.psi(t, &p).unwrap_or(0.0)),
                "covered": rep.covered[k as usize][p.index()],
            }));
        }
    }
    r.result("strategy", Value::Array(rows));
    Ok(r)
}

pub fn arbitrage(ctx: &Context) -> Result<Report, CommandError> {
    let s = &ctx.scenario;
    let (m, h) = (&s.market, ctx.horizon());
    let mut r = Report::new("arbitrage", &s.hash);
    r.result("excess", num(m.mu - m.r));
    r.result("bound", num(m.arbitrage_bound()));
    match detect_arbitrage(&ctx.base, m, h) {
        Err(MarketError::TrivialFiltration) => {
            r.warn("every coin is deterministic; positive probability of a positive gain cannot be certified");
            r.result("verdict", json!("unverifiable: trivial filtration"));
            r.result("is_arbitrage", Value::Null);
        }
        Err(e) => return Err(e.into()),
        Ok(None) => {
            r.result("verdict", json!("no arbitrage constructed; |mu - r| < 2^(N/2) sigma"));
            r.result("is_arbitrage", json!(false));
        }
        Ok(Some(strat)) => {
            let rep = is_arbitrage(&strat, &ctx.base, m, h, ctx.eps)?;
            let loss = rep.loss_witness.iter().map(residual);
            r.check(Check::new(
                "arbitrage_verified",
                rep.is_arbitrage,
                loss.collect::<Vec<_>>(),
            ));
            r.result("verdict", json!("arbitrage constructed"));
            r.result("is_arbitrage", json!(rep.is_arbitrage));
            r.result("min_gain", num(rep.min_gain));
            r.result("positive_at", rep.positive_at.map_or(Value::Null, report::time));
            r.result("positive_probability", num(rep.positive_probability));
            let mut rows = Vec::new();
            for k in 0..h.step() {
                let t = GridTime::new(k + 1, s.resolution)?;
                for p in Path::all(k as u32) {
                    rows.push(json!({
                        "t": report::time(t), "path": report::path(&p),
                        "phi": num(strat.phi(t, &p).unwrap_or(0.0)),
                        "psi": num(strat.psi(t, &p).unwrap_or(0.0)),
                    }));
                }
            }
            r.result("strategy", Value::Array(rows));
        }
    }
    Ok(r)
}

pub fn experienced(ctx: &Context, path: Option<&str>) -> Result<Report, CommandError> {
    let s = &ctx.scenario;
    let h = ctx.horizon();
    let text = path.ok_or_else(|| InputError {
        field: "--path".into(),
        message: "this command needs --path".into(),
    })?;
    let omega: Path = text.parse().map_err(|e| InputError {
        field: "--path".into(),
        message: format!("{e}"),
    })?;
    if omega.len() as u64 > h.step() {
        return Err(InputError {
            field: "--path".into(),
            message: format!("{} bits exceed the horizon {h} ({} steps)", omega.len(), h.step()),
        }
        .into());
    }
    let t = GridTime::new(omega.len() as u64, s.resolution)?;
    let mut r = Report::new("experienced", &s.hash);
    let nat = naturality_check(&ctx.base, h)?;
    r.check(Check::new(
        "naturality",
        nat.holds(),
        nat.failures.iter().map(|f| {
            json!({
                "s": report::time(f.s), "t": report::time(f.t), "path": report::path(&f.path),
                "via_tilde": report::path(&f.via_tilde), "via_base": report::path(&f.via_base),
            })
        }),
    ));
    r.result("time", report::time(t));
    r.result("path", report::path(&omega));
    r.result("experienced", report::path(&experienced_path(&ctx.base, t, &omega)?));
    let mut trajectory = Vec::new();
    for u in times(s.resolution, t) {
        let prefix = omega.restrict(u.step() as u32);
        trajectory.push(
            json!({ "t": report::time(u), "experienced": report::path(&experienced_path(&ctx.base, u, &prefix)?) }),
        );
    }
    r.result("trajectory", Value::Array(trajectory));
    let tilde = tilde_filtration(&ctx.base, h)?;
    let cmp = compare_filtrations(&tilde, &ctx.base, h, ctx.eps)?;
    r.result(
        "tilde",
        json!({
            "horizon": report::time(h),
            "squares_checked": nat.squares_checked,
            "equals_base": cmp.equal(),
            "space_mismatches": cmp.space_mismatches.len(),
            "map_mismatches": cmp.morphism_mismatches.len(),
        }),
    );
    Ok(r)
}
