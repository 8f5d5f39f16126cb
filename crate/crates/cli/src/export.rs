//! Lattice and measure files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path as FsPath;

use clap::ValueEnum;
use genfil_core::binomial_filtration::ArrowKind;
use genfil_core::risk_neutral::step_kind;
use genfil_core::{arrow, equivalence_witnesses, price_lattice, Filtration, GridTime, Path};
use serde_json::{json, Value};

use crate::commands::{CommandError, Context, Rn};
use crate::report::{num, Check, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum What {
    LatticeDot,
    LatticeCsv,
    MeasuresCsv,
}

impl What {
    pub const ALL: [What; 3] = [What::LatticeDot, What::LatticeCsv, What::MeasuresCsv];

    fn file_name(self) -> &'static str {
        match self {
            What::LatticeDot => "lattice.dot",
            What::LatticeCsv => "lattice.csv",
            What::MeasuresCsv => "measures.csv",
        }
    }
}

fn number(x: f64) -> String {
    num(x).to_string().trim_matches('"').to_string()
}

fn node_id(t: GridTime, p: &Path) -> String {
    format!("{t}/{p}")
}

fn grid(ctx: &Context) -> impl Iterator<Item = GridTime> {
    let res = ctx.scenario.resolution;
    (0..=ctx.scenario.horizon.step()).map(move |k| GridTime::new(k, res).expect("within the horizon"))
}

/// `t,path,value` with the time-0 discounted price of the scenario's claim.
pub fn lattice_csv(ctx: &Context, rn: &Rn) -> Result<String, CommandError> {
    let claim = ctx.claim()?;
    let lattice = price_lattice(&claim, rn, &ctx.scenario.market)?;
    let mut out = String::from("t,path,value\n");
    for k in 0..=claim.maturity().step() {
        let t = GridTime::new(k, ctx.scenario.resolution)?;
        for (p, v) in Path::all(k as u32).zip(lattice.discounted.slice(t)?) {
            writeln!(out, "{t},{p},{}", number(*v)).expect("writing to a string");
        }
    }
    Ok(out)
}

/// `t,path,P,Q` for every node through the horizon.
pub fn measures_csv(ctx: &Context, rn: &Rn) -> Result<String, CommandError> {
    let mut out = String::from("t,path,P,Q\n");
    for t in grid(ctx) {
        let (p_space, q_space) = (ctx.base.space(t)?, rn.space(t)?);
        for ((path, p), (_, q)) in p_space.iter().zip(q_space.iter()) {
            writeln!(out, "{t},{path},{},{}", number(p), number(q)).expect("writing to a string");
        }
    }
    Ok(out)
}

/// One node per path, one edge from each path's one-step image to the path.
/// Nodes with `Q = 0 < P` are dashed and gray.
pub fn lattice_dot(ctx: &Context, rn: &Rn) -> Result<String, CommandError> {
    let h = ctx.scenario.horizon;
    let invisible = equivalence_witnesses(rn, &ctx.base, h)?;
    let mut out = String::from("digraph lattice {\n  rankdir=LR;\n  node [shape=box];\n");
    for t in grid(ctx) {
        let (p_space, q_space) = (ctx.base.space(t)?, rn.space(t)?);
        for ((path, p), (_, q)) in p_space.iter().zip(q_space.iter()) {
            let style = if invisible.contains(&(t, *path)) {
                ", style=dashed, color=gray, fontcolor=gray"
            } else {
                ""
            };
            writeln!(
                out,
                "  \"{}\" [label=\"{}\\nP={} Q={}\"{}];",
                node_id(t, path),
                path,
                number(p),
                number(q),
                style
            )
            .expect("writing to a string");
        }
    }
    for t in grid(ctx).skip(1) {
        let prev = t.pred().expect("t > 0");
        let kind = match step_kind(&ctx.base, t) {
            Ok(ArrowKind::Drop) => "drop",
            Ok(_) => "full",
            Err(_) => "custom",
        };
        let a = arrow(prev, t)?;
        for path in Path::all(t.step() as u32) {
            let image = ctx.base.apply(a, &path);
            writeln!(
                out,
                "  \"{}\" -> \"{}\" [kind={kind}, label={kind}];",
                node_id(prev, &image),
                node_id(t, &path)
            )
            .expect("writing to a string");
        }
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export(ctx: &Context, what: &[What], dir: Option<&FsPath>) -> Result<Report, CommandError> {
    let dir = dir.ok_or_else(|| crate::scenario::InputError {
        field: "--out".into(),
        message: "export needs an output directory".into(),
    })?;
    let mut what: Vec<What> = if what.is_empty() {
        What::ALL.to_vec()
    } else {
        what.to_vec()
    };
    what.sort();
    what.dedup();
    let mut r = Report::new("export", &ctx.scenario.hash);
    let rn = match ctx.risk_neutral() {
        Ok(rn) => rn,
        Err(e) => {
            r.check(Check::new("risk_neutral_measure", false, []).note(e.to_string()));
            return Ok(r);
        }
    };
    fs::create_dir_all(dir).map_err(|e| CommandError::Compute(format!("cannot create {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for w in what {
        let text = match w {
            What::LatticeDot => lattice_dot(ctx, &rn)?,
            What::LatticeCsv => lattice_csv(ctx, &rn)?,
            What::MeasuresCsv => measures_csv(ctx, &rn)?,
        };
        let file = dir.join(w.file_name());
        fs::write(&file, text).map_err(|e| CommandError::Compute(format!("cannot write {}: {e}", file.display())))?;
        files.push(json!(w.file_name()));
    }
    r.result("files", Value::Array(files));
    Ok(r)
}
