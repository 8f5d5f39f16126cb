//! Report assembly with fixed key order and 12-significant-digit floats.

use genfil_core::market::NodeResidual;
use genfil_core::{GridTime, Path};
use serde_json::{json, Map, Value};

/// Rounds to 12 significant digits; non-finite values become strings.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::String(x.to_string());
    }
    if x == 0.0 {
        return json!(0.0);
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    json!(rounded)
}

pub fn time(t: GridTime) -> Value {
    Value::String(t.to_string())
}

pub fn path(p: &Path) -> Value {
    Value::String(p.to_string())
}

pub fn residual(r: &NodeResidual) -> Value {
    json!({ "t": time(r.time), "path": path(&r.path), "residual": num(r.residual) })
}

pub fn node(t: GridTime, p: &Path) -> Value {
    json!({ "t": time(t), "path": path(p) })
}

/// At most this many witnesses are listed per check.
pub const MAX_WITNESSES: usize = 64;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub witnesses: Vec<Value>,
    pub note: Option<String>,
}

impl Check {
    pub fn new(name: &str, pass: bool, witnesses: impl IntoIterator<Item = Value>) -> Self {
        Self {
            name: name.to_string(),
            pass,
            witnesses: witnesses.into_iter().take(MAX_WITNESSES).collect(),
            note: None,
        }
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("name".into(), json!(self.name));
        m.insert("pass".into(), json!(self.pass));
        m.insert("witnesses".into(), Value::Array(self.witnesses.clone()));
        if let Some(note) = &self.note {
            m.insert("note".into(), json!(note));
        }
        Value::Object(m)
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub scenario_hash: String,
    pub checks: Vec<Check>,
    pub results: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str, scenario_hash: &str) -> Self {
        Self {
            command: command.to_string(),
            scenario_hash: scenario_hash.to_string(),
            checks: Vec::new(),
            results: Map::new(),
            warnings: Vec::new(),
        }
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn result(&mut self, key: &str, value: Value) {
        self.results.insert(key.to_string(), value);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), json!(self.command));
        m.insert("scenario_hash".into(), json!(self.scenario_hash));
        m.insert(
            "checks".into(),
            Value::Array(self.checks.iter().map(Check::to_json).collect()),
        );
        m.insert("results".into(), Value::Object(self.results.clone()));
        if !self.warnings.is_empty() {
            m.insert("warnings".into(), json!(self.warnings));
        }
        Value::Object(m)
    }

    pub fn render(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        text.push('\n');
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_twelve_digits() {
        assert_eq!(num(4.975124378109453).to_string(), "4.97512437811");
        assert_eq!(num(1.0 / 3.0).to_string(), "0.333333333333");
        assert_eq!(num(0.0).to_string(), "0.0");
        assert_eq!(num(-0.0).to_string(), "0.0");
        assert_eq!(num(f64::NAN), json!("NaN"));
    }

    #[test]
    fn keeps_key_order() {
        let mut r = Report::new("check", "abc");
        r.result("zeta", json!(1));
        r.result("alpha", json!(2));
        let text = r.render();
        assert!(text.find("zeta").unwrap() < text.find("alpha").unwrap());
        assert!(text.find("scenario_hash").unwrap() < text.find("checks").unwrap());
    }
}
