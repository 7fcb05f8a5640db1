//! Bounds reports: every selected relaxation for one instance, the exact
//! permanent when affordable, and the sandwich checks tying them together.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bethe::{solve_r_o_mirror, DEFAULT_BETHE_TOL};
use crate::diagnostics::{SolveDiagnostics, Stopwatch};
use crate::entropy::{minimize_dual_h, sinkhorn_solve, DEFAULT_DUAL_TOL, DEFAULT_MAX_ITERS, DEFAULT_SINKHORN_TOL, DEFAULT_THEOREM_TOL};
use crate::error::{Error, Result};
use crate::exact::{permanent, PermanentMethod, RYSER_LIMIT};
use crate::matrix::{support_has_perfect_matching, NonNegMatrix};
use crate::poly::{make_split, r_p_value, r_q_value, SplitKind, REDUCTION_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relaxation {
    Re,
    Rc,
    Ro,
    Rp,
    Rq,
}

impl Relaxation {
    pub const ALL: [Relaxation; 5] = [Relaxation::Re, Relaxation::Rc, Relaxation::Ro, Relaxation::Rp, Relaxation::Rq];

    pub fn name(self) -> &'static str {
        match self {
            Relaxation::Re => "re",
            Relaxation::Rc => "rc",
            Relaxation::Ro => "ro",
            Relaxation::Rp => "rp",
            Relaxation::Rq => "rq",
        }
    }

    /// Parses a comma separated list such as `re,rc,ro`.
    pub fn parse_set(s: &str) -> Result<BTreeSet<Relaxation>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for Relaxation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relaxation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Relaxation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown relaxation `{s}` (expected re, rc, ro, rp or rq)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Parse(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sinkhorn_tol: f64,
    pub dual_tol: f64,
    pub bethe_tol: f64,
    pub theorem_tol: f64,
    pub sinkhorn_max_iters: usize,
    pub dual_max_iters: usize,
    pub bethe_max_iters: usize,
    /// Largest `n` for which the exact permanent is computed.
    pub exact_threshold: usize,
    pub relaxations: BTreeSet<Relaxation>,
    /// Split used for `R_P` and `R_Q`.
    pub split: SplitKind,
    pub format: OutputFormat,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sinkhorn_tol: DEFAULT_SINKHORN_TOL,
            dual_tol: DEFAULT_DUAL_TOL,
            bethe_tol: DEFAULT_BETHE_TOL,
            theorem_tol: DEFAULT_THEOREM_TOL,
            sinkhorn_max_iters: DEFAULT_MAX_ITERS,
            dual_max_iters: DEFAULT_MAX_ITERS,
            bethe_max_iters: DEFAULT_MAX_ITERS,
            exact_threshold: 20,
            relaxations: [Relaxation::Re, Relaxation::Rc, Relaxation::Ro].into_iter().collect(),
            split: SplitKind::Sqrt,
            format: OutputFormat::Json,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("sinkhorn_tol", self.sinkhorn_tol),
            ("dual_tol", self.dual_tol),
            ("bethe_tol", self.bethe_tol),
            ("theorem_tol", self.theorem_tol),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {t}")));
            }
        }
        if self.exact_threshold > RYSER_LIMIT {
            return Err(Error::Config(format!(
                "exact_threshold {} exceeds {RYSER_LIMIT}",
                self.exact_threshold
            )));
        }
        Ok(())
    }

    /// Additive slack for the sandwich inequalities.
    pub fn sandwich_slack(&self) -> f64 {
        100.0 * self.sinkhorn_tol.min(self.dual_tol).min(self.bethe_tol)
    }
}

/// `lhs <= rhs + slack`, or `|lhs - rhs| <= slack` for names containing `==`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub name: String,
    #[serde(with = "real")]
    pub lhs: f64,
    #[serde(with = "real")]
    pub rhs: f64,
    pub holds: bool,
    #[serde(with = "real")]
    pub slack: f64,
}

impl SandwichCheck {
    fn at_most(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        SandwichCheck { name: name.into(), lhs, rhs, holds: lhs <= rhs + slack, slack }
    }

    fn equal(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        SandwichCheck { name: name.into(), lhs, rhs, holds: (lhs - rhs).abs() <= slack, slack }
    }
}

/// Solver diagnostics without the wall time, which lives under `timings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    #[serde(with = "real")]
    pub final_residual: f64,
    pub converged: bool,
}

impl From<&SolveDiagnostics> for SolverSummary {
    fn from(d: &SolveDiagnostics) -> Self {
        SolverSummary { iterations: d.iterations, final_residual: d.final_residual, converged: d.converged }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub relaxation: Relaxation,
    pub non_convergence: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub relaxation: Relaxation,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// `file:<path>` or `gen:<kind>:<n>:<seed>`.
    pub instance: String,
    pub n: usize,
    #[serde(with = "opt_real", default)]
    pub per_exact: Option<f64>,
    pub per_method: PermanentMethod,
    #[serde(with = "opt_real", default)]
    pub log_per: Option<f64>,
    #[serde(with = "opt_real", default)]
    pub r_e: Option<f64>,
    #[serde(with = "opt_real", default)]
    pub log_r_c: Option<f64>,
    #[serde(with = "opt_real", default)]
    pub r_o: Option<f64>,
    #[serde(with = "opt_real", default)]
    pub log_r_p: Option<f64>,
    #[serde(with = "opt_real", default)]
    pub log_r_q: Option<f64>,
    #[serde(default)]
    pub sandwich_checks: Vec<SandwichCheck>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, SolverSummary>,
    #[serde(default)]
    pub failures: Vec<Failure>,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
    /// Wall-clock seconds per stage.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

impl BoundsReport {
    pub fn violations(&self) -> impl Iterator<Item = &SandwichCheck> {
        self.sandwich_checks.iter().filter(|c| !c.holds)
    }

    /// A violated check outranks a solver failure.
    pub fn exit_code(&self) -> i32 {
        if self.violations().next().is_some() {
            EXIT_VIOLATION
        } else if !self.failures.is_empty() {
            EXIT_SOLVER
        } else {
            EXIT_OK
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Two-column `field,value` listing of the flattened JSON report.
    pub fn to_csv(&self) -> String {
        let value = serde_json::to_value(self).expect("report serialises");
        let mut rows = Vec::new();
        flatten("", &value, &mut rows);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["field", "value"]).expect("in-memory write");
        for (k, v) in rows {
            w.write_record([k, v]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut root = Value::Object(Map::new());
        for record in r.records() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            if record.len() != 2 {
                return Err(Error::Parse(format!("expected 2 columns, found {}", record.len())));
            }
            insert_path(&mut root, &record[0], decode_scalar(&record[1]))?;
        }
        serde_json::from_value(arrayify(root)).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Csv => self.to_csv(),
        }
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        scalar => out.push((prefix.to_string(), encode_scalar(scalar))),
    }
}

/// Strings that would read back as another JSON scalar are quoted.
fn encode_scalar(v: &Value) -> String {
    match v {
        Value::String(s) => {
            if s.is_empty() || s.starts_with('"') || serde_json::from_str::<Value>(s).is_ok() {
                serde_json::to_string(s).expect("string serialises")
            } else {
                s.clone()
            }
        }
        other => other.to_string(),
    }
}

fn decode_scalar(s: &str) -> Value {
    match serde_json::from_str::<Value>(s) {
        Ok(v) if !v.is_object() && !v.is_array() => v,
        _ => Value::String(s.to_string()),
    }
}

fn insert_path(root: &mut Value, path: &str, leaf: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| Error::Parse(format!("conflicting field `{path}`")))?;
        if depth + 1 == parts.len() {
            map.insert(part.to_string(), leaf);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(Error::Parse("empty field name".into()))
}

/// Objects keyed `0..k` came from arrays.
fn arrayify(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let is_array = !map.is_empty() && (0..map.len()).all(|i| map.contains_key(&i.to_string()));
            if is_array {
                let mut map = map;
                Value::Array((0..map.len()).map(|i| arrayify(map.remove(&i.to_string()).unwrap())).collect())
            } else {
                Value::Object(map.into_iter().map(|(k, v)| (k, arrayify(v))).collect())
            }
        }
        other => other,
    }
}

/// Serialises non-finite floats as the strings `inf`, `-inf` and `nan`.
pub mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub(super) fn parse<E: serde::de::Error>(s: &str) -> Result<f64, E> {
        match s {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => other.parse().map_err(|_| E::custom(format!("not a number: `{other}`"))),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => parse(&s),
        }
    }
}

pub mod opt_real {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(x) => super::real::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Str(s)) => super::real::parse(&s).map(Some),
        }
    }
}

pub mod real_map {
    use std::collections::BTreeMap;

    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    struct Real<'a>(&'a f64);

    impl serde::Serialize for Real<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            super::real::serialize(self.0, s)
        }
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(m.len()))?;
        for (k, v) in m {
            map.serialize_entry(k, &Real(v))?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        BTreeMap::<String, Repr>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| match v {
                Repr::Num(x) => Ok((k, x)),
                Repr::Str(s) => super::real::parse(&s).map(|x| (k, x)),
            })
            .collect()
    }
}

/// Runs the selected relaxations and the exact oracle on one instance.
/// Solver failures are recorded per relaxation; the others still run.
pub fn compute(m: &NonNegMatrix, instance: impl Into<String>, cfg: &RunConfig) -> Result<BoundsReport> {
    cfg.validate()?;
    let n = m.n();
    let mut report = BoundsReport {
        instance: instance.into(),
        n,
        per_exact: None,
        per_method: PermanentMethod::Skipped,
        log_per: None,
        r_e: None,
        log_r_c: None,
        r_o: None,
        log_r_p: None,
        log_r_q: None,
        sandwich_checks: Vec::new(),
        diagnostics: BTreeMap::new(),
        failures: Vec::new(),
        skipped: Vec::new(),
        timings: BTreeMap::new(),
    };

    let clock = Stopwatch::start();
    let (per, method) = permanent(m, cfg.exact_threshold)?;
    report.timings.insert("permanent".into(), clock.seconds());
    report.per_exact = per;
    report.per_method = method;
    report.log_per = per.map(f64::ln);

    let feasible = support_has_perfect_matching(m).has_perfect_matching;
    for &relaxation in &cfg.relaxations {
        let positive_only = matches!(relaxation, Relaxation::Rp | Relaxation::Rq);
        if positive_only && !m.is_positive() {
            report.skipped.push(Skipped { relaxation, reason: "requires a strictly positive matrix".into() });
            continue;
        }
        if !feasible {
            // Empty feasible set: every relaxation is -inf.
            *slot(&mut report, relaxation) = Some(f64::NEG_INFINITY);
            continue;
        }
        let clock = Stopwatch::start();
        let outcome = run_relaxation(m, relaxation, cfg);
        report.timings.insert(relaxation.name().into(), clock.seconds());
        match outcome {
            Ok((value, diagnostics, residual)) => {
                *slot(&mut report, relaxation) = Some(value);
                report.diagnostics.insert(relaxation.name().into(), (&diagnostics).into());
                if let Some(residual) = residual {
                    report.sandwich_checks.push(SandwichCheck::at_most(
                        &format!("reduction_residual_{relaxation} <= tol"),
                        residual,
                        REDUCTION_TOL,
                        0.0,
                    ));
                }
            }
            Err(e) => report.failures.push(Failure {
                relaxation,
                non_convergence: e.is_convergence_failure(),
                message: e.to_string(),
            }),
        }
    }
    if feasible {
        add_checks(&mut report, cfg);
    }
    Ok(report)
}

fn slot(report: &mut BoundsReport, r: Relaxation) -> &mut Option<f64> {
    match r {
        Relaxation::Re => &mut report.r_e,
        Relaxation::Rc => &mut report.log_r_c,
        Relaxation::Ro => &mut report.r_o,
        Relaxation::Rp => &mut report.log_r_p,
        Relaxation::Rq => &mut report.log_r_q,
    }
}

fn run_relaxation(m: &NonNegMatrix, r: Relaxation, cfg: &RunConfig) -> Result<(f64, SolveDiagnostics, Option<f64>)> {
    Ok(match r {
        Relaxation::Re => {
            let s = sinkhorn_solve(m, cfg.sinkhorn_tol, cfg.sinkhorn_max_iters)?;
            (s.value, s.diagnostics, None)
        }
        Relaxation::Rc => {
            let s = minimize_dual_h(m, cfg.dual_tol, cfg.dual_max_iters)?;
            (s.value, s.diagnostics, None)
        }
        Relaxation::Ro => {
            let s = solve_r_o_mirror(m, cfg.bethe_tol, cfg.bethe_max_iters)?;
            (s.value, s.diagnostics, None)
        }
        Relaxation::Rp => {
            let v = r_p_value(m, &make_split(m, cfg.split)?, cfg.sinkhorn_tol)?;
            (v.log_value, v.diagnostics, Some(v.reduction_residual))
        }
        Relaxation::Rq => {
            let v = r_q_value(m, &make_split(m, cfg.split)?, cfg.bethe_tol)?;
            (v.log_value, v.diagnostics, Some(v.reduction_residual))
        }
    })
}

fn add_checks(report: &mut BoundsReport, cfg: &RunConfig) {
    let slack = cfg.sandwich_slack();
    let n = report.n as f64;
    let checks = &mut report.sandwich_checks;
    if let Some(lp) = report.log_per {
        if let Some(rc) = report.log_r_c {
            checks.push(SandwichCheck::at_most("log_per <= log_r_c", lp, rc, slack));
            checks.push(SandwichCheck::at_most("log_r_c <= n + log_per", rc, n + lp, slack));
        }
        if let Some(ro) = report.r_o {
            checks.push(SandwichCheck::at_most("r_o <= log_per", ro, lp, slack));
            checks.push(SandwichCheck::at_most("log_per <= n log 2 + r_o", lp, n * std::f64::consts::LN_2 + ro, slack));
        }
        if let Some(rp) = report.log_r_p {
            checks.push(SandwichCheck::at_most("log_per <= log_r_p", lp, rp, slack));
        }
        if let Some(rq) = report.log_r_q {
            checks.push(SandwichCheck::at_most("log_r_q <= log_per", rq, lp, slack));
        }
    }
    let tol = cfg.theorem_tol;
    if let Some(re) = report.r_e {
        if let Some(rc) = report.log_r_c {
            checks.push(SandwichCheck::equal("log_r_c == r_e", rc, re, tol));
        }
        if let Some(rp) = report.log_r_p {
            checks.push(SandwichCheck::equal("log_r_p == r_e", rp, re, tol));
        }
    }
    if let (Some(ro), Some(rq)) = (report.r_o, report.log_r_q) {
        checks.push(SandwichCheck::equal("log_r_q == r_o", rq, ro, tol));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate, GeneratorKind};

    fn all() -> RunConfig {
        RunConfig { relaxations: Relaxation::ALL.into_iter().collect(), ..RunConfig::default() }
    }

    #[test]
    fn ones_2x2_report() {
        let r = compute(&NonNegMatrix::ones(2), "file:j2.csv", &all()).unwrap();
        assert_eq!(r.per_exact, Some(2.0));
        assert!((r.r_o.unwrap().exp() - 1.0).abs() < 1e-9);
        assert!((r.r_e.unwrap().exp() - 4.0).abs() < 1e-9);
        assert!(r.sandwich_checks.iter().all(|c| c.holds), "{:#?}", r.sandwich_checks);
        assert_eq!(r.exit_code(), EXIT_OK);
    }

    #[test]
    fn identity_report() {
        let r = compute(&NonNegMatrix::identity(3), "gen:identity", &RunConfig::default()).unwrap();
        assert_eq!(r.per_exact, Some(1.0));
        for v in [r.r_e, r.log_r_c, r.r_o] {
            assert!(v.unwrap().abs() < 1e-10);
        }
        // R_P and R_Q are opt-in, and need positive entries anyway.
        let r = compute(&NonNegMatrix::identity(3), "gen:identity", &all()).unwrap();
        assert_eq!(r.skipped.len(), 2);
        assert_eq!(r.exit_code(), EXIT_OK);
    }

    #[test]
    fn zero_row_report() {
        let m = NonNegMatrix::validate(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let r = compute(&m, "file:zero.csv", &RunConfig::default()).unwrap();
        assert_eq!(r.per_exact, Some(0.0));
        assert_eq!(r.log_per, Some(f64::NEG_INFINITY));
        assert_eq!(r.r_e, Some(f64::NEG_INFINITY));
        assert_eq!(r.log_r_c, Some(f64::NEG_INFINITY));
        assert_eq!(r.r_o, Some(f64::NEG_INFINITY));
        assert!(r.sandwich_checks.is_empty());
        let json = r.to_json();
        assert!(json.contains("\"-inf\""));
        assert_eq!(BoundsReport::from_json(&json).unwrap(), r);
        assert_eq!(BoundsReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn round_trips_strip_nothing_numeric() {
        let m = generate(GeneratorKind::Uniform, 4, 9).unwrap();
        let r = compute(&m, "gen:uniform:4:9", &all()).unwrap();
        assert_eq!(BoundsReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(BoundsReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn reports_are_deterministic_apart_from_timings() {
        let m = generate(GeneratorKind::Exponential, 5, 4).unwrap();
        let mut a = compute(&m, "x", &all()).unwrap();
        let mut b = compute(&m, "x", &all()).unwrap();
        a.timings.clear();
        b.timings.clear();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::default();
        cfg.exact_threshold = 31;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig { bethe_tol: 0.0, ..RunConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert_eq!(RunConfig::default().sandwich_slack(), 100.0 * 1e-10);
    }

    #[test]
    fn exact_threshold_skips_permanent() {
        let cfg = RunConfig { exact_threshold: 3, ..RunConfig::default() };
        let r = compute(&NonNegMatrix::ones(4), "j4", &cfg).unwrap();
        assert_eq!(r.per_exact, None);
        assert_eq!(r.per_method, PermanentMethod::Skipped);
        assert!(r.sandwich_checks.iter().all(|c| c.name.contains("==")));
    }

    #[test]
    fn relaxation_parsing() {
        let set = Relaxation::parse_set("re, rq,RC").unwrap();
        assert_eq!(set.into_iter().collect::<Vec<_>>(), vec![Relaxation::Re, Relaxation::Rc, Relaxation::Rq]);
        assert!(Relaxation::parse_set("re,xx").is_err());
    }

    #[test]
    fn csv_quotes_ambiguous_strings() {
        for s in ["", "123", "true", "null", "\"q\"", "plain, with comma"] {
            let v = Value::String(s.to_string());
            assert_eq!(decode_scalar(&encode_scalar(&v)), v);
        }
    }
}
