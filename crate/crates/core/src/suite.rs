//! Property suites over generated instances and the bound-factor table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bethe::{solve_r_o_mirror, verify_sandwich_r_o, DEFAULT_BETHE_TOL, SANDWICH_LIMIT};
use crate::entropy::{minimize_dual_h, verify_theorem1, DEFAULT_DUAL_TOL, DEFAULT_MAX_ITERS, DEFAULT_THEOREM_TOL};
use crate::error::{Error, Result};
use crate::exact::{
    edge_marginals, exact_program_objective, gibbs_distribution, heuristic_gap_report, permanent, permanent_naive,
    permanent_ryser, HEURISTIC_GAP_LIMIT, NAIVE_LIMIT, RYSER_LIMIT,
};
use crate::generate::{GenSpec, GeneratorKind};
use crate::matrix::{marginal_deviation, NonNegMatrix};
use crate::poly::{make_split, verify_theorems_2_3, SplitKind};
use crate::report::{real_map, EXIT_OK, EXIT_SOLVER, EXIT_VIOLATION};

/// Relative tolerance between the two exact permanent algorithms.
pub const ORACLE_TOL: f64 = 1e-12;
/// Absolute tolerance of the exact program at the Gibbs distribution.
pub const GIBBS_TOL: f64 = 1e-11;
pub const SANDWICH_SLACK: f64 = 1e-7;
pub const GAP_CERTIFICATE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Duality,
    Sandwich,
    Theorems,
    HeuristicGap,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Duality, Suite::Sandwich, Suite::Theorems, Suite::HeuristicGap, Suite::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Duality => "duality",
            Suite::Sandwich => "sandwich",
            Suite::Theorems => "theorems",
            Suite::HeuristicGap => "heuristic_gap",
            Suite::Oracle => "oracle",
        }
    }

    /// Default `(n_max, trials, seed)`.
    pub fn defaults(self) -> SuiteConfig {
        let (n_max, trials, seed) = match self {
            Suite::Duality => (10, 100, 7),
            Suite::Sandwich => (7, 100, 42),
            Suite::Theorems => (6, 50, 3),
            Suite::HeuristicGap => (6, 50, 5),
            Suite::Oracle => (8, 200, 1),
        };
        SuiteConfig { suite: self, n_max, trials, seed }
    }

    /// Largest admissible `n_max`.
    pub fn n_limit(self) -> usize {
        match self {
            Suite::Duality => RYSER_LIMIT,
            Suite::Sandwich => SANDWICH_LIMIT,
            Suite::Theorems => 12,
            Suite::HeuristicGap => HEURISTIC_GAP_LIMIT,
            Suite::Oracle => NAIVE_LIMIT,
        }
    }

    fn kinds(self) -> &'static [GeneratorKind] {
        const ALL: [GeneratorKind; 5] = [
            GeneratorKind::Uniform,
            GeneratorKind::Exponential,
            GeneratorKind::Sparse(0.5),
            GeneratorKind::Block,
            GeneratorKind::Binary,
        ];
        const POSITIVE: [GeneratorKind; 2] = [GeneratorKind::Uniform, GeneratorKind::Exponential];
        match self {
            Suite::Theorems => &POSITIVE,
            _ => &ALL,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub suite: Suite,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let limit = self.suite.n_limit();
        if self.n_max < 2 || self.n_max > limit {
            return Err(Error::Config(format!("--n-max for {} must lie in 2..={limit}, got {}", self.suite, self.n_max)));
        }
        if self.trials == 0 {
            return Err(Error::Config("--trials must be positive".into()));
        }
        Ok(())
    }
}

/// Instances drawn for a suite, in trial order.
pub fn plan(cfg: &SuiteConfig) -> Result<Vec<GenSpec>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kinds = cfg.suite.kinds();
    Ok((0..cfg.trials)
        .map(|_| GenSpec {
            kind: kinds[rng.gen_range(0..kinds.len())],
            n: rng.gen_range(2..=cfg.n_max),
            seed: rng.gen_range(0..1_000_000),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pass,
    Fail,
    /// A solver or generator error.
    Error,
    /// Out of scope for the property, e.g. an undefined product form.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub instance: String,
    pub n: usize,
    pub status: TrialStatus,
    #[serde(with = "real_map")]
    pub metrics: BTreeMap<String, f64>,
    pub message: Option<String>,
}

impl fmt::Display for TrialOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            TrialStatus::Pass => "PASS",
            TrialStatus::Fail => "FAIL",
            TrialStatus::Error => "ERROR",
            TrialStatus::Excluded => "EXCLUDED",
        };
        write!(f, "[{:>4}] {status:<8} {}", self.index, self.instance)?;
        for (k, v) in &self.metrics {
            write!(f, " {k}={v:.3e}")?;
        }
        if let Some(m) = &self.message {
            write!(f, " ({m})")?;
        }
        Ok(())
    }
}

pub fn run_trial(suite: Suite, index: usize, spec: &GenSpec) -> TrialOutcome {
    let mut metrics = BTreeMap::new();
    let result = spec.generate().and_then(|m| check(suite, &m, &mut metrics));
    let (status, message) = match result {
        Ok(Verdict::Pass) => (TrialStatus::Pass, None),
        Ok(Verdict::Fail(why)) => (TrialStatus::Fail, Some(why)),
        Ok(Verdict::Excluded(why)) => (TrialStatus::Excluded, Some(why)),
        Err(e) => (TrialStatus::Error, Some(e.to_string())),
    };
    TrialOutcome { index, instance: format!("gen:{spec}"), n: spec.n, status, metrics, message }
}

enum Verdict {
    Pass,
    Fail(String),
    Excluded(String),
}

fn verdict(failures: Vec<&str>) -> Verdict {
    if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(failures.join(", "))
    }
}

fn check(suite: Suite, m: &NonNegMatrix, metrics: &mut BTreeMap<String, f64>) -> Result<Verdict> {
    let n = m.n() as f64;
    let mut failed = Vec::new();
    match suite {
        Suite::Oracle => {
            let naive = permanent_naive(m)?;
            let ryser = permanent_ryser(m)?;
            let rel = if naive == 0.0 { ryser.abs() } else { ((ryser - naive) / naive).abs() };
            metrics.insert("ryser_rel_err".into(), rel);
            if rel > ORACLE_TOL {
                failed.push("ryser != naive");
            }
            let gibbs = gibbs_distribution(m)?;
            let err = (exact_program_objective(m, &gibbs)? - naive.ln()).abs();
            metrics.insert("gibbs_obj_err".into(), err);
            if err > GIBBS_TOL {
                failed.push("exact program at Gibbs != log Per");
            }
            let dev = marginal_deviation(m.n(), edge_marginals(&gibbs).entries());
            metrics.insert("marginal_dev".into(), dev);
            if dev > 1e-10 {
                failed.push("marginals not doubly stochastic");
            }
        }
        Suite::Duality => {
            let r = verify_theorem1(m, DEFAULT_THEOREM_TOL)?;
            metrics.insert("duality_gap".into(), r.duality_gap);
            if let Some(lp) = r.log_per {
                metrics.insert("log_rc_minus_log_per".into(), r.log_r_c - lp);
            }
            if !r.agreement_holds {
                failed.push("log R_C != R_E");
            }
            if r.lower_holds == Some(false) || r.upper_holds == Some(false) {
                failed.push("capacity sandwich violated");
            }
        }
        Suite::Sandwich => {
            let (per, _) = permanent(m, SANDWICH_LIMIT)?;
            let log_per = per.expect("n within sandwich limit").ln();
            let rc = minimize_dual_h(m, DEFAULT_DUAL_TOL, DEFAULT_MAX_ITERS)?.value;
            let excess = rc - log_per;
            metrics.insert("log_rc_minus_log_per".into(), excess);
            if excess < -SANDWICH_SLACK || excess > n + SANDWICH_SLACK {
                failed.push("capacity sandwich violated");
            }
            let r = verify_sandwich_r_o(m, SANDWICH_SLACK)?;
            metrics.insert("log_per_minus_r_o".into(), r.log_per - r.r_o);
            metrics.insert("fw_gap".into(), r.gap);
            if !r.passed() {
                failed.push("Bethe sandwich violated");
            }
            if r.gap > GAP_CERTIFICATE {
                failed.push("Frank-Wolfe gap too large");
            }
        }
        Suite::Theorems => {
            let t1 = verify_theorem1(m, DEFAULT_THEOREM_TOL)?;
            metrics.insert("theorem1_gap".into(), t1.duality_gap);
            if !t1.passed() {
                failed.push("log R_C != R_E");
            }
            let base = m.entries().iter().map(|x| x.to_bits()).fold(0u64, |a, b| a.rotate_left(7) ^ b);
            let splits = [SplitKind::Sqrt, SplitKind::Random(base), SplitKind::Random(base ^ 0x9e37_79b9)]
                .into_iter()
                .map(|k| make_split(m, k))
                .collect::<Result<Vec<_>>>()?;
            let r = verify_theorems_2_3(m, &splits, 1e-10, DEFAULT_BETHE_TOL, DEFAULT_THEOREM_TOL)?;
            let worst_p = r.splits.iter().map(|s| (s.log_r_p - r.r_e).abs()).fold(0.0, f64::max);
            let worst_q = r.splits.iter().map(|s| (s.log_r_q - r.r_o).abs()).fold(0.0, f64::max);
            metrics.insert("log_rp_minus_r_e".into(), worst_p);
            metrics.insert("log_rq_minus_r_o".into(), worst_q);
            metrics.insert("split_spread".into(), r.r_p_spread.max(r.r_q_spread));
            if !r.passed() {
                failed.push("polynomial relaxation mismatch");
            }
            if r.r_p_spread > DEFAULT_THEOREM_TOL || r.r_q_spread > DEFAULT_THEOREM_TOL {
                failed.push("split dependence");
            }
        }
        Suite::HeuristicGap => {
            let r = heuristic_gap_report(m)?;
            metrics.insert("tree_product_kl".into(), r.tree_product_kl);
            metrics.insert("odd_ratio_kl".into(), r.odd_ratio_kl);
            if r.odd_ratio_kl.is_infinite() {
                return Ok(Verdict::Excluded("odd-ratio form undefined".into()));
            }
            if !(r.tree_product_kl >= 0.0 && r.odd_ratio_kl >= 0.0) {
                failed.push("negative KL");
            }
            if r.matchings == 1 && (r.tree_product_kl != 0.0 || r.odd_ratio_kl != 0.0) {
                failed.push("nonzero KL for a single matching");
            }
        }
    }
    Ok(verdict(failed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub config: SuiteConfig,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub excluded: usize,
    pub outcomes: Vec<TrialOutcome>,
}

impl SuiteSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 {
            EXIT_VIOLATION
        } else if self.errors > 0 {
            EXIT_SOLVER
        } else {
            EXIT_OK
        }
    }

    pub fn headline(&self) -> String {
        let c = &self.config;
        format!(
            "{}: {}/{} passed, {} failed, {} errors, {} excluded (n_max={}, seed={})",
            c.suite,
            self.passed,
            c.trials - self.excluded,
            self.failed,
            self.errors,
            self.excluded,
            c.n_max,
            c.seed
        )
    }
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Results keep the order of `items`.
pub fn map_ordered<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteSummary> {
    let specs = plan(cfg)?;
    let suite = cfg.suite;
    let outcomes = map_ordered(specs.into_iter().enumerate().collect(), |(i, spec)| run_trial(suite, i, &spec));
    let count = |s| outcomes.iter().filter(|o| o.status == s).count();
    Ok(SuiteSummary {
        config: *cfg,
        passed: count(TrialStatus::Pass),
        failed: count(TrialStatus::Fail),
        errors: count(TrialStatus::Error),
        excluded: count(TrialStatus::Excluded),
        outcomes,
    })
}

/// One line of the bound-factor table. Ratios are `log(R_C/Per)/n` and
/// `log(Per/exp(R_O))/(n log 2)`; both are at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n: usize,
    pub instances: String,
    pub trials: usize,
    pub mean_capacity_ratio: f64,
    pub max_capacity_ratio: f64,
    pub mean_bethe_ratio: f64,
    pub max_bethe_ratio: f64,
}

/// Both normalised bound factors for one instance.
pub fn bound_ratios(m: &NonNegMatrix, exact_threshold: usize) -> Result<(f64, f64)> {
    let n = m.n();
    let (per, _) = permanent(m, exact_threshold)?;
    let log_per = per.ok_or(Error::TooLarge { what: "bound table", n, limit: exact_threshold })?.ln();
    let rc = minimize_dual_h(m, DEFAULT_DUAL_TOL, DEFAULT_MAX_ITERS)?.value;
    let ro = solve_r_o_mirror(m, DEFAULT_BETHE_TOL, DEFAULT_MAX_ITERS)?.value;
    let nf = n as f64;
    Ok(((rc - log_per) / nf, (log_per - ro) / (nf * std::f64::consts::LN_2)))
}

/// Rows for random uniform instances plus the all-ones and identity
/// references, for every `n` in `ns`.
pub fn table(ns: &[usize], trials: usize, seed: u64, exact_threshold: usize) -> Result<Vec<TableRow>> {
    if trials == 0 {
        return Err(Error::Config("--trials must be positive".into()));
    }
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > exact_threshold.min(RYSER_LIMIT)) {
        return Err(Error::Config(format!("n = {n} outside 1..={}", exact_threshold.min(RYSER_LIMIT))));
    }
    let mut jobs = Vec::new();
    for (row, &n) in ns.iter().enumerate() {
        for t in 0..trials {
            let s = seed.wrapping_mul(1_000_003).wrapping_add((row * trials + t) as u64);
            jobs.push((row, "uniform", GenSpec { kind: GeneratorKind::Uniform, n, seed: s }));
        }
    }
    let results = map_ordered(jobs, |(row, label, spec)| {
        spec.generate().and_then(|m| bound_ratios(&m, exact_threshold)).map(|r| (row, label, r))
    });
    let mut per_row: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ns.len()];
    for r in results {
        let (row, _, ratios) = r?;
        per_row[row].push(ratios);
    }
    let mut rows = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        rows.push(aggregate(n, "uniform", &per_row[i]));
        rows.push(aggregate(n, "ones", &[bound_ratios(&NonNegMatrix::ones(n), exact_threshold)?]));
        rows.push(aggregate(n, "identity", &[bound_ratios(&NonNegMatrix::identity(n), exact_threshold)?]));
    }
    Ok(rows)
}

fn aggregate(n: usize, label: &str, ratios: &[(f64, f64)]) -> TableRow {
    let k = ratios.len() as f64;
    TableRow {
        n,
        instances: label.into(),
        trials: ratios.len(),
        mean_capacity_ratio: ratios.iter().map(|r| r.0).sum::<f64>() / k,
        max_capacity_ratio: ratios.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        mean_bethe_ratio: ratios.iter().map(|r| r.1).sum::<f64>() / k,
        max_bethe_ratio: ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn table_to_csv(rows: &[TableRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn plan_is_deterministic_and_in_range() {
        let cfg = SuiteConfig { suite: Suite::Oracle, n_max: 5, trials: 30, seed: 9 };
        let a = plan(&cfg).unwrap();
        assert_eq!(a, plan(&cfg).unwrap());
        assert!(a.iter().all(|s| (2..=5).contains(&s.n)));
        let other = plan(&SuiteConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn config_out_of_range() {
        let cfg = SuiteConfig { suite: Suite::Sandwich, n_max: 8, trials: 1, seed: 0 };
        assert!(matches!(plan(&cfg), Err(Error::Config(_))));
        let cfg = SuiteConfig { suite: Suite::Oracle, n_max: 4, trials: 0, seed: 0 };
        assert!(matches!(plan(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn small_suites_pass() {
        for suite in Suite::ALL {
            let cfg = SuiteConfig { suite, n_max: 5, trials: 12, seed: 11 };
            let s = run_suite(&cfg).unwrap();
            assert_eq!(s.failed + s.errors, 0, "{}\n{:#?}", s.headline(), s.outcomes);
            assert_eq!(s.outcomes.iter().map(|o| o.index).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn table_reference_rows() {
        let rows = table(&[2, 3, 4], 3, 1, 20).unwrap();
        assert_eq!(rows.len(), 9);
        for r in &rows {
            assert!(r.max_capacity_ratio <= 1.0 && r.max_bethe_ratio <= 1.0, "{r:?}");
        }
        let ones4 = rows.iter().find(|r| r.n == 4 && r.instances == "ones").unwrap();
        let want = (4.0 * 4f64.ln() - 24f64.ln()) / 4.0;
        assert!((ones4.mean_capacity_ratio - want).abs() < 1e-8);
        let id = rows.iter().find(|r| r.n == 3 && r.instances == "identity").unwrap();
        assert!(id.max_capacity_ratio.abs() < 1e-10 && id.max_bethe_ratio.abs() < 1e-10);
        let csv = table_to_csv(&rows);
        assert!(csv.starts_with("n,instances,trials,mean_capacity_ratio"));
        assert!(matches!(table(&[21], 1, 0, 20), Err(Error::Config(_))));
    }
}
