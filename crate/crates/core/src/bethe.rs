//! The Bethe relaxation
//!
//! ```text
//! R_O(A) = sup_{B in Omega_n} sum_E B_ij log(A_ij / B_ij) + sum_E (1 - B_ij) log(1 - B_ij)
//! ```
//!
//! The objective is not concave on all of `[0, 1]^{n x n}` but it is on the
//! Birkhoff polytope, so first-order methods over `Omega_n(A)` find the
//! global optimum and the Frank–Wolfe gap certifies it. `exp(R_O)` is a lower
//! bound on the permanent, within a factor `2^n`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::birkhoff::{
    frank_wolfe_gap, mirror_ascent, sinkhorn_scale, support_center, MirrorSettings, PolytopeObjective,
    PolytopeSolution, PROJECTION_MAX_ITERS, PROJECTION_TOL,
};
use crate::diagnostics::{SolveDiagnostics, Stopwatch};
use crate::entropy::xlog_ratio;
use crate::error::{Error, Result};
use crate::exact::{permanent, PermanentMethod};
use crate::matrix::{essential_support, DoublyStochasticMatrix, NonNegMatrix, DEFAULT_CERTIFY_TOL};

pub const DEFAULT_BETHE_TOL: f64 = 1e-9;
pub const SANDWICH_LIMIT: usize = 7;

#[inline]
fn one_minus_entropy(x: f64) -> f64 {
    let y = 1.0 - x;
    if y <= 0.0 {
        0.0
    } else {
        y * y.ln()
    }
}

pub fn r_o_objective(m: &NonNegMatrix, b: &DoublyStochasticMatrix) -> f64 {
    r_o_objective_raw(m, b.entries())
}

pub(crate) fn r_o_objective_raw(m: &NonNegMatrix, b: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((&a, &x), &s) in m.entries().iter().zip(b).zip(m.support()) {
        if !s {
            if x > 0.0 {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        total += xlog_ratio(a, x) + one_minus_entropy(x);
    }
    total
}

#[inline]
fn gradient_entry(a: f64, x: f64) -> f64 {
    (a / x).ln() - (1.0 - x).ln() - 2.0
}

/// Entrywise derivative `log(A_ij / B_ij) - log(1 - B_ij) - 2` on the
/// support; zero elsewhere. Requires `0 < B_ij < 1` on the support.
pub fn r_o_gradient(m: &NonNegMatrix, b: &DoublyStochasticMatrix) -> Result<Vec<f64>> {
    let n = m.n();
    if b.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.n() });
    }
    let mut out = vec![0.0; n * n];
    for (k, g) in out.iter_mut().enumerate() {
        if !m.support()[k] {
            continue;
        }
        let x = b.entries()[k];
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Boundary { row: k / n, col: k % n });
        }
        *g = gradient_entry(m.entries()[k], x);
    }
    Ok(out)
}

struct BetheObjective<'a> {
    m: &'a NonNegMatrix,
    support: Vec<bool>,
    /// Edges that are the only essential edge of their row. They equal one at
    /// every feasible point, where the gradient diverges; it is reported as
    /// zero, which changes nothing on the polytope.
    forced: Vec<bool>,
}

impl<'a> BetheObjective<'a> {
    fn new(m: &'a NonNegMatrix) -> Result<Self> {
        let n = m.n();
        let support = essential_support(m).ok_or(Error::NoPerfectMatching)?;
        let mut forced = vec![false; n * n];
        for i in 0..n {
            let row = &support[i * n..(i + 1) * n];
            if row.iter().filter(|&&s| s).count() == 1 {
                forced[i * n + row.iter().position(|&s| s).unwrap()] = true;
            }
        }
        Ok(BetheObjective { m, support, forced })
    }
}

impl BetheObjective<'_> {
    /// Exact gradient given `complement[k] = 1 - b[k]`, floored at the
    /// smallest positive double so that it stays finite.
    fn gradient_with_complement(&self, b: &[f64], complement: &[f64], out: &mut [f64]) {
        for (k, g) in out.iter_mut().enumerate() {
            *g = if self.support[k] && !self.forced[k] {
                let x = b[k].max(f64::MIN_POSITIVE);
                let y = complement[k].max(f64::MIN_POSITIVE);
                (self.m.entries()[k] / x).ln() - y.ln() - 2.0
            } else {
                0.0
            };
        }
    }
}

impl PolytopeObjective for BetheObjective<'_> {
    fn n(&self) -> usize {
        self.m.n()
    }

    fn support(&self) -> &[bool] {
        &self.support
    }

    fn value(&self, b: &[f64]) -> f64 {
        r_o_objective_raw(self.m, b)
    }

    /// Near one, `1 - B_ij` is taken as the rest of row `i`, which keeps
    /// its relative accuracy where the subtraction would cancel.
    fn gradient(&self, b: &[f64], out: &mut [f64]) {
        let n = self.m.n();
        let mut complement = vec![0.0; n * n];
        for i in 0..n {
            let row = &b[i * n..(i + 1) * n];
            let total: f64 = row.iter().sum();
            for j in 0..n {
                let x = row[j];
                complement[i * n + j] = if x > 0.5 {
                    row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &y)| y).sum()
                } else {
                    total - x
                };
            }
        }
        self.gradient_with_complement(b, &complement, out);
    }
}

fn finish(n: usize, b: Vec<f64>, value: f64, gap: f64, diagnostics: SolveDiagnostics, trace: Vec<f64>) -> Result<PolytopeSolution> {
    Ok(PolytopeSolution { b: DoublyStochasticMatrix::certify(n, b, DEFAULT_CERTIFY_TOL)?, value, gap, diagnostics, trace })
}

/// Entropic mirror ascent started at the Sinkhorn scaling of `A`, with Armijo
/// backtracking from a unit step; stops once the Frank–Wolfe gap is at most
/// `tol`.
pub fn solve_r_o_mirror(m: &NonNegMatrix, tol: f64, max_iters: usize) -> Result<PolytopeSolution> {
    let n = m.n();
    let objective = BetheObjective::new(m)?;
    let kernel = m.restricted_to(&objective.support);
    let init = sinkhorn_scale(n, kernel.entries(), PROJECTION_TOL, PROJECTION_MAX_ITERS)?.entries;
    let settings = MirrorSettings {
        initial_step: 1.0,
        max_step: 1.0,
        shrink: 0.5,
        sufficient_increase: 1e-4,
        tol,
        max_iters,
    };
    let out = mirror_ascent(&objective, init, settings)?;
    finish(n, out.b, out.value, out.gap, out.diagnostics, out.trace)
}

/// One atom of the iterate: the face centre or a permutation matrix.
/// Iterate of the pairwise solver: a weighted face centre plus weighted
/// permutation matrices.
struct ActiveSet {
    centre: Vec<f64>,
    centre_weight: f64,
    vertices: BTreeMap<Vec<usize>, f64>,
}

impl ActiveSet {
    /// Writes `b` and `1 - b`. Every atom has unit row sums, so an entry
    /// above one half has complement equal to the rest of its row, which
    /// keeps small complements accurate to relative rounding.
    fn assemble(&self, n: usize, b: &mut [f64], complement: &mut [f64]) {
        for (x, c) in b.iter_mut().zip(&self.centre) {
            *x = self.centre_weight * c;
        }
        for (perm, &w) in &self.vertices {
            for (i, &j) in perm.iter().enumerate() {
                b[i * n + j] += w;
            }
        }
        for i in 0..n {
            let row = &b[i * n..(i + 1) * n];
            for j in 0..n {
                complement[i * n + j] = if row[j] > 0.5 {
                    row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &y)| y).sum()
                } else {
                    1.0 - row[j]
                };
            }
        }
    }
}

fn directional(grad: &[f64], dir: &[f64], support: &[bool]) -> f64 {
    grad.iter().zip(dir).zip(support).filter(|(_, &s)| s).map(|((g, d), _)| g * d).sum()
}

/// Pairwise Frank–Wolfe from the centre of the support face: each step moves
/// weight from the worst atom of the current convex combination to the
/// linear-maximisation vertex, with an exact line search. The returned gap
/// certifies the value to within `tol`.
pub fn solve_r_o_fw(m: &NonNegMatrix, tol: f64, max_iters: usize) -> Result<PolytopeSolution> {
    let clock = Stopwatch::start();
    let n = m.n();
    let objective = BetheObjective::new(m)?;
    let support = objective.support.clone();
    let mut active = ActiveSet { centre: support_center(n, &support)?, centre_weight: 1.0, vertices: BTreeMap::new() };
    let mut b = vec![0.0; n * n];
    let mut complement = vec![0.0; n * n];
    active.assemble(n, &mut b, &mut complement);
    let mut grad = vec![0.0; n * n];
    let mut gap = f64::INFINITY;
    let mut trace = vec![objective.value(&b)];
    let mut iterations = 0;
    while iterations < max_iters {
        objective.gradient_with_complement(&b, &complement, &mut grad);
        let (g, vertex) = frank_wolfe_gap(n, &grad, &b, &support)?;
        gap = g;
        if gap <= tol {
            break;
        }
        iterations += 1;
        let mut target = vec![0.0; n * n];
        for (i, &j) in vertex.permutation.iter().enumerate() {
            target[i * n + j] = 1.0;
        }
        // Away atom: the one with the smallest linearised value; `None` is
        // the centre.
        let mut away: Option<&Vec<usize>> = None;
        let mut away_weight = active.centre_weight;
        let mut away_score = if active.centre_weight > 0.0 { directional(&grad, &active.centre, &support) } else { f64::INFINITY };
        for (perm, &w) in &active.vertices {
            let score: f64 = perm.iter().enumerate().map(|(i, &j)| grad[i * n + j]).sum();
            if score < away_score {
                away = Some(perm);
                away_weight = w;
                away_score = score;
            }
        }
        let away = away.cloned();
        let mut away_dir = target.clone();
        match &away {
            Some(perm) => perm.iter().enumerate().for_each(|(i, &j)| away_dir[i * n + j] -= 1.0),
            None => away_dir.iter_mut().zip(&active.centre).for_each(|(d, c)| *d -= c),
        }
        let pairwise_gain = away_weight * directional(&grad, &away_dir, &support);
        // A pairwise step out of a nearly empty atom gains next to nothing;
        // take a plain step towards the vertex instead.
        let pairwise = pairwise_gain >= 1e-3 * gap;
        let (dir, limit) = if pairwise {
            (away_dir, away_weight)
        } else {
            (target.iter().zip(&b).map(|(t, x)| t - x).collect(), 1.0)
        };
        // The objective is concave along the segment, so bisect on the sign
        // of the directional derivative. Moving entries are formed from the
        // current entries and complements so neither rounds to an endpoint.
        let slope = |t: f64| {
            let mut total = 0.0;
            for k in (0..n * n).filter(|&k| support[k] && !objective.forced[k] && dir[k] != 0.0) {
                let x = b[k] + t * dir[k];
                let y = complement[k] - t * dir[k];
                total += ((m.entries()[k] / x).ln() - y.ln() - 2.0) * dir[k];
            }
            total
        };
        let step = if slope(limit) >= 0.0 {
            limit
        } else {
            // Near the boundary the best step can be many orders of magnitude
            // below the limit, so bracket it by halving first.
            let mut hi = limit;
            while hi > 0.0 && !(slope(0.5 * hi) > 0.0) {
                hi *= 0.5;
            }
            let mut lo = 0.5 * hi;
            if !(slope(lo) > 0.0) {
                lo = 0.0;
            }
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if step <= 0.0 {
            break;
        }
        if pairwise {
            let left = if step == limit { 0.0 } else { away_weight - step };
            match &away {
                Some(perm) => {
                    active.vertices.insert(perm.clone(), left);
                }
                None => active.centre_weight = left,
            }
        } else {
            active.centre_weight *= 1.0 - step;
            active.vertices.values_mut().for_each(|w| *w *= 1.0 - step);
        }
        *active.vertices.entry(vertex.permutation).or_insert(0.0) += step;
        active.vertices.retain(|_, w| *w > 0.0);
        active.assemble(n, &mut b, &mut complement);
        trace.push(objective.value(&b));
    }
    let converged = gap <= tol;
    let diagnostics = SolveDiagnostics::finish(&clock, iterations, gap, converged);
    if !converged {
        return Err(Error::NotConverged { solver: "frank-wolfe", diagnostics });
    }
    let value = objective.value(&b);
    finish(n, b, value, gap, diagnostics, trace)
}

/// Outcome of checking `exp(R_O) <= Per <= 2^n exp(R_O)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub n: usize,
    pub r_o: f64,
    pub gap: f64,
    pub log_per: f64,
    pub per_method: PermanentMethod,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// Solves the Bethe program by mirror ascent and brackets the exact
/// permanent with additive slack `tol`.
pub fn verify_sandwich_r_o(m: &NonNegMatrix, tol: f64) -> Result<SandwichReport> {
    let n = m.n();
    if n > SANDWICH_LIMIT {
        return Err(Error::TooLarge { what: "Bethe sandwich check", n, limit: SANDWICH_LIMIT });
    }
    let (per, per_method) = permanent(m, SANDWICH_LIMIT)?;
    let log_per = per.expect("within exact threshold").ln();
    let solution = solve_r_o_mirror(m, DEFAULT_BETHE_TOL, 100_000)?;
    let r_o = solution.value;
    Ok(SandwichReport {
        n,
        r_o,
        gap: solution.gap,
        log_per,
        per_method,
        lower_holds: r_o <= log_per + tol,
        upper_holds: log_per <= n as f64 * std::f64::consts::LN_2 + r_o + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate, GeneratorKind};

    fn closed_form_ones(n: usize) -> f64 {
        let n = n as f64;
        n * n.ln() + n * (n - 1.0) * ((n - 1.0) / n).ln()
    }

    #[test]
    fn objective_examples() {
        for n in 1..5 {
            let v = r_o_objective(&NonNegMatrix::identity(n), &DoublyStochasticMatrix::identity(n));
            assert_eq!(v, 0.0);
        }
        let v = r_o_objective(&NonNegMatrix::ones(2), &DoublyStochasticMatrix::uniform(2));
        assert!(v.abs() < 1e-15);
        for n in 2..6 {
            let v = r_o_objective(&NonNegMatrix::ones(n), &DoublyStochasticMatrix::uniform(n));
            assert!((v - closed_form_ones(n)).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_examples() {
        let g = r_o_gradient(&NonNegMatrix::ones(2), &DoublyStochasticMatrix::uniform(2)).unwrap();
        assert!(g.iter().all(|&x| (x - g[0]).abs() < 1e-15));
        let r = r_o_gradient(&NonNegMatrix::ones(2), &DoublyStochasticMatrix::identity(2));
        assert!(matches!(r, Err(Error::Boundary { .. })));
        // Near the boundary the entries blow up.
        let eps = 1e-9;
        let b = DoublyStochasticMatrix::certify(2, vec![1.0 - eps, eps, eps, 1.0 - eps], 1e-12).unwrap();
        let g = r_o_gradient(&NonNegMatrix::ones(2), &b).unwrap();
        assert!(g[0] > 15.0 && g[1] > 15.0);
    }

    #[test]
    fn mirror_examples() {
        let s = solve_r_o_mirror(&NonNegMatrix::ones(3), 1e-10, 10_000).unwrap();
        assert!((s.value - closed_form_ones(3)).abs() < 1e-6);
        let s = solve_r_o_mirror(&NonNegMatrix::identity(4), 1e-10, 10_000).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.b.entries(), NonNegMatrix::identity(4).entries());
        let m = generate(GeneratorKind::Uniform, 6, 13).unwrap();
        let a = solve_r_o_mirror(&m, 1e-9, 10_000).unwrap();
        let b = solve_r_o_fw(&m, 1e-7, 1_000_000).unwrap();
        assert!((a.value - b.value).abs() <= 1e-5, "{} {}", a.value, b.value);
    }

    #[test]
    fn fw_examples() {
        let s = solve_r_o_fw(&NonNegMatrix::ones(2), 1e-9, 1000).unwrap();
        assert!(s.value.abs() < 1e-7);
        let s = solve_r_o_fw(&NonNegMatrix::identity(5), 1e-9, 1000).unwrap();
        assert_eq!(s.diagnostics.iterations, 0);
        let m = generate(GeneratorKind::Uniform, 5, 21).unwrap();
        let s = solve_r_o_fw(&m, 1e-7, 1_000_000).unwrap();
        assert!(s.gap <= 1e-7);
    }

    #[test]
    fn sandwich_examples() {
        let r = verify_sandwich_r_o(&NonNegMatrix::ones(2), 1e-7).unwrap();
        assert!(r.passed() && r.r_o.abs() < 1e-9);
        let r = verify_sandwich_r_o(&NonNegMatrix::identity(5), 1e-7).unwrap();
        assert!(r.passed() && r.r_o == 0.0 && r.log_per == 0.0);
        assert!(verify_sandwich_r_o(&NonNegMatrix::ones(8), 1e-7).is_err());
    }
}
