//! The entropy relaxation
//!
//! ```text
//! R_E(A) = sup_{B in Omega_n} sum_{(i,j) in E} B_ij log(A_ij / B_ij)
//! ```
//!
//! and its Lagrangian dual, the capacity `R_C(A) = inf_{z>0} q_A(z) / prod z_i`
//! with `q_A(z) = prod_i sum_j A_ij z_j`. Setting the derivative of the
//! Lagrangian to zero gives `B_ij = A_ij exp(-1 - alpha_i - beta_j)`, so the
//! primal optimum is a diagonal scaling of `A` (computed by Sinkhorn), and
//! eliminating `alpha` in closed form leaves the reduced dual
//!
//! ```text
//! h(beta) = sum_i log(sum_j A_ij exp(-beta_j)) + sum_j beta_j
//! ```
//!
//! whose minimum is `log R_C(A) = R_E(A)`.

use serde::{Deserialize, Serialize};

use crate::birkhoff::{
    mirror_ascent, sinkhorn_scale, support_center, MirrorSettings, PolytopeObjective, PolytopeSolution,
};
use crate::diagnostics::{SolveDiagnostics, Stopwatch};
use crate::error::{Error, Result};
use crate::exact::{permanent, PermanentMethod};
use crate::matrix::{essential_support, DoublyStochasticMatrix, NonNegMatrix};

pub const DEFAULT_SINKHORN_TOL: f64 = 1e-10;
pub const DEFAULT_DUAL_TOL: f64 = 1e-8;
pub const DEFAULT_THEOREM_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 100_000;


/// `x log(a / x)` with the `0 log 0 = 0` convention.
#[inline]
pub(crate) fn xlog_ratio(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (a / x).ln()
    }
}

/// Objective of the entropy program at `B`; `-inf` when `B` puts mass
/// outside the support of `A`.
pub fn r_e_objective(m: &NonNegMatrix, b: &DoublyStochasticMatrix) -> f64 {
    r_e_objective_raw(m, b.entries())
}

pub(crate) fn r_e_objective_raw(m: &NonNegMatrix, b: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &x) in m.entries().iter().zip(b) {
        if x > 0.0 && a == 0.0 {
            return f64::NEG_INFINITY;
        }
        total += xlog_ratio(a, x);
    }
    total
}

/// Lagrange multipliers for the row (`alpha`) and column (`beta`) sum
/// constraints, gauge-fixed so that the last entry of `beta` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl DualPotentials {
    /// `A_ij exp(-1 - alpha_i - beta_j)`
    pub fn stationary_entry(&self, m: &NonNegMatrix, i: usize, j: usize) -> f64 {
        m.get(i, j) * (-1.0 - self.alpha[i] - self.beta[j]).exp()
    }
}

/// Full Lagrangian dual `g(alpha, beta) = sum A_ij e^{-1-alpha_i-beta_j} + sum alpha + sum beta`.
pub fn lagrangian_dual(m: &NonNegMatrix, potentials: &DualPotentials) -> f64 {
    let n = m.n();
    let mut total: f64 = potentials.alpha.iter().sum::<f64>() + potentials.beta.iter().sum::<f64>();
    for i in 0..n {
        for j in 0..n {
            total += potentials.stationary_entry(m, i, j);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSolution {
    pub b: DoublyStochasticMatrix,
    pub potentials: DualPotentials,
    pub value: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Maximises the entropy objective by scaling `A` to doubly stochastic form.
///
/// Edges that lie on no perfect matching carry zero mass in every point of
/// `Omega_n(A)`; they are dropped first so that the scaling converges
/// linearly. On those edges the stationarity relation holds only in the limit.
pub fn sinkhorn_solve(m: &NonNegMatrix, tol: f64, max_iters: usize) -> Result<SinkhornSolution> {
    let n = m.n();
    let essential = essential_support(m).ok_or(Error::NoPerfectMatching)?;
    let kernel = m.restricted_to(&essential);
    let scaling = sinkhorn_scale(n, kernel.entries(), tol, max_iters)?;
    let b = DoublyStochasticMatrix::certify(n, scaling.entries, tol)?;
    let last = scaling.col[n - 1].ln();
    let potentials = DualPotentials {
        alpha: scaling.row.iter().map(|r| -1.0 - r.ln() - last).collect(),
        beta: scaling.col.iter().map(|c| last - c.ln()).collect(),
    };
    let value = r_e_objective(m, &b);
    Ok(SinkhornSolution { b, potentials, value, diagnostics: scaling.diagnostics })
}

/// Largest deviation of `B` from `A_ij exp(-1 - alpha_i - beta_j)` over the
/// entries where `B` is positive.
pub fn stationarity_residual(m: &NonNegMatrix, solution: &SinkhornSolution) -> f64 {
    let n = m.n();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let b = solution.b.get(i, j);
            if b > 0.0 {
                worst = worst.max((b - solution.potentials.stationary_entry(m, i, j)).abs());
            }
        }
    }
    worst
}

struct EntropyObjective<'a> {
    m: &'a NonNegMatrix,
    support: Vec<bool>,
}

impl PolytopeObjective for EntropyObjective<'_> {
    fn n(&self) -> usize {
        self.m.n()
    }

    fn support(&self) -> &[bool] {
        &self.support
    }

    fn value(&self, b: &[f64]) -> f64 {
        r_e_objective_raw(self.m, b)
    }

    fn gradient(&self, b: &[f64], out: &mut [f64]) {
        for (k, g) in out.iter_mut().enumerate() {
            *g = if self.support[k] {
                (self.m.entries()[k] / b[k].max(f64::MIN_POSITIVE)).ln() - 1.0
            } else {
                0.0
            };
        }
    }
}

/// Entropic mirror ascent on the entropy objective, started from the
/// max-entropy point of the support and stopped on the Frank–Wolfe gap.
/// Independent of [`sinkhorn_solve`] apart from the KL projection.
pub fn mirror_ascent_r_e(m: &NonNegMatrix, tol: f64, max_iters: usize) -> Result<PolytopeSolution> {
    let n = m.n();
    let support = essential_support(m).ok_or(Error::NoPerfectMatching)?;
    let init = support_center(n, &support)?;
    let objective = EntropyObjective { m, support };
    let settings = MirrorSettings {
        initial_step: 0.5,
        max_step: 1.0,
        shrink: 0.5,
        sufficient_increase: 1e-4,
        tol,
        max_iters,
    };
    let out = mirror_ascent(&objective, init, settings)?;
    Ok(PolytopeSolution {
        b: DoublyStochasticMatrix::certify(n, out.b, crate::matrix::DEFAULT_CERTIFY_TOL)?,
        value: out.value,
        gap: out.gap,
        diagnostics: out.diagnostics,
        trace: out.trace,
    })
}

/// `log(q_A(z) / prod z_i)`; `-inf` when a row of `A` is zero.
pub fn log_capacity_primal(m: &NonNegMatrix, z: &[f64]) -> Result<f64> {
    let n = m.n();
    if z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.len() });
    }
    if let Some(k) = z.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveArgument(k));
    }
    let mut total = 0.0;
    for i in 0..n {
        let s: f64 = m.row(i).iter().zip(z).map(|(a, z)| a * z).sum();
        total += s.ln() - z[i].ln();
    }
    Ok(total)
}

/// `q_A(z) / prod z_i`, an upper bound on `R_C(A)` for every `z > 0`.
pub fn capacity_primal(m: &NonNegMatrix, z: &[f64]) -> Result<f64> {
    Ok(log_capacity_primal(m, z)?.exp())
}

fn check_rows(m: &NonNegMatrix, beta: &[f64]) -> Result<()> {
    let n = m.n();
    if beta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: beta.len() });
    }
    if let Some(i) = (0..n).find(|&i| m.row(i).iter().all(|&a| a == 0.0)) {
        return Err(Error::ZeroRow(i));
    }
    Ok(())
}

/// Stable `log sum_j A_ij exp(-beta_j)` for row `i`.
fn row_log_sum(m: &NonNegMatrix, i: usize, beta: &[f64]) -> f64 {
    let peak = m
        .row(i)
        .iter()
        .zip(beta)
        .filter(|(&a, _)| a > 0.0)
        .fold(f64::NEG_INFINITY, |acc, (&a, &b)| acc.max(a.ln() - b));
    let s: f64 = m
        .row(i)
        .iter()
        .zip(beta)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| (a.ln() - b - peak).exp())
        .sum();
    peak + s.ln()
}

/// The reduced dual `h(beta)`.
pub fn dual_h(m: &NonNegMatrix, beta: &[f64]) -> Result<f64> {
    check_rows(m, beta)?;
    Ok((0..m.n()).map(|i| row_log_sum(m, i, beta)).sum::<f64>() + beta.iter().sum::<f64>())
}

/// `dh/dbeta_k = 1 - sum_i A_ik e^{-beta_k} / sum_j A_ij e^{-beta_j}`.
pub fn dual_h_gradient(m: &NonNegMatrix, beta: &[f64]) -> Result<Vec<f64>> {
    check_rows(m, beta)?;
    let n = m.n();
    let mut grad = vec![1.0; n];
    for i in 0..n {
        let lse = row_log_sum(m, i, beta);
        for (k, g) in grad.iter_mut().enumerate() {
            let a = m.get(i, k);
            if a > 0.0 {
                *g -= (a.ln() - beta[k] - lse).exp();
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// `beta` minimises `h`; `alpha` is its closed-form partner
    /// `alpha_i = log(sum_j A_ij e^{-beta_j}) - 1`.
    pub potentials: DualPotentials,
    pub value: f64,
    pub gradient_norm: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Minimises `h` by gradient descent with Barzilai–Borwein trial steps and
/// Armijo backtracking, holding `beta_{n-1} = 0` (`h` is invariant under
/// adding a constant to every `beta_j`).
///
/// When some edges lie on no perfect matching the infimum is not attained;
/// those edges are dropped, which leaves the optimal value unchanged.
pub fn minimize_dual_h(m: &NonNegMatrix, tol: f64, max_iters: usize) -> Result<DualSolution> {
    let clock = Stopwatch::start();
    let n = m.n();
    let essential = essential_support(m).ok_or(Error::Unbounded)?;
    let reduced = m.restricted_to(&essential);
    let m = &reduced;

    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut beta = vec![0.0; n];
    let mut value = dual_h(m, &beta)?;
    let mut grad = dual_h_gradient(m, &beta)?;
    let mut step = 1.0;
    let mut iterations = 0;
    while norm(&grad) > tol && iterations < max_iters {
        iterations += 1;
        // Free coordinates only.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        dir[n - 1] = 0.0;
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let slack = 8.0 * f64::EPSILON * value.abs().max(1.0);
        let mut t = step;
        let mut next = None;
        while t > 1e-20 {
            let trial: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            let trial_value = dual_h(m, &trial)?;
            if trial_value <= value + 1e-4 * t * slope + slack {
                next = Some((trial, trial_value));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, trial_value)) = next else { break };
        let trial_grad = dual_h_gradient(m, &trial)?;
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..n - 1 {
            let s = trial[k] - beta[k];
            let y = trial_grad[k] - grad[k];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { (2.0 * t).min(1e10) };
        beta = trial;
        value = trial_value;
        grad = trial_grad;
    }
    let gradient_norm = norm(&grad);
    let converged = gradient_norm <= tol;
    let diagnostics = SolveDiagnostics::finish(&clock, iterations, gradient_norm, converged);
    if !converged {
        return Err(Error::NotConverged { solver: "dual gradient descent", diagnostics });
    }
    let alpha = (0..n).map(|i| row_log_sum(m, i, &beta) - 1.0).collect();
    Ok(DualSolution { potentials: DualPotentials { alpha, beta }, value, gradient_norm, diagnostics })
}

/// Outcome of checking `R_C = exp(R_E)` and `Per <= R_C <= e^n Per`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub n: usize,
    pub r_e: f64,
    pub log_r_c: f64,
    pub duality_gap: f64,
    pub log_per: Option<f64>,
    pub per_method: PermanentMethod,
    pub agreement_holds: bool,
    pub lower_holds: Option<bool>,
    pub upper_holds: Option<bool>,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.agreement_holds && self.lower_holds != Some(false) && self.upper_holds != Some(false)
    }
}

/// Largest `n` for which the verification routines compute an exact permanent.
pub const VERIFY_EXACT_LIMIT: usize = 20;

/// Solves both sides of the entropy/capacity duality and brackets the exact
/// permanent when it is affordable. `tol` is used both for the agreement and
/// as additive slack on the sandwich.
pub fn verify_theorem1(m: &NonNegMatrix, tol: f64) -> Result<Theorem1Report> {
    let n = m.n();
    let primal = sinkhorn_solve(m, DEFAULT_SINKHORN_TOL, DEFAULT_MAX_ITERS)?;
    let dual = minimize_dual_h(m, DEFAULT_DUAL_TOL, DEFAULT_MAX_ITERS)?;
    let (per, per_method) = permanent(m, VERIFY_EXACT_LIMIT)?;
    let log_per = per.map(f64::ln);
    let gap = (dual.value - primal.value).abs();
    Ok(Theorem1Report {
        n,
        r_e: primal.value,
        log_r_c: dual.value,
        duality_gap: gap,
        log_per,
        per_method,
        agreement_holds: gap <= tol,
        lower_holds: log_per.map(|lp| lp <= dual.value + tol),
        upper_holds: log_per.map(|lp| dual.value <= n as f64 + lp + tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate, GeneratorKind};

    fn mat(rows: &[&[f64]]) -> NonNegMatrix {
        NonNegMatrix::validate(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn objective_examples() {
        for n in 1..5 {
            let id = DoublyStochasticMatrix::identity(n);
            assert_eq!(r_e_objective(&NonNegMatrix::identity(n), &id), 0.0);
            let v = r_e_objective(&NonNegMatrix::ones(n), &DoublyStochasticMatrix::uniform(n));
            assert!((v - n as f64 * ln(n as f64)).abs() < 1e-14);
        }
        let a = mat(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let b = DoublyStochasticMatrix::certify(2, vec![2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0], 1e-15).unwrap();
        let want = (2.0 / 3.0) * ln(3.0) + (1.0 / 3.0) * ln(3.0) + (1.0 / 3.0) * ln(3.0) + (2.0 / 3.0) * ln(1.5);
        assert!((r_e_objective(&a, &b) - want).abs() < 1e-15);
        let off = DoublyStochasticMatrix::uniform(2);
        assert_eq!(r_e_objective(&NonNegMatrix::identity(2), &off), f64::NEG_INFINITY);
    }

    #[test]
    fn sinkhorn_examples() {
        let s = sinkhorn_solve(&NonNegMatrix::ones(2), 1e-12, 1000).unwrap();
        assert!(s.b.entries().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let s = sinkhorn_solve(&NonNegMatrix::identity(3), 1e-12, 1000).unwrap();
        assert_eq!(s.b.entries(), NonNegMatrix::identity(3).entries());
        let a = mat(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let s = sinkhorn_solve(&a, 1e-13, 1000).unwrap();
        // Golden section resolves a flat maximum only to ~sqrt(eps).
        let x = golden_section_2x2(&a);
        assert!((x - s.b.get(0, 0)).abs() < 1e-7);
        // Scaling preserves the cross ratio B00 B11 / (B01 B10) = 2, so x = 2 - sqrt 2.
        let x = 2.0 - 2f64.sqrt();
        for (b, w) in s.b.entries().iter().zip([x, 1.0 - x, 1.0 - x, x]) {
            assert!((b - w).abs() < 1e-12);
        }
        assert!(stationarity_residual(&a, &s) < 1e-12);
    }

    /// Independent oracle: Omega_2 is the segment [[x, 1-x], [1-x, x]], so
    /// maximise the objective over x by golden-section search.
    fn golden_section_2x2(a: &NonNegMatrix) -> f64 {
        let f = |x: f64| r_e_objective_raw(a, &[x, 1.0 - x, 1.0 - x, x]);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let x1 = hi - phi * (hi - lo);
            let x2 = lo + phi * (hi - lo);
            if f(x1) < f(x2) {
                lo = x1;
            } else {
                hi = x2;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sinkhorn_handles_partial_support() {
        let upper = mat(&[&[1.0, 3.0], &[0.0, 2.0]]);
        let s = sinkhorn_solve(&upper, 1e-12, 1000).unwrap();
        assert_eq!(s.b.entries(), &[1.0, 0.0, 0.0, 1.0]);
        assert!((s.value - 2f64.ln()).abs() < 1e-15);
        let dead = mat(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(sinkhorn_solve(&dead, 1e-12, 1000).unwrap_err(), Error::NoPerfectMatching);
    }

    #[test]
    fn capacity_examples() {
        for n in 1..6 {
            let c = capacity_primal(&NonNegMatrix::ones(n), &vec![1.0; n]).unwrap();
            assert!((c / (n as f64).powi(n as i32) - 1.0).abs() < 1e-12);
            let z: Vec<f64> = (1..=n).map(|k| k as f64 * 0.7).collect();
            assert!((capacity_primal(&NonNegMatrix::identity(n), &z).unwrap() - 1.0).abs() < 1e-12);
        }
        let a = mat(&[&[2.0, 1.0], &[1.0, 1.0]]);
        assert!((capacity_primal(&a, &[1.0, 1.0]).unwrap() - 6.0).abs() < 1e-12);
        assert!(matches!(capacity_primal(&a, &[1.0, 0.0]), Err(Error::NonPositiveArgument(1))));
    }

    #[test]
    fn dual_examples() {
        assert!((dual_h(&NonNegMatrix::ones(2), &[0.0, 0.0]).unwrap() - 2.0 * ln(2.0)).abs() < 1e-15);
        assert_eq!(dual_h(&NonNegMatrix::identity(4), &[0.0; 4]).unwrap(), 0.0);
        let zero_row = mat(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(dual_h(&zero_row, &[0.0, 0.0]), Err(Error::ZeroRow(1)));
        // h(beta) = log capacity at z = exp(-beta).
        let m = generate(GeneratorKind::Exponential, 5, 4).unwrap();
        let beta = [0.3, -1.2, 0.0, 2.5, -0.4];
        let z: Vec<f64> = beta.iter().map(|b: &f64| (-b).exp()).collect();
        let h = dual_h(&m, &beta).unwrap();
        assert!((h - log_capacity_primal(&m, &z).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dual_minimiser_examples() {
        for n in 2..7 {
            let d = minimize_dual_h(&NonNegMatrix::ones(n), 1e-10, 10_000).unwrap();
            assert!((d.value - n as f64 * ln(n as f64)).abs() < 1e-12);
            assert!(d.potentials.beta.iter().all(|b| b.abs() < 1e-9));
            let d = minimize_dual_h(&NonNegMatrix::identity(n), 1e-10, 10_000).unwrap();
            assert!(d.value.abs() < 1e-12);
        }
        let m = generate(GeneratorKind::Uniform, 5, 9).unwrap();
        let d = minimize_dual_h(&m, 1e-9, 100_000).unwrap();
        let mirror = mirror_ascent_r_e(&m, 1e-10, 10_000).unwrap();
        assert!((d.value - mirror.value).abs() <= 1e-6);
        assert_eq!(*d.potentials.beta.last().unwrap(), 0.0);
        let upper = mat(&[&[1.0, 3.0], &[0.0, 2.0]]);
        assert!((minimize_dual_h(&upper, 1e-9, 100).unwrap().value - 2f64.ln()).abs() < 1e-12);
        let none = mat(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(minimize_dual_h(&none, 1e-9, 100).unwrap_err(), Error::Unbounded);
    }

    #[test]
    fn mirror_examples() {
        let s = mirror_ascent_r_e(&NonNegMatrix::ones(3), 1e-10, 10_000).unwrap();
        assert!((s.value - 3.0 * ln(3.0)).abs() < 1e-7);
        let s = mirror_ascent_r_e(&NonNegMatrix::identity(4), 1e-10, 10_000).unwrap();
        assert!(s.value.abs() < 1e-9);
        let m = generate(GeneratorKind::Uniform, 6, 5).unwrap();
        let s = mirror_ascent_r_e(&m, 1e-10, 10_000).unwrap();
        let k = sinkhorn_solve(&m, 1e-12, 10_000).unwrap();
        assert!((s.value - k.value).abs() <= 1e-7);
    }

    #[test]
    fn lagrangian_at_stationary_point_equals_primal_value() {
        let m = generate(GeneratorKind::Uniform, 4, 1).unwrap();
        let s = sinkhorn_solve(&m, 1e-13, 10_000).unwrap();
        assert!((lagrangian_dual(&m, &s.potentials) - s.value).abs() < 1e-10);
    }

    #[test]
    fn theorem1_examples() {
        let r = verify_theorem1(&NonNegMatrix::ones(4), 1e-6).unwrap();
        assert!(r.passed());
        assert!((r.log_per.unwrap() - 24f64.ln()).abs() < 1e-12);
        assert!((r.log_r_c - 4.0 * 4f64.ln()).abs() < 1e-9);
        let r = verify_theorem1(&NonNegMatrix::identity(5), 1e-6).unwrap();
        assert!(r.passed() && r.log_r_c.abs() < 1e-10 && r.log_per == Some(0.0));
    }
}
