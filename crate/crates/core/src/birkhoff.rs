//! Machinery shared by the solvers that work over `Omega_n(A)`: diagonal
//! scaling of a kernel onto the polytope (the KL projection), the
//! Frank–Wolfe duality gap, and entropic mirror ascent.

use nalgebra::{DMatrix, DVector};

use crate::assignment::{assignment_lmo, AssignmentSolution};
use crate::diagnostics::{SolveDiagnostics, Stopwatch};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::matrix::{essential_mask, marginal_deviation, DoublyStochasticMatrix};

/// Result of a first-order solve over the Birkhoff polytope, with its
/// Frank–Wolfe gap certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSolution {
    pub b: DoublyStochasticMatrix,
    pub value: f64,
    pub gap: f64,
    pub diagnostics: SolveDiagnostics,
    /// Objective after each accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

/// Tolerance for the KL projection performed inside mirror ascent.
pub(crate) const PROJECTION_TOL: f64 = 1e-13;
pub(crate) const PROJECTION_MAX_ITERS: usize = 200_000;

/// Diagonal scaling `diag(row) * kernel * diag(col)` of a non-negative kernel.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub entries: Vec<f64>,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Alternating row/column normalisation. Entries on no perfect matching of
/// the kernel's support vanish in the limit; they are zeroed up front, which
/// leaves a kernel with total support and linear convergence. Stops when
/// every row and column sum of the scaled matrix is within `tol` of one.
pub(crate) fn sinkhorn_scale(n: usize, kernel: &[f64], tol: f64, max_iters: usize) -> Result<Scaling> {
    let clock = Stopwatch::start();
    let peak = kernel.iter().fold(0.0f64, |a, &b| a.max(b));
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::NoPerfectMatching);
    }
    let adjacency: Vec<bool> = kernel.iter().map(|&x| x > 0.0).collect();
    let essential = essential_mask(n, &adjacency).ok_or(Error::NoPerfectMatching)?;
    let k: Vec<f64> = kernel.iter().zip(&essential).map(|(&x, &e)| if e { x / peak } else { 0.0 }).collect();
    let mut row = vec![1.0; n];
    let mut col = vec![1.0; n];
    let mut entries = vec![0.0; n * n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let s: f64 = k[i * n..(i + 1) * n].iter().zip(&col).map(|(a, c)| a * c).sum();
            if s <= 0.0 {
                return Err(Error::ZeroRow(i));
            }
            row[i] = 1.0 / s;
        }
        let mut col_sums = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                col_sums[j] += row[i] * k[i * n + j];
            }
        }
        for j in 0..n {
            if col_sums[j] <= 0.0 {
                return Err(Error::NoPerfectMatching);
            }
            col[j] = 1.0 / col_sums[j];
        }
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = row[i] * k[i * n + j] * col[j];
            }
        }
        residual = marginal_deviation(n, &entries);
        if residual <= tol {
            break;
        }
        if iterations % SINKHORN_SWEEPS_BEFORE_NEWTON == 0 {
            // Nearly degenerate kernels make the sweeps crawl; try Newton
            // steps on the scaling dual, and fall back to sweeps if they stall.
            let (extra, r) = newton_scale(n, &k, &mut row, &mut col, &mut entries, tol, max_iters - iterations);
            iterations += extra;
            residual = r;
            if residual <= tol {
                break;
            }
        }
    }
    let converged = residual <= tol;
    let diagnostics = SolveDiagnostics::finish(&clock, iterations, residual, converged);
    if !converged {
        return Err(Error::NotConverged { solver: "sinkhorn", diagnostics });
    }
    // Fold the kernel normalisation back into the row factors.
    for r in &mut row {
        *r /= peak;
    }
    Ok(Scaling { entries, row, col, diagnostics })
}

const SINKHORN_SWEEPS_BEFORE_NEWTON: usize = 200;

/// Newton's method on the convex dual `sum_ij K_ij e^(u_i + v_j) - sum u - sum v`
/// of the scaling problem, in `u = log row` and `v = log col`. The dual is
/// invariant under `u + t, v - t` on each connected component of the
/// kernel's support, so one column per component is pinned. Returns the
/// iterations used and the final marginal deviation.
/// Solves `(H + lambda I) d = -g`, raising `lambda` from zero until the
/// factorisation succeeds. Components joined only by negligible entries
/// leave `H` numerically singular.
fn damped_newton_step(h: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().max().max(f64::MIN_POSITIVE);
    let mut lambda = 0.0;
    loop {
        let mut damped = h.clone();
        for i in 0..h.nrows() {
            damped[(i, i)] += lambda;
        }
        if let Some(ch) = damped.cholesky() {
            let d = ch.solve(&(-grad));
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
        lambda = if lambda == 0.0 { 1e-14 * scale } else { lambda * 100.0 };
        if lambda > scale {
            return None;
        }
    }
}

fn newton_scale(
    n: usize,
    k: &[f64],
    row: &mut [f64],
    col: &mut [f64],
    entries: &mut [f64],
    tol: f64,
    budget: usize,
) -> (usize, f64) {
    let mut u: Vec<f64> = row.iter().map(|r| r.ln()).collect();
    let mut v: Vec<f64> = col.iter().map(|c| c.ln()).collect();
    // Column variables get slots n.. unless pinned.
    let pinned = pinned_columns(n, k);
    let mut slot = vec![None; n];
    let mut m = n;
    for j in 0..n {
        if !pinned[j] {
            slot[j] = Some(m);
            m += 1;
        }
    }
    let eval = |u: &[f64], v: &[f64], p: &mut [f64]| -> (f64, f64) {
        let mut phi = -u.iter().sum::<f64>() - v.iter().sum::<f64>();
        for i in 0..n {
            for j in 0..n {
                let x = if k[i * n + j] > 0.0 { k[i * n + j] * (u[i] + v[j]).exp() } else { 0.0 };
                p[i * n + j] = x;
                phi += x;
            }
        }
        (phi, marginal_deviation(n, p))
    };
    let (mut phi, mut residual) = eval(&u, &v, entries);
    let mut trial = vec![0.0; n * n];
    let mut iterations = 0;
    while residual > tol && iterations < budget {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(m, m);
        let mut grad = DVector::<f64>::zeros(m);
        for i in 0..n {
            let r: f64 = entries[i * n..(i + 1) * n].iter().sum();
            h[(i, i)] = r;
            grad[i] = r - 1.0;
        }
        for j in 0..n {
            let Some(s) = slot[j] else { continue };
            let c: f64 = (0..n).map(|i| entries[i * n + j]).sum();
            h[(s, s)] = c;
            grad[s] = c - 1.0;
            for i in 0..n {
                h[(i, s)] = entries[i * n + j];
                h[(s, i)] = entries[i * n + j];
            }
        }
        let Some(step) = damped_newton_step(&h, &grad) else { break };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let tu: Vec<f64> = (0..n).map(|i| u[i] + t * step[i]).collect();
            let tv: Vec<f64> = (0..n).map(|j| slot[j].map_or(v[j], |s| v[j] + t * step[s])).collect();
            let (tphi, tres) = eval(&tu, &tv, &mut trial);
            // Near the solution the decrease in the dual drops below rounding,
            // so a smaller marginal deviation also counts as progress.
            if tphi.is_finite() && (tphi <= phi + 1e-4 * t * slope || tres < residual) {
                u = tu;
                v = tv;
                phi = tphi;
                residual = tres;
                entries.copy_from_slice(&trial);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    for i in 0..n {
        row[i] = u[i].exp();
        col[i] = v[i].exp();
    }
    (iterations, residual)
}

/// One column per connected component of the bipartite support graph.
fn pinned_columns(n: usize, k: &[f64]) -> Vec<bool> {
    // Union-find over rows 0..n and columns n..2n.
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..n {
            if k[i * n + j] > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
                parent[a] = b;
            }
        }
    }
    let mut seen = vec![false; 2 * n];
    let mut pinned = vec![false; n];
    for j in 0..n {
        let root = find(&mut parent, n + j);
        if !seen[root] {
            seen[root] = true;
            pinned[j] = true;
        }
    }
    pinned
}

/// `max_P <grad, P> - <grad, B>` over permutation matrices `P` inside
/// `support`. For a concave objective this bounds the suboptimality of `B`.
pub(crate) fn frank_wolfe_gap(
    n: usize,
    grad: &[f64],
    b: &[f64],
    support: &[bool],
) -> Result<(f64, AssignmentSolution)> {
    let weights: Vec<f64> = grad
        .iter()
        .zip(support)
        .map(|(&g, &s)| if s { g } else { f64::NEG_INFINITY })
        .collect();
    let vertex = assignment_lmo(n, &weights)?;
    let current: f64 = grad.iter().zip(b).zip(support).filter(|(_, &s)| s).map(|((g, x), _)| g * x).sum();
    Ok(((vertex.value - current).max(0.0), vertex))
}

/// Smooth objective over `Omega_n(A)` for the first-order solvers.
pub(crate) trait PolytopeObjective {
    fn n(&self) -> usize;
    fn support(&self) -> &[bool];
    fn value(&self, b: &[f64]) -> f64;
    /// Gradient on the support (entries off the support are ignored). May
    /// clamp `b` away from the boundary.
    fn gradient(&self, b: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MirrorSettings {
    pub initial_step: f64,
    /// Upper bound for the step, which doubles after every accepted step.
    pub max_step: f64,
    pub shrink: f64,
    pub sufficient_increase: f64,
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct AscentOutcome {
    pub b: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub diagnostics: SolveDiagnostics,
    /// Objective after every accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Entropic mirror ascent: `B <- Proj_KL(B * exp(eta * grad))` with Armijo
/// backtracking on `eta`, terminated by the Frank–Wolfe gap. Each search
/// starts from twice the last accepted step.
pub(crate) fn mirror_ascent<F: PolytopeObjective>(
    f: &F,
    init: Vec<f64>,
    settings: MirrorSettings,
) -> Result<AscentOutcome> {
    let clock = Stopwatch::start();
    let n = f.n();
    let support = f.support();
    let mut b = init;
    let mut value = f.value(&b);
    let mut grad = vec![0.0; n * n];
    let mut trace = vec![value];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut next_step = settings.initial_step;
    let mut trusted_step = settings.initial_step;
    while iterations < settings.max_iters {
        f.gradient(&b, &mut grad);
        gap = frank_wolfe_gap(n, &grad, &b, support)?.0;
        if gap <= settings.tol {
            break;
        }
        iterations += 1;
        let peak = grad
            .iter()
            .zip(support)
            .filter(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, |a, (&g, _)| a.max(g));
        // Re-projecting an iterate moves it by up to PROJECTION_TOL per
        // marginal, which shifts the value by about that times the gradient.
        let spread = grad
            .iter()
            .zip(support)
            .filter(|(_, &s)| s)
            .fold(0.0f64, |a, (&g, _)| a.max((g - peak).abs()));
        let slack = 8.0 * f64::EPSILON * value.abs().max(1.0) + 2.0 * n as f64 * PROJECTION_TOL * spread;
        let mut eta = next_step;
        let mut accepted = None;
        while eta > 1e-18 {
            let kernel: Vec<f64> = b
                .iter()
                .zip(&grad)
                .zip(support)
                .map(|((&x, &g), &s)| if s && x > 0.0 { (x * (eta * (g - peak)).exp()).max(KERNEL_FLOOR) } else { 0.0 })
                .collect();
            let candidate = sinkhorn_scale(n, &kernel, PROJECTION_TOL, PROJECTION_MAX_ITERS)?.entries;
            let candidate_value = f.value(&candidate);
            let predicted: f64 = grad
                .iter()
                .zip(candidate.iter().zip(&b))
                .zip(support)
                .filter(|(_, &s)| s)
                .map(|((g, (y, x)), _)| g * (y - x))
                .sum();
            let armijo = candidate_value >= value + settings.sufficient_increase * predicted;
            // Once the predicted increase is below rounding the value can no
            // longer rank steps; keep to the last step size Armijo accepted
            // and only refuse steps that lose more than the noise.
            let decisive = settings.sufficient_increase * predicted > slack;
            let progress = if decisive { armijo } else { eta <= trusted_step && candidate_value >= value - slack };
            if progress {
                accepted = Some((candidate, candidate_value, decisive));
                break;
            }
            eta *= settings.shrink;
        }
        match accepted {
            Some((next, next_value, decisive)) => {
                if decisive {
                    trusted_step = eta;
                    next_step = (2.0 * eta).min(settings.max_step);
                } else {
                    next_step = eta;
                }
                b = next;
                value = next_value;
                trace.push(value);
            }
            None => break,
        }
    }
    let converged = gap <= settings.tol;
    let diagnostics = SolveDiagnostics::finish(&clock, iterations, gap, converged);
    if !converged {
        return Err(Error::NotConverged { solver: "mirror ascent", diagnostics });
    }
    Ok(AscentOutcome { b, value, gap, diagnostics, trace })
}

/// Keeps long steps from underflowing positive kernel entries to zero,
/// which would silently shrink the support.
const KERNEL_FLOOR: f64 = 1e-290;

/// The max-entropy point of the face `Omega_n(A)` cut out by `support`
/// (Sinkhorn scaling of the 0/1 support mask).
pub(crate) fn support_center(n: usize, support: &[bool]) -> Result<Vec<f64>> {
    let mask: Vec<f64> = support.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    Ok(sinkhorn_scale(n, &mask, PROJECTION_TOL, PROJECTION_MAX_ITERS)?.entries)
}
