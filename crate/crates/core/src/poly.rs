//! Polynomial relaxations. For positive `C`, `D` with `C o D = A` let
//!
//! ```text
//! p(x) = prod_i sum_j x_ij C_ij        q(y) = prod_j sum_i y_ij D_ij
//! R_P(A) = sup_B inf_{x,y>0} p(x) q(y) prod B^B / prod (x y)^B
//! R_Q(A) = sup_B inf_{x,y>0} p(x) q(y) prod B^B prod (1-B)^(1-B) / prod (x y)^B
//! ```
//!
//! The inner infimum has the closed form
//! `inf_x r(x) / prod x^B = exp(sum B log(M / B))` for `r(x) = prod_i sum_j x_ij M_ij`
//! and doubly stochastic `B`, attained at `x = B / M`. Applied to `C` row-wise
//! and to `D` column-wise it collapses `R_P` onto the entropy program and `R_Q`
//! onto the Bethe program, whatever the split.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bethe::solve_r_o_mirror;
use crate::diagnostics::{SolveDiagnostics, Stopwatch};
use crate::entropy::{sinkhorn_solve, xlog_ratio, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::matrix::{DoublyStochasticMatrix, NonNegMatrix};

/// Tolerance on the gradient of the numeric inner infimum, each entry
/// measured relative to `B_ij`.
pub const INNER_GRAD_TOL: f64 = 1e-10;
pub const INNER_MAX_ITERS: usize = 10_000;
/// Largest relative disagreement allowed between the closed-form and the
/// numeric inner infimum.
pub const REDUCTION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Sqrt,
    LeftIdentity,
    Random(u64),
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitKind::Sqrt => write!(f, "sqrt"),
            SplitKind::LeftIdentity => write!(f, "left_identity"),
            SplitKind::Random(seed) => write!(f, "random({seed})"),
        }
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sqrt" => return Ok(SplitKind::Sqrt),
            "left_identity" => return Ok(SplitKind::LeftIdentity),
            _ => {}
        }
        s.strip_prefix("random(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|seed| seed.trim().parse().ok())
            .map(SplitKind::Random)
            .ok_or_else(|| Error::Parse(format!("unknown split `{s}`")))
    }
}

/// Two positive matrices whose entrywise product is `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSplit {
    pub kind: SplitKind,
    pub c: NonNegMatrix,
    pub d: NonNegMatrix,
}

pub fn make_split(m: &NonNegMatrix, kind: SplitKind) -> Result<MatrixSplit> {
    if !m.is_positive() {
        return Err(Error::NotPositive { what: "matrix split" });
    }
    let n = m.n();
    let a = m.entries();
    let (c, d): (Vec<f64>, Vec<f64>) = match kind {
        SplitKind::Sqrt => a.iter().map(|x| (x.sqrt(), x.sqrt())).unzip(),
        SplitKind::LeftIdentity => (a.to_vec(), vec![1.0; n * n]),
        SplitKind::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            a.iter()
                .map(|&x| {
                    let r = rng.gen_range(-1.0..=1.0f64).exp();
                    (x * r, 1.0 / r)
                })
                .unzip()
        }
    };
    Ok(MatrixSplit {
        kind,
        c: NonNegMatrix::from_row_major(n, c)?,
        d: NonNegMatrix::from_row_major(n, d)?,
    })
}

impl MatrixSplit {
    /// Largest relative deviation of `C o D` from `A`.
    pub fn factor_error(&self, m: &NonNegMatrix) -> f64 {
        self.c
            .entries()
            .iter()
            .zip(self.d.entries())
            .zip(m.entries())
            .map(|((c, d), a)| ((c * d - a) / a).abs())
            .fold(0.0, f64::max)
    }
}

/// `sum B log(M / B)`, the logarithm of the closed-form inner infimum.
pub fn log_inner_inf_closed(m: &NonNegMatrix, b: &DoublyStochasticMatrix) -> f64 {
    m.entries().iter().zip(b.entries()).map(|(&a, &x)| xlog_ratio(a, x)).sum()
}

pub fn inner_inf_closed(m: &NonNegMatrix, b: &DoublyStochasticMatrix) -> f64 {
    log_inner_inf_closed(m, b).exp()
}

/// `r(x) / prod x^B` evaluated directly, without logarithms.
pub fn inner_ratio(m: &NonNegMatrix, b: &DoublyStochasticMatrix, x: &[f64]) -> f64 {
    let n = m.n();
    let mut r = 1.0;
    let mut denom = 1.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += x[i * n + j] * m.get(i, j);
            denom *= x[i * n + j].powf(b.get(i, j));
        }
        r *= s;
    }
    r / denom
}

/// The point `x = B / M` where the Jensen step is an equality.
pub fn tightness_point(m: &NonNegMatrix, b: &DoublyStochasticMatrix) -> Vec<f64> {
    b.entries().iter().zip(m.entries()).map(|(x, a)| x / a).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerInfimum {
    pub value: f64,
    pub log_value: f64,
    pub closed_form: f64,
    /// `r(x)/prod x^B` at the tightness point.
    pub tightness_value: f64,
    pub diagnostics: SolveDiagnostics,
}

impl InnerInfimum {
    pub fn relative_error(&self) -> f64 {
        ((self.value - self.closed_form) / self.closed_form).abs()
    }

    pub fn tightness_error(&self) -> f64 {
        ((self.tightness_value - self.closed_form) / self.closed_form).abs()
    }
}

/// Minimises `log r(e^u) - sum B u` by gradient descent in `u = log x`. The
/// objective splits into one log-sum-exp per row, each with gradient `softmax(log M_i + u_i) - B_i`.
pub fn inner_inf_numeric(m: &NonNegMatrix, b: &DoublyStochasticMatrix, tol: f64) -> Result<InnerInfimum> {
    let clock = Stopwatch::start();
    let n = m.n();
    if b.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.n() });
    }
    if !m.is_positive() {
        return Err(Error::NotPositive { what: "numeric inner infimum" });
    }
    if let Some(k) = b.entries().iter().position(|&x| x <= 0.0) {
        return Err(Error::Boundary { row: k / n, col: k % n });
    }
    let mut log_value = 0.0;
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    let mut converged = true;
    for i in 0..n {
        let log_m: Vec<f64> = m.row(i).iter().map(|a| a.ln()).collect();
        let target = &b.entries()[i * n..(i + 1) * n];
        let mut u = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut row_iters = 0;
        let mut f = softmax(&log_m, &u, &mut p) - dot(target, &u);
        let row_residual = loop {
            let g = p.iter().zip(target).map(|(p, t)| ((p - t) / t).abs()).fold(0.0, f64::max);
            if g <= tol || row_iters >= INNER_MAX_ITERS {
                log_value += f;
                break g;
            }
            row_iters += 1;
            // Gradient scaled by 1/max(p, B): near the minimiser this is the
            // inverse Hessian diagonal, far from it no coordinate moves more
            // than one unit. Armijo backtracking from a unit step.
            let dir: Vec<f64> = p.iter().zip(target).map(|(p, t)| -(p - t) / p.max(*t)).collect();
            let slope: f64 = p.iter().zip(target).zip(&dir).map(|((p, t), d)| (p - t) * d).sum();
            let mut step = 1.0;
            let mut trial = vec![0.0; n];
            let mut q = vec![0.0; n];
            loop {
                for j in 0..n {
                    trial[j] = u[j] + step * dir[j];
                }
                let trial_f = softmax(&log_m, &trial, &mut q) - dot(target, &trial);
                if trial_f <= f + 1e-4 * step * slope + 4.0 * f64::EPSILON * f.abs().max(1.0) || step < 1e-20 {
                    u.copy_from_slice(&trial);
                    p.copy_from_slice(&q);
                    f = trial_f;
                    break;
                }
                step *= 0.5;
            }
        };
        converged &= row_residual <= tol;
        residual = residual.max(row_residual);
        iterations += row_iters;
    }
    let diagnostics = SolveDiagnostics::finish(&clock, iterations, residual, converged);
    if !converged {
        return Err(Error::NotConverged { solver: "inner infimum", diagnostics });
    }
    Ok(InnerInfimum {
        value: log_value.exp(),
        log_value,
        closed_form: inner_inf_closed(m, b),
        tightness_value: inner_ratio(m, b, &tightness_point(m, b)),
        diagnostics,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fills `p` with `softmax(a + u)` and returns `log sum exp(a + u)`.
fn softmax(a: &[f64], u: &[f64], p: &mut [f64]) -> f64 {
    let peak = a.iter().zip(u).map(|(a, u)| a + u).fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for ((p, a), u) in p.iter_mut().zip(a).zip(u) {
        *p = (a + u - peak).exp();
        s += *p;
    }
    for p in p.iter_mut() {
        *p /= s;
    }
    peak + s.ln()
}

/// Value of a polynomial relaxation at the optimiser of the program it
/// reduces to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyValue {
    pub split: SplitKind,
    pub log_value: f64,
    pub b: DoublyStochasticMatrix,
    /// Worst relative disagreement between the closed-form and the numeric
    /// inner infimum at `b`, over the `x` and `y` halves.
    pub reduction_residual: f64,
    pub diagnostics: SolveDiagnostics,
}

impl PolyValue {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

fn check_split(m: &NonNegMatrix, split: &MatrixSplit) -> Result<()> {
    if !m.is_positive() {
        return Err(Error::NotPositive { what: "polynomial relaxation" });
    }
    if split.c.n() != m.n() || split.d.n() != m.n() {
        return Err(Error::DimensionMismatch { expected: m.n(), got: split.c.n().min(split.d.n()) });
    }
    let err = split.factor_error(m);
    if err > 1e-12 {
        return Err(Error::Config(format!("split does not factor the matrix (relative error {err:e})")));
    }
    Ok(())
}

/// Log of the inner infimum over `x` and `y` for fixed `B`, plus the
/// reduction residual.
fn inner_pair(split: &MatrixSplit, b: &DoublyStochasticMatrix) -> Result<(f64, f64)> {
    let x = inner_inf_numeric(&split.c, b, INNER_GRAD_TOL)?;
    let y = inner_inf_numeric(&split.d.transpose(), &b.transpose(), INNER_GRAD_TOL)?;
    let closed = log_inner_inf_closed(&split.c, b) + log_inner_inf_closed(&split.d.transpose(), &b.transpose());
    Ok((closed, x.relative_error().max(y.relative_error())))
}

/// `log R_P(A)` for the given split, with `B` from the entropy solver.
pub fn r_p_value(m: &NonNegMatrix, split: &MatrixSplit, tol: f64) -> Result<PolyValue> {
    check_split(m, split)?;
    let solution = sinkhorn_solve(m, tol, DEFAULT_MAX_ITERS)?;
    let (inner, reduction_residual) = inner_pair(split, &solution.b)?;
    let self_term: f64 = solution.b.entries().iter().map(|&x| -xlog_ratio(1.0, x)).sum();
    Ok(PolyValue {
        split: split.kind,
        log_value: inner + self_term,
        b: solution.b,
        reduction_residual,
        diagnostics: solution.diagnostics,
    })
}

/// `log R_Q(A)` for the given split, with `B` from the Bethe solver.
pub fn r_q_value(m: &NonNegMatrix, split: &MatrixSplit, tol: f64) -> Result<PolyValue> {
    check_split(m, split)?;
    let solution = solve_r_o_mirror(m, tol, DEFAULT_MAX_ITERS)?;
    let (inner, reduction_residual) = inner_pair(split, &solution.b)?;
    let self_term: f64 =
        solution.b.entries().iter().map(|&x| -xlog_ratio(1.0, x) - xlog_ratio(1.0, 1.0 - x)).sum();
    Ok(PolyValue {
        split: split.kind,
        log_value: inner + self_term,
        b: solution.b,
        reduction_residual,
        diagnostics: solution.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCheck {
    pub split: SplitKind,
    pub log_r_p: f64,
    pub log_r_q: f64,
    pub r_p_residual: f64,
    pub r_q_residual: f64,
    pub r_p_holds: bool,
    pub r_q_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem23Report {
    pub n: usize,
    pub r_e: f64,
    pub r_o: f64,
    pub splits: Vec<SplitCheck>,
    /// Largest relative spread of `R_P` (resp. `R_Q`) across splits.
    pub r_p_spread: f64,
    pub r_q_spread: f64,
}

impl Theorem23Report {
    pub fn passed(&self) -> bool {
        self.splits.iter().all(|s| s.r_p_holds && s.r_q_holds)
    }
}

/// Checks `log R_P = R_E` and `log R_Q = R_O` to `tol` for every split. The
/// entropy and Bethe values are solved independently of the splits.
pub fn verify_theorems_2_3(
    m: &NonNegMatrix,
    splits: &[MatrixSplit],
    sinkhorn_tol: f64,
    bethe_tol: f64,
    tol: f64,
) -> Result<Theorem23Report> {
    let r_e = sinkhorn_solve(m, sinkhorn_tol, DEFAULT_MAX_ITERS)?.value;
    let r_o = solve_r_o_mirror(m, bethe_tol, DEFAULT_MAX_ITERS)?.value;
    let mut checks = Vec::with_capacity(splits.len());
    for split in splits {
        let p = r_p_value(m, split, sinkhorn_tol)?;
        let q = r_q_value(m, split, bethe_tol)?;
        checks.push(SplitCheck {
            split: split.kind,
            log_r_p: p.log_value,
            log_r_q: q.log_value,
            r_p_residual: p.reduction_residual,
            r_q_residual: q.reduction_residual,
            r_p_holds: (p.log_value - r_e).abs() <= tol && p.reduction_residual <= REDUCTION_TOL,
            r_q_holds: (q.log_value - r_o).abs() <= tol && q.reduction_residual <= REDUCTION_TOL,
        });
    }
    // Relative spread of exp(log v) is exp(max - min) - 1.
    let spread = |f: fn(&SplitCheck) -> f64| {
        let hi = checks.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let lo = checks.iter().map(f).fold(f64::INFINITY, f64::min);
        if checks.is_empty() {
            0.0
        } else {
            (hi - lo).exp_m1()
        }
    };
    Ok(Theorem23Report {
        n: m.n(),
        r_e,
        r_o,
        r_p_spread: spread(|s| s.log_r_p),
        r_q_spread: spread(|s| s.log_r_q),
        splits: checks,
    })
}
