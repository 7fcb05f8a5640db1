//! Exact linear maximisation over the Birkhoff polytope. Its vertices are
//! permutation matrices, so this is a maximum-weight perfect assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// Row `i` is assigned to column `permutation[i]`.
    pub permutation: Vec<usize>,
    pub value: f64,
}

/// Maximum-weight perfect assignment for a row-major `n x n` weight matrix.
/// Cells equal to `-inf` are forbidden. Shortest augmenting paths with dual
/// potentials, `O(n^3)`.
pub fn assignment_lmo(n: usize, weights: &[f64]) -> Result<AssignmentSolution> {
    if weights.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: weights.len() });
    }
    if weights.iter().any(|&w| w.is_nan() || w == f64::INFINITY) {
        return Err(Error::Parse("assignment weights must be finite or -inf".into()));
    }
    if n == 0 {
        return Ok(AssignmentSolution { permutation: Vec::new(), value: 0.0 });
    }
    // Minimise cost = -weight; forbidden cells have infinite cost.
    let cost = |i: usize, j: usize| -weights[i * n + j];
    let inf = f64::INFINITY;
    // 1-based arrays, index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::NoFeasibleAssignment);
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        permutation[row_of[j] - 1] = j - 1;
    }
    let value = permutation.iter().enumerate().map(|(i, &j)| weights[i * n + j]).sum();
    Ok(AssignmentSolution { permutation, value })
}
