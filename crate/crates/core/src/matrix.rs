//! Dense non-negative matrices, doubly stochastic points and the bipartite
//! support graph they induce.
//!
//! Storage is row-major `Vec<f64>` of length `n * n`. The support of a matrix
//! is the edge set of the bipartite graph with an edge `(i, j)` whenever the
//! entry is strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance used to certify membership in the Birkhoff polytope.
pub const DEFAULT_CERTIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NonNegMatrix {
    n: usize,
    entries: Vec<f64>,
    support: Vec<bool>,
}

impl NonNegMatrix {
    /// Validates a square array of rows.
    pub fn validate(raw: &[Vec<f64>]) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        let mut entries = Vec::with_capacity(n * n);
        for (row, values) in raw.iter().enumerate() {
            if values.len() != n {
                return Err(Error::NotSquare { row, len: values.len(), expected: n });
            }
            entries.extend_from_slice(values);
        }
        Self::from_row_major(n, entries)
    }

    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        for (k, &value) in entries.iter().enumerate() {
            let (row, col) = (k / n, k % n);
            if !value.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { row, col, value });
            }
        }
        let support = entries.iter().map(|&v| v > 0.0).collect();
        Ok(NonNegMatrix { n, entries, support })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self::from_row_major(n, entries).expect("identity is valid")
    }

    /// The all-ones matrix `J_n`.
    pub fn ones(n: usize) -> Self {
        Self::from_row_major(n, vec![1.0; n * n]).expect("ones is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn in_support(&self, i: usize, j: usize) -> bool {
        self.support[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn is_positive(&self) -> bool {
        self.support.iter().all(|&s| s)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.entries[i * n + j];
            }
        }
        NonNegMatrix { n, support: entries.iter().map(|&v| v > 0.0).collect(), entries }
    }

    /// Zeroes every entry outside `mask`.
    pub fn restricted_to(&self, mask: &[bool]) -> Self {
        let entries: Vec<f64> = self
            .entries
            .iter()
            .zip(mask)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        NonNegMatrix { n: self.n, support: entries.iter().map(|&v| v > 0.0).collect(), entries }
    }
}

/// A point of the Birkhoff polytope, certified to a row/column-sum tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublyStochasticMatrix {
    n: usize,
    entries: Vec<f64>,
    tolerance: f64,
}

impl DoublyStochasticMatrix {
    /// Checks entries lie in `[0, 1]` and every row and column sums to one
    /// within `tolerance`. Rounding excursions of at most `tolerance` past
    /// either end of `[0, 1]` are clamped.
    pub fn certify(n: usize, mut entries: Vec<f64>, tolerance: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        for (k, v) in entries.iter_mut().enumerate() {
            if !v.is_finite() || *v < -tolerance || *v > 1.0 + tolerance {
                return Err(Error::NotDoublyStochastic(format!(
                    "entry ({}, {}) = {} outside [0, 1]",
                    k / n,
                    k % n,
                    v
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
        let deviation = marginal_deviation(n, &entries);
        if deviation > tolerance {
            return Err(Error::NotDoublyStochastic(format!(
                "row/column sum deviation {deviation:e} exceeds {tolerance:e}"
            )));
        }
        Ok(DoublyStochasticMatrix { n, entries, tolerance })
    }

    pub fn uniform(n: usize) -> Self {
        let v = 1.0 / n as f64;
        Self::certify(n, vec![v; n * n], DEFAULT_CERTIFY_TOL).expect("uniform is doubly stochastic")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_permutation(&(0..n).collect::<Vec<_>>())
    }

    /// The permutation matrix with a one at `(i, perm[i])`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        let n = perm.len();
        let mut entries = vec![0.0; n * n];
        for (i, &j) in perm.iter().enumerate() {
            entries[i * n + j] = 1.0;
        }
        DoublyStochasticMatrix { n, entries, tolerance: 0.0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_deviation(&self) -> f64 {
        marginal_deviation(self.n, &self.entries)
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.entries[i * n + j];
            }
        }
        DoublyStochasticMatrix { n, entries, tolerance: self.tolerance }
    }

    /// True when the point lies in the face of the polytope cut out by the
    /// support of `m`.
    pub fn supported_within(&self, m: &NonNegMatrix) -> bool {
        self.n == m.n() && self.entries.iter().zip(m.support()).all(|(&b, &s)| s || b == 0.0)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }
}

/// Largest absolute deviation of any row or column sum from one.
pub fn marginal_deviation(n: usize, entries: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut cols = vec![0.0; n];
    for row in entries.chunks(n) {
        let s: f64 = row.iter().sum();
        worst = worst.max((s - 1.0).abs());
        for (c, &v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    cols.iter().fold(worst, |w, &c| w.max((c - 1.0).abs()))
}

/// The bipartite graph `G = (V, W, E)` with `E` the support of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteSupport {
    pub n: usize,
    pub adjacency: Vec<bool>,
    pub has_perfect_matching: bool,
    /// Whether every edge lies on some perfect matching, i.e. the support
    /// carries a doubly stochastic matrix with exactly that support.
    /// `None` when there is no perfect matching at all.
    pub dm_irreducible_flag: Option<bool>,
}

/// Augmenting-path analysis of the support of `m`. Never evaluates the
/// permanent.
pub fn support_has_perfect_matching(m: &NonNegMatrix) -> BipartiteSupport {
    let n = m.n();
    let adjacency = m.support().to_vec();
    let matching = maximum_matching(n, &adjacency);
    let has_perfect_matching = matching.iter().all(Option::is_some);
    let dm_irreducible_flag = has_perfect_matching.then(|| {
        let essential = essential_edges(n, &adjacency, &complete(&matching));
        essential == adjacency
    });
    BipartiteSupport { n, adjacency, has_perfect_matching, dm_irreducible_flag }
}

/// Mask of the edges that belong to at least one perfect matching, or `None`
/// when the support has no perfect matching.
pub fn essential_support(m: &NonNegMatrix) -> Option<Vec<bool>> {
    essential_mask(m.n(), m.support())
}

pub(crate) fn essential_mask(n: usize, adjacency: &[bool]) -> Option<Vec<bool>> {
    let matching = maximum_matching(n, adjacency);
    if matching.iter().any(Option::is_none) {
        return None;
    }
    Some(essential_edges(n, adjacency, &complete(&matching)))
}

fn complete(matching: &[Option<usize>]) -> Vec<usize> {
    matching.iter().map(|c| c.expect("perfect matching")).collect()
}

/// Maximum bipartite matching by repeated augmenting-path search (Kuhn).
/// Returns the column matched to each row.
pub fn maximum_matching(n: usize, adjacency: &[bool]) -> Vec<Option<usize>> {
    let mut row_of_col: Vec<Option<usize>> = vec![None; n];
    let mut col_of_row: Vec<Option<usize>> = vec![None; n];
    for root in 0..n {
        let mut visited = vec![false; n];
        augment(root, n, adjacency, &mut visited, &mut row_of_col, &mut col_of_row);
    }
    col_of_row
}

fn augment(
    row: usize,
    n: usize,
    adjacency: &[bool],
    visited: &mut [bool],
    row_of_col: &mut [Option<usize>],
    col_of_row: &mut [Option<usize>],
) -> bool {
    for col in 0..n {
        if !adjacency[row * n + col] || visited[col] {
            continue;
        }
        visited[col] = true;
        let free = match row_of_col[col] {
            None => true,
            Some(other) => augment(other, n, adjacency, visited, row_of_col, col_of_row),
        };
        if free {
            row_of_col[col] = Some(row);
            col_of_row[row] = Some(col);
            return true;
        }
    }
    false
}

/// Given a perfect matching, an edge `(i, j)` with `j` matched to row `r`
/// lies on some perfect matching iff `i == r` or row `i` is reachable from
/// row `r` in the digraph `u -> row_of(v)` over edges `(u, v)`.
fn essential_edges(n: usize, adjacency: &[bool], col_of_row: &[usize]) -> Vec<bool> {
    let mut row_of_col = vec![0; n];
    for (r, &c) in col_of_row.iter().enumerate() {
        row_of_col[c] = r;
    }
    let mut reach = vec![false; n * n];
    let mut stack = Vec::with_capacity(n);
    for start in 0..n {
        let seen = &mut reach[start * n..(start + 1) * n];
        seen[start] = true;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if adjacency[u * n + v] {
                    let w = row_of_col[v];
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
    }
    let mut essential = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if adjacency[i * n + j] {
                let r = row_of_col[j];
                essential[i * n + j] = reach[r * n + i];
            }
        }
    }
    essential
}

/// Zeroes the entries of `b` that fall outside the support of `m`. No
/// renormalisation is performed.
pub fn project_to_support(b: &[f64], m: &NonNegMatrix) -> Result<Vec<f64>> {
    let expected = m.n() * m.n();
    if b.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: b.len() });
    }
    Ok(b.iter().zip(m.support()).map(|(&v, &s)| if s { v } else { 0.0 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> NonNegMatrix {
        NonNegMatrix::validate(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn validate_full_support() {
        let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(m.n(), 2);
        assert!(m.is_positive());
    }

    #[test]
    fn validate_anti_diagonal_support() {
        let m = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(m.support(), &[false, true, true, false]);
    }

    #[test]
    fn validate_rejects_bad_input() {
        let neg = NonNegMatrix::validate(&[vec![1.0, -1.0], vec![1.0, 1.0]]);
        assert!(matches!(neg, Err(Error::NegativeEntry { row: 0, col: 1, .. })));
        let nan = NonNegMatrix::validate(&[vec![f64::NAN]]);
        assert!(matches!(nan, Err(Error::NonFinite { .. })));
        let inf = NonNegMatrix::validate(&[vec![1.0, f64::INFINITY], vec![1.0, 1.0]]);
        assert!(matches!(inf, Err(Error::NonFinite { .. })));
        let ragged = NonNegMatrix::validate(&[vec![1.0, 2.0], vec![1.0]]);
        assert!(matches!(ragged, Err(Error::NotSquare { row: 1, .. })));
        assert_eq!(NonNegMatrix::validate(&[]), Err(Error::Empty));
    }

    #[test]
    fn perfect_matching_detection() {
        assert!(support_has_perfect_matching(&NonNegMatrix::identity(3)).has_perfect_matching);
        let zero_row = mat(&[&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]]);
        let s = support_has_perfect_matching(&zero_row);
        assert!(!s.has_perfect_matching);
        assert_eq!(s.dm_irreducible_flag, None);
        // Brute force over the six permutations finds e.g. (0,1,2) and (1,0,2).
        let blocky = mat(&[&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = support_has_perfect_matching(&blocky);
        assert!(s.has_perfect_matching);
        assert_eq!(s.dm_irreducible_flag, Some(true));
    }

    #[test]
    fn partial_support_is_not_irreducible() {
        // Upper triangular: only the diagonal lies on a perfect matching.
        let upper = mat(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let s = support_has_perfect_matching(&upper);
        assert_eq!(s.dm_irreducible_flag, Some(false));
        assert_eq!(essential_support(&upper).unwrap(), vec![true, false, false, true]);
    }

    #[test]
    fn projection_masks_without_renormalising() {
        let half = vec![0.5; 4];
        assert_eq!(project_to_support(&half, &NonNegMatrix::identity(2)).unwrap(), vec![0.5, 0.0, 0.0, 0.5]);
        let third = vec![1.0 / 3.0; 9];
        let anti = mat(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        let p = project_to_support(&third, &anti).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i + j == 2 { 1.0 / 3.0 } else { 0.0 };
                assert_eq!(p[i * 3 + j], want);
            }
        }
        assert_eq!(project_to_support(&p, &anti).unwrap(), p);
        assert!(matches!(
            project_to_support(&half, &NonNegMatrix::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn certify_checks_marginals() {
        assert!(DoublyStochasticMatrix::certify(2, vec![0.5; 4], 1e-12).is_ok());
        assert!(DoublyStochasticMatrix::certify(2, vec![0.6, 0.4, 0.5, 0.5], 1e-9).is_err());
        assert!(DoublyStochasticMatrix::certify(2, vec![1.5, -0.5, -0.5, 1.5], 1e-9).is_err());
    }
}
