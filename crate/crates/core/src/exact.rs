//! Ground truth at small scale: permanents, perfect matchings, the Gibbs
//! distribution over matchings, the exact max-entropy objective and the two
//! product-form approximations of a matching distribution by its edge
//! marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{support_has_perfect_matching, DoublyStochasticMatrix, NonNegMatrix};

pub const NAIVE_LIMIT: usize = 10;
pub const RYSER_LIMIT: usize = 30;
pub const ENUMERATION_LIMIT: usize = 10;
pub const HEURISTIC_GAP_LIMIT: usize = 8;

/// Tolerance on the total mass of a [`MatchingDistribution`].
pub const DISTRIBUTION_TOL: f64 = 1e-12;

fn guard(what: &'static str, n: usize, limit: usize) -> Result<()> {
    if n > limit {
        Err(Error::TooLarge { what, n, limit })
    } else {
        Ok(())
    }
}

/// Sum over all `n!` permutations of `prod_i a[i][sigma(i)]`.
pub fn permanent_naive(m: &NonNegMatrix) -> Result<f64> {
    guard("naive permanent", m.n(), NAIVE_LIMIT)?;
    fn expand(m: &NonNegMatrix, row: usize, used: u32, acc: f64, total: &mut f64) {
        let n = m.n();
        if row == n {
            *total += acc;
            return;
        }
        for col in 0..n {
            if used & (1 << col) == 0 {
                expand(m, row + 1, used | (1 << col), acc * m.get(row, col), total);
            }
        }
    }
    let mut total = 0.0;
    expand(m, 0, 0, 1.0, &mut total);
    Ok(total)
}

/// Ryser's inclusion-exclusion formula in the Nijenhuis–Wilf form, walking
/// subsets of the first `n - 1` columns in Gray-code order so that each step
/// updates the row sums by a single column. `O(2^(n-1) n)` time; the outer
/// sum is Kahan-compensated.
pub fn permanent_ryser(m: &NonNegMatrix) -> Result<f64> {
    let n = m.n();
    guard("Ryser permanent", n, RYSER_LIMIT)?;
    if n == 1 {
        return Ok(m.get(0, 0));
    }
    // Cancellation would otherwise leave rounding noise in place of zero.
    if !support_has_perfect_matching(m).has_perfect_matching {
        return Ok(0.0);
    }
    let mut sums: Vec<f64> = (0..n)
        .map(|i| m.get(i, n - 1) - 0.5 * m.row(i).iter().sum::<f64>())
        .collect();
    let mut total = sums.iter().product::<f64>();
    let mut carry = 0.0;
    let mut in_set = 0u64;
    for k in 1u64..(1u64 << (n - 1)) {
        let col = k.trailing_zeros() as usize;
        let bit = 1u64 << col;
        in_set ^= bit;
        if in_set & bit != 0 {
            for (i, s) in sums.iter_mut().enumerate() {
                *s += m.get(i, col);
            }
        } else {
            for (i, s) in sums.iter_mut().enumerate() {
                *s -= m.get(i, col);
            }
        }
        let prod: f64 = sums.iter().product();
        let term = if k & 1 == 1 { -prod } else { prod };
        // Kahan step
        let y = term - carry;
        let t = total + y;
        carry = (t - total) - y;
        total = t;
    }
    let sign = if (n - 1) % 2 == 0 { 2.0 } else { -2.0 };
    Ok((sign * total).max(0.0))
}

/// How an exact permanent was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermanentMethod {
    Naive,
    Ryser,
    Skipped,
}

/// Exact permanent by the cheapest available method, or `None` above
/// `threshold`.
pub fn permanent(m: &NonNegMatrix, threshold: usize) -> Result<(Option<f64>, PermanentMethod)> {
    let n = m.n();
    if n > threshold.min(RYSER_LIMIT) {
        Ok((None, PermanentMethod::Skipped))
    } else if n <= 6 {
        Ok((Some(permanent_naive(m)?), PermanentMethod::Naive))
    } else {
        Ok((Some(permanent_ryser(m)?), PermanentMethod::Ryser))
    }
}

/// Perfect matchings of the support as permutations `sigma` (row `i` is
/// matched to column `sigma[i]`), in lexicographic order.
pub fn enumerate_matchings(m: &NonNegMatrix) -> Result<Vec<Vec<usize>>> {
    let n = m.n();
    guard("matching enumeration", n, ENUMERATION_LIMIT)?;
    fn walk(m: &NonNegMatrix, sigma: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        let row = sigma.len();
        if row == m.n() {
            out.push(sigma.clone());
            return;
        }
        for col in 0..m.n() {
            if !used[col] && m.in_support(row, col) {
                used[col] = true;
                sigma.push(col);
                walk(m, sigma, used, out);
                sigma.pop();
                used[col] = false;
            }
        }
    }
    let mut out = Vec::new();
    walk(m, &mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    Ok(out)
}

pub fn matching_weight(m: &NonNegMatrix, sigma: &[usize]) -> f64 {
    sigma.iter().enumerate().map(|(i, &j)| m.get(i, j)).product()
}

/// An explicit probability distribution over perfect matchings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingDistribution {
    matchings: Vec<Vec<usize>>,
    probs: Vec<f64>,
}

impl MatchingDistribution {
    pub fn new(matchings: Vec<Vec<usize>>, probs: Vec<f64>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidDistribution(msg));
        if matchings.is_empty() {
            return invalid("no matchings".into());
        }
        if matchings.len() != probs.len() {
            return invalid(format!("{} matchings but {} probabilities", matchings.len(), probs.len()));
        }
        let n = matchings[0].len();
        for sigma in &matchings {
            let mut seen = vec![false; n];
            if sigma.len() != n || !sigma.iter().all(|&j| j < n && !std::mem::replace(&mut seen[j], true)) {
                return invalid(format!("{sigma:?} is not a permutation of 0..{n}"));
            }
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return invalid("probabilities must be finite and non-negative".into());
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOL {
            return invalid(format!("probabilities sum to {total}"));
        }
        Ok(MatchingDistribution { matchings, probs })
    }

    pub fn point_mass(sigma: Vec<usize>) -> Result<Self> {
        Self::new(vec![sigma], vec![1.0])
    }

    pub fn n(&self) -> usize {
        self.matchings[0].len()
    }

    pub fn matchings(&self) -> &[Vec<usize>] {
        &self.matchings
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.matchings.iter().map(Vec::as_slice).zip(self.probs.iter().copied())
    }

    /// True when every matching with positive mass lies in the support of `m`.
    pub fn supported_on(&self, m: &NonNegMatrix) -> bool {
        self.n() == m.n()
            && self.iter().all(|(sigma, p)| {
                p == 0.0 || sigma.iter().enumerate().all(|(i, &j)| m.in_support(i, j))
            })
    }
}

/// `p(M) = prod_{(i,j) in M} a_ij / Per(A)` over the matchings of the support.
pub fn gibbs_distribution(m: &NonNegMatrix) -> Result<MatchingDistribution> {
    let matchings = enumerate_matchings(m)?;
    let per = permanent_naive(m)?;
    if matchings.is_empty() || per <= 0.0 {
        return Err(Error::NoPerfectMatching);
    }
    let probs = matchings.iter().map(|s| matching_weight(m, s) / per).collect();
    MatchingDistribution::new(matchings, probs)
}

/// The max-entropy objective `sum_M b(M) log(w(M) / b(M))`, with
/// `0 log 0 = 0`. Its maximum over distributions is `log Per(A)`, attained at
/// the Gibbs distribution.
pub fn exact_program_objective(m: &NonNegMatrix, b: &MatchingDistribution) -> Result<f64> {
    if b.n() != m.n() {
        return Err(Error::DimensionMismatch { expected: m.n(), got: b.n() });
    }
    let mut total = 0.0;
    for (sigma, p) in b.iter() {
        if p == 0.0 {
            continue;
        }
        let mut log_weight = 0.0;
        for (i, &j) in sigma.iter().enumerate() {
            let a = m.get(i, j);
            if a <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "{sigma:?} has positive mass but uses the zero entry ({i}, {j})"
                )));
            }
            log_weight += a.ln();
        }
        total += p * (log_weight - p.ln());
    }
    Ok(total)
}

/// Edge presence probabilities `b_ij(1)` of a matching distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMarginals {
    n: usize,
    entries: Vec<f64>,
}

impl EdgeMarginals {
    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        Ok(EdgeMarginals { n, entries })
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

    pub fn to_doubly_stochastic(&self, tolerance: f64) -> Result<DoublyStochasticMatrix> {
        DoublyStochasticMatrix::certify(self.n, self.entries.clone(), tolerance)
    }
}

pub fn edge_marginals(b: &MatchingDistribution) -> EdgeMarginals {
    let n = b.n();
    let mut entries = vec![0.0; n * n];
    for (sigma, p) in b.iter() {
        for (i, &j) in sigma.iter().enumerate() {
            entries[i * n + j] += p;
        }
    }
    EdgeMarginals { n, entries }
}

/// Which marginal-only formula to use for `b(M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductForm {
    /// `prod_{(i,j) in M} b_ij`
    TreeProduct,
    /// `prod_{(i,j) in M} b_ij / prod_{(i,j) in E \ M} (1 - b_ij)`
    OddRatio,
}

/// Evaluates a product-form expression. The edge set `E` is the support of
/// the marginals. An off-matching marginal equal to one makes the odd-ratio
/// form infinite.
pub fn product_form_value(marginals: &EdgeMarginals, sigma: &[usize], form: ProductForm) -> Result<f64> {
    let n = marginals.n();
    if sigma.len() != n || sigma.iter().any(|&j| j >= n) {
        return Err(Error::DimensionMismatch { expected: n, got: sigma.len() });
    }
    let numerator: f64 = sigma.iter().enumerate().map(|(i, &j)| marginals.get(i, j)).product();
    match form {
        ProductForm::TreeProduct => Ok(numerator),
        ProductForm::OddRatio => {
            let mut denominator = 1.0;
            for i in 0..n {
                for j in 0..n {
                    let b = marginals.get(i, j);
                    if j != sigma[i] && b > 0.0 {
                        denominator *= 1.0 - b;
                    }
                }
            }
            if denominator <= 0.0 {
                Ok(f64::INFINITY)
            } else {
                Ok(numerator / denominator)
            }
        }
    }
}

/// KL divergence from the Gibbs distribution to the normalised product-form
/// approximations built from its own marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicGap {
    pub matchings: usize,
    pub tree_product_kl: f64,
    pub odd_ratio_kl: f64,
}

pub fn heuristic_gap_report(m: &NonNegMatrix) -> Result<HeuristicGap> {
    guard("heuristic gap", m.n(), HEURISTIC_GAP_LIMIT)?;
    let gibbs = gibbs_distribution(m)?;
    let marginals = edge_marginals(&gibbs);
    let kl = |form| -> Result<f64> {
        let values = gibbs
            .matchings()
            .iter()
            .map(|s| product_form_value(&marginals, s, form))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| v.is_infinite()) {
            return Ok(f64::INFINITY);
        }
        let z: f64 = values.iter().sum();
        let mut d = 0.0;
        for (p, v) in gibbs.probs().iter().zip(&values) {
            if *p > 0.0 {
                d += p * (p / (v / z)).ln();
            }
        }
        Ok(d.max(0.0))
    };
    Ok(HeuristicGap {
        matchings: gibbs.matchings().len(),
        tree_product_kl: kl(ProductForm::TreeProduct)?,
        odd_ratio_kl: kl(ProductForm::OddRatio)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate, GeneratorKind};

    fn mat(rows: &[&[f64]]) -> NonNegMatrix {
        NonNegMatrix::validate(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn naive_small_cases() {
        assert_eq!(permanent_naive(&mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap(), 10.0);
        for n in 1..6 {
            assert_eq!(permanent_naive(&NonNegMatrix::identity(n)).unwrap(), 1.0);
        }
        assert_eq!(permanent_naive(&NonNegMatrix::ones(3)).unwrap(), 6.0);
        assert!(matches!(permanent_naive(&NonNegMatrix::ones(11)), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn ryser_small_cases() {
        assert!((permanent_ryser(&mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap() - 10.0).abs() < 1e-12);
        assert!((permanent_ryser(&NonNegMatrix::ones(4)).unwrap() - 24.0).abs() < 1e-12);
        assert_eq!(permanent_ryser(&mat(&[&[7.5]])).unwrap(), 7.5);
        assert!(matches!(permanent_ryser(&NonNegMatrix::ones(31)), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn ryser_matches_naive_on_generated() {
        let m = generate(GeneratorKind::Uniform, 7, 3).unwrap();
        let naive = permanent_naive(&m).unwrap();
        let ryser = permanent_ryser(&m).unwrap();
        assert!(((ryser - naive) / naive).abs() <= 1e-12, "{ryser} vs {naive}");
    }

    #[test]
    fn enumeration_order_and_count() {
        assert_eq!(enumerate_matchings(&NonNegMatrix::identity(2)).unwrap(), vec![vec![0, 1]]);
        assert_eq!(enumerate_matchings(&NonNegMatrix::ones(2)).unwrap(), vec![vec![0, 1], vec![1, 0]]);
        // Of the six permutations only the identity and the 3-cycle avoid zeros.
        let cyc = mat(&[&[1.0, 1.0, 0.0], &[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0]]);
        assert_eq!(enumerate_matchings(&cyc).unwrap(), vec![vec![0, 1, 2], vec![1, 2, 0]]);
    }

    #[test]
    fn gibbs_examples() {
        let g = gibbs_distribution(&NonNegMatrix::ones(2)).unwrap();
        assert_eq!(g.probs(), &[0.5, 0.5]);
        let g = gibbs_distribution(&mat(&[&[2.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert!((g.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
        let g = gibbs_distribution(&NonNegMatrix::identity(3)).unwrap();
        assert_eq!(g.probs(), &[1.0]);
        let empty = mat(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(gibbs_distribution(&empty), Err(Error::NoPerfectMatching));
    }

    #[test]
    fn exact_objective_examples() {
        let j2 = NonNegMatrix::ones(2);
        let uniform = MatchingDistribution::new(vec![vec![0, 1], vec![1, 0]], vec![0.5, 0.5]).unwrap();
        assert!((exact_program_objective(&j2, &uniform).unwrap() - 2f64.ln()).abs() < 1e-15);
        let point = MatchingDistribution::point_mass(vec![0, 1]).unwrap();
        assert_eq!(exact_program_objective(&NonNegMatrix::identity(2), &point).unwrap(), 0.0);

        let a = mat(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let half = exact_program_objective(&a, &uniform).unwrap();
        // 0.5 (log 2 - log 0.5) + 0.5 (0 - log 0.5) = 1.5 log 2 < log 3
        assert!((half - 1.5 * 2f64.ln()).abs() < 1e-15);
        assert!(half < 3f64.ln());
        let at_gibbs = exact_program_objective(&a, &gibbs_distribution(&a).unwrap()).unwrap();
        assert!((at_gibbs - 3f64.ln()).abs() < 1e-12);

        let swap = MatchingDistribution::point_mass(vec![1, 0]).unwrap();
        assert!(exact_program_objective(&NonNegMatrix::identity(2), &swap).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(MatchingDistribution::new(vec![vec![0, 0]], vec![1.0]).is_err());
        assert!(MatchingDistribution::new(vec![vec![0, 1]], vec![0.9]).is_err());
        assert!(MatchingDistribution::new(vec![vec![0, 1], vec![1, 0]], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn marginal_examples() {
        let m = edge_marginals(&gibbs_distribution(&NonNegMatrix::ones(2)).unwrap());
        assert_eq!(m.entries(), &[0.5; 4]);
        let m = edge_marginals(&MatchingDistribution::point_mass(vec![0, 1, 2]).unwrap());
        assert_eq!(m.entries(), NonNegMatrix::identity(3).entries());
        let m = edge_marginals(&gibbs_distribution(&mat(&[&[2.0, 1.0], &[1.0, 1.0]])).unwrap());
        let want = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (g, w) in m.entries().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn product_form_examples() {
        let id = EdgeMarginals::from_row_major(3, NonNegMatrix::identity(3).entries().to_vec()).unwrap();
        assert_eq!(product_form_value(&id, &[0, 1, 2], ProductForm::TreeProduct).unwrap(), 1.0);
        assert_eq!(product_form_value(&id, &[0, 1, 2], ProductForm::OddRatio).unwrap(), 1.0);
        let half = EdgeMarginals::from_row_major(2, vec![0.5; 4]).unwrap();
        assert_eq!(product_form_value(&half, &[0, 1], ProductForm::TreeProduct).unwrap(), 0.25);
        assert_eq!(product_form_value(&half, &[0, 1], ProductForm::OddRatio).unwrap(), 1.0);
        let degenerate = EdgeMarginals::from_row_major(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(product_form_value(&degenerate, &[0, 1], ProductForm::OddRatio).unwrap(), f64::INFINITY);
    }

    #[test]
    fn heuristic_gap_examples() {
        // Upper triangular support: unique matching.
        let tri = mat(&[&[1.0, 2.0, 3.0], &[0.0, 1.0, 5.0], &[0.0, 0.0, 2.0]]);
        let r = heuristic_gap_report(&tri).unwrap();
        assert_eq!(r.matchings, 1);
        assert_eq!((r.tree_product_kl, r.odd_ratio_kl), (0.0, 0.0));
        let r = heuristic_gap_report(&NonNegMatrix::ones(2)).unwrap();
        assert!(r.tree_product_kl.abs() < 1e-15 && r.odd_ratio_kl.abs() < 1e-15);
        let r = heuristic_gap_report(&generate(GeneratorKind::Uniform, 4, 11).unwrap()).unwrap();
        assert!(r.tree_product_kl > 1e-6 && r.odd_ratio_kl > 1e-6, "{r:?}");
    }
}
