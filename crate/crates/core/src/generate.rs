//! Seeded instance generators.

use std::fmt;
use std::str::FromStr;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{maximum_matching, NonNegMatrix};

/// Attempts allowed for kinds that must be regenerated until the support
/// carries a perfect matching.
pub const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Entries uniform on `(0, 1]`.
    Uniform,
    /// Entries drawn from `Exp(1)`.
    Exponential,
    /// Each entry present with probability `p`, value uniform on `(0, 1]`.
    Sparse(f64),
    /// Two dense diagonal blocks, zero elsewhere.
    Block,
    /// Entries in `{0, 1}`, each one with probability 1/2.
    Binary,
}

impl GeneratorKind {
    fn needs_matching_check(self) -> bool {
        matches!(self, GeneratorKind::Sparse(_) | GeneratorKind::Binary)
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::Uniform => f.write_str("uniform"),
            GeneratorKind::Exponential => f.write_str("exponential"),
            GeneratorKind::Sparse(p) => write!(f, "sparse({p})"),
            GeneratorKind::Block => f.write_str("block"),
            GeneratorKind::Binary => f.write_str("binary"),
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "uniform" => return Ok(GeneratorKind::Uniform),
            "exponential" => return Ok(GeneratorKind::Exponential),
            "block" => return Ok(GeneratorKind::Block),
            "binary" => return Ok(GeneratorKind::Binary),
            _ => {}
        }
        let p = s
            .strip_prefix("sparse(")
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("unknown generator kind `{s}`")))?;
        let p: f64 = p.parse().map_err(|_| Error::Parse(format!("bad sparsity `{p}`")))?;
        Ok(GeneratorKind::Sparse(p))
    }
}

/// A `kind:n:seed` triple, e.g. `uniform:5:42` or `sparse(0.5):6:1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub seed: u64,
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.n, self.seed)
    }
}

impl FromStr for GenSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.rsplitn(3, ':');
        let (seed, n, kind) = match (parts.next(), parts.next(), parts.next()) {
            (Some(seed), Some(n), Some(kind)) => (seed, n, kind),
            _ => return Err(Error::Parse(format!("expected kind:n:seed, got `{s}`"))),
        };
        Ok(GenSpec {
            kind: kind.parse()?,
            n: n.parse().map_err(|_| Error::Parse(format!("bad dimension `{n}`")))?,
            seed: seed.parse().map_err(|_| Error::Parse(format!("bad seed `{seed}`")))?,
        })
    }
}

impl GenSpec {
    pub fn generate(&self) -> Result<NonNegMatrix> {
        generate(self.kind, self.n, self.seed)
    }
}

/// Deterministic instance for `(kind, n, seed)`.
pub fn generate(kind: GeneratorKind, n: usize, seed: u64) -> Result<NonNegMatrix> {
    if n == 0 {
        return Err(Error::Empty);
    }
    if let GeneratorKind::Sparse(p) = kind {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!("sparsity {p} outside (0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts = if kind.needs_matching_check() { MAX_ATTEMPTS } else { 1 };
    for _ in 0..attempts {
        let entries = draw(kind, n, &mut rng);
        let m = NonNegMatrix::from_row_major(n, entries)?;
        if !kind.needs_matching_check() || maximum_matching(n, m.support()).iter().all(Option::is_some) {
            return Ok(m);
        }
    }
    Err(Error::RetriesExhausted { attempts })
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    // (0, 1]
    1.0 - rng.gen::<f64>()
}

fn draw(kind: GeneratorKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match kind {
        GeneratorKind::Uniform => (0..n * n).map(|_| unit(rng)).collect(),
        GeneratorKind::Exponential => (0..n * n)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                -u.ln()
            })
            .collect(),
        GeneratorKind::Sparse(p) => (0..n * n)
            .map(|_| {
                let keep = rng.gen::<f64>() < p;
                let v = unit(rng);
                if keep {
                    v
                } else {
                    0.0
                }
            })
            .collect(),
        GeneratorKind::Block => {
            let split = n.div_ceil(2);
            let mut entries = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let v = unit(rng);
                    entries.push(if (i < split) == (j < split) { v } else { 0.0 });
                }
            }
            entries
        }
        GeneratorKind::Binary => {
            (0..n * n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect()
        }
    }
}
