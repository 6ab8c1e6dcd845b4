//! Kruskal rank and the uniqueness criterion built on it.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::thin_svd;
use crate::matrix::Matrix;
use crate::model::FactorSet;

/// Column count above which subset enumeration is refused.
pub const MAX_KRUSKAL_COLUMNS: usize = 12;

/// Relative threshold on the smallest singular value of a column subset.
const RANK_TOL: f64 = 1e-10;

/// Largest `k` such that every `k` columns of `m` are linearly independent.
pub fn kruskal_rank(m: &Matrix) -> Result<usize> {
    let cols = m.cols();
    if cols > MAX_KRUSKAL_COLUMNS {
        return Err(Error::TooManyColumns {
            cols,
            max: MAX_KRUSKAL_COLUMNS,
        });
    }
    for k in (1..=cols.min(m.rows())).rev() {
        if every_subset_independent(m, k)? {
            return Ok(k);
        }
    }
    Ok(0)
}

fn every_subset_independent(m: &Matrix, k: usize) -> Result<bool> {
    let cols = m.cols();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if !independent(&m.select_columns(&idx))? {
            return Ok(false);
        }
        // next combination in lexicographic order
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < cols - k + p) else {
            return Ok(true);
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

fn independent(sub: &Matrix) -> Result<bool> {
    let lambda = thin_svd(sub)?.lambda;
    let top = lambda[0];
    let bottom = *lambda.last().expect("nonempty subset");
    Ok(top > 0.0 && bottom > RANK_TOL * top)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Unique,
    NotCertified,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Unique => "Unique",
            Verdict::NotCertified => "NotCertified",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub verdict: Verdict,
    pub reason: String,
    /// Kruskal rank per mode; empty when the premise check failed first.
    pub kruskal_ranks: Vec<usize>,
}

/// Evaluates the sufficient uniqueness conditions for a decomposition whose
/// last `t` factors are columnwise orthonormal. `NotCertified` only means
/// the sufficient condition fails.
pub fn uniqueness_check(f: &FactorSet) -> Result<UniquenessReport> {
    let rank = f.rank();
    let not_certified = |reason: String, kruskal_ranks: Vec<usize>| UniquenessReport {
        verdict: Verdict::NotCertified,
        reason,
        kruskal_ranks,
    };
    if rank < 2 {
        return Ok(not_certified(
            "R ≥ 2 required by the uniqueness criterion premise".into(),
            Vec::new(),
        ));
    }
    if let Some(i) = f.sigma.iter().position(|&s| s == 0.0) {
        return Ok(not_certified(format!("sigma_{i} is zero"), Vec::new()));
    }
    let ranks = f
        .factors
        .iter()
        .map(kruskal_rank)
        .collect::<Result<Vec<_>>>()?;
    if let Some(j) = ranks.iter().position(|&k| k == 0) {
        return Ok(not_certified(format!("mode {j} has a zero column"), ranks));
    }
    let d = f.order();
    let free = &ranks[..f.n_free()];
    let (ok, reason) = match f.t {
        1 => {
            let sum: usize = free.iter().sum();
            (
                sum >= rank + d - 1,
                format!(
                    "t = 1: sum of free-mode Kruskal ranks {sum} against R + d − 1 = {}",
                    rank + d - 1
                ),
            )
        }
        2 => (
            free.iter().any(|&k| k >= 2),
            "t = 2: some free mode needs Kruskal rank ≥ 2".to_string(),
        ),
        _ => (true, format!("t = {} ≥ 3 with R ≥ 2", f.t)),
    };
    Ok(UniquenessReport {
        verdict: if ok { Verdict::Unique } else { Verdict::NotCertified },
        reason,
        kruskal_ranks: ranks,
    })
}
