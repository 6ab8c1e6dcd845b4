//! Starting points for the solver.
//!
//! [`get_initializer`] takes the leading left singular vectors of the
//! unfoldings for the orthonormal modes, then fills the remaining modes one
//! column at a time with a recursive rank-1 approximation of the partially
//! contracted tensor ([`rank1_approx`]). [`random_init`] draws a seeded
//! feasible point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{leading_singular_pair, left_singular_vectors, polar_decompose};
use crate::matrix::{norm, Matrix};
use crate::model::FactorSet;
use crate::tensor::DenseTensor;

/// A rank-1 approximation `value · x_1 ⊗ … ⊗ x_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Result {
    /// One unit vector per mode.
    pub vectors: Vec<Vec<f64>>,
    /// `⟨B, x_1 ⊗ … ⊗ x_m⟩`.
    pub value: f64,
}

/// The constant `ξ(m)` bounding the loss of the recursive rank-1
/// approximation against the spectral norm of the leading reshape.
///
/// `shape` must be sorted ascending. Orders 1 and 2 give 1, since the
/// recursion is exact there.
pub fn xi(shape: &[usize]) -> Result<f64> {
    let m = shape.len();
    if m == 0 {
        return Err(Error::InvalidOrder(0));
    }
    if m <= 2 {
        return Ok(1.0);
    }
    // 1-based extent lookup
    let n = |j: usize| shape[j - 1] as f64;
    let squared = if m.is_multiple_of(2) {
        let head: f64 = (1..m).map(n).product();
        let odd: f64 = (1..=(m / 2).saturating_sub(2)).map(|j| n(2 * j + 1)).product();
        head * odd / n(2)
    } else {
        let head: f64 = (2..m).map(n).product();
        let even: f64 = (1..=m.div_ceil(2).saturating_sub(2)).map(|j| n(2 * j)).product();
        head * even
    };
    Ok(squared.sqrt())
}

/// Recursive rank-1 approximation of a nonzero tensor.
///
/// Modes are sorted by extent before the recursion and restored afterwards.
/// Order 1 normalizes, order 2 takes the leading singular pair, and higher
/// orders split off the last two modes through the leading singular pair
/// of the `(Π_{j≤m−2} n_j) × (n_{m−1} n_m)` reshape.
pub fn rank1_approx(b: &DenseTensor) -> Result<Rank1Result> {
    if b.frobenius_norm() == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let mut perm: Vec<usize> = (0..b.order()).collect();
    perm.sort_by_key(|&k| b.shape()[k]);
    let sorted = b.permute_modes(&perm)?;
    let found = rank1_sorted(&sorted)?;
    let mut vectors = vec![Vec::new(); b.order()];
    for (k, v) in found.into_iter().enumerate() {
        vectors[perm[k]] = v;
    }
    let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    let value = b.full_contract(&refs)?;
    Ok(Rank1Result { vectors, value })
}

fn rank1_sorted(b: &DenseTensor) -> Result<Vec<Vec<f64>>> {
    let shape = b.shape().to_vec();
    let m = shape.len();
    match m {
        1 => {
            let n = b.frobenius_norm();
            if n == 0.0 {
                return Err(Error::ZeroTensor);
            }
            Ok(vec![b.values().iter().map(|x| x / n).collect()])
        }
        2 => {
            let (u, _, v) = leading_singular_pair(&b.as_matrix(shape[0])?)?;
            Ok(vec![u, v])
        }
        _ => {
            let rows: usize = shape[..m - 2].iter().product();
            let (_, _, right) = leading_singular_pair(&b.as_matrix(rows)?)?;
            let tail = Matrix::new(shape[m - 2], shape[m - 1], right)?;
            let (x_prev, _, x_last) = leading_singular_pair(&tail)?;
            let rest = b.ttv(m - 1, &x_last)?.ttv(m - 2, &x_prev)?;
            let mut vectors = rank1_sorted(&rest)?;
            vectors.push(x_prev);
            vectors.push(x_last);
            Ok(vectors)
        }
    }
}

fn check_ranks(shape: &[usize], rank: usize, t: usize) -> Result<()> {
    let d = shape.len();
    if t == 0 || t > d {
        return Err(Error::InvalidConfig(format!("t must lie in 1..={d}, got {t}")));
    }
    if rank == 0 {
        return Err(Error::InvalidConfig("rank must be positive".into()));
    }
    for (mode, &extent) in shape.iter().enumerate().skip(d - t) {
        if extent < rank {
            return Err(Error::RankTooLarge {
                rank,
                mode,
                extent,
            });
        }
    }
    Ok(())
}

/// Truncated-HOSVD orthonormal modes plus per-column rank-1 fills.
pub fn get_initializer(a: &DenseTensor, rank: usize, t: usize) -> Result<FactorSet> {
    let shape = a.shape().to_vec();
    let d = shape.len();
    check_ranks(&shape, rank, t)?;
    let free = d - t;
    let mut factors: Vec<Matrix> = shape.iter().map(|&n| Matrix::zeros(n, rank)).collect();
    for (mode, slot) in factors.iter_mut().enumerate().skip(free) {
        *slot = left_singular_vectors(&a.unfold(mode)?, rank)?.0;
    }
    for i in 0..rank {
        if free == 0 {
            break;
        }
        let mut sub = a.clone();
        for mode in (free..d).rev() {
            sub = sub.ttv(mode, factors[mode].col(i))?;
        }
        let vectors = match rank1_approx(&sub) {
            Ok(r) => r.vectors,
            Err(Error::ZeroTensor) => shape[..free].iter().map(|&n| unit(n)).collect(),
            Err(e) => return Err(e),
        };
        for (mode, v) in vectors.into_iter().enumerate() {
            factors[mode].col_mut(i).copy_from_slice(&v);
        }
    }
    let mut f = FactorSet::new(factors, t)?;
    if f.refresh_weights(a)? == 0.0 {
        return Err(Error::DegenerateInitializer);
    }
    Ok(f)
}

fn unit(n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    e
}

/// Seeded feasible point with entries drawn uniformly from `[−1, 1]`.
pub fn random_init(a: &DenseTensor, rank: usize, t: usize, seed: u64) -> Result<FactorSet> {
    let shape = a.shape().to_vec();
    check_ranks(&shape, rank, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free = shape.len() - t;
    let mut factors = Vec::with_capacity(shape.len());
    for (mode, &n) in shape.iter().enumerate() {
        let values: Vec<f64> = (0..n * rank).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut u = Matrix::new(n, rank, values)?;
        if mode < free {
            normalize_columns(&mut u);
        } else {
            u = polar_decompose(&u)?.u;
        }
        factors.push(u);
    }
    let mut f = FactorSet::new(factors, t)?;
    f.refresh_weights(a)?;
    Ok(f)
}

/// Scales every column to unit norm; zero columns become `e_1`.
pub(crate) fn normalize_columns(u: &mut Matrix) {
    let rows = u.rows();
    for c in 0..u.cols() {
        let col = u.col_mut(c);
        let n = norm(col);
        if n == 0.0 {
            col.copy_from_slice(&unit(rows));
        } else {
            col.iter_mut().for_each(|x| *x /= n);
        }
    }
}
