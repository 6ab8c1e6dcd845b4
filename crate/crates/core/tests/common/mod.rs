//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use otap::model::FactorSet;
use otap::{DenseTensor, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

pub fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = uniform_vec(rng, n);
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-3 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::from_vec(shape.to_vec(), uniform_vec(rng, n)).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, uniform_vec(rng, rows * cols)).unwrap()
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.rows(), m.cols(), m.values())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::new(m.nrows(), m.ncols(), m.as_slice().to_vec()).unwrap()
}

/// Orthonormal basis from the QR factorization of a random matrix.
pub fn random_stiefel(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let qr = to_na(&random_matrix(rng, rows, cols)).qr();
    from_na(&qr.q())
}

/// Singular values via the symmetric eigenproblem of `CᵀC`, descending.
pub fn singular_values(c: &Matrix) -> Vec<f64> {
    let a = to_na(c);
    let gram = a.transpose() * &a;
    let mut ev: Vec<f64> = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&x| x.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn spectral_norm(c: &Matrix) -> f64 {
    to_na(c).singular_values().max()
}

/// Multi-index (0-based) of flat position `k` in mode-1-fastest layout.
pub fn multi_index(mut k: usize, shape: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .map(|&n| {
            let i = k % n;
            k /= n;
            i
        })
        .collect()
}

/// Unfolding by the explicit column formula `1 + Σ_{l≠j} (i_l − 1) J_l`.
pub fn naive_unfold(t: &DenseTensor, mode: usize) -> Matrix {
    let shape = t.shape();
    let rows = shape[mode];
    let cols = t.len() / rows;
    let mut out = Matrix::zeros(rows, cols);
    for (k, &x) in t.values().iter().enumerate() {
        let idx = multi_index(k, shape);
        let mut col = 0;
        let mut stride = 1;
        for (l, &i) in idx.iter().enumerate() {
            if l == mode {
                continue;
            }
            col += i * stride;
            stride *= shape[l];
        }
        out.set(idx[mode], col, x);
    }
    out
}

/// Nested-loop contraction of every mode except `skip`.
pub fn naive_contract(t: &DenseTensor, vectors: &[&[f64]], skip: usize) -> Vec<f64> {
    let shape = t.shape();
    let mut out = vec![0.0; shape[skip]];
    for (k, &x) in t.values().iter().enumerate() {
        let idx = multi_index(k, shape);
        let mut w = x;
        let mut slot = 0;
        for (l, &i) in idx.iter().enumerate() {
            if l == skip {
                continue;
            }
            w *= vectors[slot][i];
            slot += 1;
        }
        out[idx[skip]] += w;
    }
    out
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Exhaustive minimum over permutations with per-entry sign choice.
pub fn brute_force_rel_err(truth: &FactorSet, rec: &FactorSet) -> f64 {
    let r = truth.rank();
    let mut best = f64::INFINITY;
    for perm in permutations(r) {
        let mut total = 0.0;
        for (i, &p) in perm.iter().enumerate() {
            for (u, w) in truth.factors.iter().zip(&rec.factors) {
                let plus: f64 = u.col(i).iter().zip(w.col(p)).map(|(a, b)| (a - b).powi(2)).sum();
                let minus: f64 = u.col(i).iter().zip(w.col(p)).map(|(a, b)| (a + b).powi(2)).sum();
                total += plus.min(minus);
            }
        }
        best = best.min(total);
    }
    let base: f64 = truth.factors.iter().map(|u| u.values().iter().map(|x| x * x).sum::<f64>()).sum();
    (best / base).sqrt()
}

/// Kruskal rank by ascending subset enumeration with an independent rank test.
pub fn subset_kruskal(m: &Matrix) -> usize {
    let cols = m.cols();
    let full = to_na(m);
    let mut k_rank = 0;
    for k in 1..=cols.min(m.rows()) {
        let mut all = true;
        for mask in 0u32..(1 << cols) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let idx: Vec<usize> = (0..cols).filter(|c| mask & (1 << c) != 0).collect();
            let sub = full.select_columns(idx.iter());
            let sv = sub.singular_values();
            let top = sv.max();
            if !(top > 0.0 && sv.min() > 1e-10 * top) {
                all = false;
                break;
            }
        }
        if !all {
            break;
        }
        k_rank = k;
    }
    k_rank
}

/// `H = Σ σ_i ω_i` from first principles.
pub fn naive_h(a: &DenseTensor, f: &FactorSet) -> f64 {
    (0..f.rank())
        .map(|i| {
            let cols: Vec<&[f64]> = f.factors.iter().map(|u| u.col(i)).collect();
            let t = DenseTensor::outer(&cols).unwrap();
            f.omega[i] * t.inner(a).unwrap()
        })
        .sum()
}

/// One ε-ALS outer iteration written directly from the update rules, with
/// gradients from nested loops.
pub fn shadow_iteration(a: &DenseTensor, f: &mut FactorSet, eps1: f64, eps2: f64) {
    let d = f.order();
    let r = f.rank();
    for j in 0..d {
        let mut v = Matrix::zeros(f.factors[j].rows(), r);
        for i in 0..r {
            let others: Vec<&[f64]> = (0..d).filter(|&l| l != j).map(|l| f.factors[l].col(i)).collect();
            v.col_mut(i).copy_from_slice(&naive_contract(a, &others, j));
        }
        let mut vt = v.clone();
        for i in 0..r {
            for (x, u) in vt.col_mut(i).iter_mut().zip(f.factors[j].col(i)) {
                *x = *x * f.omega[i] + if j < d - f.t { eps1 } else { eps2 } * u;
            }
        }
        if j < d - f.t {
            for i in 0..r {
                let n = vt.col(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    let col: Vec<f64> = vt.col(i).iter().map(|x| x / n).collect();
                    f.factors[j].col_mut(i).copy_from_slice(&col);
                }
            }
        } else {
            let svd = to_na(&vt).svd(true, true);
            let u = svd.u.unwrap() * svd.v_t.unwrap();
            f.factors[j] = from_na(&u);
        }
    }
    let sigma: Vec<f64> = (0..r)
        .map(|i| {
            let cols: Vec<&[f64]> = f.factors.iter().map(|u| u.col(i)).collect();
            DenseTensor::outer(&cols).unwrap().inner(a).unwrap()
        })
        .collect();
    let n = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    f.omega = sigma.iter().map(|s| s / n).collect();
    f.sigma = sigma;
}
