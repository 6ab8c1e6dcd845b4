//! Factor sets, objectives and first-order optimality residuals.
//!
//! A [`FactorSet`] holds `(σ, ω, U_1, …, U_d, t)`. Columns of the first
//! `d − t` factors have unit norm; the last `t` factors have orthonormal
//! columns. Under these constraints the rank-1 terms are orthonormal, so
//! minimizing `½‖A − ⟦σ; U⟧‖²` is the same as maximizing
//! `G = Σ_i ⟨A, u_{1,i} ⊗ … ⊗ u_{d,i}⟩²`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};
use crate::tensor::{cp_reconstruct, DenseTensor};

/// Tolerance on `|‖u_{j,i}‖ − 1|` for unit-norm modes.
pub const UNIT_NORM_TOL: f64 = 1e-10;
/// Tolerance on `‖U_jᵀU_j − I‖_F` for orthonormal modes.
pub const ORTHONORMAL_TOL: f64 = 1e-8;
/// Tolerance on the weight invariants `‖ω‖ = 1`, `ω = σ/‖σ‖`.
pub const OMEGA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFactorSet", into = "RawFactorSet")]
pub struct FactorSet {
    pub factors: Vec<Matrix>,
    pub t: usize,
    pub sigma: Vec<f64>,
    pub omega: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawFactorSet {
    #[serde(rename = "R")]
    rank: usize,
    t: usize,
    sigma: Vec<f64>,
    omega: Vec<f64>,
    #[serde(rename = "U")]
    factors: Vec<Matrix>,
}

impl TryFrom<RawFactorSet> for FactorSet {
    type Error = Error;

    fn try_from(raw: RawFactorSet) -> Result<Self> {
        let mut f = FactorSet::new(raw.factors, raw.t)?;
        if f.rank() != raw.rank || raw.sigma.len() != raw.rank || raw.omega.len() != raw.rank {
            return Err(Error::ShapeMismatch(format!(
                "R = {} but factors have {} columns, sigma {} and omega {} entries",
                raw.rank,
                f.rank(),
                raw.sigma.len(),
                raw.omega.len()
            )));
        }
        if raw.sigma.iter().chain(&raw.omega).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { index: 0 });
        }
        f.sigma = raw.sigma;
        f.omega = raw.omega;
        Ok(f)
    }
}

impl From<FactorSet> for RawFactorSet {
    fn from(f: FactorSet) -> Self {
        RawFactorSet {
            rank: f.rank(),
            t: f.t,
            sigma: f.sigma,
            omega: f.omega,
            factors: f.factors,
        }
    }
}

impl FactorSet {
    /// Wraps factor matrices; weights start at zero.
    pub fn new(factors: Vec<Matrix>, t: usize) -> Result<Self> {
        let d = factors.len();
        if d == 0 {
            return Err(Error::InvalidOrder(0));
        }
        if t == 0 || t > d {
            return Err(Error::InvalidConfig(format!(
                "t must lie in 1..={d}, got {t}"
            )));
        }
        let rank = factors[0].cols();
        if factors.iter().any(|f| f.cols() != rank) {
            return Err(Error::ShapeMismatch(
                "all factor matrices need the same number of columns".into(),
            ));
        }
        Ok(Self {
            factors,
            t,
            sigma: vec![0.0; rank],
            omega: vec![0.0; rank],
        })
    }

    /// Wraps factor matrices with given weights; `ω = σ/‖σ‖`.
    pub fn with_sigma(factors: Vec<Matrix>, t: usize, sigma: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(factors, t)?;
        if sigma.len() != f.rank() {
            return Err(Error::ShapeMismatch(format!(
                "sigma has {} entries for rank {}",
                sigma.len(),
                f.rank()
            )));
        }
        f.omega = normalized(&sigma);
        f.sigma = sigma;
        Ok(f)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    /// Number of leading unit-norm modes, `d − t`.
    #[inline]
    pub fn n_free(&self) -> usize {
        self.order() - self.t
    }

    #[inline]
    pub fn is_orthonormal_mode(&self, mode: usize) -> bool {
        mode >= self.n_free()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// Column `i` of every factor, in mode order.
    pub fn columns(&self, i: usize) -> Vec<&[f64]> {
        self.factors.iter().map(|f| f.col(i)).collect()
    }

    /// `σ_i = ⟨A, u_{1,i} ⊗ … ⊗ u_{d,i}⟩` for every `i`.
    pub fn compute_sigma(&self, a: &DenseTensor) -> Result<Vec<f64>> {
        self.check_shape(a)?;
        (0..self.rank())
            .map(|i| a.full_contract(&self.columns(i)))
            .collect()
    }

    /// Recomputes `σ` from `a` and sets `ω = σ/‖σ‖`. Returns `‖σ‖`.
    pub fn refresh_weights(&mut self, a: &DenseTensor) -> Result<f64> {
        self.sigma = self.compute_sigma(a)?;
        self.omega = normalized(&self.sigma);
        Ok(norm(&self.sigma))
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        cp_reconstruct(&self.sigma, &self.factors)
    }

    /// Removes column `i` from every factor and from the weights.
    pub fn drop_column(&self, i: usize) -> Result<FactorSet> {
        if self.rank() < 2 {
            return Err(Error::InvalidConfig("cannot drop the only column".into()));
        }
        let keep: Vec<usize> = (0..self.rank()).filter(|&k| k != i).collect();
        let factors = self.factors.iter().map(|f| f.select_columns(&keep)).collect();
        let sigma: Vec<f64> = keep.iter().map(|&k| self.sigma[k]).collect();
        FactorSet::with_sigma(factors, self.t, sigma)
    }

    pub(crate) fn check_shape(&self, a: &DenseTensor) -> Result<()> {
        if a.shape() != self.shape().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "tensor shape {:?} vs factor shape {:?}",
                a.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("factor sets always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn normalized(x: &[f64]) -> Vec<f64> {
    let n = norm(x);
    if n == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| v / n).collect()
}

/// One violated constraint of a [`FactorSet`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `|‖u_{mode,column}‖ − 1|` on a unit-norm mode.
    ColumnNorm {
        mode: usize,
        column: usize,
        magnitude: f64,
    },
    /// `‖U_modeᵀU_mode − I‖_F` on an orthonormal mode.
    Orthonormality { mode: usize, magnitude: f64 },
    /// An orthonormal mode with fewer rows than columns.
    RankExceedsExtent {
        mode: usize,
        extent: usize,
        rank: usize,
    },
    /// `|‖ω‖ − 1|` while `σ ≠ 0`.
    OmegaNorm { magnitude: f64 },
    /// `‖ω − σ/‖σ‖‖`.
    OmegaMisaligned { magnitude: f64 },
}

impl Violation {
    pub fn magnitude(&self) -> f64 {
        match *self {
            Violation::ColumnNorm { magnitude, .. }
            | Violation::Orthonormality { magnitude, .. }
            | Violation::OmegaNorm { magnitude }
            | Violation::OmegaMisaligned { magnitude } => magnitude,
            Violation::RankExceedsExtent { extent, rank, .. } => (rank - extent) as f64,
        }
    }

    fn concerns_factors(&self) -> bool {
        !matches!(
            self,
            Violation::OmegaNorm { .. } | Violation::OmegaMisaligned { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ColumnNorm {
                mode,
                column,
                magnitude,
            } => write!(
                f,
                "mode {mode} column {column}: column norm off by {magnitude:.3e}"
            ),
            Violation::Orthonormality { mode, magnitude } => {
                write!(f, "mode {mode}: ‖UᵀU − I‖_F = {magnitude:.3e}")
            }
            Violation::RankExceedsExtent { mode, extent, rank } => write!(
                f,
                "mode {mode}: rank {rank} exceeds extent {extent} of an orthonormal mode"
            ),
            Violation::OmegaNorm { magnitude } => {
                write!(f, "omega: norm off by {magnitude:.3e}")
            }
            Violation::OmegaMisaligned { magnitude } => {
                write!(f, "omega: distance to sigma/‖sigma‖ is {magnitude:.3e}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations of the factor constraints only (weights ignored).
    pub fn factor_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.concerns_factors())
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "feasible");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Lists every constraint of `f` violated beyond the module tolerances.
pub fn feasibility_check(f: &FactorSet) -> FeasibilityReport {
    let mut violations = Vec::new();
    let rank = f.rank();
    for (mode, u) in f.factors.iter().enumerate() {
        if f.is_orthonormal_mode(mode) {
            if u.rows() < rank {
                violations.push(Violation::RankExceedsExtent {
                    mode,
                    extent: u.rows(),
                    rank,
                });
            }
            let magnitude = u.orthonormality_defect();
            if magnitude > ORTHONORMAL_TOL {
                violations.push(Violation::Orthonormality { mode, magnitude });
            }
        } else {
            for (column, c) in u.columns().enumerate() {
                let magnitude = (norm(c) - 1.0).abs();
                if magnitude > UNIT_NORM_TOL {
                    violations.push(Violation::ColumnNorm {
                        mode,
                        column,
                        magnitude,
                    });
                }
            }
        }
    }
    let sn = norm(&f.sigma);
    if sn > 0.0 {
        let magnitude = (norm(&f.omega) - 1.0).abs();
        if magnitude > OMEGA_TOL {
            violations.push(Violation::OmegaNorm { magnitude });
        }
        let magnitude = f
            .omega
            .iter()
            .zip(&f.sigma)
            .map(|(w, s)| (w - s / sn).powi(2))
            .sum::<f64>()
            .sqrt();
        if magnitude > OMEGA_TOL {
            violations.push(Violation::OmegaMisaligned { magnitude });
        }
    }
    FeasibilityReport { violations }
}

/// `F = ½‖A − ⟦σ; U⟧‖²` with the stored weights.
pub fn objective_f(a: &DenseTensor, f: &FactorSet) -> Result<f64> {
    f.check_shape(a)?;
    let r = f.reconstruct()?;
    let diff = a.add_scaled(-1.0, &r)?;
    Ok(0.5 * diff.frobenius_norm().powi(2))
}

/// `G = Σ_i σ_i²` with `σ_i = ⟨A, ⊗_j u_{j,i}⟩`.
pub fn objective_g(a: &DenseTensor, f: &FactorSet) -> Result<f64> {
    Ok(f.compute_sigma(a)?.iter().map(|s| s * s).sum())
}

/// `H = Σ_i σ_i ω_i` with `σ` recomputed from `A` and the stored `ω`.
pub fn objective_h(a: &DenseTensor, f: &FactorSet) -> Result<f64> {
    let sigma = f.compute_sigma(a)?;
    Ok(sigma.iter().zip(&f.omega).map(|(s, w)| s * w).sum())
}

/// Columns `v_{mode,i} = A ⊗_{l≠mode} u_{l,i}` computed one column at a time.
pub fn mode_gradients(a: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
    let rank = factors[0].cols();
    let mut out = Matrix::zeros(factors[mode].rows(), rank);
    for i in 0..rank {
        let others: Vec<&[f64]> = factors
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != mode)
            .map(|(_, f)| f.col(i))
            .collect();
        let v = a.rank1_contract(&others, mode)?;
        out.col_mut(i).copy_from_slice(&v);
    }
    Ok(out)
}

/// Stationarity residuals of the constrained maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Per-mode residual.
    pub rho: Vec<f64>,
    /// Multipliers `η_{j,i} = σ_i²` for the unit-norm modes, `eta[j][i]`.
    pub eta: Vec<Vec<f64>>,
    /// Symmetric multiplier estimates `Λ_j = sym(U_jᵀ V_j diag(σ))` for the
    /// orthonormal modes.
    pub lambda: Vec<Matrix>,
    /// `max_j rho_j / (1 + ‖σ‖)`.
    pub total: f64,
    pub sigma: Vec<f64>,
}

/// Residuals of the KKT system at `f`:
///
/// * unit-norm mode `j`: `max_i ‖v_{j,i} − σ_i u_{j,i}‖`;
/// * orthonormal mode `j`, with `W = V_j diag(σ)`:
///   `‖(I − U_jU_jᵀ)W‖_F + ‖U_jᵀW − WᵀU_j‖_F`.
pub fn kkt_residual(a: &DenseTensor, f: &FactorSet) -> Result<KktReport> {
    let sigma = f.compute_sigma(a)?;
    let d = f.order();
    let rank = f.rank();
    let mut rho = Vec::with_capacity(d);
    let mut eta = Vec::new();
    let mut lambda = Vec::new();
    for j in 0..d {
        let v = mode_gradients(a, &f.factors, j)?;
        let u = &f.factors[j];
        if f.is_orthonormal_mode(j) {
            let w = v.scale_columns(&sigma);
            let utw = u.t_matmul(&w)?;
            let range = w.sub(&u.matmul(&utw)?)?.frobenius_norm();
            let skew = utw.sub(&utw.transpose())?.frobenius_norm();
            rho.push(range + skew);
            let mut sym = Matrix::zeros(rank, rank);
            for p in 0..rank {
                for q in 0..rank {
                    sym.set(p, q, 0.5 * (utw.get(p, q) + utw.get(q, p)));
                }
            }
            lambda.push(sym);
        } else {
            let worst = (0..rank)
                .map(|i| {
                    v.col(i)
                        .iter()
                        .zip(u.col(i))
                        .map(|(x, y)| (x - sigma[i] * y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            rho.push(worst);
            eta.push(sigma.iter().map(|s| s * s).collect());
        }
    }
    let total = rho.iter().copied().fold(0.0, f64::max) / (1.0 + norm(&sigma));
    Ok(KktReport {
        rho,
        eta,
        lambda,
        total,
        sigma,
    })
}
