//! ε-ALS iteration.
//!
//! One outer iteration performs a Gauss–Seidel pass over the unit-norm
//! factors (column-wise normalized shifted gradients), then the orthonormal
//! factors (polar factor of the shifted gradient matrix), then resets the
//! weights `ω = σ/‖σ‖`. The cost `H = Σ σ_i ω_i` never decreases along
//! the iteration when both shifts are nonnegative.

use std::fmt;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::polar_decompose;
use crate::matrix::{khatri_rao, norm, Matrix};
use crate::model::{feasibility_check, kkt_residual, mode_gradients, normalized, objective_h, FactorSet};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Shift for the unit-norm modes.
    pub eps1: f64,
    /// Shift for the orthonormal modes.
    pub eps2: f64,
    /// Relative step threshold for convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// A column is degenerate once `|σ_i| < sigma_floor · ‖A‖_F`.
    pub sigma_floor: f64,
    /// Compute gradients through cached unfoldings and Khatri–Rao products.
    pub batched: bool,
    /// KKT residuals are sampled every `trace_stride` iterations.
    pub trace_stride: usize,
    /// Drop degenerate columns and keep iterating.
    pub auto_reduce_rank: bool,
    /// Record per-sweep gains (costly; for diagnostics and tests).
    pub instrument: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps1: 1e-8,
            eps2: 1e-8,
            tol: 1e-4,
            max_iter: 2000,
            sigma_floor: 1e-12,
            batched: true,
            trace_stride: 10,
            auto_reduce_rank: false,
            instrument: false,
        }
    }
}

impl SolverConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.eps1 >= 0.0 && self.eps1.is_finite()) || !(self.eps2 >= 0.0 && self.eps2.is_finite()) {
            return bad("eps1 and eps2 must be finite and nonnegative");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.sigma_floor >= 0.0) {
            return bad("sigma_floor must be nonnegative");
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIter,
    Degenerate,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Converged => "Converged",
            Status::MaxIter => "MaxIter",
            Status::Degenerate => "Degenerate",
        })
    }
}

/// State after outer iteration `iter`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub h: f64,
    pub g: f64,
    pub sigma_norm: f64,
    /// `‖(u^{k+1}) − (u^k)‖` over all factor entries.
    pub step_norm: f64,
    /// `step_norm / ‖(u^k)‖`.
    pub rel_step: f64,
    /// `‖ω^{k+1} − ω^k‖`.
    pub omega_step: f64,
    pub kkt_total: Option<f64>,
    /// Smallest `λ_R(Ṽ_j)` over the orthonormal sweeps of this iteration.
    pub min_lambda_r: Option<f64>,
}

/// Gain bookkeeping for a single block update, filled when
/// [`SolverConfig::instrument`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub iter: usize,
    pub kind: SweepKind,
    /// `H` recomputed from scratch before and after the block update.
    pub h_before: f64,
    pub h_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepKind {
    /// Unit-norm mode. Per column: measured gain and `((‖ṽ‖+ε₁)/2)‖Δu‖²`.
    Free { mode: usize, columns: Vec<ColumnGain> },
    /// Orthonormal mode with the lower bound `((λ_R(Ṽ)+ε₂)/2)‖ΔU‖²`.
    Orthonormal { mode: usize, bound: f64, lambda_r: f64 },
    /// Weight reset with predicted gain `(‖σ‖/2)‖Δω‖²`.
    Weights { predicted: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnGain {
    pub measured: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub status: Status,
    /// `H` at the initial point with `ω = σ/‖σ‖`, i.e. `‖σ⁰‖`.
    pub h_init: f64,
    /// `(iteration, column)` for every dropped column.
    pub rank_reductions: Vec<(usize, usize)>,
    /// Columns with `|σ_i|` below the floor at the final iterate.
    pub degenerate_columns: Vec<usize>,
    pub sweeps: Vec<SweepRecord>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,H,G,sigma_norm,step_norm,omega_step,kkt_total")?;
        for r in &self.records {
            let kkt = r.kkt_total.map(|k| format!("{k:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{}",
                r.iter, r.h, r.g, r.sigma_norm, r.step_norm, r.omega_step, kkt
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Computes gradient matrices `V_j`, column `i` being `A ⊗_{l≠j} u_{l,i}`.
pub struct Contractor<'a> {
    a: &'a DenseTensor,
    unfoldings: Option<Vec<Matrix>>,
}

impl<'a> Contractor<'a> {
    /// With `batched`, unfoldings are cached and `V_j = A_(j) · (U_d ⊙ … ⊙ U_1)`
    /// with mode `j` left out of the Khatri–Rao chain.
    pub fn new(a: &'a DenseTensor, batched: bool) -> Result<Self> {
        let unfoldings = if batched && a.order() > 1 {
            Some((0..a.order()).map(|j| a.unfold(j)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self { a, unfoldings })
    }

    pub fn tensor(&self) -> &DenseTensor {
        self.a
    }

    pub fn gradients(&self, factors: &[Matrix], mode: usize) -> Result<Matrix> {
        let Some(unfoldings) = &self.unfoldings else {
            return mode_gradients(self.a, factors, mode);
        };
        let mut chain: Option<Matrix> = None;
        for (l, u) in factors.iter().enumerate() {
            if l == mode {
                continue;
            }
            chain = Some(match chain {
                None => u.clone(),
                Some(acc) => khatri_rao(u, &acc)?,
            });
        }
        let chain = chain.expect("order ≥ 2 when batched");
        unfoldings[mode].matmul(&chain)
    }
}

/// Outcome of one unit-norm block update.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeSweep {
    pub v_tilde_norms: Vec<f64>,
    /// `‖u_i^{new} − u_i^{old}‖` per column.
    pub steps: Vec<f64>,
    /// `((‖ṽ_i‖+ε₁)/2)‖Δu_i‖²` per column.
    pub predicted_gains: Vec<f64>,
}

/// Outcome of one orthonormal block update.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalSweep {
    pub v_tilde: Matrix,
    /// Smallest singular value of `Ṽ_j`.
    pub lambda_r: f64,
    /// `‖U^{new} − U^{old}‖_F`.
    pub step: f64,
    /// `((λ_R(Ṽ)+ε₂)/2)‖ΔU‖²`.
    pub bound: f64,
}

/// Outcome of the weight reset.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub sigma_norm: f64,
    pub omega_step: f64,
    /// `(‖σ‖/2)‖ω^{new} − ω^{old}‖²`.
    pub predicted_gain: f64,
}

/// Updates the unit-norm factor `mode`: `u_i ← ṽ_i/‖ṽ_i‖` with
/// `ṽ_i = ω_i v_i + ε₁ u_i`. A zero `ṽ_i` leaves `u_i` in place.
pub fn sweep_nonorthogonal(
    ctr: &Contractor<'_>,
    state: &mut FactorSet,
    mode: usize,
    eps1: f64,
) -> Result<FreeSweep> {
    if state.is_orthonormal_mode(mode) {
        return Err(Error::InvalidMode {
            mode,
            order: state.n_free(),
        });
    }
    let v = ctr.gradients(&state.factors, mode)?;
    let rank = state.rank();
    let mut out = FreeSweep {
        v_tilde_norms: Vec::with_capacity(rank),
        steps: Vec::with_capacity(rank),
        predicted_gains: Vec::with_capacity(rank),
    };
    for i in 0..rank {
        let w = state.omega[i];
        let u = state.factors[mode].col_mut(i);
        let mut vt: Vec<f64> = v.col(i).iter().zip(u.iter()).map(|(x, y)| w * x + eps1 * y).collect();
        let nv = norm(&vt);
        let mut step = 0.0;
        if nv > 0.0 {
            vt.iter_mut().for_each(|x| *x /= nv);
            step = vt.iter().zip(u.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            u.copy_from_slice(&vt);
        }
        out.v_tilde_norms.push(nv);
        out.steps.push(step);
        out.predicted_gains.push(0.5 * (nv + eps1) * step * step);
    }
    Ok(out)
}

/// Updates the orthonormal factor `mode` to the polar factor of
/// `Ṽ = V diag(ω) + ε₂ U`.
pub fn sweep_orthonormal(
    ctr: &Contractor<'_>,
    state: &mut FactorSet,
    mode: usize,
    eps2: f64,
) -> Result<OrthonormalSweep> {
    if !state.is_orthonormal_mode(mode) || mode >= state.order() {
        return Err(Error::InvalidMode {
            mode,
            order: state.order(),
        });
    }
    let v = ctr.gradients(&state.factors, mode)?;
    let old = &state.factors[mode];
    let v_tilde = v.scale_columns(&state.omega).add_scaled(eps2, old)?;
    let polar = polar_decompose(&v_tilde)?;
    let step = polar.u.distance(old)?;
    let lambda_r = polar.singular_values.last().copied().unwrap_or(0.0);
    state.factors[mode] = polar.u;
    Ok(OrthonormalSweep {
        v_tilde,
        lambda_r,
        step,
        bound: 0.5 * (lambda_r + eps2) * step * step,
    })
}

/// Recomputes `σ` from the current factors and resets `ω = σ/‖σ‖`.
pub fn update_weights(a: &DenseTensor, state: &mut FactorSet) -> Result<WeightUpdate> {
    let sigma = state.compute_sigma(a)?;
    let sigma_norm = norm(&sigma);
    if sigma_norm == 0.0 {
        return Err(Error::DegenerateSigma);
    }
    let omega = normalized(&sigma);
    let omega_step = omega
        .iter()
        .zip(&state.omega)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    state.sigma = sigma;
    state.omega = omega;
    Ok(WeightUpdate {
        sigma_norm,
        omega_step,
        predicted_gain: 0.5 * sigma_norm * omega_step * omega_step,
    })
}

/// Runs ε-ALS from `init` until the relative factor step drops to
/// `config.tol` or `config.max_iter` iterations have run.
pub fn run(
    a: &DenseTensor,
    init: &FactorSet,
    config: &SolverConfig,
) -> Result<(FactorSet, IterationTrace)> {
    config.validate()?;
    init.check_shape(a)?;
    for (mode, u) in init.factors.iter().enumerate().skip(init.n_free()) {
        if u.rows() < init.rank() {
            return Err(Error::RankTooLarge {
                rank: init.rank(),
                mode,
                extent: u.rows(),
            });
        }
    }
    let report = feasibility_check(init);
    let issues: Vec<String> = report.factor_violations().map(|v| v.to_string()).collect();
    if !issues.is_empty() {
        return Err(Error::InfeasibleInit(issues.join("; ")));
    }

    let ctr = Contractor::new(a, config.batched)?;
    let a_norm = a.frobenius_norm();
    let mut state = init.clone();
    let h_init = state.refresh_weights(a)?;
    if h_init == 0.0 {
        return Err(Error::DegenerateInitializer);
    }
    let mut trace = IterationTrace {
        records: Vec::new(),
        status: Status::MaxIter,
        h_init,
        rank_reductions: Vec::new(),
        degenerate_columns: Vec::new(),
        sweeps: Vec::new(),
    };
    let mut flagged: Vec<usize> = Vec::new();

    for iter in 1..=config.max_iter {
        let previous = state.factors.clone();
        let mut min_lambda_r: Option<f64> = None;

        for mode in 0..state.n_free() {
            let before = instrument_h(a, &state, config)?;
            let old_sigma = if config.instrument { Some(state.compute_sigma(a)?) } else { None };
            let sweep = sweep_nonorthogonal(&ctr, &mut state, mode, config.eps1)?;
            if let (Some(before), Some(old_sigma)) = (before, old_sigma) {
                let new_sigma = state.compute_sigma(a)?;
                let columns = (0..state.rank())
                    .map(|i| ColumnGain {
                        measured: state.omega[i] * (new_sigma[i] - old_sigma[i]),
                        predicted: sweep.predicted_gains[i],
                    })
                    .collect();
                trace.sweeps.push(SweepRecord {
                    iter,
                    kind: SweepKind::Free { mode, columns },
                    h_before: before,
                    h_after: objective_h(a, &state)?,
                });
            }
        }

        for mode in state.n_free()..state.order() {
            let before = instrument_h(a, &state, config)?;
            let sweep = sweep_orthonormal(&ctr, &mut state, mode, config.eps2)?;
            min_lambda_r = Some(min_lambda_r.map_or(sweep.lambda_r, |m: f64| m.min(sweep.lambda_r)));
            if let Some(before) = before {
                trace.sweeps.push(SweepRecord {
                    iter,
                    kind: SweepKind::Orthonormal {
                        mode,
                        bound: sweep.bound,
                        lambda_r: sweep.lambda_r,
                    },
                    h_before: before,
                    h_after: objective_h(a, &state)?,
                });
            }
        }

        let before = instrument_h(a, &state, config)?;
        let weights = update_weights(a, &mut state)?;
        if let Some(before) = before {
            trace.sweeps.push(SweepRecord {
                iter,
                kind: SweepKind::Weights {
                    predicted: weights.predicted_gain,
                },
                h_before: before,
                h_after: objective_h(a, &state)?,
            });
        }

        let (mut step_sq, mut base_sq) = (0.0, 0.0);
        for (new, old) in state.factors.iter().zip(&previous) {
            step_sq += new.distance(old)?.powi(2);
            base_sq += old.frobenius_norm().powi(2);
        }
        let step_norm = step_sq.sqrt();
        let rel_step = step_norm / base_sq.sqrt();
        let converged = rel_step <= config.tol;
        let last = converged || iter == config.max_iter;
        let kkt_total = if last || iter % config.trace_stride == 0 {
            Some(kkt_residual(a, &state)?.total)
        } else {
            None
        };
        trace.records.push(IterationRecord {
            iter,
            h: weights.sigma_norm,
            g: weights.sigma_norm * weights.sigma_norm,
            sigma_norm: weights.sigma_norm,
            step_norm,
            rel_step,
            omega_step: weights.omega_step,
            kkt_total,
            min_lambda_r,
        });

        let degenerate = degenerate_columns(&state.sigma, config.sigma_floor * a_norm);
        if !degenerate.is_empty() {
            if config.auto_reduce_rank && state.rank() > 1 {
                let column = degenerate[0];
                warn!("iteration {iter}: |sigma_{column}| below floor, dropping column {column}");
                state = state.drop_column(column)?;
                update_weights(a, &mut state)?;
                trace.rank_reductions.push((iter, column));
                continue;
            }
            for &column in degenerate.iter().filter(|c| !flagged.contains(c)) {
                warn!(
                    "iteration {iter}: |sigma_{column}| = {:.3e} is below the floor; consider reducing the rank",
                    state.sigma[column].abs()
                );
            }
            flagged = degenerate;
        } else {
            flagged.clear();
        }

        if converged {
            trace.status = Status::Converged;
            break;
        }
    }

    trace.degenerate_columns = degenerate_columns(&state.sigma, config.sigma_floor * a_norm);
    if !trace.degenerate_columns.is_empty() {
        trace.status = Status::Degenerate;
    }
    Ok((state, trace))
}

fn instrument_h(a: &DenseTensor, state: &FactorSet, config: &SolverConfig) -> Result<Option<f64>> {
    if config.instrument {
        objective_h(a, state).map(Some)
    } else {
        Ok(None)
    }
}

fn degenerate_columns(sigma: &[f64], floor: f64) -> Vec<usize> {
    sigma
        .iter()
        .enumerate()
        .filter(|(_, s)| s.abs() < floor)
        .map(|(i, _)| i)
        .collect()
}
