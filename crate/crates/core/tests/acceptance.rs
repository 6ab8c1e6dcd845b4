//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use otap::harness::{
    aggregate, gen_synthetic, init_ratio_experiment, kruskal_rank, rel_err, run_instances,
    EntryDist, ExperimentSpec, InitKind, InstanceResult,
};
use otap::init::{get_initializer, random_init, rank1_approx, xi};
use otap::linalg::{polar_decompose, thin_svd};
use otap::model::{kkt_residual, objective_g, FactorSet};
use otap::solver::{run, Contractor, SolverConfig, Status, SweepKind};
use otap::{DenseTensor, Matrix};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn budget_note(elapsed: Duration) -> String {
    format!("{:.1} s", elapsed.as_secs_f64())
}

fn noisy_spec(dims: &[usize], rank: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(dims, rank, 1);
    spec.beta = 0.1;
    spec.eps1 = 1e-8;
    spec.eps2 = 1e-8;
    spec.n_instances = 50;
    spec
}

fn recovery_order_four() -> Outcome {
    let spec = noisy_spec(&[10, 10, 10, 10], 5);
    let clock = Instant::now();
    let results = run_instances(&spec).map_err(|e| e.to_string())?;
    let elapsed = clock.elapsed();
    let row = aggregate(&spec, &results);
    check(
        (0.02..=0.08).contains(&row.mean_rel_err)
            && row.median_iter <= 30.0
            && row.n_failed == 0
            && elapsed < Duration::from_secs(60),
        format!(
            "mean_rel_err {:.4}, median_iter {}, mean_iter {:.2}, {}",
            row.mean_rel_err,
            row.median_iter,
            row.mean_iter,
            budget_note(elapsed)
        ),
    )
}

fn eps_sensitivity() -> Outcome {
    let tight = noisy_spec(&[20, 20, 20, 20], 10);
    let mut loose = tight.clone();
    loose.eps1 = 1e-4;
    loose.eps2 = 1e-4;
    let a = aggregate(&tight, &run_instances(&tight).map_err(|e| e.to_string())?);
    let b = aggregate(&loose, &run_instances(&loose).map_err(|e| e.to_string())?);
    let diff = (a.mean_rel_err - b.mean_rel_err).abs();
    check(
        b.mean_iter > a.mean_iter && diff <= 0.01,
        format!(
            "mean_iter {:.2} (1e-4) vs {:.2} (1e-8), rel_err difference {:.4}",
            b.mean_iter, a.mean_iter, diff
        ),
    )
}

fn recovery_unbalanced() -> Outcome {
    let spec = noisy_spec(&[5, 5, 5, 20], 10);
    let clock = Instant::now();
    let results = run_instances(&spec).map_err(|e| e.to_string())?;
    let elapsed = clock.elapsed();
    let row = aggregate(&spec, &results);
    check(
        row.mean_rel_err <= 0.15 && row.n_failed == 0 && elapsed < Duration::from_secs(60),
        format!("mean_rel_err {:.4}, {}", row.mean_rel_err, budget_note(elapsed)),
    )
}

fn procedure_beats_random() -> Outcome {
    let procedure = noisy_spec(&[20, 20, 20, 20], 10);
    let mut random = procedure.clone();
    random.init = InitKind::Random;
    let p = run_instances(&procedure).map_err(|e| e.to_string())?;
    let r = run_instances(&random).map_err(|e| e.to_string())?;
    let errs = |rs: &[InstanceResult]| rs.iter().map(|x| x.rel_err).collect::<Vec<_>>();
    let (pe, re) = (errs(&p), errs(&r));
    let wins = pe.iter().zip(&re).filter(|(a, b)| a < b).count();
    let (pm, rm) = (mean(pe.iter().copied()), mean(re.iter().copied()));
    check(
        pm < rm && wins * 5 >= 4 * pe.len(),
        format!("procedure {pm:.4} vs random {rm:.4}, procedure wins {wins}/{}", pe.len()),
    )
}

fn init_objective_ratio() -> Outcome {
    let dims = [10, 10, 10, 10];
    let one = init_ratio_experiment(&dims, 5, 1, 20, 0, EntryDist::Normal).map_err(|e| e.to_string())?;
    let four = init_ratio_experiment(&dims, 5, 4, 20, 0, EntryDist::Normal).map_err(|e| e.to_string())?;
    check(
        one.mean > 10.0 && (1.0..=5.0).contains(&four.mean),
        format!("mean ratio {:.2} (t=1), {:.3} (t=4)", one.mean, four.mean),
    )
}

/// Random tensor with `d ∈ {3,4}`, extents in `R..=12` and a random `t`.
fn random_problem(index: u64) -> (DenseTensor, FactorSet, f64) {
    let mut r = rng(0x5EED_0000 + index);
    let d = r.random_range(3..=4);
    let rank = r.random_range(1..=5);
    let t = r.random_range(1..=d);
    let max_extent = if d == 3 { 12 } else { 8 };
    let shape: Vec<usize> = (0..d).map(|_| r.random_range(rank.max(2)..=max_extent.max(rank))).collect();
    let a = random_tensor(&mut r, &shape);
    let init = random_init(&a, rank, t, index).unwrap();
    let eps = [0.0, 1e-8, 1e-4, 1e-2, 1.0][r.random_range(0..5)];
    (a, init, eps)
}

fn h_monotone() -> Outcome {
    let mut worst = f64::INFINITY;
    for k in 0..100 {
        let (a, init, eps) = random_problem(k);
        let config = SolverConfig { eps1: eps, eps2: eps, max_iter: 200, ..Default::default() };
        let (_, trace) = run(&a, &init, &config).map_err(|e| e.to_string())?;
        let mut prev = trace.h_init;
        for rec in &trace.records {
            worst = worst.min(rec.h - prev);
            prev = rec.h;
        }
    }
    check(worst >= -1e-11, format!("smallest per-iteration change {worst:.3e}"))
}

fn sufficient_decrease() -> Outcome {
    let eps0 = 1e-6;
    let mut worst = f64::INFINITY;
    for k in 0..100 {
        let (a, init, eps) = random_problem(1000 + k);
        let eps = eps.max(eps0);
        let config = SolverConfig { eps1: eps, eps2: eps, max_iter: 200, ..Default::default() };
        let (_, trace) = run(&a, &init, &config).map_err(|e| e.to_string())?;
        let c = trace.h_init;
        let mut prev = trace.h_init;
        for rec in &trace.records {
            let required = 0.5 * eps0 * rec.step_norm.powi(2) + 0.5 * c * rec.omega_step.powi(2);
            worst = worst.min(rec.h - prev - required);
            prev = rec.h;
        }
    }
    check(worst >= -1e-10, format!("smallest slack {worst:.3e}"))
}

fn per_step_identities() -> Outcome {
    let (mut exact, mut bound, mut weights, mut sweeps) = (0.0f64, f64::INFINITY, 0.0f64, 0usize);
    for k in 0..40 {
        let (a, init, eps) = random_problem(2000 + k);
        let config = SolverConfig { eps1: eps, eps2: eps, max_iter: 30, instrument: true, ..Default::default() };
        let (_, trace) = run(&a, &init, &config).map_err(|e| e.to_string())?;
        for s in &trace.sweeps {
            sweeps += 1;
            let gain = s.h_after - s.h_before;
            match &s.kind {
                SweepKind::Free { columns, .. } => {
                    for c in columns {
                        exact = exact.max((c.measured - c.predicted).abs());
                    }
                    let total: f64 = columns.iter().map(|c| c.measured).sum();
                    exact = exact.max((gain - total).abs());
                }
                SweepKind::Orthonormal { bound: b, .. } => bound = bound.min(gain - b),
                SweepKind::Weights { predicted } => weights = weights.max((gain - predicted).abs()),
            }
        }
    }
    check(
        exact <= 1e-10 && bound >= -1e-10 && weights <= 1e-10,
        format!(
            "{sweeps} sweeps, column gain error {exact:.2e}, orthonormal slack {bound:.2e}, weight gain error {weights:.2e}"
        ),
    )
}

fn polar_gap_bounds() -> Outcome {
    let mut r = rng(9);
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let n = r.random_range(1..=8);
        let m = r.random_range(n..=32);
        let scale = 10f64.powf(r.random_range(-2.0..2.0));
        let c = random_matrix(&mut r, m, n).scaled(scale);
        let x = random_stiefel(&mut r, m, n);
        let eps = [1e-8, 1e-2, 1.0][r.random_range(0..3)];
        let tol = 1e-10 * c.frobenius_norm();

        let plain = polar_decompose(&c).map_err(|e| e.to_string())?;
        let gap = plain.u.inner(&c).unwrap() - x.inner(&c).unwrap();
        let lambda_n = *plain.singular_values.last().unwrap();
        let dist = plain.u.distance(&x).unwrap().powi(2);
        worst = worst.min((gap - 0.5 * lambda_n * dist) / tol);

        let shifted = polar_decompose(&c.add_scaled(eps, &x).unwrap()).map_err(|e| e.to_string())?;
        let gap = shifted.u.inner(&c).unwrap() - x.inner(&c).unwrap();
        let lambda_n = *shifted.singular_values.last().unwrap();
        let dist = shifted.u.distance(&x).unwrap().powi(2);
        worst = worst.min((gap - 0.5 * (lambda_n + eps) * dist) / tol);
    }
    check(worst >= -1.0, format!("smallest slack {worst:.3e} in units of 1e-10·‖C‖_F"))
}

fn initializer_bounds() -> Outcome {
    let mut r = rng(10);
    let mut chain = f64::INFINITY;
    for _ in 0..200 {
        let m: usize = r.random_range(3..=5);
        let n: usize = r.random_range(3..=6);
        if n.pow(m as u32) > 8000 {
            continue;
        }
        let b = random_tensor(&mut r, &vec![n; m]);
        let value = rank1_approx(&b).map_err(|e| e.to_string())?.value.abs();
        let rows = n.pow(m as u32 - 2);
        let spectral = spectral_norm(&b.as_matrix(rows).unwrap());
        let x = xi(&vec![n; m]).map_err(|e| e.to_string())?;
        let fro = b.frobenius_norm();
        let lower = fro / (x * n as f64);
        chain = chain.min((value - spectral / x) / fro).min((spectral / x - lower) / fro);
    }
    let mut eq10 = f64::INFINITY;
    for n in 5..=10 {
        let rank = 5.min(n);
        let a = random_tensor(&mut r, &[n, n, n, n]);
        let g = objective_g(&a, &get_initializer(&a, rank, 1).map_err(|e| e.to_string())?).unwrap();
        let lambda = thin_svd(&a.unfold(3).unwrap().transpose()).unwrap().lambda;
        let top: f64 = lambda.iter().take(rank).map(|l| l * l).sum();
        let x = xi(&[n, n, n]).unwrap();
        let bound = top / (x * x * (n * n) as f64);
        eq10 = eq10.min((g - bound) / a.frobenius_norm().powi(2));
    }
    check(
        chain >= -1e-10 && eq10 >= -1e-10,
        format!("rank-1 chain slack {chain:.3e}, initializer G slack {eq10:.3e}"),
    )
}

fn kkt_at_convergence() -> Outcome {
    let mut worst = 0.0f64;
    let mut converged = 0;
    for seed in 0..20u64 {
        let t = 1 + (seed % 3) as usize;
        let (a, _) = gen_synthetic(&[6, 7, 8], 3, t, 0.1, seed).map_err(|e| e.to_string())?;
        let init = get_initializer(&a, 3, t).map_err(|e| e.to_string())?;
        let config = SolverConfig { tol: 1e-6, ..Default::default() };
        let (out, trace) = run(&a, &init, &config).map_err(|e| e.to_string())?;
        if trace.status == Status::Converged {
            converged += 1;
            worst = worst.max(kkt_residual(&a, &out).unwrap().total);
        }
    }
    let mut exact = 0.0f64;
    for (seed, d) in [(1u64, 3usize), (2, 4), (3, 3), (4, 4)] {
        let dims: Vec<usize> = (0..d).map(|j| 4 + j).collect();
        let (a, truth) = gen_synthetic(&dims, 3, d, 0.0, seed).map_err(|e| e.to_string())?;
        exact = exact.max(kkt_residual(&a, &truth).unwrap().total);
    }
    check(
        converged > 0 && worst <= 1e-3 && exact <= 1e-10,
        format!("{converged}/20 converged, worst kkt {worst:.3e}, exact decompositions {exact:.3e}"),
    )
}

fn oracle_equivalences() -> Outcome {
    let mut r = rng(12);
    let mut grad = 0.0f64;
    for _ in 0..50 {
        let d = r.random_range(3..=4);
        let rank = r.random_range(1..=4);
        let shape: Vec<usize> = (0..d).map(|_| r.random_range(rank..=rank + 3)).collect();
        let a = random_tensor(&mut r, &shape);
        let f = random_init(&a, rank, 1, r.random()).unwrap();
        let batched = Contractor::new(&a, true).unwrap();
        for j in 0..d {
            let fast = batched.gradients(&f.factors, j).unwrap();
            let cols: Vec<Vec<f64>> = (0..rank)
                .map(|i| {
                    let vs: Vec<&[f64]> = f
                        .factors
                        .iter()
                        .enumerate()
                        .filter(|&(l, _)| l != j)
                        .map(|(_, u)| u.col(i))
                        .collect();
                    naive_contract(&a, &vs, j)
                })
                .collect();
            grad = grad.max(fast.distance(&Matrix::from_columns(&cols).unwrap()).unwrap());
        }
    }

    let mut assign = 0.0f64;
    for (k, rank) in (1..=8).chain(1..=8).enumerate() {
        let (_, truth) = gen_synthetic(&[6, 7, 8], rank, 1, 0.0, k as u64).unwrap();
        let factors = truth
            .factors
            .iter()
            .map(|u| u.add_scaled(0.5, &random_matrix(&mut r, u.rows(), u.cols())).unwrap())
            .collect();
        let other = FactorSet::new(factors, 1).unwrap();
        let slow = brute_force_rel_err(&truth, &other);
        assign = assign.max((rel_err(&truth, &other).unwrap() - slow).abs() / (1.0 + slow));
    }

    let mut kruskal_mismatch = 0;
    for _ in 0..200 {
        let rows = r.random_range(1..=6);
        let cols = r.random_range(1..=7);
        let mut m = random_matrix(&mut r, rows, cols);
        if cols >= 2 && r.random_bool(0.5) {
            let src = m.col(0).to_vec();
            m.col_mut(r.random_range(1..cols)).copy_from_slice(&src);
        }
        if kruskal_rank(&m).unwrap() != subset_kruskal(&m) {
            kruskal_mismatch += 1;
        }
    }

    let mut refold_mismatch = 0;
    for _ in 0..100 {
        let order = r.random_range(1..=5);
        let shape: Vec<usize> = (0..order).map(|_| r.random_range(1..=5)).collect();
        let t = random_tensor(&mut r, &shape);
        for mode in 0..order {
            let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, &shape).unwrap();
            if back.values().iter().zip(t.values()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                refold_mismatch += 1;
            }
        }
    }
    check(
        grad <= 1e-12 && assign <= 1e-12 && kruskal_mismatch == 0 && refold_mismatch == 0,
        format!(
            "gradient gap {grad:.2e}, assignment gap {assign:.2e}, kruskal mismatches {kruskal_mismatch}, refold mismatches {refold_mismatch}"
        ),
    )
}

fn outer_product_lipschitz() -> Outcome {
    let mut r = rng(13);
    let mut worst = f64::INFINITY;
    for k in 0..10_000 {
        let d = r.random_range(1..=5);
        let dims: Vec<usize> = (0..d).map(|_| r.random_range(1..=5)).collect();
        let xs: Vec<Vec<f64>> = dims.iter().map(|&n| unit_vec(&mut r, n)).collect();
        let ys: Vec<Vec<f64>> = if k % 2 == 0 {
            dims.iter().map(|&n| unit_vec(&mut r, n)).collect()
        } else {
            xs.iter()
                .map(|x| {
                    let noise = uniform_vec(&mut r, x.len());
                    let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + 1e-3 * b).collect();
                    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    y.iter().map(|v| v / norm).collect()
                })
                .collect()
        };
        let outer = |vs: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
            DenseTensor::outer(&refs).unwrap()
        };
        let lhs = outer(&xs).add_scaled(-1.0, &outer(&ys)).unwrap().frobenius_norm();
        let rhs: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .sum();
        worst = worst.min(rhs - lhs);
    }
    check(worst >= -1e-12, format!("smallest slack {worst:.3e}"))
}

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Outcome); 13] = [
        (1, recovery_order_four),
        (2, eps_sensitivity),
        (3, recovery_unbalanced),
        (4, procedure_beats_random),
        (5, init_objective_ratio),
        (6, h_monotone),
        (7, sufficient_decrease),
        (8, per_step_identities),
        (9, polar_gap_bounds),
        (10, initializer_bounds),
        (11, kkt_at_convergence),
        (12, oracle_equivalences),
        (13, outer_product_lipschitz),
    ];
    let mut failures = 0;
    for (n, criterion) in criteria {
        let clock = Instant::now();
        let outcome = criterion();
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail}) [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n}: FAIL ({detail}) [{secs:.1} s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
