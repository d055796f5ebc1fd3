//! Projected Gauss-Seidel for the boxed MLCP.

use nalgebra::DVector;
use thiserror::Error;

use super::mlcp::{MlcpProblem, SystemMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite impulse in row {row} at sweep {sweep} (bad assembly?)")]
    NonFinite { row: usize, sweep: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// Maximum complementarity violation over all rows.
    pub residual: f64,
}

/// Complementarity violation of one row given its constraint velocity `w = (Aλ - b)_i`.
#[inline]
pub fn row_violation(lambda: f64, w: f64, lo: f64, hi: f64) -> f64 {
    let at_lo = lambda <= lo;
    let at_hi = lambda >= hi;
    match (at_lo, at_hi) {
        (true, true) => 0.0,
        (true, false) => (-w).max(0.0),
        (false, true) => w.max(0.0),
        (false, false) => w.abs(),
    }
}

/// `w = Aλ - b` for the full problem.
pub fn constraint_velocity(p: &MlcpProblem, lambda: &[f64]) -> Vec<f64> {
    let m = p.dim();
    match &p.matrix {
        SystemMatrix::Dense(a) => (0..m)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..m {
                    s += a[(i, j)] * lambda[j];
                }
                s - p.b[i]
            })
            .collect(),
        SystemMatrix::Factored { rows, num_slots, compliance } => {
            let mut u = vec![[0.0; 6]; *num_slots];
            for (row, &l) in rows.iter().zip(lambda) {
                row.scatter(&mut u, l);
            }
            rows.iter()
                .zip(lambda)
                .enumerate()
                .map(|(i, (row, &l))| row.apply(&u) + compliance * l - p.b[i])
                .collect()
        }
    }
}

/// Residual of an iterate: the largest per-row complementarity violation.
pub fn residual(p: &MlcpProblem, lambda: &[f64]) -> f64 {
    let w = constraint_velocity(p, lambda);
    (0..p.dim())
        .map(|i| {
            let (lo, hi) = p.bounds(i, lambda);
            row_violation(lambda[i], w[i], lo, hi)
        })
        .fold(0.0, |acc, v| if v.is_nan() || v > acc { v } else { acc })
}

/// Solves with at most `max_iter` sweeps, stopping once the residual drops below `tol`.
pub fn solve_pgs(p: &MlcpProblem, max_iter: usize, tol: f64) -> Result<SolveResult, SolverError> {
    solve_pgs_observed(p, max_iter, tol, |_, _, _| {})
}

/// Like [`solve_pgs`], calling `observe(sweep, lambda, residual)` after every sweep.
pub fn solve_pgs_observed(
    p: &MlcpProblem,
    max_iter: usize,
    tol: f64,
    mut observe: impl FnMut(usize, &[f64], f64),
) -> Result<SolveResult, SolverError> {
    let m = p.dim();
    let mut lambda: Vec<f64> = p.initial.iter().copied().collect();
    for i in 0..m {
        let (lo, hi) = p.bounds(i, &lambda);
        lambda[i] = lambda[i].clamp(lo, hi);
    }
    let diag: Vec<f64> = (0..m).map(|i| p.diagonal(i)).collect();

    let mut res = residual(p, &lambda);
    let mut iterations = 0;
    // a NaN residual is never below tol, so the sweep gets to report the offending row
    if m == 0 || res < tol {
        return Ok(SolveResult { lambda: DVector::from_vec(lambda), iterations, residual: res });
    }

    match &p.matrix {
        SystemMatrix::Dense(a) => {
            while iterations < max_iter {
                iterations += 1;
                for i in 0..m {
                    let mut w = -p.b[i];
                    for j in 0..m {
                        w += a[(i, j)] * lambda[j];
                    }
                    let (lo, hi) = p.bounds(i, &lambda);
                    let next = (lambda[i] - w / diag[i]).clamp(lo, hi);
                    if !next.is_finite() {
                        return Err(SolverError::NonFinite { row: i, sweep: iterations });
                    }
                    lambda[i] = next;
                }
                res = finish_sweep(p, &lambda, iterations, &mut observe);
                if res < tol {
                    break;
                }
            }
        }
        SystemMatrix::Factored { rows, num_slots, compliance } => {
            let mut u = vec![[0.0; 6]; *num_slots];
            for (row, &l) in rows.iter().zip(&lambda) {
                row.scatter(&mut u, l);
            }
            while iterations < max_iter {
                iterations += 1;
                for (i, row) in rows.iter().enumerate() {
                    let w = row.apply(&u) + compliance * lambda[i] - p.b[i];
                    let (lo, hi) = p.bounds(i, &lambda);
                    let next = (lambda[i] - w / diag[i]).clamp(lo, hi);
                    if !next.is_finite() {
                        return Err(SolverError::NonFinite { row: i, sweep: iterations });
                    }
                    row.scatter(&mut u, next - lambda[i]);
                    lambda[i] = next;
                }
                res = finish_sweep(p, &lambda, iterations, &mut observe);
                if res < tol {
                    break;
                }
            }
        }
    }
    Ok(SolveResult { lambda: DVector::from_vec(lambda), iterations, residual: res })
}

fn finish_sweep(
    p: &MlcpProblem,
    lambda: &[f64],
    sweep: usize,
    observe: &mut impl FnMut(usize, &[f64], f64),
) -> f64 {
    if cfg!(debug_assertions) {
        for i in 0..p.dim() {
            let (lo, hi) = p.bounds(i, lambda);
            debug_assert!(lo <= lambda[i] && lambda[i] <= hi, "row {i} out of bounds");
        }
    }
    let res = residual(p, lambda);
    observe(sweep, lambda, res);
    res
}
