//! Solvers for the symmetric linear complementarity problem
//!
//! ```text
//! u ≥ g,   A u − b ≥ 0,   (u − g)ᵀ (A u − b) = 0
//! ```
//!
//! with `A` symmetric positive definite: projected SOR on an explicit CSR
//! matrix, and a primal-dual active-set iteration whose reduced systems are
//! solved by Jacobi-preconditioned conjugate gradients on any
//! [`LinearOperator`].

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::sparse::SparseMatrix;

/// A symmetric matrix that can be applied to vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        SparseMatrix::diagonal(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Psor,
    ActiveSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    /// PSOR relaxation factor in `(0, 2)`.
    pub omega: f64,
    /// Tolerance on `‖min(u − g, A u − b)‖_∞`.
    pub tol: f64,
    /// PSOR sweep limit; `None` means `50 · n`.
    pub max_iter: Option<usize>,
    /// Outer iteration limit of the active-set method.
    pub max_active_set_iter: usize,
    /// CG iteration limit per reduced solve; `None` means `10 · n`.
    pub max_cg_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Psor,
            omega: 1.5,
            tol: 1e-8,
            max_iter: None,
            max_active_set_iter: 100,
            max_cg_iter: None,
        }
    }
}

impl SolverConfig {
    pub fn psor() -> Self {
        SolverConfig { method: Method::Psor, ..Default::default() }
    }

    pub fn active_set() -> Self {
        SolverConfig { method: Method::ActiveSet, ..Default::default() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::InvalidArgument(format!("relaxation factor {} outside (0, 2)", self.omega)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveReport {
    pub method: Method,
    pub converged: bool,
    /// PSOR sweeps, or active-set outer iterations.
    pub iterations: usize,
    /// Total CG iterations (active-set only).
    pub inner_iterations: usize,
    pub residual: f64,
    pub active_set_size: usize,
    pub wall_time_s: f64,
    /// Whether the active-set method handed over to PSOR.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct LcpSolution {
    pub u: Vec<f64>,
    pub report: SolveReport,
}

impl LcpSolution {
    /// Converts a non-converged solve into an error.
    pub fn into_result(self) -> Result<LcpSolution> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.report.iterations, residual: self.report.residual })
        }
    }
}

/// The complementarity problem `u ≥ obstacle, A u ≥ rhs, (u − obstacle)ᵀ(A u − rhs) = 0`.
pub struct ComplementarityProblem<'a> {
    pub operator: &'a dyn LinearOperator,
    /// Explicit rows of the same operator, needed by PSOR.
    pub explicit: Option<&'a SparseMatrix>,
    pub rhs: &'a [f64],
    pub obstacle: &'a [f64],
}

impl<'a> ComplementarityProblem<'a> {
    pub fn from_matrix(a: &'a SparseMatrix, rhs: &'a [f64], obstacle: &'a [f64]) -> Self {
        ComplementarityProblem { operator: a, explicit: Some(a), rhs, obstacle }
    }

    fn check(&self) -> Result<usize> {
        let n = self.operator.dim();
        if self.rhs.len() != n || self.obstacle.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "operator of size {n}, rhs {}, obstacle {}",
                self.rhs.len(),
                self.obstacle.len()
            )));
        }
        Ok(n)
    }

    /// `A u − b`.
    pub fn multiplier(&self, u: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; u.len()];
        self.operator.apply(u, &mut r);
        r.iter_mut().zip(self.rhs).for_each(|(r, b)| *r -= b);
        r
    }

    pub fn residual(&self, u: &[f64]) -> f64 {
        complementarity_residual_from(&self.multiplier(u), u, self.obstacle)
    }

    /// Solves with `config.method`, optionally from an initial guess.
    pub fn solve(&self, config: &SolverConfig, start: Option<&[f64]>) -> Result<LcpSolution> {
        match config.method {
            Method::Psor => {
                let a = self.explicit.ok_or_else(|| {
                    Error::InvalidArgument("projected SOR needs an explicit matrix".into())
                })?;
                psor_solve(a, self.rhs, self.obstacle, start, config)
            }
            Method::ActiveSet => active_set_solve(self, start, config),
        }
    }
}

fn complementarity_residual_from(multiplier: &[f64], u: &[f64], g: &[f64]) -> f64 {
    multiplier
        .iter()
        .zip(u.iter().zip(g))
        .map(|(l, (u, g))| (u - g).min(*l).abs())
        .fold(0.0, f64::max)
}

/// `‖min(u − g, A u − b)‖_∞`.
pub fn complementarity_residual(a: &dyn LinearOperator, b: &[f64], g: &[f64], u: &[f64]) -> f64 {
    let mut r = vec![0.0; u.len()];
    a.apply(u, &mut r);
    r.iter_mut().zip(b).for_each(|(r, b)| *r -= b);
    complementarity_residual_from(&r, u, g)
}

/// Projected successive over-relaxation. Each coordinate update is
/// `u_i ← max(g_i, u_i − ω (A u − b)_i / a_ii)`, sweeping rows in order.
pub fn psor_solve(
    a: &SparseMatrix,
    b: &[f64],
    g: &[f64],
    start: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LcpSolution> {
    config.validate()?;
    let n = a.n_rows();
    if a.n_cols() != n || b.len() != n || g.len() != n {
        return Err(Error::DimensionMismatch("PSOR operands".into()));
    }
    let clock = Instant::now();
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!("nonpositive diagonal entry at row {i}")));
    }
    let mut u: Vec<f64> = match start {
        Some(s) => s.iter().zip(g).map(|(s, g)| s.max(*g)).collect(),
        None => g.to_vec(),
    };
    let max_sweeps = config.max_iter.unwrap_or(50 * n.max(1));
    let omega = config.omega;
    let mut sweeps = 0;
    let mut residual = complementarity_residual(a, b, g, &u);
    while residual > config.tol && sweeps < max_sweeps {
        sweep(a, b, g, &diag, omega, &mut u);
        sweeps += 1;
        if sweeps <= 10 || sweeps % 5 == 0 || sweeps == max_sweeps {
            residual = complementarity_residual(a, b, g, &u);
        }
    }
    let active = u.iter().zip(g).filter(|(u, g)| u <= g).count();
    Ok(LcpSolution {
        u,
        report: SolveReport {
            method: Method::Psor,
            converged: residual <= config.tol,
            iterations: sweeps,
            inner_iterations: 0,
            residual,
            active_set_size: active,
            wall_time_s: clock.elapsed().as_secs_f64(),
            fallback: false,
        },
    })
}

/// One forward PSOR sweep. Returns the change of `½ uᵀAu − bᵀu`.
fn sweep(a: &SparseMatrix, b: &[f64], g: &[f64], diag: &[f64], omega: f64, u: &mut [f64]) -> f64 {
    let mut energy_change = 0.0;
    for i in 0..u.len() {
        let r = a.row_dot(i, u) - b[i];
        let next = (u[i] - omega * r / diag[i]).max(g[i]);
        let delta = next - u[i];
        let de = delta * r + 0.5 * diag[i] * delta * delta;
        // Steps of a few ulps of u cannot honour the exact energy bound.
        debug_assert!(
            de <= 1e-10 * ((delta * r).abs() + diag[i] * delta * delta)
                || delta.abs() <= 4.0 * f64::EPSILON * u[i].abs().max(next.abs()),
            "PSOR coordinate step raised the energy by {de}"
        );
        energy_change += de;
        u[i] = next;
    }
    energy_change
}

/// Runs PSOR sweeps and records the energy after each one (for checks).
pub fn psor_energy_trace(
    a: &SparseMatrix,
    b: &[f64],
    g: &[f64],
    omega: f64,
    sweeps: usize,
) -> Vec<f64> {
    let diag = a.diagonal();
    let mut u = g.to_vec();
    let energy = |u: &[f64]| {
        let au = a.matvec(u);
        0.5 * par::dot(u, &au) - par::dot(b, u)
    };
    let mut trace = vec![energy(&u)];
    for _ in 0..sweeps {
        sweep(a, b, g, &diag, omega, &mut u);
        trace.push(energy(&u));
    }
    trace
}

struct CgOutcome {
    iterations: usize,
    converged: bool,
}

/// Jacobi-preconditioned CG on the rows/columns where `free` is set,
/// keeping the other entries of `u` fixed. Stops on `‖b − A u‖_∞ ≤ tol`
/// over the free rows.
fn masked_cg(
    op: &dyn LinearOperator,
    b: &[f64],
    diag: &[f64],
    free: &[bool],
    u: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = u.len();
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    let true_residual = |u: &[f64], r: &mut [f64]| {
        op.apply(u, r);
        for i in 0..n {
            r[i] = if free[i] { b[i] - r[i] } else { 0.0 };
        }
    };
    true_residual(u, &mut r);
    let inf = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if inf(&r) <= tol {
        return CgOutcome { iterations: 0, converged: true };
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    for it in 1..=max_iter {
        op.apply(&p, &mut q);
        for i in 0..n {
            if !free[i] {
                q[i] = 0.0;
            }
        }
        let pq = par::dot(&p, &q);
        if !(pq > 0.0) {
            return CgOutcome { iterations: it, converged: false };
        }
        let alpha = rz / pq;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if it % 50 == 0 {
            true_residual(u, &mut r);
        }
        if inf(&r) <= tol {
            true_residual(u, &mut r);
            if inf(&r) <= tol {
                return CgOutcome { iterations: it, converged: true };
            }
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = par::dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome { iterations: max_iter, converged: false }
}

/// Primal-dual active-set method (semismooth Newton form).
///
/// With multiplier `λ = A u − b`, the active set is
/// `{ i : λ_i + a_ii (g_i − u_i) > 0 }` (ties count as inactive). Each step
/// fixes `u = g` on the active set and solves `(A u − b)_i = 0` on the rest.
/// The iteration stops when the complementarity residual drops below
/// `config.tol`. If the active sets cycle or the outer limit is reached,
/// the current iterate is finished by PSOR when explicit rows are
/// available.
pub fn active_set_solve(
    problem: &ComplementarityProblem<'_>,
    start: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LcpSolution> {
    config.validate()?;
    let n = problem.check()?;
    let clock = Instant::now();
    let op = problem.operator;
    let (b, g) = (problem.rhs, problem.obstacle);
    let diag = op.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!("nonpositive diagonal entry at row {i}")));
    }
    let cg_tol = 0.1 * config.tol;
    let max_cg = config.max_cg_iter.unwrap_or(10 * n.max(10));
    let mut inner = 0;

    let mut u = match start {
        Some(s) => s.to_vec(),
        None => {
            // unconstrained solve, clipped at the obstacle
            let mut u = g.to_vec();
            let all = vec![true; n];
            inner += masked_cg(op, b, &diag, &all, &mut u, cg_tol, max_cg).iterations;
            u
        }
    };
    u.iter_mut().zip(g).for_each(|(u, g)| *u = u.max(*g));

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut free = vec![true; n];
    let mut outer = 0;
    let mut residual = problem.residual(&u);
    let mut cycled = false;
    while residual > config.tol && outer < config.max_active_set_iter {
        outer += 1;
        let lambda = problem.multiplier(&u);
        let active: Vec<usize> = (0..n)
            .filter(|&i| lambda[i] + diag[i] * (g[i] - u[i]) > 0.0)
            .collect();
        if !seen.insert(active.clone()) && outer > 1 {
            cycled = true;
        }
        free.iter_mut().for_each(|f| *f = true);
        for &i in &active {
            free[i] = false;
            u[i] = g[i];
        }
        let cg = masked_cg(op, b, &diag, &free, &mut u, cg_tol, max_cg);
        inner += cg.iterations;
        residual = problem.residual(&u);
        if cycled || !cg.converged {
            break;
        }
    }

    let mut fallback = false;
    if residual > config.tol {
        if let Some(a) = problem.explicit {
            log::debug!("active set stalled after {outer} iterations (residual {residual:e}); finishing with PSOR");
            let polish = psor_solve(a, b, g, Some(&u), config)?;
            u = polish.u;
            residual = polish.report.residual;
            outer += polish.report.iterations;
            fallback = true;
        }
    }
    u.iter_mut().zip(g).for_each(|(u, g)| *u = u.max(*g));
    residual = residual.max(problem.residual(&u));
    let active = u.iter().zip(g).filter(|(u, g)| u <= g).count();
    Ok(LcpSolution {
        u,
        report: SolveReport {
            method: Method::ActiveSet,
            converged: residual <= config.tol,
            iterations: outer,
            inner_iterations: inner,
            residual,
            active_set_size: active,
            wall_time_s: clock.elapsed().as_secs_f64(),
            fallback,
        },
    })
}

/// Solves the linear system `A u = b` by Jacobi-preconditioned CG.
pub fn linear_solve(op: &dyn LinearOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = op.dim();
    let mut u = vec![0.0; n];
    let all = vec![true; n];
    let diag = op.diagonal();
    let out = masked_cg(op, b, &diag, &all, &mut u, tol, max_iter);
    if !out.converged {
        return Err(Error::NotConverged { iterations: out.iterations, residual: f64::NAN });
    }
    Ok(u)
}
