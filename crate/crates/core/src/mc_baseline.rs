//! Monte Carlo reference: one deterministic obstacle problem per sampled
//! parameter, streamed into nodal mean and variance.
//!
//! Samples are split into fixed index ranges. Each range is processed in
//! order by one worker, and the per-range accumulators are merged in range
//! order, so results do not depend on the thread count.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_spatial::{assemble_load, assemble_mass_full, assemble_stiffness_blocks, StiffnessBlocks};
use crate::function::ParamFn;
use crate::lcp_solver::{psor_solve, ComplementarityProblem, SolverConfig};
use crate::mesh::Mesh;
use crate::par;
use crate::random_field::{sample_scenario, AffineField, Transform};
use crate::sparse::SparseMatrix;
use crate::statistics::{StatField, StatKind};

/// Samples per fixed index range.
pub const MC_CHUNK: usize = 256;

/// Largest tolerated fraction of skipped samples.
pub const MAX_SKIPPED_FRACTION: f64 = 1e-3;

/// Streaming nodal mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct MCAccumulator {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    /// Solver iterations summed over accumulated samples.
    pub iterations: u64,
    pub max_residual: f64,
}

impl MCAccumulator {
    pub fn new(n: usize) -> Self {
        MCAccumulator { count: 0, mean: vec![0.0; n], m2: vec![0.0; n], iterations: 0, max_residual: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Welford update with one sample.
    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.len());
        self.count += 1;
        let c = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / c;
            *s += d * (v - *m);
        }
    }

    /// Pairwise merge of two accumulators over the same nodes.
    pub fn merge(&self, other: &MCAccumulator) -> Result<MCAccumulator> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "merging accumulators over {} and {} nodes",
                self.len(),
                other.len()
            )));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut out = MCAccumulator::new(self.len());
        for k in 0..self.len() {
            let d = other.mean[k] - self.mean[k];
            out.mean[k] = (na * self.mean[k] + nb * other.mean[k]) / n;
            out.m2[k] = self.m2[k] + other.m2[k] + d * d * na * nb / n;
        }
        out.count = self.count + other.count;
        out.iterations = self.iterations + other.iterations;
        out.max_residual = self.max_residual.max(other.max_residual);
        Ok(out)
    }

    /// Unbiased nodal variance `M2 / (n − 1)`.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.len()];
        }
        let d = (self.count - 1) as f64;
        self.m2.iter().map(|s| (s / d).max(0.0)).collect()
    }

    pub fn mean_field(&self) -> StatField {
        StatField::new(StatKind::Mean, self.mean.clone())
    }

    pub fn variance_field(&self) -> StatField {
        StatField::new(StatKind::Variance, self.variance())
    }

    /// Estimated standard error of the mean field in the L² norm,
    /// `sqrt(∫ Var / n)`, with `Var` taken as a P1 function.
    pub fn l2_standard_error(&self, mesh: &Mesh) -> f64 {
        if self.count < 2 {
            return f64::INFINITY;
        }
        let lumped = assemble_mass_full(mesh).matvec(&vec![1.0; mesh.n_nodes()]);
        let s: f64 = lumped.iter().zip(self.variance()).map(|(w, v)| w * v).sum();
        (s / self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: u64,
    pub seed: u64,
    pub transform: Transform,
    /// Start each solve from the running mean of its index range.
    pub warm_start: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_samples: 1 << 12, seed: 1, transform: Transform::Exp, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_samples: u64,
    pub accepted: u64,
    pub skipped: u64,
    pub iterations: u64,
    pub max_residual: f64,
    pub setup_seconds: f64,
    pub sampling_seconds: f64,
    pub seconds: f64,
}

impl McReport {
    /// `phase,seconds` lines.
    pub fn timing_csv(&self) -> String {
        format!(
            "phase,seconds\nsetup,{}\nsampling,{}\ntotal,{}\n",
            self.setup_seconds, self.sampling_seconds, self.seconds
        )
    }
}

/// Deterministic problems of the form `μ + Σ_d y_d w_d`, with the spatial
/// pieces precomputed once.
#[derive(Debug, Clone)]
pub struct SampleAssembler<'a> {
    mesh: &'a Mesh,
    dims: usize,
    stiffness: Vec<(Option<usize>, StiffnessBlocks)>,
    load: Vec<(Option<usize>, Vec<f64>)>,
    obstacle: &'a AffineField,
    dirichlet: &'a ParamFn,
}

/// One realized deterministic obstacle problem.
#[derive(Debug, Clone)]
pub struct SampleProblem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub obstacle: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl<'a> SampleAssembler<'a> {
    pub fn new(
        mesh: &'a Mesh,
        dims: usize,
        a: &AffineField,
        f: &AffineField,
        g: &'a AffineField,
        dirichlet: &'a ParamFn,
    ) -> Result<Self> {
        for field in [a, f, g] {
            if field.required_dims() > dims {
                return Err(Error::DimensionMismatch(format!(
                    "field uses {} dimensions, sampler draws {dims}",
                    field.required_dims()
                )));
            }
        }
        let mut stiffness = vec![(None, assemble_stiffness_blocks(mesh, &a.mu)?)];
        for (d, w) in a.dim_weights(dims) {
            stiffness.push((Some(d), assemble_stiffness_blocks(mesh, &w)?));
        }
        let mut load = vec![(None, assemble_load(mesh, &f.mu)?)];
        for (d, w) in f.dim_weights(dims) {
            load.push((Some(d), assemble_load(mesh, &w)?));
        }
        Ok(SampleAssembler { mesh, dims, stiffness, load, obstacle: g, dirichlet })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn assemble(&self, y: &[f64]) -> Result<SampleProblem> {
        let coeff = |d: &Option<usize>| d.map_or(1.0, |d| y[d]);
        let inner: Vec<(f64, &SparseMatrix)> =
            self.stiffness.iter().map(|(d, k)| (coeff(d), &k.interior)).collect();
        let coupling: Vec<(f64, &SparseMatrix)> =
            self.stiffness.iter().map(|(d, k)| (coeff(d), &k.coupling)).collect();
        let matrix = SparseMatrix::linear_combination(&inner)?;
        let mut rhs = vec![0.0; self.mesh.n_interior()];
        for (d, l) in &self.load {
            let c = coeff(d);
            rhs.iter_mut().zip(l).for_each(|(r, v)| *r += c * v);
        }
        let mut boundary = Vec::with_capacity(self.mesh.n_boundary());
        for &n in &self.mesh.boundary_nodes {
            let x = self.mesh.nodes[n];
            let v = self.dirichlet.value(x, y);
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "Dirichlet data", x });
            }
            boundary.push(v);
        }
        if boundary.iter().any(|&v| v != 0.0) {
            let kb = SparseMatrix::linear_combination(&coupling)?;
            let lift = kb.matvec(&boundary);
            rhs.iter_mut().zip(&lift).for_each(|(r, l)| *r -= l);
        }
        let obstacle = self
            .mesh
            .interior_nodes
            .iter()
            .map(|&n| self.obstacle.evaluate(self.mesh.nodes[n], y))
            .collect();
        Ok(SampleProblem { matrix, rhs, obstacle, boundary })
    }

    /// Solves the realized problem; the result covers all mesh nodes.
    pub fn solve(&self, y: &[f64], solver: &SolverConfig, start: Option<&[f64]>) -> Result<(Vec<f64>, usize, f64)> {
        let p = self.assemble(y)?;
        let sol = if solver.method == crate::lcp_solver::Method::Psor {
            psor_solve(&p.matrix, &p.rhs, &p.obstacle, start, solver)?
        } else {
            ComplementarityProblem::from_matrix(&p.matrix, &p.rhs, &p.obstacle).solve(solver, start)?
        };
        if !sol.report.converged {
            return Err(Error::NotConverged { iterations: sol.report.iterations, residual: sol.report.residual });
        }
        Ok((self.mesh.expand(&sol.u, &p.boundary), sol.report.iterations, sol.report.residual))
    }
}

/// Precomputes the affine pieces and runs the sampler; timing covers both.
#[allow(clippy::too_many_arguments)]
pub fn mc_run(
    mesh: &Mesh,
    dims: usize,
    a: &AffineField,
    f: &AffineField,
    g: &AffineField,
    dirichlet: &ParamFn,
    config: &McConfig,
    solver: &SolverConfig,
) -> Result<(MCAccumulator, McReport)> {
    let clock = Instant::now();
    let assembler = SampleAssembler::new(mesh, dims, a, f, g, dirichlet)?;
    let setup = clock.elapsed().as_secs_f64();
    let (acc, mut report) = mc_sample(&assembler, config, solver)?;
    report.setup_seconds = setup;
    report.seconds += setup;
    Ok((acc, report))
}

/// Runs `config.n_samples` deterministic solves and streams the results.
pub fn mc_sample(
    assembler: &SampleAssembler<'_>,
    config: &McConfig,
    solver: &SolverConfig,
) -> Result<(MCAccumulator, McReport)> {
    if config.n_samples < 2 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least two samples".into()));
    }
    solver.validate()?;
    let clock = Instant::now();
    let mesh = assembler.mesh;
    let n_nodes = mesh.n_nodes();
    let n = config.n_samples;
    let n_chunks = n.div_ceil(MC_CHUNK as u64) as usize;
    let chunks = par::map_range(n_chunks, |c| {
        let lo = c as u64 * MC_CHUNK as u64;
        let hi = (lo + MC_CHUNK as u64).min(n);
        let mut acc = MCAccumulator::new(n_nodes);
        let mut skipped = 0u64;
        let mut start: Option<Vec<f64>> = None;
        for index in lo..hi {
            let y = sample_scenario(assembler.dims, config.seed, index, config.transform).y;
            match assembler.solve(&y, solver, start.as_deref()) {
                Ok((u, iters, res)) => {
                    acc.push(&u);
                    acc.iterations += iters as u64;
                    acc.max_residual = acc.max_residual.max(res);
                    if config.warm_start {
                        start = Some(mesh.interior_nodes.iter().map(|&k| acc.mean[k]).collect());
                    }
                }
                Err(Error::NotConverged { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok((acc, skipped))
    });
    let mut total = MCAccumulator::new(n_nodes);
    let mut skipped = 0;
    for chunk in chunks {
        let (acc, s) = chunk?;
        total = total.merge(&acc)?;
        skipped += s;
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * n as f64 {
        return Err(Error::TooManySkipped { skipped: skipped as usize, total: n as usize });
    }
    if skipped > 0 {
        log::warn!("{skipped} of {n} Monte Carlo samples skipped after solver failure");
    }
    let seconds = clock.elapsed().as_secs_f64();
    let report = McReport {
        n_samples: n,
        accepted: total.count,
        skipped,
        iterations: total.iterations,
        max_residual: total.max_residual,
        setup_seconds: 0.0,
        sampling_seconds: seconds,
        seconds,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem_spatial::{assemble_stiffness_blocks as blocks, interpolate_interior};
    use crate::function::SpatialFn;
    use crate::mesh::{build_uniform_mesh, Rect};

    fn a1() -> AffineField {
        AffineField::constant(1.0)
            .with_mode(1.0, SpatialFn::constant(1.0), 0)
            .with_mode(2.0, SpatialFn::new(|x| 1.0 + 0.1 * x[0]), 1)
    }

    #[test]
    fn welford_matches_two_pass() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i * i) as f64 * 1e-3]).collect();
        let mut acc = MCAccumulator::new(2);
        data.iter().for_each(|x| acc.push(x));
        for k in 0..2 {
            let m = data.iter().map(|x| x[k]).sum::<f64>() / 50.0;
            let v = data.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / 49.0;
            assert!((acc.mean[k] - m).abs() < 1e-14);
            assert!((acc.variance()[k] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn merge_properties() {
        let mut a = MCAccumulator::new(1);
        let mut b = MCAccumulator::new(1);
        let mut all = MCAccumulator::new(1);
        for i in 0..1000 {
            let x = [((i * 37) % 101) as f64 / 7.0];
            if i < 300 { a.push(&x) } else { b.push(&x) }
            all.push(&x);
        }
        let ab = a.merge(&b).unwrap();
        let ba = b.merge(&a).unwrap();
        assert!((ab.mean[0] - ba.mean[0]).abs() < 1e-10 && (ab.m2[0] - ba.m2[0]).abs() < 1e-10);
        assert!((ab.mean[0] - all.mean[0]).abs() < 1e-10);
        assert!((ab.m2[0] - all.m2[0]).abs() / all.m2[0] < 1e-10);
        assert_eq!(a.merge(&MCAccumulator::new(1)).unwrap(), a);
        assert!(a.merge(&MCAccumulator::new(2)).is_err());
    }

    #[test]
    fn affine_assembly_matches_direct() {
        let mesh = build_uniform_mesh(Rect::centered_square(1.0), 5, 5).unwrap();
        let a = a1();
        let f = AffineField::constant(-1.0).with_mode(0.5, SpatialFn::new(|x| x[1]), 1);
        let g = AffineField::constant(-0.1);
        let dir = ParamFn::new(|x, y| x[0] * y[1]);
        let asm = SampleAssembler::new(&mesh, 2, &a, &f, &g, &dir).unwrap();
        let y = [1.3, 0.6];
        let p = asm.assemble(&y).unwrap();
        let k = blocks(&mesh, &a.at(&y)).unwrap();
        let diff = SparseMatrix::linear_combination(&[(1.0, &p.matrix), (-1.0, &k.interior)]).unwrap();
        assert!(diff.values().iter().all(|v| v.abs() < 1e-13));
        let mut rhs = assemble_load(&mesh, &f.at(&y)).unwrap();
        let ub: Vec<f64> = mesh.boundary_nodes.iter().map(|&n| dir.value(mesh.nodes[n], &y)).collect();
        let lift = k.coupling.matvec(&ub);
        rhs.iter_mut().zip(&lift).for_each(|(r, l)| *r -= l);
        for (a, b) in p.rhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(p.obstacle, interpolate_interior(&mesh, &g.at(&y)).unwrap());
    }

    #[test]
    fn y_independent_fields_have_zero_variance() {
        let mesh = build_uniform_mesh(Rect::centered_square(1.0), 4, 4).unwrap();
        let a = AffineField::constant(1.0);
        let f = AffineField::constant(-4.0);
        let g = AffineField::constant(-0.2);
        let dir = ParamFn::zero();
        let asm = SampleAssembler::new(&mesh, 2, &a, &f, &g, &dir).unwrap();
        let solver = SolverConfig::psor();
        let cfg = McConfig { n_samples: 300, ..McConfig::default() };
        let (acc, rep) = mc_run(&mesh, 2, &a, &f, &g, &dir, &cfg, &solver).unwrap();
        assert_eq!(rep.accepted, 300);
        assert!(acc.variance().iter().all(|&v| v <= 1e-12));
        let (det, _, _) = asm.solve(&[1.0, 1.0], &solver, None).unwrap();
        for (m, d) in acc.mean.iter().zip(&det) {
            assert!((m - d).abs() < 1e-7);
        }
    }

    #[test]
    fn reproducible_across_threads() {
        let mesh = build_uniform_mesh(Rect::centered_square(1.5), 4, 4).unwrap();
        let (a, f, g) = (a1(), AffineField::constant(-2.0), AffineField::constant(0.0));
        let dir = ParamFn::zero();
        let asm = SampleAssembler::new(&mesh, 2, &a, &f, &g, &dir).unwrap();
        let cfg = McConfig { n_samples: 700, ..McConfig::default() };
        let solver = SolverConfig::psor();
        let (one, _) = par::with_threads(1, || mc_sample(&asm, &cfg, &solver)).unwrap();
        let (many, _) = par::with_threads(3, || mc_sample(&asm, &cfg, &solver)).unwrap();
        assert_eq!(one, many);
        assert!(mc_sample(&asm, &McConfig { n_samples: 1, ..cfg }, &solver).is_err());
    }
}
