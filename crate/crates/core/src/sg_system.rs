//! The coupled stochastic Galerkin system
//!
//! ```text
//! A = G_0 ⊗ K_0 + Σ_k G_k ⊗ K_k,     b = g_0 ⊗ f_0 + Σ_k g_k ⊗ f_k − lifting
//! ```
//!
//! Unknowns are ordered parameter-major: the coefficient of spatial basis
//! function `i` and parameter basis function `j` sits at `j · I + i`, so block
//! `j` of the vector collects all spatial coefficients of `ψ_j`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_spatial::{assemble_load, assemble_stiffness_blocks, StiffnessBlocks};
use crate::function::ParamFn;
use crate::lcp_solver::{ComplementarityProblem, LcpSolution, LinearOperator, Method, SolverConfig};
use crate::mesh::Mesh;
use crate::par;
use crate::param_space::{assemble_gramians, Gramians, ParamGrid};
use crate::random_field::{bounds_check, AffineField};
use crate::sparse::{kron_sum, SparseMatrix};

/// Systems up to this many unknowns get an explicit CSR copy by default.
pub const EXPLICIT_LIMIT: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExplicitPolicy {
    #[default]
    Auto,
    Always,
    Never,
}

/// How parametric Dirichlet data enter the parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryData {
    /// Density-weighted L² projection per boundary node.
    #[default]
    Project,
    /// Nodal values at the parameter grid nodes.
    Interpolate,
    /// Homogeneous data; the supplied Dirichlet function is ignored.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SgOptions {
    pub explicit: ExplicitPolicy,
    pub boundary: BoundaryData,
}

impl SgOptions {
    pub fn explicit(policy: ExplicitPolicy) -> Self {
        SgOptions { explicit: policy, ..Default::default() }
    }
}

/// One Kronecker term `param ⊗ space` of the operator, with the
/// interior-boundary coupling used for lifting.
#[derive(Debug, Clone)]
pub struct KronTerm {
    pub param: SparseMatrix,
    pub space: StiffnessBlocks,
}

#[derive(Debug, Clone)]
pub struct SgSystem {
    /// Interior spatial unknowns `I`.
    pub n_space: usize,
    /// Parameter basis functions `J`.
    pub n_param: usize,
    /// Random dimensions `M`.
    pub n_dims: usize,
    pub n_boundary: usize,
    /// Term 0 is `G_0 ⊗ K_0`; the rest are `G_k ⊗ K_k` per dimension used by
    /// the coefficient.
    pub terms: Vec<KronTerm>,
    pub gramians: Gramians,
    pub rhs: Vec<f64>,
    pub obstacle: Vec<f64>,
    /// Boundary values, `dirichlet[t · B + b] = u_D(x_b, y_t)`.
    pub dirichlet: Vec<f64>,
    /// Bounds of the coefficient over `D × Γ`.
    pub coefficient_bounds: (f64, f64),
    explicit: Option<SparseMatrix>,
    diag: Vec<f64>,
}

/// `(Σ_terms P ⊗ S) v` for `v` of length `J · Q` with `S : I × Q`.
fn kron_apply<'a>(
    terms: impl Iterator<Item = (&'a SparseMatrix, &'a SparseMatrix)>,
    n_param: usize,
    v: &[f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut w: Vec<f64> = Vec::new();
    for (p, s) in terms {
        let (rows, cols) = (s.n_rows(), s.n_cols());
        debug_assert_eq!(v.len(), n_param * cols);
        debug_assert_eq!(out.len(), n_param * rows);
        if rows == 0 {
            continue;
        }
        w.resize(n_param * rows, 0.0);
        // W_j = S v_j
        par::for_each_chunk_mut(&mut w, rows, |j, wj| {
            s.matvec_into(&v[j * cols..(j + 1) * cols], wj);
        });
        // out_t += Σ_j P[t, j] W_j
        par::for_each_chunk_mut(out, rows, |t, ot| {
            let (pc, pv) = p.row(t);
            for (&j, &pj) in pc.iter().zip(pv) {
                let wj = &w[j * rows..(j + 1) * rows];
                for (o, x) in ot.iter_mut().zip(wj) {
                    *o += pj * x;
                }
            }
        });
    }
}

/// Assembles the SG operator, load, lifting and obstacle vectors.
pub fn assemble_sg(
    mesh: &Mesh,
    grid: &ParamGrid,
    a_field: &AffineField,
    f_field: &AffineField,
    g_field: &AffineField,
    dirichlet: &ParamFn,
    options: SgOptions,
) -> Result<SgSystem> {
    let m = grid.n_dims();
    for (name, field) in [("coefficient", a_field), ("source", f_field), ("obstacle", g_field)] {
        if field.required_dims() > m {
            return Err(Error::DimensionMismatch(format!(
                "{name} uses {} parameter dimensions but the grid has {m}",
                field.required_dims()
            )));
        }
    }
    let coefficient_bounds = bounds_check(a_field, grid, mesh)?;
    let gramians = assemble_gramians(grid);
    let (ni, nj, nb) = (mesh.n_interior(), grid.n_basis(), mesh.n_boundary());

    let mut terms = vec![KronTerm {
        param: gramians.g0.clone(),
        space: assemble_stiffness_blocks(mesh, &a_field.mu)?,
    }];
    for (d, w) in a_field.dim_weights(m) {
        terms.push(KronTerm { param: gramians.gk[d].clone(), space: assemble_stiffness_blocks(mesh, &w)? });
    }

    let mut rhs = vec![0.0; ni * nj];
    let mut add_outer = |pv: &[f64], sv: &[f64]| {
        for (j, &p) in pv.iter().enumerate() {
            for (i, &s) in sv.iter().enumerate() {
                rhs[j * ni + i] += p * s;
            }
        }
    };
    add_outer(&gramians.g0_vec, &assemble_load(mesh, &f_field.mu)?);
    for (d, w) in f_field.dim_weights(m) {
        add_outer(&gramians.gk_vec[d], &assemble_load(mesh, &w)?);
    }

    let y_nodes = grid.nodes();
    let bpoints: Vec<_> = mesh.boundary_nodes.iter().map(|&n| mesh.nodes[n]).collect();
    let mut dvals = vec![0.0; nj * nb];
    match options.boundary {
        BoundaryData::Interpolate => {
            for (t, y) in y_nodes.iter().enumerate() {
                for (k, &x) in bpoints.iter().enumerate() {
                    dvals[t * nb + k] = dirichlet.value(x, y);
                }
            }
        }
        BoundaryData::Project if nb > 0 => {
            dvals = gramians.project(grid, nb, |y, out| {
                for (o, &x) in out.iter_mut().zip(&bpoints) {
                    *o = dirichlet.value(x, y);
                }
            });
        }
        BoundaryData::Project | BoundaryData::Zero => {}
    }
    if let Some(k) = dvals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "Dirichlet data", x: bpoints[k % nb] });
    }
    if nb > 0 && dvals.iter().any(|&v| v != 0.0) {
        let mut lift = vec![0.0; ni * nj];
        kron_apply(terms.iter().map(|t| (&t.param, &t.space.coupling)), nj, &dvals, &mut lift);
        rhs.iter_mut().zip(&lift).for_each(|(r, l)| *r -= l);
    }

    let mut obstacle = vec![0.0; ni * nj];
    for (j, y) in y_nodes.iter().enumerate() {
        for (i, &n) in mesh.interior_nodes.iter().enumerate() {
            obstacle[j * ni + i] = g_field.evaluate(mesh.nodes[n], y);
        }
    }

    let mut diag = vec![0.0; ni * nj];
    for t in &terms {
        let pd = t.param.diagonal();
        let sd = t.space.interior.diagonal();
        for j in 0..nj {
            for i in 0..ni {
                diag[j * ni + i] += pd[j] * sd[i];
            }
        }
    }

    let mut system = SgSystem {
        n_space: ni,
        n_param: nj,
        n_dims: m,
        n_boundary: nb,
        terms,
        gramians,
        rhs,
        obstacle,
        dirichlet: dvals,
        coefficient_bounds,
        explicit: None,
        diag,
    };
    let build = match options.explicit {
        ExplicitPolicy::Always => true,
        ExplicitPolicy::Never => false,
        ExplicitPolicy::Auto => ni * nj <= EXPLICIT_LIMIT,
    };
    if build {
        system.explicit = Some(system.build_explicit());
    }
    Ok(system)
}

impl SgSystem {
    pub fn len(&self) -> usize {
        self.n_space * self.n_param
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Explicit CSR form of `A`, assembled row by row.
    pub fn build_explicit(&self) -> SparseMatrix {
        let pairs: Vec<_> = self.terms.iter().map(|t| (&t.param, &t.space.interior)).collect();
        kron_sum(&pairs, self.len(), self.len())
    }

    pub fn explicit(&self) -> Option<&SparseMatrix> {
        self.explicit.as_ref()
    }

    pub fn ensure_explicit(&mut self) -> &SparseMatrix {
        if self.explicit.is_none() {
            self.explicit = Some(self.build_explicit());
        }
        self.explicit.as_ref().unwrap()
    }

    /// `A v` via the Kronecker factors, without forming `A`.
    pub fn kron_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for a system of size {}",
                v.len(),
                self.len()
            )));
        }
        let mut out = vec![0.0; self.len()];
        self.apply(v, &mut out);
        Ok(out)
    }

    /// `diag(A)_{j·I+i} = Σ_terms [G]_{jj} [K]_{ii}`.
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn problem(&self) -> ComplementarityProblem<'_> {
        ComplementarityProblem {
            operator: self,
            explicit: self.explicit.as_ref(),
            rhs: &self.rhs,
            obstacle: &self.obstacle,
        }
    }

    /// Solves the complementarity problem. Projected SOR needs explicit rows;
    /// without them the active-set method is used instead.
    pub fn solve(&self, config: &SolverConfig, start: Option<&[f64]>) -> Result<LcpSolution> {
        if config.method == Method::Psor && self.explicit.is_none() {
            log::warn!("no explicit matrix for {} unknowns; using the active-set method", self.len());
            let cfg = SolverConfig { method: Method::ActiveSet, ..config.clone() };
            return self.problem().solve(&cfg, start);
        }
        self.problem().solve(config, start)
    }

    /// Block `j` of a solution vector.
    pub fn block<'a>(&self, u: &'a [f64], j: usize) -> &'a [f64] {
        &u[j * self.n_space..(j + 1) * self.n_space]
    }

    /// Solution coefficients on all mesh nodes, `J` blocks of `n_nodes`,
    /// with boundary nodes filled from the Dirichlet data.
    pub fn full_blocks(&self, mesh: &Mesh, u: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_param)
            .map(|j| {
                let bnd = &self.dirichlet[j * self.n_boundary..(j + 1) * self.n_boundary];
                mesh.expand(self.block(u, j), bnd)
            })
            .collect()
    }

    /// Writes the explicit matrix in coordinate text form.
    pub fn write_matrix<W: Write>(&self, out: W) -> Result<()> {
        match &self.explicit {
            Some(a) => a.write_coordinate(out),
            None => self.build_explicit().write_coordinate(out),
        }
    }
}

impl LinearOperator for SgSystem {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        kron_apply(self.terms.iter().map(|t| (&t.param, &t.space.interior)), self.n_param, x, y);
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}
