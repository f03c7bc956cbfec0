//! Tensor-product partitions of the parameter box, the piecewise
//! multilinear basis on them, and density-weighted Gramians.
//!
//! Flat parameter indices are row-major in the multi-index with the last
//! dimension fastest, so every `J × J` Gramian is `F_0 ⊗ F_1 ⊗ … ⊗ F_{M−1}`
//! of one-dimensional factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::composite_gauss;
use crate::sparse::SparseMatrix;

/// Gauss points per panel and panels per cell for the 1D Gramian integrals.
pub const GRAMIAN_POINTS: usize = 10;
pub const GRAMIAN_PANELS: usize = 4;

const NORMALIZATION_TOL: f64 = 1e-10;

/// A probability density on a bounded interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density1D {
    /// Constant density on `[c, d]`.
    Uniform { c: f64, d: f64 },
    /// Law of `y = exp(ξ)` for `ξ ~ U(a, b)`: `p(y) = 1 / ((b − a) y)` on `[e^a, e^b]`.
    LogUniformImage { a: f64, b: f64 },
    /// Piecewise-linear density through `(points[i], values[i])`.
    Tabulated { points: Vec<f64>, values: Vec<f64> },
}

impl Density1D {
    pub fn uniform(c: f64, d: f64) -> Result<Self> {
        Density1D::Uniform { c, d }.validated()
    }

    pub fn tabulated(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Density1D::Tabulated { points, values }.validated()
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Density1D::Uniform { c, d } => (*c, *d),
            Density1D::LogUniformImage { a, b } => (a.exp(), b.exp()),
            Density1D::Tabulated { points, .. } => (
                points.first().copied().unwrap_or(f64::NAN),
                points.last().copied().unwrap_or(f64::NAN),
            ),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let (lo, hi) = self.support();
        if y < lo || y > hi {
            return 0.0;
        }
        match self {
            Density1D::Uniform { c, d } => 1.0 / (d - c),
            Density1D::LogUniformImage { a, b } => 1.0 / ((b - a) * y),
            Density1D::Tabulated { points, values } => {
                let k = match points.partition_point(|&p| p <= y) {
                    0 => 0,
                    k if k >= points.len() => points.len() - 2,
                    k => k - 1,
                };
                let t = (y - points[k]) / (points[k + 1] - points[k]);
                values[k] * (1.0 - t) + values[k + 1] * t
            }
        }
    }

    /// Checks the support and that the density integrates to one.
    pub fn validated(self) -> Result<Self> {
        let (lo, hi) = self.support();
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidArgument(format!("empty or invalid support [{lo}, {hi}]")));
        }
        if let Density1D::Tabulated { points, values } = &self {
            if points.len() < 2
                || points.len() != values.len()
                || points.windows(2).any(|w| w[1] <= w[0])
                || values.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            {
                return Err(Error::InvalidArgument("malformed density table".into()));
            }
        }
        let integral = self.integrate(|_| 1.0, lo, hi);
        if (integral - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::DensityNotNormalized { integral });
        }
        Ok(self)
    }

    /// `∫ f(y) p(y) dy` over `[lo, hi]` by composite Gauss–Legendre,
    /// splitting at table breakpoints so each piece is smooth.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let mut cuts = vec![lo];
        if let Density1D::Tabulated { points, .. } = self {
            cuts.extend(points.iter().copied().filter(|&p| p > lo && p < hi));
        }
        cuts.push(hi);
        cuts.windows(2)
            .map(|w| {
                composite_gauss(w[0], w[1], 20, 16)
                    .into_iter()
                    .map(|(y, wt)| wt * f(y) * self.eval(y))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Nodes and density-weighted weights of an `n`-point Gauss–Legendre
    /// rule on each smooth piece of the support. The log-uniform image is
    /// integrated in `ξ = ln y`, where its density is constant.
    pub fn quadrature(&self, n: usize) -> Vec<(f64, f64)> {
        if let Density1D::LogUniformImage { a, b } = self {
            return composite_gauss(*a, *b, n, 1)
                .into_iter()
                .map(|(xi, w)| (xi.exp(), w / (b - a)))
                .collect();
        }
        let (lo, hi) = self.support();
        let cuts = match self {
            Density1D::Tabulated { points, .. } => points.clone(),
            _ => vec![lo, hi],
        };
        cuts.windows(2)
            .flat_map(|w| composite_gauss(w[0], w[1], n, 1))
            .map(|(y, wt)| (y, wt * self.eval(y)))
            .collect()
    }

    pub fn mean(&self) -> f64 {
        let (lo, hi) = self.support();
        self.integrate(|y| y, lo, hi)
    }
}

/// Density of `y = e^ξ` with `ξ ~ U(a, b)`.
pub fn density_for_exp_uniform(a: f64, b: f64) -> Result<Density1D> {
    if !(b > a) {
        return Err(Error::InvalidArgument(format!("empty interval ({a}, {b})")));
    }
    Density1D::LogUniformImage { a, b }.validated()
}

/// One direction of the parameter box.
#[derive(Debug, Clone)]
pub struct GridDim {
    pub breakpoints: Vec<f64>,
    pub density: Density1D,
}

impl GridDim {
    pub fn n_nodes(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn spacing(&self) -> f64 {
        self.breakpoints.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Cell index containing `y` and the two hat weights on it.
    fn locate(&self, y: f64) -> (usize, f64, f64) {
        let b = &self.breakpoints;
        let cells = b.len() - 1;
        let k = b.partition_point(|&p| p <= y).saturating_sub(1).min(cells - 1);
        let t = ((y - b[k]) / (b[k + 1] - b[k])).clamp(0.0, 1.0);
        (k, 1.0 - t, t)
    }
}

/// Tensor partition of `Γ = Π [c_k, d_k]` with multilinear nodal basis.
#[derive(Debug, Clone)]
pub struct ParamGrid {
    pub dims: Vec<GridDim>,
    strides: Vec<usize>,
}

/// `cells_per_dim[k]` uniform cells on the support of `densities[k]`.
pub fn build_param_grid(densities: &[Density1D], cells_per_dim: &[usize]) -> Result<ParamGrid> {
    if densities.len() != cells_per_dim.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} densities but {} cell counts",
            densities.len(),
            cells_per_dim.len()
        )));
    }
    let mut dims = Vec::with_capacity(densities.len());
    for (density, &cells) in densities.iter().zip(cells_per_dim) {
        if cells == 0 {
            return Err(Error::InvalidArgument("each parameter direction needs at least one cell".into()));
        }
        let density = density.clone().validated()?;
        let (c, d) = density.support();
        let w = (d - c) / cells as f64;
        let breakpoints = (0..=cells)
            .map(|i| if i == cells { d } else { c + i as f64 * w })
            .collect();
        dims.push(GridDim { breakpoints, density });
    }
    Ok(ParamGrid::from_dims(dims))
}

impl ParamGrid {
    pub fn from_dims(dims: Vec<GridDim>) -> Self {
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1].n_nodes();
        }
        ParamGrid { dims, strides }
    }

    /// The zero-dimensional grid with a single constant basis function.
    pub fn deterministic() -> Self {
        ParamGrid::from_dims(Vec::new())
    }

    /// Number of random dimensions `M`.
    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    /// Number of basis functions `J`.
    pub fn n_basis(&self) -> usize {
        self.dims.iter().map(GridDim::n_nodes).product()
    }

    /// `s = max_k s_k`.
    pub fn spacing(&self) -> f64 {
        self.dims.iter().map(GridDim::spacing).fold(0.0, f64::max)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (k, s) in self.strides.iter().enumerate() {
            idx[k] = flat / s;
            flat %= s;
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of parameter node `j`.
    pub fn node(&self, j: usize) -> Vec<f64> {
        self.multi_index(j)
            .iter()
            .zip(&self.dims)
            .map(|(&i, d)| d.breakpoints[i])
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.n_basis()).map(|j| self.node(j)).collect()
    }

    /// Nonzero basis functions at `y` as `(flat index, value)` pairs.
    pub fn basis_at(&self, y: &[f64]) -> Vec<(usize, f64)> {
        assert_eq!(y.len(), self.n_dims());
        let mut out = vec![(0usize, 1.0f64)];
        for (k, d) in self.dims.iter().enumerate() {
            let (cell, wl, wr) = d.locate(y[k]);
            let s = self.strides[k];
            out = out
                .into_iter()
                .flat_map(|(j, v)| [(j + cell * s, v * wl), (j + (cell + 1) * s, v * wr)])
                .collect();
        }
        out
    }

    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.n_basis()).map(|j| f(&self.node(j))).collect()
    }

    pub fn eval_interpolant(&self, coeffs: &[f64], y: &[f64]) -> f64 {
        self.basis_at(y).into_iter().map(|(j, v)| v * coeffs[j]).sum()
    }

    /// `⟨f_k, ψ_t⟩_p` for `n` functions evaluated together, stored as
    /// `out[t · n + k]`. Uses the Gramian rule in each direction, so
    /// projecting a multilinear function is exact up to roundoff.
    pub fn weighted_moments(&self, n: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
        let m = self.n_dims();
        // Per direction, per cell: (y, weight · density, left hat, right hat).
        let rules: Vec<Vec<Vec<[f64; 4]>>> = self
            .dims
            .iter()
            .map(|d| {
                d.breakpoints
                    .windows(2)
                    .map(|w| {
                        composite_gauss(w[0], w[1], GRAMIAN_POINTS, GRAMIAN_PANELS)
                            .into_iter()
                            .map(|(y, q)| {
                                let t = (y - w[0]) / (w[1] - w[0]);
                                [y, q * d.density.eval(y), 1.0 - t, t]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let cells: Vec<usize> = self.dims.iter().map(|d| d.n_nodes() - 1).collect();
        let n_cells: usize = cells.iter().product();
        let mut out = vec![0.0; self.n_basis() * n];
        let mut vals = vec![0.0; n];
        let mut y = vec![0.0; m];
        for c in 0..n_cells {
            let mut cell = vec![0; m];
            let mut rem = c;
            for k in (0..m).rev() {
                cell[k] = rem % cells[k];
                rem /= cells[k];
            }
            let points = GRAMIAN_POINTS * GRAMIAN_PANELS;
            for p in 0..points.pow(m as u32) {
                let mut rem = p;
                let mut w = 1.0;
                // (flat index, hat product) over the cell's 2^m vertices
                let mut verts = vec![(0usize, 1.0f64)];
                for k in (0..m).rev() {
                    let [yk, qk, l, r] = rules[k][cell[k]][rem % points];
                    rem /= points;
                    y[k] = yk;
                    w *= qk;
                    let s = self.strides[k];
                    verts = verts
                        .into_iter()
                        .flat_map(|(j, v)| [(j + cell[k] * s, v * l), (j + (cell[k] + 1) * s, v * r)])
                        .collect();
                }
                f(&y, &mut vals);
                for (j, v) in verts {
                    let row = &mut out[j * n..(j + 1) * n];
                    for (o, fv) in row.iter_mut().zip(&vals) {
                        *o += w * v * fv;
                    }
                }
            }
        }
        out
    }

    /// Corners of the whole parameter box.
    pub fn box_vertices(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for d in &self.dims {
            let (lo, hi) = (d.breakpoints[0], *d.breakpoints.last().unwrap());
            out = out
                .into_iter()
                .flat_map(|v| {
                    let mut a = v.clone();
                    a.push(lo);
                    let mut b = v;
                    b.push(hi);
                    [a, b]
                })
                .collect();
        }
        out
    }
}

/// One-dimensional Gramian factors for one direction.
#[derive(Debug, Clone)]
pub struct Factors1D {
    /// `⟨ψ_i, ψ_j⟩_p`.
    pub mass: SparseMatrix,
    /// `⟨y ψ_i, ψ_j⟩_p`.
    pub weighted: SparseMatrix,
    /// `⟨ψ_i, 1⟩_p`.
    pub moment0: Vec<f64>,
    /// `⟨y, ψ_i⟩_p`.
    pub moment1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gramians {
    pub factors: Vec<Factors1D>,
    /// `[G0]_{jt} = ⟨ψ_j, ψ_t⟩_p`.
    pub g0: SparseMatrix,
    /// `[G_k]_{jt} = ⟨y_k ψ_j, ψ_t⟩_p`.
    pub gk: Vec<SparseMatrix>,
    /// `[g0]_t = ⟨ψ_t, 1⟩_p`.
    pub g0_vec: Vec<f64>,
    /// `[g_k]_t = ⟨y_k, ψ_t⟩_p`.
    pub gk_vec: Vec<Vec<f64>>,
}

fn factors_1d(dim: &GridDim) -> Factors1D {
    let b = &dim.breakpoints;
    let n = b.len();
    let mut mt = Vec::new();
    let mut wt = Vec::new();
    let mut m0 = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    for l in 0..n - 1 {
        let (lo, hi) = (b[l], b[l + 1]);
        let w = hi - lo;
        let mut local_m = [[0.0; 2]; 2];
        let mut local_w = [[0.0; 2]; 2];
        for (y, q) in composite_gauss(lo, hi, GRAMIAN_POINTS, GRAMIAN_PANELS) {
            let p = dim.density.eval(y);
            let hats = [(hi - y) / w, (y - lo) / w];
            for a in 0..2 {
                m0[l + a] += q * p * hats[a];
                m1[l + a] += q * p * y * hats[a];
                for c in 0..2 {
                    local_m[a][c] += q * p * hats[a] * hats[c];
                    local_w[a][c] += q * p * y * hats[a] * hats[c];
                }
            }
        }
        for a in 0..2 {
            for c in 0..2 {
                mt.push((l + a, l + c, local_m[a][c]));
                wt.push((l + a, l + c, local_w[a][c]));
            }
        }
    }
    Factors1D {
        mass: SparseMatrix::from_triplets(n, n, &mt),
        weighted: SparseMatrix::from_triplets(n, n, &wt),
        moment0: m0,
        moment1: m1,
    }
}

fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

fn kron_chain_mat(parts: &[&SparseMatrix]) -> SparseMatrix {
    parts
        .iter()
        .fold(SparseMatrix::identity(1), |acc, m| acc.kron(m))
}

fn kron_chain_vec(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().fold(vec![1.0], |acc, v| kron_vec(&acc, v))
}

impl Gramians {
    /// Solves `G0 X = R` in place for `R` of shape `J × n` (row `t` at
    /// `t · n`), one tridiagonal sweep per direction.
    pub fn solve_g0(&self, grid: &ParamGrid, r: &mut [f64], n: usize) {
        assert_eq!(r.len(), grid.n_basis() * n);
        let total = grid.n_basis();
        for (k, f) in self.factors.iter().enumerate() {
            let len = grid.dims[k].n_nodes();
            let stride = grid.strides[k];
            let sub: Vec<f64> = (1..len).map(|i| f.mass.get(i, i - 1)).collect();
            let diag: Vec<f64> = (0..len).map(|i| f.mass.get(i, i)).collect();
            let sup: Vec<f64> = (0..len - 1).map(|i| f.mass.get(i, i + 1)).collect();
            // forward elimination coefficients, shared by every line
            let mut cp = vec![0.0; len];
            let mut den = vec![0.0; len];
            den[0] = diag[0];
            for i in 1..len {
                cp[i - 1] = sup[i - 1] / den[i - 1];
                den[i] = diag[i] - sub[i - 1] * cp[i - 1];
            }
            for base in (0..total).filter(|j| (j / stride).is_multiple_of(len)) {
                let at = |i: usize| (base + i * stride) * n;
                for c in 0..n {
                    r[at(0) + c] /= den[0];
                }
                for i in 1..len {
                    for c in 0..n {
                        let prev = r[at(i - 1) + c];
                        r[at(i) + c] = (r[at(i) + c] - sub[i - 1] * prev) / den[i];
                    }
                }
                for i in (0..len - 1).rev() {
                    for c in 0..n {
                        let next = r[at(i + 1) + c];
                        r[at(i) + c] -= cp[i] * next;
                    }
                }
            }
        }
    }

    /// Density-weighted L² projection of `n` functions onto the
    /// multilinear space, `out[t · n + k]`.
    pub fn project(&self, grid: &ParamGrid, n: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
        let mut r = grid.weighted_moments(n, f);
        self.solve_g0(grid, &mut r, n);
        r
    }
}

/// All `J × J` Gramians and moment vectors of the grid, built as
/// Kronecker products of one-dimensional factors.
pub fn assemble_gramians(grid: &ParamGrid) -> Gramians {
    let factors: Vec<Factors1D> = grid.dims.iter().map(factors_1d).collect();
    let masses: Vec<&SparseMatrix> = factors.iter().map(|f| &f.mass).collect();
    let m0s: Vec<&[f64]> = factors.iter().map(|f| f.moment0.as_slice()).collect();
    let g0 = kron_chain_mat(&masses);
    let g0_vec = kron_chain_vec(&m0s);
    let mut gk = Vec::with_capacity(factors.len());
    let mut gk_vec = Vec::with_capacity(factors.len());
    for k in 0..factors.len() {
        let mut mats = masses.clone();
        mats[k] = &factors[k].weighted;
        gk.push(kron_chain_mat(&mats));
        let mut vecs = m0s.clone();
        vecs[k] = factors[k].moment1.as_slice();
        gk_vec.push(kron_chain_vec(&vecs));
    }
    Gramians { factors, g0, gk, g0_vec, gk_vec }
}
