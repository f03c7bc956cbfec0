//! Structured P1 triangulations of axis-aligned rectangles.
//!
//! Node ids are row-major, `id = iy * (nx + 1) + ix`. Every cell is split
//! along its bottom-left to top-right diagonal into a lower triangle
//! `(n00, n10, n11)` and an upper triangle `(n00, n11, n01)`, both
//! counter-clockwise. Cell `c = iy * nx + ix` owns triangles `2c` and `2c + 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect { x_min, x_max, y_min, y_max }
    }

    /// The square `(-half, half)^2`.
    pub fn centered_square(half: f64) -> Self {
        Rect::new(-half, half, -half, half)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::InvalidArgument(format!("degenerate rectangle {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_mask: Vec<bool>,
    /// `interior_index[node]` is the position of `node` among interior nodes.
    pub interior_index: Vec<Option<usize>>,
    /// Global ids of interior nodes, in interior order.
    pub interior_nodes: Vec<usize>,
    /// Global ids of boundary nodes, in boundary order.
    pub boundary_nodes: Vec<usize>,
    /// `boundary_index[node]` is the position of `node` among boundary nodes.
    pub boundary_index: Vec<Option<usize>>,
}

/// Builds the uniform split-square triangulation of `rect` with `nx * ny` cells.
pub fn build_uniform_mesh(rect: Rect, nx: usize, ny: usize) -> Result<Mesh> {
    rect.validate()?;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "cell counts must be positive, got nx = {nx}, ny = {ny}"
        )));
    }
    let dx = rect.width() / nx as f64;
    let dy = rect.height() / ny as f64;
    let n_nodes = (nx + 1) * (ny + 1);

    let mut nodes = Vec::with_capacity(n_nodes);
    let mut boundary_mask = Vec::with_capacity(n_nodes);
    for iy in 0..=ny {
        // pin the last row/column to the rectangle edge exactly
        let y = if iy == ny { rect.y_max } else { rect.y_min + iy as f64 * dy };
        for ix in 0..=nx {
            let x = if ix == nx { rect.x_max } else { rect.x_min + ix as f64 * dx };
            nodes.push([x, y]);
            boundary_mask.push(ix == 0 || iy == 0 || ix == nx || iy == ny);
        }
    }

    let id = |ix: usize, iy: usize| iy * (nx + 1) + ix;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let n00 = id(ix, iy);
            let n10 = id(ix + 1, iy);
            let n01 = id(ix, iy + 1);
            let n11 = id(ix + 1, iy + 1);
            triangles.push([n00, n10, n11]);
            triangles.push([n00, n11, n01]);
        }
    }

    let mut interior_index = vec![None; n_nodes];
    let mut boundary_index = vec![None; n_nodes];
    let mut interior_nodes = Vec::with_capacity((nx - 1) * (ny.max(1) - 1));
    let mut boundary_nodes = Vec::new();
    for (n, &b) in boundary_mask.iter().enumerate() {
        if b {
            boundary_index[n] = Some(boundary_nodes.len());
            boundary_nodes.push(n);
        } else {
            interior_index[n] = Some(interior_nodes.len());
            interior_nodes.push(n);
        }
    }

    Ok(Mesh {
        rect,
        nx,
        ny,
        nodes,
        triangles,
        boundary_mask,
        interior_index,
        interior_nodes,
        boundary_nodes,
        boundary_index,
    })
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary_nodes.len()
    }

    /// Cell widths `(dx, dy)`.
    pub fn spacing(&self) -> (f64, f64) {
        (self.rect.width() / self.nx as f64, self.rect.height() / self.ny as f64)
    }

    /// Largest cell side, the `h` used to label refinement levels.
    pub fn cell_size(&self) -> f64 {
        let (dx, dy) = self.spacing();
        dx.max(dy)
    }

    pub fn vertices(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of triangle `t` (positive for counter-clockwise).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.vertices(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.vertices(t);
        let d = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        d(p0, p1).max(d(p1, p2)).max(d(p2, p0))
    }

    /// Constant gradients of the three barycentric functions on triangle `t`.
    pub fn barycentric_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.vertices(t);
        let det = 2.0 * self.signed_area(t);
        [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ]
    }

    /// Maps barycentric coordinates on triangle `t` to physical coordinates.
    pub fn map_point(&self, t: usize, bary: [f64; 3]) -> Point {
        let [p0, p1, p2] = self.vertices(t);
        [
            bary[0] * p0[0] + bary[1] * p1[0] + bary[2] * p2[0],
            bary[0] * p0[1] + bary[1] * p1[1] + bary[2] * p2[1],
        ]
    }

    /// Finds the triangle containing `x` (clamped into the rectangle) and
    /// the barycentric coordinates of `x` in it.
    pub fn locate(&self, x: Point) -> (usize, [f64; 3]) {
        let (dx, dy) = self.spacing();
        let fx = ((x[0] - self.rect.x_min) / dx).clamp(0.0, self.nx as f64);
        let fy = ((x[1] - self.rect.y_min) / dy).clamp(0.0, self.ny as f64);
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = (fy.floor() as usize).min(self.ny - 1);
        let xi = fx - ix as f64;
        let eta = fy - iy as f64;
        let cell = iy * self.nx + ix;
        if eta <= xi {
            (2 * cell, [1.0 - xi, xi - eta, eta])
        } else {
            (2 * cell + 1, [1.0 - eta, xi, eta - xi])
        }
    }

    /// Evaluates the P1 function with all-node coefficients `coeffs` at `x`.
    pub fn eval_p1(&self, coeffs: &[f64], x: Point) -> f64 {
        debug_assert_eq!(coeffs.len(), self.n_nodes());
        let (t, bary) = self.locate(x);
        let tri = self.triangles[t];
        (0..3).map(|a| bary[a] * coeffs[tri[a]]).sum()
    }

    /// Expands interior coefficients to all nodes, filling boundary nodes
    /// from `boundary` (in boundary order).
    pub fn expand(&self, interior: &[f64], boundary: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (k, &n) in self.interior_nodes.iter().enumerate() {
            full[n] = interior[k];
        }
        for (k, &n) in self.boundary_nodes.iter().enumerate() {
            full[n] = boundary[k];
        }
        full
    }

    /// Writes the mesh as a legacy ASCII VTK unstructured grid, with optional
    /// named point data arrays.
    pub fn write_vtk<W: Write>(&self, mut out: W, point_data: &[(&str, &[f64])]) -> Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "sgvi mesh {}x{}", self.nx, self.ny)?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", self.n_nodes())?;
        for p in &self.nodes {
            writeln!(out, "{:e} {:e} 0", p[0], p[1])?;
        }
        let nt = self.triangles.len();
        writeln!(out, "CELLS {} {}", nt, 4 * nt)?;
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(out, "CELL_TYPES {nt}")?;
        for _ in 0..nt {
            // VTK_TRIANGLE
            writeln!(out, "5")?;
        }
        if !point_data.is_empty() {
            writeln!(out, "POINT_DATA {}", self.n_nodes())?;
            for (name, values) in point_data {
                if values.len() != self.n_nodes() {
                    return Err(Error::DimensionMismatch(format!(
                        "point data '{name}' has {} values for {} nodes",
                        values.len(),
                        self.n_nodes()
                    )));
                }
                writeln!(out, "SCALARS {name} double 1")?;
                writeln!(out, "LOOKUP_TABLE default")?;
                for v in *values {
                    writeln!(out, "{v:e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Largest triangle diameter. All triangles of the uniform split are
/// congruent with the cell diagonal as hypotenuse, so this is computed from
/// the spacing and halves exactly under refinement.
pub fn mesh_size(mesh: &Mesh) -> f64 {
    let (dx, dy) = mesh.spacing();
    (dx * dx + dy * dy).sqrt()
}

/// Quadrature rule on the reference triangle, in barycentric coordinates.
/// Weights sum to 1/2, the reference area.
#[derive(Debug, Clone)]
pub struct TriQuadRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn perm3(a: f64, b: f64) -> [[f64; 3]; 3] {
    [[a, a, b], [a, b, a], [b, a, a]]
}

/// Symmetric triangle rule exact for polynomials of total degree `degree`
/// (1 through 5).
pub fn triangle_quadrature(degree: usize) -> Result<TriQuadRule> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut push_orbit = |a: f64, b: f64, w: f64| {
        for p in perm3(a, b) {
            points.push(p);
            weights.push(0.5 * w);
        }
    };
    match degree {
        1 => {
            return Ok(TriQuadRule {
                degree,
                points: vec![[1.0 / 3.0; 3]],
                weights: vec![0.5],
            })
        }
        2 => push_orbit(0.5, 0.0, 1.0 / 3.0),
        3 | 4 => {
            // Dunavant 6-point rule, degree 4
            push_orbit(0.445_948_490_915_965, 0.108_103_018_168_070, 0.223_381_589_678_011);
            push_orbit(0.091_576_213_509_771, 0.816_847_572_980_459, 0.109_951_743_655_322);
        }
        5 => {
            // Radon 7-point rule
            let s15 = 15f64.sqrt();
            let a1 = (6.0 - s15) / 21.0;
            let a2 = (6.0 + s15) / 21.0;
            push_orbit(a1, 1.0 - 2.0 * a1, (155.0 - s15) / 1200.0);
            push_orbit(a2, 1.0 - 2.0 * a2, (155.0 + s15) / 1200.0);
            points.push([1.0 / 3.0; 3]);
            weights.push(0.5 * 9.0 / 40.0);
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported triangle quadrature degree {degree} (expected 1..=5)"
            )))
        }
    }
    Ok(TriQuadRule { degree, points, weights })
}
