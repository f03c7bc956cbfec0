//! P1 assembly on structured triangulations: weighted stiffness matrices,
//! load vectors, nodal interpolation and error norms.
//!
//! Matrices indexed by interior nodes only are the default. Boundary data
//! enters through the interior-to-boundary coupling block returned by
//! [`assemble_stiffness_blocks`].

use crate::error::{Error, Result};
use crate::function::SpatialFn;
use crate::mesh::{triangle_quadrature, Mesh, Point};
use crate::par;
pub use crate::sparse::SparseMatrix;

/// Coefficients over interior nodes (length `I`) or over all nodes,
/// depending on the producing function.
pub type NodalVector = Vec<f64>;

pub const STIFFNESS_DEGREE: usize = 2;
pub const LOAD_DEGREE: usize = 2;
pub const NORM_DEGREE: usize = 4;

/// Norm selector for [`norm_error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    L2,
    H1Semi,
}

/// Stiffness matrix split into the interior block and the interior-boundary
/// coupling used for Dirichlet lifting.
#[derive(Debug, Clone)]
pub struct StiffnessBlocks {
    /// `I × I`.
    pub interior: SparseMatrix,
    /// `I × B`, columns in boundary order.
    pub coupling: SparseMatrix,
}

fn check_finite(v: f64, what: &'static str, x: Point) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what, x })
    }
}

/// Element integral of `weight` over each triangle with the given rule.
fn element_integrals(mesh: &Mesh, weight: &SpatialFn, degree: usize) -> Result<Vec<f64>> {
    let rule = triangle_quadrature(degree)?;
    par::map_range(mesh.triangles.len(), |t| {
        let jac = 2.0 * mesh.signed_area(t);
        let mut acc = 0.0;
        for (b, w) in rule.points.iter().zip(&rule.weights) {
            let x = mesh.map_point(t, *b);
            acc += w * check_finite(weight.value(x), "stiffness weight", x)?;
        }
        Ok(jac * acc)
    })
    .into_iter()
    .collect()
}

/// `[K]_{ri} = ∫ weight ∇φ_i · ∇φ_r` over all mesh nodes.
pub fn assemble_stiffness_full(mesh: &Mesh, weight: &SpatialFn) -> Result<SparseMatrix> {
    let integrals = element_integrals(mesh, weight, STIFFNESS_DEGREE)?;
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let grads = mesh.barycentric_gradients(t);
        for a in 0..3 {
            for b in 0..3 {
                let g = grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1];
                // right-angle split: the hypotenuse pair couples with exactly zero
                if g != 0.0 {
                    triplets.push((tri[a], tri[b], integrals[t] * g));
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &triplets))
}

pub fn split_blocks(mesh: &Mesh, full: &SparseMatrix) -> StiffnessBlocks {
    StiffnessBlocks {
        interior: full.submatrix(&mesh.interior_nodes, &mesh.interior_nodes),
        coupling: full.submatrix(&mesh.interior_nodes, &mesh.boundary_nodes),
    }
}

pub fn assemble_stiffness_blocks(mesh: &Mesh, weight: &SpatialFn) -> Result<StiffnessBlocks> {
    Ok(split_blocks(mesh, &assemble_stiffness_full(mesh, weight)?))
}

/// Weighted stiffness matrix over interior basis functions.
pub fn assemble_weighted_stiffness(mesh: &Mesh, weight: &SpatialFn) -> Result<SparseMatrix> {
    Ok(assemble_stiffness_blocks(mesh, weight)?.interior)
}

/// `[f]_r = ∫ source φ_r` for every mesh node.
pub fn assemble_load_full(mesh: &Mesh, source: &SpatialFn) -> Result<NodalVector> {
    let rule = triangle_quadrature(LOAD_DEGREE)?;
    let local: Vec<[f64; 3]> = par::map_range(mesh.triangles.len(), |t| {
        let jac = 2.0 * mesh.signed_area(t);
        let mut acc = [0.0; 3];
        for (b, w) in rule.points.iter().zip(&rule.weights) {
            let x = mesh.map_point(t, *b);
            let f = check_finite(source.value(x), "source", x)?;
            for a in 0..3 {
                acc[a] += jac * w * f * b[a];
            }
        }
        Ok(acc)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut out = vec![0.0; mesh.n_nodes()];
    for (tri, vals) in mesh.triangles.iter().zip(&local) {
        for a in 0..3 {
            out[tri[a]] += vals[a];
        }
    }
    Ok(out)
}

/// Load vector restricted to interior nodes.
pub fn assemble_load(mesh: &Mesh, source: &SpatialFn) -> Result<NodalVector> {
    let full = assemble_load_full(mesh, source)?;
    Ok(mesh.interior_nodes.iter().map(|&n| full[n]).collect())
}

/// Consistent P1 mass matrix over all nodes.
pub fn assemble_mass_full(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                triplets.push((tri[a], tri[b], m));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &triplets)
}

/// Nodal interpolant over all mesh nodes.
pub fn interpolate_nodal(mesh: &Mesh, func: &SpatialFn) -> Result<NodalVector> {
    mesh.nodes
        .iter()
        .map(|&x| check_finite(func.value(x), "interpolated function", x))
        .collect()
}

/// Nodal interpolant restricted to interior nodes.
pub fn interpolate_interior(mesh: &Mesh, func: &SpatialFn) -> Result<NodalVector> {
    mesh.interior_nodes
        .iter()
        .map(|&n| {
            let x = mesh.nodes[n];
            check_finite(func.value(x), "interpolated function", x)
        })
        .collect()
}

/// A physical quadrature point on the mesh.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: Point,
    /// Physical weight (includes the element area).
    pub weight: f64,
    pub triangle: usize,
    pub bary: [f64; 3],
}

/// All quadrature points of the degree-`degree` rule, triangle by triangle.
pub fn quadrature_points(mesh: &Mesh, degree: usize) -> Result<Vec<QuadPoint>> {
    let rule = triangle_quadrature(degree)?;
    let mut out = Vec::with_capacity(rule.points.len() * mesh.triangles.len());
    for t in 0..mesh.triangles.len() {
        let jac = 2.0 * mesh.signed_area(t);
        for (b, w) in rule.points.iter().zip(&rule.weights) {
            out.push(QuadPoint { x: mesh.map_point(t, *b), weight: jac * w, triangle: t, bary: *b });
        }
    }
    Ok(out)
}

/// Value and gradient of a target function sampled at quadrature points.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sample {
    pub value: f64,
    pub gradient: [f64; 2],
}

/// Samples `func` (and its gradient when `mode` needs it) at `points`.
pub fn sample_function(func: &SpatialFn, points: &[QuadPoint], mode: NormMode) -> Result<Vec<Sample>> {
    if mode == NormMode::H1Semi && !func.has_gradient() {
        return Err(Error::MissingGradient("exact function"));
    }
    Ok(par::map_range(points.len(), |k| {
        let x = points[k].x;
        Sample {
            value: func.value(x),
            gradient: func.gradient(x).unwrap_or([0.0, 0.0]),
        }
    }))
}

/// `‖u_h − target‖` where `u_h` has all-node coefficients `coeffs` and the
/// target is given by samples at `points` (from [`quadrature_points`]).
pub fn norm_error_sampled(
    mesh: &Mesh,
    coeffs: &[f64],
    points: &[QuadPoint],
    target: &[Sample],
    mode: NormMode,
) -> Result<f64> {
    if coeffs.len() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} nodes",
            coeffs.len(),
            mesh.n_nodes()
        )));
    }
    if target.len() != points.len() {
        return Err(Error::DimensionMismatch("target samples vs quadrature points".into()));
    }
    let sq = par::sum_range(points.len(), |k| {
        let q = &points[k];
        let tri = mesh.triangles[q.triangle];
        let d = match mode {
            NormMode::L2 => {
                let uh: f64 = (0..3).map(|a| q.bary[a] * coeffs[tri[a]]).sum();
                (uh - target[k].value).powi(2)
            }
            NormMode::H1Semi => {
                let grads = mesh.barycentric_gradients(q.triangle);
                let mut g = [0.0; 2];
                for a in 0..3 {
                    g[0] += coeffs[tri[a]] * grads[a][0];
                    g[1] += coeffs[tri[a]] * grads[a][1];
                }
                (g[0] - target[k].gradient[0]).powi(2) + (g[1] - target[k].gradient[1]).powi(2)
            }
        };
        q.weight * d
    });
    Ok(sq.sqrt())
}

/// Norm of the sampled target itself, with the same quadrature.
pub fn norm_sampled(points: &[QuadPoint], target: &[Sample], mode: NormMode) -> f64 {
    par::sum_range(points.len(), |k| {
        let s = &target[k];
        let d = match mode {
            NormMode::L2 => s.value * s.value,
            NormMode::H1Semi => s.gradient[0].powi(2) + s.gradient[1].powi(2),
        };
        points[k].weight * d
    })
    .sqrt()
}

/// `‖u_h − exact‖` in L² or the H¹ seminorm, by degree-4 quadrature.
pub fn norm_error(mesh: &Mesh, coeffs: &[f64], exact: &SpatialFn, mode: NormMode) -> Result<f64> {
    let points = quadrature_points(mesh, NORM_DEGREE)?;
    let samples = sample_function(exact, &points, mode)?;
    norm_error_sampled(mesh, coeffs, &points, &samples, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, Rect};

    fn mesh(n: usize) -> Mesh {
        build_uniform_mesh(Rect::centered_square(1.5), n, n).unwrap()
    }

    #[test]
    fn unit_weight_gives_five_point_stencil() {
        let m = mesh(6);
        let k = assemble_weighted_stiffness(&m, &SpatialFn::constant(1.0)).unwrap();
        // interior node away from the boundary: global (3, 3)
        let node = 3 * 7 + 3;
        let r = m.interior_index[node].unwrap();
        let (cols, vals) = k.row(r);
        assert_eq!(cols.len(), 5);
        assert!((k.get(r, r) - 4.0).abs() < 1e-14);
        for nb in [node - 1, node + 1, node - 7, node + 7] {
            let c = m.interior_index[nb].unwrap();
            assert!((k.get(r, c) + 1.0).abs() < 1e-14);
        }
        let diag_nb = m.interior_index[node + 8].unwrap();
        assert_eq!(k.get(r, diag_nb), 0.0);
        let s: f64 = vals.iter().sum();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn linear_weight_on_single_triangle() {
        // one cell: the lower triangle (0,0),(1,0),(1,1) has centroid x = 2/3
        let m = build_uniform_mesh(Rect::new(0.0, 1.0, 0.0, 1.0), 1, 1).unwrap();
        let k = assemble_stiffness_full(&m, &SpatialFn::new(|x| x[0])).unwrap();
        // node 0 = (0,0) touches both triangles; its gradient is (-1,0) on the
        // lower one (centroid x = 2/3) and (0,-1) on the upper one (x = 1/3)
        let lower = 0.5 * (2.0 / 3.0);
        let upper = 0.5 * (1.0 / 3.0);
        assert!((k.get(0, 0) - (lower + upper)).abs() < 1e-14);
        // node 1 = (1,0) only on the lower triangle, gradient (1,-1)
        assert!((k.get(1, 1) - 2.0 * lower).abs() < 1e-14);
        assert!((k.get(0, 1) + lower).abs() < 1e-14);
    }

    #[test]
    fn load_of_constant_source() {
        let m = mesh(4);
        let zero = assemble_load(&m, &SpatialFn::constant(0.0)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let one = assemble_load(&m, &SpatialFn::constant(1.0)).unwrap();
        let minus_two = assemble_load(&m, &SpatialFn::constant(-2.0)).unwrap();
        let area = m.signed_area(0);
        for (k, &n) in m.interior_nodes.iter().enumerate() {
            let touching = m.triangles.iter().filter(|t| t.contains(&n)).count();
            assert!((one[k] - touching as f64 * area / 3.0).abs() < 1e-14);
            assert!((minus_two[k] + 2.0 * one[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn nonfinite_weight_reports_location() {
        let m = mesh(2);
        let err = assemble_weighted_stiffness(&m, &SpatialFn::new(|x| if x[0] > 0.0 { f64::NAN } else { 1.0 }))
            .unwrap_err();
        match err {
            Error::NonFinite { x, .. } => assert!(x[0] > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn affine_interpolation_is_exact() {
        let m = mesh(5);
        let f = SpatialFn::with_gradient(|x| 1.0 - 2.0 * x[0] + 0.5 * x[1], |_| [-2.0, 0.5]);
        let c = interpolate_nodal(&m, &f).unwrap();
        assert!(norm_error(&m, &c, &f, NormMode::L2).unwrap() < 1e-13);
        assert!(norm_error(&m, &c, &f, NormMode::H1Semi).unwrap() < 1e-13);
        let z = interpolate_nodal(&m, &SpatialFn::constant(0.0)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_against_zero_has_norm_sqrt_area() {
        let m = mesh(3);
        let ones = vec![1.0; m.n_nodes()];
        let e = norm_error(&m, &ones, &SpatialFn::constant(0.0), NormMode::L2).unwrap();
        assert!((e - 3.0).abs() < 1e-13);
        // same value through the mass-matrix quadratic form
        let mass = assemble_mass_full(&m);
        let q: f64 = ones.iter().zip(mass.matvec(&ones)).map(|(a, b)| a * b).sum();
        assert!((q.sqrt() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let m = mesh(2);
        let c = vec![0.0; m.n_nodes()];
        assert!(matches!(
            norm_error(&m, &c, &SpatialFn::new(|_| 1.0), NormMode::H1Semi),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn interpolation_error_rates_for_square() {
        let f = SpatialFn::with_gradient(|x| x[0] * x[0], |x| [2.0 * x[0], 0.0]);
        let errs: Vec<(f64, f64)> = [4, 8, 16, 32]
            .iter()
            .map(|&n| {
                let m = mesh(n);
                let c = interpolate_nodal(&m, &f).unwrap();
                (
                    norm_error(&m, &c, &f, NormMode::L2).unwrap(),
                    norm_error(&m, &c, &f, NormMode::H1Semi).unwrap(),
                )
            })
            .collect();
        for w in errs.windows(2) {
            let r_l2 = w[0].0 / w[1].0;
            let r_h1 = w[0].1 / w[1].1;
            assert!((r_l2 - 4.0).abs() < 0.2, "L2 ratio {r_l2}");
            assert!((r_h1 - 2.0).abs() < 0.1, "H1 ratio {r_h1}");
        }
    }

    #[test]
    fn thread_count_does_not_change_assembly() {
        let m = mesh(12);
        let w = SpatialFn::new(|x| 1.0 + x[0].sin() * x[1].cos());
        let a = par::with_threads(1, || assemble_stiffness_full(&m, &w).unwrap());
        let b = par::with_threads(3, || assemble_stiffness_full(&m, &w).unwrap());
        assert_eq!(a, b);
    }
}
