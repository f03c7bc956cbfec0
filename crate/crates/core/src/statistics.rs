//! Mean, second moment and variance of SG solutions, and reference
//! statistics of parametric functions by tensor Gauss–Legendre in `y`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_spatial::{norm_error_sampled, norm_sampled, quadrature_points, NormMode, QuadPoint, Sample, NORM_DEGREE};
use crate::function::{ParamFn, SpatialFn};
use crate::mesh::Mesh;
use crate::par;
use crate::param_space::Density1D;
use crate::sg_system::SgSystem;

/// Gauss points per parameter dimension for reference statistics.
pub const REFERENCE_ORDER: usize = 64;

/// Variances below this are counted as roundoff warnings before clipping.
pub const VARIANCE_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    Mean,
    SecondMoment,
    Variance,
}

impl StatKind {
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::SecondMoment => "second_moment",
            StatKind::Variance => "variance",
        }
    }
}

/// A nodal statistic over all mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StatField {
    pub kind: StatKind,
    pub values: Vec<f64>,
    /// Nodes whose value was clipped to zero (variance only).
    pub clipped: usize,
}

impl StatField {
    pub fn new(kind: StatKind, values: Vec<f64>) -> Self {
        StatField { kind, values, clipped: 0 }
    }

    /// `x1,x2,value` lines with a header.
    pub fn write_csv<W: Write>(&self, mesh: &Mesh, out: W) -> Result<()> {
        write_nodal_csv(mesh, &[(self.kind.name(), &self.values)], out)
    }

    pub fn write_vtk<W: Write>(&self, mesh: &Mesh, out: W) -> Result<()> {
        mesh.write_vtk(out, &[(self.kind.name(), &self.values)])
    }
}

/// Writes `x1,x2,<name>...` with one line per mesh node.
pub fn write_nodal_csv<W: Write>(mesh: &Mesh, columns: &[(&str, &[f64])], mut out: W) -> Result<()> {
    if columns.iter().any(|(_, v)| v.len() != mesh.n_nodes()) {
        return Err(Error::DimensionMismatch("field length vs mesh nodes".into()));
    }
    write!(out, "x1,x2")?;
    for (name, _) in columns {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (n, x) in mesh.nodes.iter().enumerate() {
        write!(out, "{:.17e},{:.17e}", x[0], x[1])?;
        for (_, v) in columns {
            write!(out, ",{:.17e}", v[n])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Nodal mean `Σ_j u_j ⟨ψ_j, 1⟩_p`.
pub fn sg_mean(system: &SgSystem, mesh: &Mesh, u: &[f64]) -> StatField {
    let blocks = system.full_blocks(mesh, u);
    let g0 = &system.gramians.g0_vec;
    let values = par::map_range(mesh.n_nodes(), |n| {
        blocks.iter().zip(g0).map(|(b, w)| w * b[n]).sum()
    });
    StatField::new(StatKind::Mean, values)
}

/// Nodal second moment `Σ_{j,t} u_j u_t ⟨ψ_j, ψ_t⟩_p`.
pub fn sg_second_moment(system: &SgSystem, mesh: &Mesh, u: &[f64]) -> StatField {
    let blocks = system.full_blocks(mesh, u);
    let g0 = &system.gramians.g0;
    let values = par::map_range(mesh.n_nodes(), |n| {
        let mut s = 0.0;
        for (j, bj) in blocks.iter().enumerate() {
            let (cols, vals) = g0.row(j);
            let inner: f64 = cols.iter().zip(vals).map(|(&t, &g)| g * blocks[t][n]).sum();
            s += bj[n] * inner;
        }
        s
    });
    StatField::new(StatKind::SecondMoment, values)
}

/// `second − mean²`, negative values clipped to zero. Values below
/// [`VARIANCE_FLOOR`] are logged.
pub fn variance(mean: &StatField, second: &StatField) -> StatField {
    let mut clipped = 0;
    let mut warned = 0;
    let values = mean
        .values
        .iter()
        .zip(&second.values)
        .map(|(m, s)| {
            let v = s - m * m;
            if v < 0.0 {
                clipped += 1;
                if v < VARIANCE_FLOOR {
                    warned += 1;
                }
                0.0
            } else {
                v
            }
        })
        .collect();
    if warned > 0 {
        log::warn!("{warned} nodal variances below {VARIANCE_FLOOR:e} clipped to zero");
    }
    StatField { kind: StatKind::Variance, values, clipped }
}

/// Tensor Gauss–Legendre rule for the product density, `order` points per
/// dimension on each smooth piece.
pub fn parameter_rule(densities: &[Density1D], order: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rule = vec![(Vec::new(), 1.0)];
    for d in densities {
        let r1 = d.quadrature(order);
        rule = rule
            .iter()
            .flat_map(|(y, w)| {
                r1.iter().map(move |&(yk, wk)| {
                    let mut y = y.clone();
                    y.push(yk);
                    (y, w * wk)
                })
            })
            .collect();
    }
    rule
}

/// First and second moment (values and gradients) at one point.
fn moments_at(analytic: &ParamFn, rule: &[(Vec<f64>, f64)], x: [f64; 2]) -> [Sample; 2] {
    let mut m = [Sample::default(); 2];
    for (y, w) in rule {
        let v = analytic.value(x, y);
        let g = analytic.gradient(x, y).unwrap_or([0.0, 0.0]);
        m[0].value += w * v;
        m[1].value += w * v * v;
        for (c, gc) in g.iter().enumerate() {
            m[0].gradient[c] += w * gc;
            m[1].gradient[c] += w * 2.0 * v * gc;
        }
    }
    m
}

/// `x ↦ E[u(x, ·)^moment]` under the product density, with gradient when
/// `analytic` has one.
pub fn exact_statistic(analytic: &ParamFn, densities: &[Density1D], moment: usize, order: usize) -> Result<SpatialFn> {
    if !(moment == 1 || moment == 2) {
        return Err(Error::InvalidArgument(format!("moment must be 1 or 2, got {moment}")));
    }
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be positive".into()));
    }
    let rule = std::sync::Arc::new(parameter_rule(densities, order));
    let k = moment - 1;
    let (f, r) = (analytic.clone(), rule.clone());
    let value = move |x| moments_at(&f, &r, x)[k].value;
    if analytic.has_gradient() {
        let f = analytic.clone();
        Ok(SpatialFn::with_gradient(value, move |x| moments_at(&f, &rule, x)[k].gradient))
    } else {
        Ok(SpatialFn::new(value))
    }
}

/// Reference mean and second moment sampled at the error quadrature points
/// of one mesh.
#[derive(Debug, Clone)]
pub struct ReferenceMoments {
    pub points: Vec<QuadPoint>,
    pub mean: Vec<Sample>,
    pub second: Vec<Sample>,
}

impl ReferenceMoments {
    pub fn compute(mesh: &Mesh, analytic: &ParamFn, densities: &[Density1D], order: usize) -> Result<Self> {
        if !analytic.has_gradient() {
            return Err(Error::MissingGradient("analytic solution"));
        }
        let points = quadrature_points(mesh, NORM_DEGREE)?;
        let rule = parameter_rule(densities, order);
        let both = par::map_range(points.len(), |k| moments_at(analytic, &rule, points[k].x));
        let mean = both.iter().map(|m| m[0]).collect();
        let second = both.iter().map(|m| m[1]).collect();
        Ok(ReferenceMoments { points, mean, second })
    }

    fn target(&self, kind: StatKind) -> Result<&[Sample]> {
        match kind {
            StatKind::Mean => Ok(&self.mean),
            StatKind::SecondMoment => Ok(&self.second),
            StatKind::Variance => Err(Error::InvalidArgument("no reference for the variance".into())),
        }
    }

    /// `‖E_ref − field‖ / ‖E_ref‖` with the same quadrature in both.
    pub fn relative_error(&self, mesh: &Mesh, field: &StatField, mode: NormMode) -> Result<f64> {
        let target = self.target(field.kind)?;
        let num = norm_error_sampled(mesh, &field.values, &self.points, target, mode)?;
        let den = norm_sampled(&self.points, target, mode);
        if den == 0.0 {
            return Err(Error::InvalidArgument("reference statistic has zero norm".into()));
        }
        Ok(num / den)
    }
}

/// Relative L² and H¹-seminorm errors of mean and second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub l2_mean: f64,
    pub h1_mean: f64,
    pub l2_second: f64,
    pub h1_second: f64,
}

pub fn moment_errors(
    mesh: &Mesh,
    reference: &ReferenceMoments,
    mean: &StatField,
    second: &StatField,
) -> Result<MomentErrors> {
    Ok(MomentErrors {
        l2_mean: reference.relative_error(mesh, mean, NormMode::L2)?,
        h1_mean: reference.relative_error(mesh, mean, NormMode::H1Semi)?,
        l2_second: reference.relative_error(mesh, second, NormMode::L2)?,
        h1_second: reference.relative_error(mesh, second, NormMode::H1Semi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, Rect};
    use crate::param_space::{build_param_grid, density_for_exp_uniform, ParamGrid};
    use crate::random_field::AffineField;
    use crate::sg_system::{assemble_sg, ExplicitPolicy, SgOptions};
    use std::f64::consts::E;

    fn exp_density() -> Density1D {
        density_for_exp_uniform(-1.0, 1.0).unwrap()
    }

    fn small_system(grid: &ParamGrid) -> (Mesh, SgSystem) {
        let mesh = build_uniform_mesh(Rect::centered_square(1.0), 3, 3).unwrap();
        let sys = assemble_sg(
            &mesh,
            grid,
            &AffineField::constant(1.0),
            &AffineField::constant(1.0),
            &AffineField::constant(0.0),
            &ParamFn::zero(),
            SgOptions::explicit(ExplicitPolicy::Never),
        )
        .unwrap();
        (mesh, sys)
    }

    #[test]
    fn closed_form_moments_of_y() {
        // E[y] = (e − 1/e)/2, E[y²] = (e² − e⁻²)/4
        let d = vec![exp_density()];
        let f = ParamFn::new(|_, y| 3.0 + 2.0 * y[0]);
        let m1 = exact_statistic(&f, &d, 1, 16).unwrap().value([0.0, 0.0]);
        let ey = (E - 1.0 / E) / 2.0;
        let ey2 = (E * E - 1.0 / (E * E)) / 4.0;
        assert!((m1 - (3.0 + 2.0 * ey)).abs() < 1e-13);
        let m2 = exact_statistic(&f, &d, 2, 16).unwrap().value([0.0, 0.0]);
        assert!((m2 - (9.0 + 12.0 * ey + 4.0 * ey2)).abs() < 1e-12);
        assert!(exact_statistic(&f, &d, 3, 16).is_err());
    }

    #[test]
    fn y_independent_function_is_returned() {
        let d = vec![exp_density(), exp_density()];
        let f = ParamFn::with_gradient(|x, _| x[0] * x[1], |x, _| [x[1], x[0]]);
        let m = exact_statistic(&f, &d, 1, 5).unwrap();
        let x = [0.3, -0.7];
        assert!((m.value(x) - x[0] * x[1]).abs() < 1e-14);
        let g = m.gradient(x).unwrap();
        assert!((g[0] - x[1]).abs() < 1e-14 && (g[1] - x[0]).abs() < 1e-14);
    }

    #[test]
    fn degenerate_grid_statistics() {
        let (mesh, sys) = small_system(&ParamGrid::deterministic());
        let u: Vec<f64> = (0..sys.len()).map(|i| i as f64 + 1.0).collect();
        let mean = sg_mean(&sys, &mesh, &u);
        let m2 = sg_second_moment(&sys, &mesh, &u);
        let full = mesh.expand(&u, &vec![0.0; mesh.n_boundary()]);
        assert_eq!(mean.values, full);
        for (a, b) in m2.values.iter().zip(&full) {
            assert_eq!(*a, b * b);
        }
    }

    #[test]
    fn constant_in_y_has_zero_variance() {
        let d = exp_density();
        let grid = build_param_grid(&[d.clone(), d], &[3, 2]).unwrap();
        let (mesh, sys) = small_system(&grid);
        let c = [0.5, -1.0, 2.0, 0.25];
        let u: Vec<f64> = (0..sys.len()).map(|k| c[k % sys.n_space]).collect();
        let mean = sg_mean(&sys, &mesh, &u);
        let var = variance(&mean, &sg_second_moment(&sys, &mesh, &u));
        for (i, &n) in mesh.interior_nodes.iter().enumerate() {
            assert!((mean.values[n] - c[i]).abs() < 1e-12);
        }
        assert!(var.values.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn clipping_counts() {
        let m = StatField::new(StatKind::Mean, vec![1.0, 2.0]);
        let s = StatField::new(StatKind::SecondMoment, vec![1.0 - 1e-15, 5.0]);
        let v = variance(&m, &s);
        assert_eq!(v.values, vec![0.0, 1.0]);
        assert_eq!(v.clipped, 1);
    }

    #[test]
    fn csv_export() {
        let mesh = build_uniform_mesh(Rect::centered_square(1.0), 1, 1).unwrap();
        let f = StatField::new(StatKind::Variance, vec![0.0, 1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        f.write_csv(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), "x1,x2,variance");
        assert!(StatField::new(StatKind::Mean, vec![0.0]).write_csv(&mesh, Vec::new()).is_err());
    }
}
