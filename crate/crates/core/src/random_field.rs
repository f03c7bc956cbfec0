//! Affine parametric fields `μ(x) + Σ_k c_k φ_k(x) y_{d(k)}` and seeded
//! scenario sampling for the Monte Carlo baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{ParamFn, SpatialFn};
use crate::mesh::{triangle_quadrature, Mesh, Point};
use crate::param_space::ParamGrid;

/// One term `coeff · phi(x) · y_dim` of an affine field.
#[derive(Debug, Clone)]
pub struct Mode {
    pub coeff: f64,
    pub phi: SpatialFn,
    pub dim: usize,
}

/// Truncated affine expansion of a random field. Several modes may share a
/// parameter dimension; their contributions add.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub mu: SpatialFn,
    pub modes: Vec<Mode>,
}

impl AffineField {
    pub fn deterministic(mu: SpatialFn) -> Self {
        AffineField { mu, modes: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        AffineField::deterministic(SpatialFn::constant(c))
    }

    pub fn with_mode(mut self, coeff: f64, phi: SpatialFn, dim: usize) -> Self {
        self.modes.push(Mode { coeff, phi, dim });
        self
    }

    /// Smallest number of parameter dimensions this field needs.
    pub fn required_dims(&self) -> usize {
        self.modes.iter().map(|m| m.dim + 1).max().unwrap_or(0)
    }

    #[inline]
    pub fn evaluate(&self, x: Point, y: &[f64]) -> f64 {
        self.mu.value(x)
            + self
                .modes
                .iter()
                .map(|m| m.coeff * m.phi.value(x) * y[m.dim])
                .sum::<f64>()
    }

    /// Spatial weight of mode `k`, `c_k φ_k(x)`.
    pub fn mode_weight(&self, k: usize) -> SpatialFn {
        let m = self.modes[k].clone();
        SpatialFn::new(move |x| m.coeff * m.phi.value(x))
    }

    /// Spatial weight `Σ_{k on d} c_k φ_k` for each dimension `d < dims`
    /// that carries at least one mode, in dimension order.
    pub fn dim_weights(&self, dims: usize) -> Vec<(usize, SpatialFn)> {
        (0..dims)
            .filter(|d| self.modes.iter().any(|m| m.dim == *d))
            .map(|d| {
                let modes: Vec<Mode> = self.modes.iter().filter(|m| m.dim == d).cloned().collect();
                (d, SpatialFn::new(move |x| modes.iter().map(|m| m.coeff * m.phi.value(x)).sum()))
            })
            .collect()
    }

    /// The field frozen at `y`.
    pub fn at(&self, y: &[f64]) -> SpatialFn {
        let f = self.clone();
        let y = y.to_vec();
        SpatialFn::new(move |x| f.evaluate(x, &y))
    }

    pub fn to_param_fn(&self) -> ParamFn {
        let f = self.clone();
        ParamFn::new(move |x, y| f.evaluate(x, y))
    }

    /// Minimum and maximum of the field over `x` in `points` and `y` over
    /// the whole box `lower..upper` (the field is affine in `y`, so the
    /// extremes sit at the corners).
    fn extremes_over(&self, points: &[Point], lower: &[f64], upper: &[f64]) -> (f64, f64) {
        let dims = lower.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut slope = vec![0.0; dims];
        for &x in points {
            slope.iter_mut().for_each(|s| *s = 0.0);
            for m in &self.modes {
                slope[m.dim] += m.coeff * m.phi.value(x);
            }
            let base = self.mu.value(x);
            let (mut mn, mut mx) = (base, base);
            for k in 0..dims {
                let a = slope[k] * lower[k];
                let b = slope[k] * upper[k];
                mn += a.min(b);
                mx += a.max(b);
            }
            lo = lo.min(mn);
            hi = hi.max(mx);
        }
        (lo, hi)
    }
}

/// Bounds of `field` over `D × Γ`, sampling `x` at mesh nodes and at the
/// stiffness quadrature points and enumerating the corners of `Γ`.
/// A nonpositive minimum is a coercivity violation.
pub fn bounds_check(field: &AffineField, grid: &ParamGrid, mesh: &Mesh) -> Result<(f64, f64)> {
    if field.required_dims() > grid.n_dims() {
        return Err(Error::DimensionMismatch(format!(
            "field uses {} parameter dimensions, grid has {}",
            field.required_dims(),
            grid.n_dims()
        )));
    }
    let rule = triangle_quadrature(2)?;
    let mut points = mesh.nodes.clone();
    for t in 0..mesh.triangles.len() {
        points.extend(rule.points.iter().map(|b| mesh.map_point(t, *b)));
    }
    let lower: Vec<f64> = grid.dims.iter().map(|d| d.breakpoints[0]).collect();
    let upper: Vec<f64> = grid.dims.iter().map(|d| *d.breakpoints.last().unwrap()).collect();
    let (lo, hi) = field.extremes_over(&points, &lower, &upper);
    if !(lo > 0.0) {
        return Err(Error::Coercivity { min: lo });
    }
    Ok((lo, hi))
}

/// Map from the underlying uniform variable `ξ` to the parameter `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    #[default]
    Exp,
}

impl Transform {
    #[inline]
    pub fn apply(self, xi: f64) -> f64 {
        match self {
            Transform::Identity => xi,
            Transform::Exp => xi.exp(),
        }
    }
}

/// A single parameter realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledScenario {
    pub y: Vec<f64>,
}

impl SampledScenario {
    pub fn coefficient(&self, a: &AffineField) -> SpatialFn {
        a.at(&self.y)
    }

    pub fn source(&self, f: &AffineField) -> SpatialFn {
        f.at(&self.y)
    }

    pub fn obstacle(&self, g: &AffineField) -> SpatialFn {
        g.at(&self.y)
    }
}

/// Draws `ξ_k ~ U(−1, 1)` i.i.d. and maps them through `transform`. The
/// stream is keyed by `(seed, index)`, so sample `index` is the same no
/// matter which worker draws it or in which order.
pub fn sample_scenario(dims: usize, seed: u64, index: u64, transform: Transform) -> SampledScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let y = (0..dims)
        .map(|_| transform.apply(rng.gen_range(-1.0..1.0)))
        .collect();
    SampledScenario { y }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, Rect};
    use crate::param_space::{build_param_grid, density_for_exp_uniform};
    use std::f64::consts::E;

    fn example1_a() -> AffineField {
        AffineField::constant(1.0)
            .with_mode(1.0, SpatialFn::constant(1.0), 0)
            .with_mode(2.0, SpatialFn::constant(1.0), 1)
    }

    fn grid() -> ParamGrid {
        let d = density_for_exp_uniform(-1.0, 1.0).unwrap();
        build_param_grid(&[d.clone(), d], &[4, 4]).unwrap()
    }

    #[test]
    fn evaluate_example_coefficient() {
        let a = example1_a();
        assert_eq!(a.evaluate([0.3, -0.2], &[1.0, 1.0]), 4.0);
        assert_eq!(AffineField::constant(2.5).evaluate([0.0, 0.0], &[]), 2.5);
        let d1 = a.evaluate([0.1, 0.1], &[1.5, 0.5]) - a.evaluate([0.1, 0.1], &[1.0, 0.5]);
        assert!((d1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bounds_of_example_coefficient() {
        let mesh = build_uniform_mesh(Rect::centered_square(1.5), 4, 4).unwrap();
        let (lo, hi) = bounds_check(&example1_a(), &grid(), &mesh).unwrap();
        assert!((lo - (1.0 + 3.0 / E)).abs() < 1e-13);
        assert!((hi - (1.0 + 3.0 * E)).abs() < 1e-13);
        let (lo, hi) = bounds_check(&AffineField::constant(1.0), &grid(), &mesh).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
        assert!(matches!(
            bounds_check(&AffineField::constant(0.0), &grid(), &mesh),
            Err(Error::Coercivity { .. })
        ));
    }

    #[test]
    fn bounds_need_enough_dims() {
        let mesh = build_uniform_mesh(Rect::centered_square(1.0), 2, 2).unwrap();
        let a = AffineField::constant(1.0).with_mode(1.0, SpatialFn::constant(1.0), 3);
        assert!(matches!(bounds_check(&a, &grid(), &mesh), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_scenario(2, 7, 11, Transform::Exp);
        let b = sample_scenario(2, 7, 11, Transform::Exp);
        assert_eq!(a, b);
        assert_ne!(a, sample_scenario(2, 7, 12, Transform::Exp));
        assert!(a.y.iter().all(|&y| y > 1.0 / E && y < E));
    }

    #[test]
    fn exp_sample_mean() {
        let n = 100_000;
        let ys: Vec<f64> = (0..n).map(|i| sample_scenario(1, 3, i, Transform::Exp).y[0]).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - (E - 1.0 / E) / 2.0).abs() < 3.0 * se);

        let xs: Vec<f64> = (0..n).map(|i| sample_scenario(1, 5, i, Transform::Identity).y[0]).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let se = (1.0 / 3.0 / n as f64).sqrt();
        assert!(mx.abs() < 3.0 * se);
    }
}
