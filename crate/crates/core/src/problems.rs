//! Built-in test problems with manufactured exact solutions, and simple
//! user-defined problems built from polynomial spatial functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{ParamFn, SpatialFn};
use crate::mesh::Rect;
use crate::param_space::{density_for_exp_uniform, Density1D};
use crate::random_field::{AffineField, Transform};

pub const BUILTIN_IDS: [&str; 3] = ["example1", "example2", "custom"];

/// Radius of the contact disk in the second example.
pub const EXAMPLE2_RADIUS: f64 = 0.7;

/// A stochastic obstacle problem `−∇·(a ∇u) ≥ f`, `u ≥ g`, `u = u_D` on the
/// boundary, with parameters `y_k = T(ξ_k)`, `ξ_k ~ U(−1, 1)`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub id: String,
    pub rect: Rect,
    pub densities: Vec<Density1D>,
    pub transform: Transform,
    pub coefficient: AffineField,
    pub source: AffineField,
    pub obstacle: AffineField,
    pub dirichlet: ParamFn,
    /// Exact solution with its spatial gradient, when known.
    pub exact: Option<ParamFn>,
}

impl Problem {
    pub fn dims(&self) -> usize {
        self.densities.len()
    }
}

fn exp_densities(m: usize) -> Result<Vec<Density1D>> {
    Ok(vec![density_for_exp_uniform(-1.0, 1.0)?; m])
}

/// Random diffusion coefficient `1 + y_1 + 2 y_2` on `(−1.5, 1.5)²` with
/// `f = −2`, `g = 0`; contact set is the unit disk.
pub fn example1() -> Result<Problem> {
    let coefficient = AffineField::constant(1.0)
        .with_mode(1.0, SpatialFn::constant(1.0), 0)
        .with_mode(2.0, SpatialFn::constant(1.0), 1);
    let exact = ParamFn::with_gradient(
        |x, y| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 <= 1.0 {
                return 0.0;
            }
            (0.5 * r2 - 0.5 * r2.ln() - 0.5) / (1.0 + y[0] + 2.0 * y[1])
        },
        |x, y| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 <= 1.0 {
                return [0.0, 0.0];
            }
            let s = (1.0 - 1.0 / r2) / (1.0 + y[0] + 2.0 * y[1]);
            [s * x[0], s * x[1]]
        },
    );
    Ok(Problem {
        id: "example1".into(),
        rect: Rect::centered_square(1.5),
        densities: exp_densities(2)?,
        transform: Transform::Exp,
        coefficient,
        source: AffineField::constant(-2.0),
        obstacle: AffineField::constant(0.0),
        dirichlet: exact.clone(),
        exact: Some(exact),
    })
}

/// Random source `F(x) (y_1 + 2 y_2)` on `(−1, 1)²` with `a = 1`, `g = 0`;
/// contact set is the disk of radius [`EXAMPLE2_RADIUS`].
pub fn example2() -> Result<Problem> {
    let r2 = EXAMPLE2_RADIUS * EXAMPLE2_RADIUS;
    let shape = SpatialFn::new(move |x| {
        let q = x[0] * x[0] + x[1] * x[1];
        if q <= r2 {
            8.0 * r2 * (q - 1.0 - r2)
        } else {
            -8.0 * (2.0 * q - r2)
        }
    });
    let source = AffineField::constant(0.0)
        .with_mode(1.0, shape.clone(), 0)
        .with_mode(2.0, shape, 1);
    let exact = ParamFn::with_gradient(
        move |x, y| {
            let q = x[0] * x[0] + x[1] * x[1];
            if q <= r2 {
                return 0.0;
            }
            (q - r2) * (q - r2) * (y[0] + 2.0 * y[1])
        },
        move |x, y| {
            let q = x[0] * x[0] + x[1] * x[1];
            if q <= r2 {
                return [0.0, 0.0];
            }
            let s = 4.0 * (q - r2) * (y[0] + 2.0 * y[1]);
            [s * x[0], s * x[1]]
        },
    );
    Ok(Problem {
        id: "example2".into(),
        rect: Rect::centered_square(1.0),
        densities: exp_densities(2)?,
        transform: Transform::Exp,
        coefficient: AffineField::constant(1.0),
        source,
        obstacle: AffineField::constant(0.0),
        dirichlet: exact.clone(),
        exact: Some(exact),
    })
}

/// `Σ c x₁^p x₂^q` over `terms = [[c, p, q], …]`, or a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpatialSpec {
    Constant(f64),
    Polynomial { terms: Vec<[f64; 3]> },
}

impl Default for SpatialSpec {
    fn default() -> Self {
        SpatialSpec::Constant(0.0)
    }
}

impl SpatialSpec {
    fn validate(&self) -> Result<()> {
        match self {
            SpatialSpec::Constant(c) if !c.is_finite() => {
                Err(Error::Config(format!("non-finite constant {c}")))
            }
            SpatialSpec::Polynomial { terms } => {
                for t in terms {
                    let ok = t[0].is_finite()
                        && [t[1], t[2]].iter().all(|p| *p >= 0.0 && p.fract() == 0.0 && *p <= 16.0);
                    if !ok {
                        return Err(Error::Config(format!("bad polynomial term {t:?}")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<SpatialFn> {
        self.validate()?;
        Ok(match self {
            SpatialSpec::Constant(c) => SpatialFn::constant(*c),
            SpatialSpec::Polynomial { terms } => {
                let t: Vec<(f64, i32, i32)> = terms.iter().map(|t| (t[0], t[1] as i32, t[2] as i32)).collect();
                let tg = t.clone();
                SpatialFn::with_gradient(
                    move |x| t.iter().map(|(c, p, q)| c * x[0].powi(*p) * x[1].powi(*q)).sum(),
                    move |x| {
                        let mut g = [0.0; 2];
                        for (c, p, q) in &tg {
                            if *p > 0 {
                                g[0] += c * *p as f64 * x[0].powi(p - 1) * x[1].powi(*q);
                            }
                            if *q > 0 {
                                g[1] += c * *q as f64 * x[0].powi(*p) * x[1].powi(q - 1);
                            }
                        }
                        g
                    },
                )
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub coeff: f64,
    #[serde(default = "unit_spec")]
    pub phi: SpatialSpec,
    pub dim: usize,
}

fn unit_spec() -> SpatialSpec {
    SpatialSpec::Constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSpec {
    pub mean: SpatialSpec,
    pub modes: Vec<ModeSpec>,
}

impl FieldSpec {
    pub fn build(&self) -> Result<AffineField> {
        let mut f = AffineField::deterministic(self.mean.build()?);
        for m in &self.modes {
            if !m.coeff.is_finite() {
                return Err(Error::Config(format!("non-finite mode coefficient {}", m.coeff)));
            }
            f = f.with_mode(m.coeff, m.phi.build()?, m.dim);
        }
        Ok(f)
    }
}

/// A user-defined problem. Dirichlet data do not depend on `y`; there is
/// no exact solution, so error tables are unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub domain: Rect,
    pub densities: Vec<Density1D>,
    #[serde(default)]
    pub transform: Transform,
    pub coefficient: FieldSpec,
    #[serde(default)]
    pub source: FieldSpec,
    #[serde(default)]
    pub obstacle: FieldSpec,
    #[serde(default)]
    pub dirichlet: SpatialSpec,
}

impl CustomSpec {
    pub fn build(&self) -> Result<Problem> {
        if self.domain.x_max <= self.domain.x_min || self.domain.y_max <= self.domain.y_min {
            return Err(Error::Config(format!("degenerate domain {:?}", self.domain)));
        }
        let densities = self
            .densities
            .iter()
            .cloned()
            .map(Density1D::validated)
            .collect::<Result<Vec<_>>>()?;
        // Monte Carlo draws y = T(ξ) with ξ ~ U(−1, 1), so the densities
        // must be the law of that map.
        let law = match self.transform {
            Transform::Exp => Density1D::LogUniformImage { a: -1.0, b: 1.0 },
            Transform::Identity => Density1D::Uniform { c: -1.0, d: 1.0 },
        };
        if densities.iter().any(|d| *d != law) {
            return Err(Error::Config(format!(
                "densities must all be {law:?} to match transform {:?}",
                self.transform
            )));
        }
        let dir = self.dirichlet.build()?;
        Ok(Problem {
            id: "custom".into(),
            rect: self.domain,
            densities,
            transform: self.transform,
            coefficient: self.coefficient.build()?,
            source: self.source.build()?,
            obstacle: self.obstacle.build()?,
            dirichlet: ParamFn::from_spatial(dir),
            exact: None,
        })
    }
}

/// Looks up a built-in problem by id.
pub fn builtin(id: &str, custom: Option<&CustomSpec>) -> Result<Problem> {
    match id {
        "example1" => example1(),
        "example2" => example2(),
        "custom" => custom
            .ok_or_else(|| Error::Config("problem \"custom\" needs a \"custom\" block".into()))?
            .build(),
        other => Err(Error::Config(format!(
            "unknown problem id \"{other}\"; valid ids are {}",
            BUILTIN_IDS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &ParamFn, x: [f64; 2], y: &[f64]) -> [f64; 2] {
        let h = 1e-6;
        let d = |e: [f64; 2]| (f.value([x[0] + h * e[0], x[1] + h * e[1]], y) - f.value([x[0] - h * e[0], x[1] - h * e[1]], y)) / (2.0 * h);
        [d([1.0, 0.0]), d([0.0, 1.0])]
    }

    /// `−∇·(a∇u)` by central differences.
    fn operator(p: &Problem, x: [f64; 2], y: &[f64]) -> f64 {
        let u = p.exact.as_ref().unwrap();
        let h = 1e-4;
        let a = |z: [f64; 2]| p.coefficient.evaluate(z, y);
        let flux = |z: [f64; 2], k: usize| a(z) * u.gradient(z, y).unwrap()[k];
        let mut s = 0.0;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            s += (flux(xp, k) - flux(xm, k)) / (2.0 * h);
        }
        -s
    }

    #[test]
    fn exact_solutions_satisfy_the_pde_off_the_contact_set() {
        let y = [1.7, 0.6];
        for p in [example1().unwrap(), example2().unwrap()] {
            let u = p.exact.as_ref().unwrap();
            for x in [[1.2f64, 0.3f64], [-0.9, 0.8], [0.1, -1.3], [0.85, 0.1]] {
                if !(x[0].abs() < p.rect.x_max && x[1].abs() < p.rect.y_max) {
                    continue;
                }
                let q = x[0] * x[0] + x[1] * x[1];
                let contact = if p.id == "example1" { 1.0 } else { EXAMPLE2_RADIUS.powi(2) };
                let g = u.gradient(x, &y).unwrap();
                let fd = fd_gradient(u, x, &y);
                assert!((g[0] - fd[0]).abs() < 1e-6 && (g[1] - fd[1]).abs() < 1e-6);
                if q > contact + 0.01 {
                    let lhs = operator(&p, x, &y);
                    let f = p.source.evaluate(x, &y);
                    assert!((lhs - f).abs() < 1e-5, "{} at {x:?}: {lhs} vs {f}", p.id);
                }
            }
            // contact set: u = g = 0 and f ≤ 0
            assert_eq!(u.value([0.1, 0.2], &y), 0.0);
            assert!(p.source.evaluate([0.1, 0.2], &y) < 0.0);
        }
    }

    #[test]
    fn example2_source_is_continuous() {
        let p = example2().unwrap();
        let r = EXAMPLE2_RADIUS;
        let y = [1.0, 1.0];
        let a = p.source.evaluate([r - 1e-12, 0.0], &y);
        let b = p.source.evaluate([r + 1e-12, 0.0], &y);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn unknown_id_lists_valid_ids() {
        let e = builtin("example3", None).unwrap_err().to_string();
        for id in BUILTIN_IDS {
            assert!(e.contains(id));
        }
        assert!(builtin("custom", None).is_err());
    }

    #[test]
    fn custom_problem_from_json() {
        let json = r#"{
            "domain": {"x_min": 0, "x_max": 1, "y_min": 0, "y_max": 1},
            "densities": [{"kind": "uniform", "c": -1, "d": 1}],
            "transform": "identity",
            "coefficient": {"mean": 1.0, "modes": [{"coeff": 0.5, "dim": 0}]},
            "source": {"mean": {"terms": [[2.0, 1, 0], [1.0, 0, 2]]}},
            "obstacle": {"mean": -0.1}
        }"#;
        let spec: CustomSpec = serde_json::from_str(json).unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.dims(), 1);
        assert_eq!(p.coefficient.evaluate([0.2, 0.2], &[1.0]), 1.5);
        let mut bad = spec.clone();
        bad.transform = Transform::Exp;
        assert!(bad.build().is_err());
        assert!((p.source.evaluate([0.5, 2.0], &[1.0]) - 5.0).abs() < 1e-15);
        let g = p.source.mu.gradient([0.5, 2.0]).unwrap();
        assert_eq!(g, [2.0, 4.0]);
        assert!(p.exact.is_none());
    }
}
