//! Callback-backed spatial and parametric functions.

use std::fmt;
use std::sync::Arc;

use crate::mesh::Point;

type ValueFn = dyn Fn(Point) -> f64 + Send + Sync;
type GradFn = dyn Fn(Point) -> [f64; 2] + Send + Sync;
type ParamValueFn = dyn Fn(Point, &[f64]) -> f64 + Send + Sync;
type ParamGradFn = dyn Fn(Point, &[f64]) -> [f64; 2] + Send + Sync;

/// A function on the physical domain with an optional analytic gradient.
#[derive(Clone)]
pub struct SpatialFn {
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradFn>>,
}

impl SpatialFn {
    pub fn new(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        SpatialFn { value: Arc::new(f), gradient: None }
    }

    pub fn with_gradient(
        f: impl Fn(Point) -> f64 + Send + Sync + 'static,
        g: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        SpatialFn { value: Arc::new(f), gradient: Some(Arc::new(g)) }
    }

    pub fn constant(c: f64) -> Self {
        SpatialFn::with_gradient(move |_| c, |_| [0.0, 0.0])
    }

    #[inline]
    pub fn value(&self, x: Point) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn gradient(&self, x: Point) -> Option<[f64; 2]> {
        self.gradient.as_ref().map(|g| g(x))
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

impl fmt::Debug for SpatialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialFn")
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

/// A function of `(x, y)` on `D × Γ`, with an optional analytic gradient in `x`.
#[derive(Clone)]
pub struct ParamFn {
    value: Arc<ParamValueFn>,
    gradient: Option<Arc<ParamGradFn>>,
}

impl ParamFn {
    pub fn new(f: impl Fn(Point, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ParamFn { value: Arc::new(f), gradient: None }
    }

    pub fn with_gradient(
        f: impl Fn(Point, &[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(Point, &[f64]) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        ParamFn { value: Arc::new(f), gradient: Some(Arc::new(g)) }
    }

    pub fn zero() -> Self {
        ParamFn::with_gradient(|_, _| 0.0, |_, _| [0.0, 0.0])
    }

    /// Lifts a spatial function that does not depend on `y`.
    pub fn from_spatial(f: SpatialFn) -> Self {
        let g = f.clone();
        match f.has_gradient() {
            true => ParamFn::with_gradient(
                move |x, _| f.value(x),
                move |x, _| g.gradient(x).expect("gradient present"),
            ),
            false => ParamFn::new(move |x, _| f.value(x)),
        }
    }

    #[inline]
    pub fn value(&self, x: Point, y: &[f64]) -> f64 {
        (self.value)(x, y)
    }

    #[inline]
    pub fn gradient(&self, x: Point, y: &[f64]) -> Option<[f64; 2]> {
        self.gradient.as_ref().map(|g| g(x, y))
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Freezes the parameter at `y`.
    pub fn at(&self, y: &[f64]) -> SpatialFn {
        let v = self.value.clone();
        let yv = y.to_vec();
        match &self.gradient {
            Some(g) => {
                let g = g.clone();
                let yg = yv.clone();
                SpatialFn::with_gradient(move |x| v(x, &yv), move |x| g(x, &yg))
            }
            None => SpatialFn::new(move |x| v(x, &yv)),
        }
    }
}

impl fmt::Debug for ParamFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamFn")
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}
