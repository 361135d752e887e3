use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Representation of each component of `m(x)` along `x₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Constant,
    PiecewiseConstant,
    CubicSpline,
}

impl std::str::FromStr for ParamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ParamKind::Constant),
            "piecewise-constant" | "pwc" => Ok(ParamKind::PiecewiseConstant),
            "cubic-spline" | "spline" => Ok(ParamKind::CubicSpline),
            other => Err(Error::arg(format!("unknown parameter kind '{other}'"))),
        }
    }
}

/// Box bounds of one parameter component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Unknown microstructure parameter `m(x) = (m₁(x), …, m_M(x))`, each
/// component carried by `N` degrees of freedom varying in `x₁` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamFieldRepr", into = "ParamFieldRepr")]
pub struct ParamField {
    kind: ParamKind,
    dofs: usize,
    theta: Vec<f64>,
    bounds: Vec<Bounds>,
    /// Spline second derivatives at the knots, per feature.
    curvature: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamFieldRepr {
    kind: ParamKind,
    dofs: usize,
    theta: Vec<f64>,
    bounds: Vec<Bounds>,
}

impl TryFrom<ParamFieldRepr> for ParamField {
    type Error = Error;

    fn try_from(r: ParamFieldRepr) -> Result<Self> {
        ParamField::new(r.kind, r.dofs, r.bounds, r.theta)
    }
}

impl From<ParamField> for ParamFieldRepr {
    fn from(p: ParamField) -> Self {
        Self { kind: p.kind, dofs: p.dofs, theta: p.theta, bounds: p.bounds }
    }
}

impl ParamField {
    /// `theta` is feature-major: entry `f·N + i` is dof `i` of feature `f`.
    pub fn new(kind: ParamKind, dofs: usize, bounds: Vec<Bounds>, theta: Vec<f64>) -> Result<Self> {
        if dofs == 0 || bounds.is_empty() {
            return Err(Error::arg("a parameter field needs at least one feature and one dof"));
        }
        if kind == ParamKind::Constant && dofs != 1 {
            return Err(Error::arg("a constant parameter field has exactly one dof"));
        }
        if theta.len() != dofs * bounds.len() {
            return Err(Error::arg(format!(
                "θ has {} entries, expected {} features × {} dofs",
                theta.len(),
                bounds.len(),
                dofs
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("θ contains non-finite entries"));
        }
        if bounds.iter().any(|b| !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi)) {
            return Err(Error::arg("parameter bounds must be finite with lo ≤ hi"));
        }
        let mut p = Self { kind, dofs, theta, bounds, curvature: Vec::new() };
        p.curvature = p.spline_curvatures();
        Ok(p)
    }

    /// Uniform field `m ≡ values` with one dof per feature.
    pub fn constant(values: &[f64], bounds: Vec<Bounds>) -> Result<Self> {
        Self::new(ParamKind::Constant, 1, bounds, values.to_vec())
    }

    /// Same layout with a new parameter vector.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        Self::new(self.kind, self.dofs, self.bounds.clone(), theta.to_vec())
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn features(&self) -> usize {
        self.bounds.len()
    }

    pub fn dofs(&self) -> usize {
        self.dofs
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn bounds(&self) -> &[Bounds] {
        &self.bounds
    }

    /// Bounds expanded to one entry per θ component.
    pub fn theta_bounds(&self) -> Vec<Bounds> {
        self.bounds.iter().flat_map(|b| std::iter::repeat_n(*b, self.dofs)).collect()
    }

    /// True when every feature is independent of `x`.
    pub fn is_uniform(&self) -> bool {
        self.dofs == 1 || self.kind == ParamKind::Constant
    }

    /// Centers of the `N` vertical strips of `[0, 1]²`.
    pub fn strip_centers(&self) -> Vec<f64> {
        (0..self.dofs).map(|i| (i as f64 + 0.5) / self.dofs as f64).collect()
    }

    pub fn strip_of(&self, x1: f64) -> usize {
        ((x1 * self.dofs as f64).floor().max(0.0) as usize).min(self.dofs - 1)
    }

    fn spline_curvatures(&self) -> Vec<f64> {
        let n = self.dofs;
        if self.kind != ParamKind::CubicSpline || n < 3 {
            return vec![0.0; self.theta.len()];
        }
        let h = 1.0 / (n - 1) as f64;
        let mut out = vec![0.0; self.theta.len()];
        for f in 0..self.features() {
            let y = &self.theta[f * n..(f + 1) * n];
            // natural spline: M₀ = M_{n−1} = 0, interior rows h M_{i−1} + 4h M_i + h M_{i+1} = 6 Δ²y / h
            let m = n - 2;
            let mut diag = vec![4.0 * h; m];
            let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h).collect();
            for i in 1..m {
                let w = h / diag[i - 1];
                diag[i] -= w * h;
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; m];
            for i in (0..m).rev() {
                let next = if i + 1 < m { sol[i + 1] } else { 0.0 };
                sol[i] = (rhs[i] - h * next) / diag[i];
            }
            out[f * n + 1..f * n + n - 1].copy_from_slice(&sol);
        }
        out
    }

    fn eval_feature(&self, f: usize, x1: f64) -> f64 {
        let n = self.dofs;
        let y = &self.theta[f * n..(f + 1) * n];
        let raw = match self.kind {
            ParamKind::Constant => y[0],
            ParamKind::PiecewiseConstant => y[self.strip_of(x1)],
            ParamKind::CubicSpline => {
                if n == 1 {
                    y[0]
                } else {
                    let h = 1.0 / (n - 1) as f64;
                    let t = x1.clamp(0.0, 1.0);
                    let i = ((t / h).floor() as usize).min(n - 2);
                    let (a, b) = ((i + 1) as f64 * h - t, t - i as f64 * h);
                    let mm = &self.curvature[f * n..(f + 1) * n];
                    (mm[i] * a.powi(3) + mm[i + 1] * b.powi(3)) / (6.0 * h)
                        + (y[i] / h - mm[i] * h / 6.0) * a
                        + (y[i + 1] / h - mm[i + 1] * h / 6.0) * b
                }
            }
        };
        self.bounds[f].clamp(raw)
    }

    /// `m(x)` clamped to the bounds.
    pub fn eval(&self, x: Point) -> Vec<f64> {
        (0..self.features()).map(|f| self.eval_feature(f, x[0])).collect()
    }

    /// Writes `m(x)` into `out` (length `M`).
    pub fn eval_into(&self, x: Point, out: &mut [f64]) {
        for (f, o) in out.iter_mut().enumerate() {
            *o = self.eval_feature(f, x[0]);
        }
    }
}

/// `eval_param` as a free function.
pub fn eval_param(pf: &ParamField, x: Point) -> Vec<f64> {
    pf.eval(x)
}
