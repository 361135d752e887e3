//! Parametrized oscillatory coefficients `a^ε(m(x), x/ε)` and the
//! representations of the unknown parameter `m`.

mod param;
mod random;

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use param::{eval_param, Bounds, ParamField, ParamKind};
pub use random::{band_count, sample_random, RandomRealization};

use crate::error::{Error, Result};
use crate::fem::TensorCoefficient;
use crate::geometry::{barycenter, frac, periodic_band_area, periodic_square_area, ConvexPolygon, Point};
use crate::mesh::TriMesh;
use crate::tensor::SymTensor;

/// Microstructure families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// `1.1 + m sin(2π x₂/ε)`.
    #[serde(rename = "A")]
    Amplitude,
    /// `0.5 + 2 χ{frac(x₂/ε) < m}`.
    #[serde(rename = "B")]
    AreaFraction,
    /// `1.1 + sin(2π x̃₂/ε)`, `x̃ = σ_m x`.
    #[serde(rename = "C")]
    Angle,
    /// Product of amplitude profiles in `x₁` and `x₂`.
    #[serde(rename = "D")]
    SeparableAmplitude,
    /// `0.5 + 2 χ` of the square `[0, m]²` in each cell.
    #[serde(rename = "E")]
    SquareInclusion,
    /// Amplitude `m₁` in the frame rotated by `m₂`.
    #[serde(rename = "AC")]
    AmpAngle,
    /// Laminate of fraction `m₁` in the frame rotated by `m₂`.
    #[serde(rename = "BC")]
    AfAngle,
    /// `0.5 + 2 m₁ χ{frac(x₂/ε) < m₂}`.
    #[serde(rename = "AB")]
    AmpAf,
    /// `1 + m X_ε(x)`, random band values across the 45° direction.
    #[serde(rename = "random")]
    RandomLayered,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Amplitude,
        ModelKind::AreaFraction,
        ModelKind::Angle,
        ModelKind::SeparableAmplitude,
        ModelKind::SquareInclusion,
        ModelKind::AmpAngle,
        ModelKind::AfAngle,
        ModelKind::AmpAf,
        ModelKind::RandomLayered,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Amplitude => "A",
            ModelKind::AreaFraction => "B",
            ModelKind::Angle => "C",
            ModelKind::SeparableAmplitude => "D",
            ModelKind::SquareInclusion => "E",
            ModelKind::AmpAngle => "AC",
            ModelKind::AfAngle => "BC",
            ModelKind::AmpAf => "AB",
            ModelKind::RandomLayered => "random",
        }
    }

    /// Number of parameter components `M`.
    pub fn features(self) -> usize {
        match self {
            ModelKind::AmpAngle | ModelKind::AfAngle | ModelKind::AmpAf => 2,
            _ => 1,
        }
    }

    /// Admissible range of each parameter component.
    pub fn bounds(self) -> Vec<Bounds> {
        const AMP: Bounds = Bounds::new(0.05, 1.0);
        const FRACTION: Bounds = Bounds::new(0.05, 0.95);
        const ANGLE: Bounds = Bounds::new(0.0, 0.5);
        match self {
            ModelKind::Amplitude | ModelKind::SeparableAmplitude => vec![AMP],
            ModelKind::AreaFraction | ModelKind::SquareInclusion | ModelKind::RandomLayered => vec![FRACTION],
            ModelKind::Angle => vec![ANGLE],
            ModelKind::AmpAngle => vec![AMP, ANGLE],
            ModelKind::AfAngle => vec![FRACTION, ANGLE],
            ModelKind::AmpAf => vec![AMP, FRACTION],
        }
    }

    /// Piecewise-constant microstructures, averaged exactly over elements.
    pub fn is_two_phase(self) -> bool {
        matches!(
            self,
            ModelKind::AreaFraction
                | ModelKind::SquareInclusion
                | ModelKind::AfAngle
                | ModelKind::AmpAf
                | ModelKind::RandomLayered
        )
    }

    /// Declared ellipticity interval `[min a, max a]` over admissible parameters.
    pub fn ellipticity(self) -> (f64, f64) {
        match self {
            ModelKind::Amplitude | ModelKind::Angle | ModelKind::AmpAngle => (0.1, 2.1),
            ModelKind::SeparableAmplitude => (0.01, 4.41),
            ModelKind::AreaFraction | ModelKind::SquareInclusion | ModelKind::AfAngle | ModelKind::AmpAf => {
                (0.5, 2.5)
            }
            ModelKind::RandomLayered => (0.05, 1.95),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown microstructure model '{s}'")))
    }
}

/// Model family plus its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroModel {
    pub kind: ModelKind,
    /// Mean level of the sinusoidal profiles.
    pub a0: f64,
    /// Inclusion (high) phase value.
    pub k1: f64,
    /// Matrix (low) phase value.
    pub k2: f64,
}

impl MicroModel {
    pub const fn new(kind: ModelKind) -> Self {
        Self { kind, a0: 1.1, k1: 2.5, k2: 0.5 }
    }

    /// Axis-aligned phase boundaries inside the unit cell (`ε = 1`).
    pub fn cell_interfaces(&self, m: &[f64]) -> [Vec<f64>; 2] {
        match self.kind {
            ModelKind::AreaFraction => [vec![], vec![m[0]]],
            ModelKind::AmpAf => [vec![], vec![m[1]]],
            ModelKind::SquareInclusion => [vec![m[0]], vec![m[0]]],
            _ => [vec![], vec![]],
        }
    }

    /// Pointwise value with the parameter frozen at `m`.
    pub fn value(&self, m: &[f64], eps: f64, x: Point, realization: Option<&RandomRealization>) -> f64 {
        let tau = 2.0 * PI / eps;
        let dk = self.k1 - self.k2;
        match self.kind {
            ModelKind::Amplitude => self.a0 + m[0] * (tau * x[1]).sin(),
            ModelKind::AreaFraction => self.k2 + dk * f64::from(u8::from(frac(x[1] / eps) < m[0])),
            ModelKind::Angle => self.a0 + (tau * rotated_x2(m[0], x)).sin(),
            ModelKind::SeparableAmplitude => {
                (self.a0 + m[0] * (tau * x[0]).sin()) * (self.a0 + m[0] * (tau * x[1]).sin())
            }
            ModelKind::SquareInclusion => {
                let inside = frac(x[0] / eps) < m[0] && frac(x[1] / eps) < m[0];
                self.k2 + dk * f64::from(u8::from(inside))
            }
            ModelKind::AmpAngle => self.a0 + m[0] * (tau * rotated_x2(m[1], x)).sin(),
            ModelKind::AfAngle => {
                self.k2 + dk * f64::from(u8::from(frac(rotated_x2(m[1], x) / eps) < m[0]))
            }
            ModelKind::AmpAf => self.k2 + dk * m[0] * f64::from(u8::from(frac(x[1] / eps) < m[1])),
            ModelKind::RandomLayered => {
                let xi = realization.map_or(0.0, |r| r.band(random_band(eps, x)));
                1.0 + m[0] * xi
            }
        }
    }

    /// Element value with the parameter frozen at `m`: the exact area average
    /// for two-phase models, the barycenter value otherwise.
    pub fn element_value(
        &self,
        m: &[f64],
        eps: f64,
        tri: &[Point; 3],
        realization: Option<&RandomRealization>,
    ) -> f64 {
        let dk = self.k1 - self.k2;
        let area = || ConvexPolygon::triangle(tri).area();
        match self.kind {
            ModelKind::AreaFraction => self.k2 + dk * periodic_band_area(tri, [0.0, 1.0], eps, m[0]) / area(),
            ModelKind::SquareInclusion => self.k2 + dk * periodic_square_area(tri, eps, m[0]) / area(),
            ModelKind::AfAngle => {
                self.k2 + dk * periodic_band_area(tri, rotated_normal(m[1]), eps, m[0]) / area()
            }
            ModelKind::AmpAf => self.k2 + dk * m[0] * periodic_band_area(tri, [0.0, 1.0], eps, m[1]) / area(),
            ModelKind::RandomLayered => {
                let Some(r) = realization else { return 1.0 };
                let n = random_normal();
                let poly = ConvexPolygon::triangle(tri);
                let (lo, hi) = poly.extent(n);
                let mut acc = 0.0;
                for j in (lo / eps).floor() as i64..=(hi / eps).floor() as i64 {
                    let a = poly.clip_slab(n, j as f64 * eps, (j + 1) as f64 * eps).area();
                    acc += a * r.band(j);
                }
                1.0 + m[0] * acc / poly.area()
            }
            _ => self.value(m, eps, barycenter(tri), realization),
        }
    }
}

/// Second row of `σ_m = [[cos 2πm, sin 2πm], [−sin 2πm, cos 2πm]]`.
pub fn rotated_normal(m: f64) -> Point {
    let (s, c) = (2.0 * PI * m).sin_cos();
    [-s, c]
}

/// `(σ_m x)₂`.
pub fn rotated_x2(m: f64, x: Point) -> f64 {
    let n = rotated_normal(m);
    n[0] * x[0] + n[1] * x[1]
}

/// Unit normal to the random bands, the 45° rotated `x₂` direction.
pub fn random_normal() -> Point {
    let (s, c) = FRAC_PI_4.sin_cos();
    [-s, c]
}

/// Band index `⌊(σ_{π/4} x)₂ / ε⌋`.
pub fn random_band(eps: f64, x: Point) -> i64 {
    let n = random_normal();
    ((n[0] * x[0] + n[1] * x[1]) / eps).floor() as i64
}

/// A microstructure model with its parameter field, scale and, for the
/// random model, the realization shared by data and predictions.
#[derive(Debug, Clone)]
pub struct MicroCoefficient {
    pub model: MicroModel,
    pub field: ParamField,
    pub eps: f64,
    pub realization: Option<Arc<RandomRealization>>,
}

impl MicroCoefficient {
    pub fn new(model: MicroModel, field: ParamField, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::arg(format!("ε = {eps} must be positive")));
        }
        if field.features() != model.kind.features() {
            return Err(Error::config(format!(
                "model {} takes {} parameter components, field has {}",
                model.kind,
                model.kind.features(),
                field.features()
            )));
        }
        Ok(Self { model, field, eps, realization: None })
    }

    pub fn with_realization(mut self, r: Arc<RandomRealization>) -> Self {
        self.realization = Some(r);
        self
    }

    /// Same microstructure with another parameter field.
    pub fn with_field(&self, field: ParamField) -> Result<Self> {
        let mut c = Self::new(self.model, field, self.eps)?;
        c.realization = self.realization.clone();
        Ok(c)
    }

    /// `a^ε(m(x), x/ε)·Id`.
    pub fn eval(&self, x: Point) -> SymTensor {
        let m = self.field.eval(x);
        SymTensor::isotropic(self.model.value(&m, self.eps, x, self.realization.as_deref()))
    }

    pub fn eval_frozen(&self, m: &[f64], x: Point) -> SymTensor {
        SymTensor::isotropic(self.model.value(m, self.eps, x, self.realization.as_deref()))
    }

    pub fn element_frozen(&self, m: &[f64], tri: &[Point; 3]) -> SymTensor {
        SymTensor::isotropic(self.model.element_value(m, self.eps, tri, self.realization.as_deref()))
    }
}

/// `eval_coeff` as a free function.
pub fn eval_coeff(model: &MicroModel, pf: &ParamField, eps: f64, x: Point) -> Result<SymTensor> {
    Ok(MicroCoefficient::new(*model, pf.clone(), eps)?.eval(x))
}

impl TensorCoefficient for MicroCoefficient {
    fn element_tensor(&self, mesh: &TriMesh, t: usize) -> SymTensor {
        let tri = mesh.element(t);
        let m = self.field.eval(barycenter(&tri));
        self.element_frozen(&m, &tri)
    }
}

/// Coefficient on a micro box with the slow parameter frozen.
pub struct FrozenCoefficient<'a> {
    pub coeff: &'a MicroCoefficient,
    pub m: &'a [f64],
}

impl TensorCoefficient for FrozenCoefficient<'_> {
    fn element_tensor(&self, mesh: &TriMesh, t: usize) -> SymTensor {
        self.coeff.element_frozen(self.m, &mesh.element(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeff(kind: ModelKind, m: &[f64], eps: f64) -> MicroCoefficient {
        let f = ParamField::constant(m, kind.bounds()).unwrap();
        MicroCoefficient::new(MicroModel::new(kind), f, eps).unwrap()
    }

    #[test]
    fn amplitude_peak() {
        let eps = 0.1;
        let a = coeff(ModelKind::Amplitude, &[0.5], eps).eval([0.0, eps / 4.0]);
        assert!((a.xx - 1.6).abs() < 1e-14 && a.xy == 0.0 && a.yy == a.xx);
    }

    #[test]
    fn area_fraction_phases() {
        let eps = 0.1;
        let c = coeff(ModelKind::AreaFraction, &[0.5], eps);
        assert_eq!(c.eval([0.3, 0.25 * eps]).xx, 2.5);
        assert_eq!(c.eval([0.3, 0.75 * eps]).xx, 0.5);
    }

    #[test]
    fn angle_zero_is_unrotated_profile() {
        let eps = 0.07;
        let c = coeff(ModelKind::Angle, &[0.0], eps);
        for k in 0..50 {
            let x = [0.013 * k as f64, 0.029 * k as f64 % 1.0];
            let expected = 1.1 + (2.0 * PI * x[1] / eps).sin();
            assert!((c.eval(x).xx - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn random_with_zero_bands_is_one() {
        let c = coeff(ModelKind::RandomLayered, &[0.7], 0.1)
            .with_realization(Arc::new(RandomRealization::all_zero(11)));
        assert_eq!(c.eval([0.4, 0.2]).xx, 1.0);
        let tri = [[0.1, 0.1], [0.3, 0.1], [0.3, 0.3]];
        assert!((c.element_frozen(&[0.7], &tri).xx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn amp_af_with_unit_amplitude_is_area_fraction() {
        let eps = 0.05;
        let ab = MicroModel::new(ModelKind::AmpAf);
        let b = MicroModel::new(ModelKind::AreaFraction);
        for k in 0..200 {
            let x = [(k as f64 * 0.377) % 1.0, (k as f64 * 0.123) % 1.0];
            assert_eq!(ab.value(&[1.0, 0.3], eps, x, None), b.value(&[0.3], eps, x, None));
        }
    }

    #[test]
    fn element_average_matches_fine_sampling() {
        let eps = 0.1;
        let tri = [[0.02, 0.03], [0.21, 0.07], [0.11, 0.26]];
        for kind in [ModelKind::AreaFraction, ModelKind::SquareInclusion, ModelKind::AfAngle, ModelKind::AmpAf] {
            let model = MicroModel::new(kind);
            let m: Vec<f64> = kind.bounds().iter().map(|b| 0.3 * b.lo + 0.7 * b.hi).collect();
            let exact = model.element_value(&m, eps, &tri, None);
            // Monte Carlo free check: dense barycentric lattice
            let n = 400;
            let (mut s, mut c) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n - i {
                    let (u, v) = ((i as f64 + 1.0 / 3.0) / n as f64, (j as f64 + 1.0 / 3.0) / n as f64);
                    let w = 1.0 - u - v;
                    let p = [
                        w * tri[0][0] + u * tri[1][0] + v * tri[2][0],
                        w * tri[0][1] + u * tri[1][1] + v * tri[2][1],
                    ];
                    s += model.value(&m, eps, p, None);
                    c += 1.0;
                }
            }
            assert!((exact - s / c).abs() < 1e-2, "{kind}: {exact} vs {}", s / c);
        }
    }

    #[test]
    fn parse_labels() {
        for k in ModelKind::ALL {
            assert_eq!(k.label().parse::<ModelKind>().unwrap(), k);
        }
        assert!("Z".parse::<ModelKind>().is_err());
    }
}
