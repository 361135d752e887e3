//! Closed-form effective tensors, a periodic cell solver used as an
//! independent check, and the monotonicity test for `D_m A`.

mod cell;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use cell::{solve_cell_numeric, solve_periodic_cell, CellSolution};

use crate::error::{Error, Result};
use crate::fem::TensorCoefficient;
use crate::microstructure::{MicroModel, ModelKind};
use crate::mesh::TriMesh;
use crate::tensor::{rotation, EffectiveTensor, SymTensor};

/// Points of the composite midpoint rule used for one-dimensional means.
pub const MEAN_POINTS: usize = 4096;

/// Default finite-difference step in `m`.
pub const DM_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Arithmetic,
    Harmonic,
}

/// Arithmetic mean `∫₀¹ a` or harmonic mean `(∫₀¹ a⁻¹)⁻¹` of a periodic profile.
pub fn mean_1d(profile: impl Fn(f64) -> f64, kind: MeanKind) -> Result<f64> {
    let h = 1.0 / MEAN_POINTS as f64;
    let mut acc = 0.0;
    for i in 0..MEAN_POINTS {
        let v = profile((i as f64 + 0.5) * h);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::data(format!("profile value {v} is not positive")));
        }
        acc += match kind {
            MeanKind::Arithmetic => v,
            MeanKind::Harmonic => 1.0 / v,
        };
    }
    acc *= h;
    Ok(match kind {
        MeanKind::Arithmetic => acc,
        MeanKind::Harmonic => 1.0 / acc,
    })
}

fn check_bounds(kind: ModelKind, m: &[f64]) -> Result<()> {
    let bounds = kind.bounds();
    if m.len() != bounds.len() {
        return Err(Error::arg(format!("model {kind} takes {} parameters, got {}", bounds.len(), m.len())));
    }
    for (v, b) in m.iter().zip(&bounds) {
        if !(v.is_finite() && *v >= b.lo - 1e-12 && *v <= b.hi + 1e-12) {
            return Err(Error::arg(format!("parameter {v} outside [{}, {}] for model {kind}", b.lo, b.hi)));
        }
    }
    Ok(())
}

fn sine_profile(a0: f64, amp: f64) -> impl Fn(f64) -> f64 {
    move |y| a0 + amp * (2.0 * PI * y).sin()
}

fn sine_layered(a0: f64, amp: f64) -> Result<EffectiveTensor> {
    let p = sine_profile(a0, amp);
    Ok(SymTensor::diag(mean_1d(&p, MeanKind::Arithmetic)?, mean_1d(&p, MeanKind::Harmonic)?))
}

fn two_phase(k_in: f64, k_out: f64, fraction: f64) -> (f64, f64) {
    let arith = fraction * k_in + (1.0 - fraction) * k_out;
    let harm = 1.0 / (fraction / k_in + (1.0 - fraction) / k_out);
    (arith, harm)
}

/// `diag(⟨a⟩, ⟨a⁻¹⟩⁻¹)` for a laminate across `x₂` (models A, B and AB).
pub fn effective_layered(model: &MicroModel, m: &[f64]) -> Result<EffectiveTensor> {
    check_bounds(model.kind, m)?;
    match model.kind {
        ModelKind::Amplitude => sine_layered(model.a0, m[0]),
        ModelKind::AreaFraction => {
            let (a, h) = two_phase(model.k1, model.k2, m[0]);
            Ok(SymTensor::diag(a, h))
        }
        ModelKind::AmpAf => {
            let (a, h) = two_phase(model.k2 + (model.k1 - model.k2) * m[0], model.k2, m[1]);
            Ok(SymTensor::diag(a, h))
        }
        other => Err(Error::arg(format!("model {other} is not a laminate across x₂"))),
    }
}

/// `σ_mᵀ · base · σ_m`.
pub fn effective_rotated(m: f64, base: &EffectiveTensor) -> EffectiveTensor {
    base.congruence(rotation(m))
}

/// `diag(⟨a₂⟩ harm(a₁), ⟨a₁⟩ harm(a₂))` for `a = a₁(y₁) a₂(y₂)`.
pub fn separable_tensor(a1: impl Fn(f64) -> f64, a2: impl Fn(f64) -> f64) -> Result<EffectiveTensor> {
    let (m1, h1) = (mean_1d(&a1, MeanKind::Arithmetic)?, mean_1d(&a1, MeanKind::Harmonic)?);
    let (m2, h2) = (mean_1d(&a2, MeanKind::Arithmetic)?, mean_1d(&a2, MeanKind::Harmonic)?);
    Ok(SymTensor::diag(m2 * h1, m1 * h2))
}

/// Model D: both factors are amplitude profiles with the same `m`.
pub fn effective_separable(model: &MicroModel, m: f64) -> Result<EffectiveTensor> {
    check_bounds(ModelKind::SeparableAmplitude, &[m])?;
    separable_tensor(sine_profile(model.a0, m), sine_profile(model.a0, m))
}

/// `ā(m) = m (m/k₁ + (1−m)/k₂)⁻¹ + (1 − m) k₂`, times the identity.
pub fn square_inclusion_value(k1: f64, k2: f64, m: f64) -> f64 {
    m / (m / k1 + (1.0 - m) / k2) + (1.0 - m) * k2
}

/// Model E closed form.
pub fn effective_square_inclusion(model: &MicroModel, m: f64) -> Result<EffectiveTensor> {
    check_bounds(ModelKind::SquareInclusion, &[m])?;
    Ok(SymTensor::isotropic(square_inclusion_value(model.k1, model.k2, m)))
}

/// Closed-form effective tensor of any deterministic model at parameter `m`.
pub fn effective_tensor(model: &MicroModel, m: &[f64]) -> Result<EffectiveTensor> {
    check_bounds(model.kind, m)?;
    match model.kind {
        ModelKind::Amplitude | ModelKind::AreaFraction | ModelKind::AmpAf => effective_layered(model, m),
        ModelKind::Angle => Ok(effective_rotated(m[0], &sine_layered(model.a0, 1.0)?)),
        ModelKind::SeparableAmplitude => effective_separable(model, m[0]),
        ModelKind::SquareInclusion => effective_square_inclusion(model, m[0]),
        ModelKind::AmpAngle => {
            let base = effective_layered(&MicroModel { kind: ModelKind::Amplitude, ..*model }, &m[..1])?;
            Ok(effective_rotated(m[1], &base))
        }
        ModelKind::AfAngle => {
            let base = effective_layered(&MicroModel { kind: ModelKind::AreaFraction, ..*model }, &m[..1])?;
            Ok(effective_rotated(m[1], &base))
        }
        ModelKind::RandomLayered => {
            Err(Error::config("the random layered model has no closed-form effective tensor"))
        }
    }
}

/// `(harmonic, arithmetic)` means of the cell values, bracketing the
/// eigenvalues of the effective tensor.
pub fn cell_mean_bounds(model: &MicroModel, m: &[f64]) -> Result<(f64, f64)> {
    check_bounds(model.kind, m)?;
    let (k1, k2) = (model.k1, model.k2);
    let sine = |amp: f64| -> Result<(f64, f64)> {
        let p = sine_profile(model.a0, amp);
        Ok((mean_1d(&p, MeanKind::Harmonic)?, mean_1d(&p, MeanKind::Arithmetic)?))
    };
    let (a, h) = match model.kind {
        ModelKind::Amplitude => return sine(m[0]),
        ModelKind::Angle => return sine(1.0),
        ModelKind::AmpAngle => return sine(m[0]),
        ModelKind::SeparableAmplitude => {
            let (h, a) = sine(m[0])?;
            return Ok((h * h, a * a));
        }
        ModelKind::AreaFraction | ModelKind::AfAngle => two_phase(k1, k2, m[0]),
        ModelKind::SquareInclusion => two_phase(k1, k2, m[0] * m[0]),
        ModelKind::AmpAf => two_phase(k2 + (k1 - k2) * m[0], k2, m[1]),
        ModelKind::RandomLayered => return Ok((1.0 - m[0], 1.0 + m[0])),
    };
    Ok((h, a))
}

/// Unit-cell coefficient of an axis-aligned model with `ε = 1`.
pub struct UnitCellCoefficient {
    pub model: MicroModel,
    pub m: Vec<f64>,
}

impl TensorCoefficient for UnitCellCoefficient {
    fn element_tensor(&self, mesh: &TriMesh, t: usize) -> SymTensor {
        SymTensor::isotropic(self.model.element_value(&self.m, 1.0, &mesh.element(t), None))
    }

    fn interfaces(&self) -> [Vec<f64>; 2] {
        self.model.cell_interfaces(&self.m)
    }
}

/// Central difference `(A(m + s) − A(m − s)) / 2s` for single-parameter models.
pub fn d_m_effective(model: &MicroModel, m: f64, step: f64) -> Result<[[f64; 2]; 2]> {
    if model.kind.features() != 1 {
        return Err(Error::arg("D_m A is defined for single-parameter models"));
    }
    let b = model.kind.bounds()[0];
    if !(step > 0.0) || m - step < b.lo - 1e-12 || m + step > b.hi + 1e-12 {
        return Err(Error::arg(format!("m ± step = {m} ± {step} leaves [{}, {}]", b.lo, b.hi)));
    }
    let hi = effective_tensor(model, &[m + step])?;
    let lo = effective_tensor(model, &[m - step])?;
    let d = hi.sub(&lo).scale(0.5 / step);
    Ok([[d.xx, d.xy], [d.xy, d.yy]])
}

/// Outcome of the monotonicity check over a parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Smallest eigenvalue of the symmetrized `D_m A` over the grid.
    pub min_eigenvalue: f64,
    /// Smallest eigenvalue of `−D_m A`, i.e. after the reparametrization `m ↦ −m`.
    pub min_eigenvalue_reversed: f64,
    pub threshold: f64,
    /// `min_eigenvalue ≥ 1/E`.
    pub pass: bool,
    /// `min_eigenvalue_reversed ≥ 1/E`.
    pub pass_reversed: bool,
}

/// Checks `D_m A ξ·ξ ≥ E⁻¹|ξ|²` on `grid`.
pub fn check_monotonicity(model: &MicroModel, grid: &[f64], e: f64) -> Result<MonotonicityReport> {
    if grid.is_empty() || !(e > 0.0) {
        return Err(Error::arg("monotonicity check needs a non-empty grid and E > 0"));
    }
    let mut min = f64::INFINITY;
    let mut min_rev = f64::INFINITY;
    for &m in grid {
        let d = d_m_effective(model, m, DM_STEP)?;
        let s = SymTensor::symmetrize(d);
        min = min.min(s.eigenvalues()[0]);
        min_rev = min_rev.min(s.scale(-1.0).eigenvalues()[0]);
    }
    let threshold = 1.0 / e;
    Ok(MonotonicityReport {
        min_eigenvalue: min,
        min_eigenvalue_reversed: min_rev,
        threshold,
        pass: min >= threshold,
        pass_reversed: min_rev >= threshold,
    })
}

/// `count` equispaced points strictly inside the model's bounds, leaving
/// room for the finite-difference stencil.
pub fn monotonicity_grid(kind: ModelKind, count: usize) -> Vec<f64> {
    let b = kind.bounds()[0];
    let (lo, hi) = (b.lo + 2.0 * DM_STEP, b.hi - 2.0 * DM_STEP);
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: ModelKind) -> MicroModel {
        MicroModel::new(kind)
    }

    #[test]
    fn means_of_constant_and_sine() {
        assert!((mean_1d(|_| 2.5, MeanKind::Arithmetic).unwrap() - 2.5).abs() < 1e-12);
        assert!((mean_1d(|_| 2.5, MeanKind::Harmonic).unwrap() - 2.5).abs() < 1e-12);
        let p = sine_profile(1.1, 0.5);
        assert!((mean_1d(&p, MeanKind::Arithmetic).unwrap() - 1.1).abs() < 1e-12);
        let h = mean_1d(&p, MeanKind::Harmonic).unwrap();
        assert!((h - (1.1f64 * 1.1 - 0.25).sqrt()).abs() < 1e-6);
        assert!((h - 0.979796).abs() < 1e-6);
        assert!(mean_1d(|y| y - 0.5, MeanKind::Arithmetic).is_err());
    }

    #[test]
    fn layered_values() {
        let b = effective_layered(&model(ModelKind::AreaFraction), &[0.5]).unwrap();
        assert!((b.xx - 1.5).abs() < 1e-14 && (b.yy - 0.833333).abs() < 1e-6);
        let a = effective_layered(&model(ModelKind::Amplitude), &[0.5]).unwrap();
        assert!((a.xx - 1.1).abs() < 1e-12 && (a.yy - 0.979796).abs() < 1e-6);
        assert!(effective_layered(&model(ModelKind::AreaFraction), &[1.2]).is_err());
    }

    #[test]
    fn single_phase_limit() {
        let (a, h) = two_phase(2.5, 0.5, 1.0);
        assert_eq!((a, h), (2.5, 2.5));
    }

    #[test]
    fn rotation_cases() {
        let base = SymTensor::diag(2.0, 0.5);
        assert_eq!(effective_rotated(0.0, &base), base);
        let q = effective_rotated(0.25, &base);
        assert!((q.xx - 0.5).abs() < 1e-14 && (q.yy - 2.0).abs() < 1e-14);
        for m in [0.1, 0.33, 0.49] {
            assert!((effective_rotated(m, &base).det() - base.det()).abs() < 1e-14);
        }
    }

    #[test]
    fn separable_values() {
        let c = separable_tensor(|_| 1.3, |_| 1.3).unwrap();
        assert!((c.xx - 1.69).abs() < 1e-12 && (c.yy - 1.69).abs() < 1e-12);
        let d = effective_separable(&model(ModelKind::SeparableAmplitude), 0.5).unwrap();
        assert!((d.xx - 1.077776).abs() < 1e-5 && (d.yy - 1.077776).abs() < 1e-5);
    }

    #[test]
    fn square_inclusion_values() {
        let k = |m| square_inclusion_value(2.5, 0.5, m);
        assert!((k(0.0) - 0.5).abs() < 1e-15);
        assert!((k(1.0) - 2.5).abs() < 1e-15);
        assert!((k(0.5) - 0.666667).abs() < 1e-6);
    }

    #[test]
    fn derivative_of_area_fraction_mean() {
        let d = d_m_effective(&model(ModelKind::AreaFraction), 0.5, DM_STEP).unwrap();
        assert!((d[0][0] - 2.0).abs() < 1e-9);
        assert!(d_m_effective(&model(ModelKind::AreaFraction), 0.05, DM_STEP).is_err());
    }

    #[test]
    fn angle_derivative_is_indefinite() {
        let mdl = model(ModelKind::Angle);
        let base = sine_layered(1.1, 1.0).unwrap();
        let gap = base.xx - base.yy;
        for m in [0.1, 0.2, 0.3, 0.4] {
            let d = SymTensor::symmetrize(d_m_effective(&mdl, m, DM_STEP).unwrap());
            let [lo, hi] = d.eigenvalues();
            let g = gap * 2.0 * PI;
            assert!((lo + g).abs() < 1e-5 * g && (hi - g).abs() < 1e-5 * g, "{lo} {hi} {g}");
        }
    }

    #[test]
    fn square_inclusion_derivative_bound() {
        let mdl = model(ModelKind::SquareInclusion);
        let lambda: f64 = 2.5;
        for m in monotonicity_grid(ModelKind::SquareInclusion, 50) {
            let d = d_m_effective(&mdl, m, DM_STEP).unwrap()[0][0];
            assert!(d >= lambda.powi(-4) * 4.0 * m, "m = {m}: {d}");
        }
    }

    #[test]
    fn monotonicity_verdicts() {
        let grid = |k| monotonicity_grid(k, 50);
        let b = check_monotonicity(&model(ModelKind::AreaFraction), &grid(ModelKind::AreaFraction), 10.0).unwrap();
        assert!(b.pass);
        let c = check_monotonicity(&model(ModelKind::Angle), &grid(ModelKind::Angle), 10.0).unwrap();
        assert!(!c.pass && !c.pass_reversed && c.min_eigenvalue < 0.0);
        let e = check_monotonicity(&model(ModelKind::SquareInclusion), &grid(ModelKind::SquareInclusion), 100.0)
            .unwrap();
        assert!(e.pass);
        let d = check_monotonicity(&model(ModelKind::SeparableAmplitude), &grid(ModelKind::SeparableAmplitude), 100.0)
            .unwrap();
        assert!(!d.pass && d.pass_reversed);
        // the arithmetic mean of the amplitude profile does not depend on m
        let a = check_monotonicity(&model(ModelKind::Amplitude), &grid(ModelKind::Amplitude), 10.0).unwrap();
        assert!(!a.pass && a.min_eigenvalue < 0.0);
    }

    #[test]
    fn constant_cell_has_no_corrector() {
        let (sol, a) = solve_cell_numeric(&SymTensor::isotropic(1.7), 1.0 / 32.0).unwrap();
        assert!((a.xx - 1.7).abs() < 1e-12 && a.xy.abs() < 1e-12 && (a.yy - 1.7).abs() < 1e-12);
        assert!(sol.correctors.iter().all(|c| c.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn numeric_cell_matches_layered_closed_form() {
        let m = model(ModelKind::Amplitude);
        let coeff = UnitCellCoefficient { model: m, m: vec![0.5] };
        let (sol, a) = solve_cell_numeric(&coeff, 1.0 / 128.0).unwrap();
        let exact = effective_layered(&m, &[0.5]).unwrap();
        assert!(a.sub(&exact).frobenius() / exact.frobenius() < 1e-3);
        assert!(sol.mean(0).abs() < 1e-12 && sol.mean(1).abs() < 1e-12);
        assert!(sol.periodic_mismatch() <= 1e-12);
    }
}
