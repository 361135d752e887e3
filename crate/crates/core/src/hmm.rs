//! Finite-element heterogeneous multiscale method: macro P1 elements whose
//! conductivity at each barycenter is estimated from a micro solve on a
//! `δ × δ` box.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_with_tensors, l2_error, restrict_to_coarse, solve, BoundaryCondition, FactoredSystem, FeField,
    Problem, ScalarCoefficient, TensorCoefficient,
};
use crate::geometry::{frac, Point, Rect};
use crate::homogenization::solve_periodic_cell;
use crate::mesh::{build_uniform_mesh, TriMesh};
use crate::microstructure::{rotated_normal, FrozenCoefficient, MicroCoefficient, ModelKind, ParamField};
use crate::tensor::{EffectiveTensor, SymTensor};

/// Boundary condition of the micro problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MicroBc {
    /// `v = x_i` on the box boundary.
    Dirichlet,
    /// `v − x_i` periodic on the box.
    Periodic,
}

/// How the slow parameter `m(x)` enters the micro problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlowVariable {
    /// `m` frozen at the quadrature point.
    Frozen,
    /// `m(x)` evaluated inside the box.
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    /// Macro mesh spacing `H`.
    pub h_macro: f64,
    /// Micro box side `δ`.
    pub delta: f64,
    /// Micro mesh spacing `k`.
    pub k: f64,
    pub micro_bc: MicroBc,
    pub slow: SlowVariable,
}

impl HmmConfig {
    pub fn new(h_macro: f64, delta: f64, k: f64) -> Self {
        Self { h_macro, delta, k, micro_bc: MicroBc::Dirichlet, slow: SlowVariable::Frozen }
    }

    pub fn with_micro_bc(mut self, bc: MicroBc) -> Self {
        self.micro_bc = bc;
        self
    }

    pub fn with_slow(mut self, slow: SlowVariable) -> Self {
        self.slow = slow;
        self
    }

    /// Checks `k < ε ≤ δ` and positivity.
    pub fn validate(&self, eps: f64) -> Result<()> {
        let all_positive = [self.h_macro, self.delta, self.k, eps].iter().all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::config("H, δ, k and ε must be positive"));
        }
        if self.k >= eps {
            return Err(Error::config(format!("micro spacing k = {} must be below ε = {eps}", self.k)));
        }
        if self.delta < eps * (1.0 - 1e-12) {
            return Err(Error::config(format!("box size δ = {} must be at least ε = {eps}", self.delta)));
        }
        Ok(())
    }

    /// Micro cells per box side.
    pub fn micro_cells(&self) -> usize {
        ((self.delta / self.k) * (1.0 - 1e-12)).ceil().max(2.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    model: ModelKind,
    m: Vec<u64>,
    origin: [i64; 2],
    eps: u64,
    delta: u64,
    cells: usize,
    bc: MicroBc,
}

/// Resolution of box origins in the cache key, as a fraction of ε.
const ORIGIN_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

/// A micro problem ready to solve.
#[derive(Debug, Clone)]
struct MicroTask {
    origin: Point,
    m: Option<Vec<f64>>,
    key: Option<CacheKey>,
}

/// FE-HMM tensor estimator with a memo of micro solves.
pub struct HmmSolver {
    pub cfg: HmmConfig,
    pub domain: Rect,
    cache: Option<Mutex<HashMap<CacheKey, SymTensor>>>,
}

impl HmmSolver {
    pub fn new(cfg: HmmConfig) -> Self {
        Self { cfg, domain: Rect::unit(), cache: Some(Mutex::new(HashMap::new())) }
    }

    pub fn without_cache(cfg: HmmConfig) -> Self {
        Self { cfg, domain: Rect::unit(), cache: None }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.lock().unwrap().len())
    }

    /// Lower-left corner of the box around `x`, moved inward if it protrudes.
    pub fn box_origin(&self, x: Point) -> Result<Point> {
        let d = self.cfg.delta;
        let r = &self.domain;
        if d > r.width() || d > r.height() {
            return Err(Error::config(format!("box size δ = {d} exceeds the domain")));
        }
        Ok([
            (x[0] - 0.5 * d).clamp(r.min[0], r.max[0] - d),
            (x[1] - 0.5 * d).clamp(r.min[1], r.max[1] - d),
        ])
    }

    fn task(&self, coeff: &MicroCoefficient, x: Point) -> Result<MicroTask> {
        let origin = self.box_origin(x)?;
        let frozen = self.cfg.slow == SlowVariable::Frozen || coeff.field.is_uniform();
        let kind = coeff.model.kind;
        if !frozen || kind == ModelKind::RandomLayered {
            let m = frozen.then(|| coeff.field.eval(x));
            return Ok(MicroTask { origin, m, key: None });
        }
        let m = coeff.field.eval(x);
        let eps = coeff.eps;
        // translate the box by a lattice vector of the microstructure
        let reduce = |v: f64| eps * frac(v / eps);
        let canonical = match kind {
            ModelKind::Amplitude | ModelKind::AreaFraction | ModelKind::AmpAf => [0.0, reduce(origin[1])],
            ModelKind::SeparableAmplitude | ModelKind::SquareInclusion => [reduce(origin[0]), reduce(origin[1])],
            ModelKind::Angle | ModelKind::AmpAngle | ModelKind::AfAngle => {
                let angle = if kind == ModelKind::Angle { m[0] } else { m[1] };
                let n = rotated_normal(angle);
                let s = n[0] * origin[0] + n[1] * origin[1];
                let shift = s - reduce(s);
                [origin[0] - shift * n[0], origin[1] - shift * n[1]]
            }
            ModelKind::RandomLayered => unreachable!(),
        };
        let q = eps * ORIGIN_QUANTUM;
        let index = [(canonical[0] / q).round() as i64, (canonical[1] / q).round() as i64];
        let origin = [index[0] as f64 * q, index[1] as f64 * q];
        let key = CacheKey {
            model: kind,
            m: m.iter().map(|v| v.to_bits()).collect(),
            origin: index,
            eps: eps.to_bits(),
            delta: self.cfg.delta.to_bits(),
            cells: self.cfg.micro_cells(),
            bc: self.cfg.micro_bc,
        };
        Ok(MicroTask { origin, m: Some(m), key: Some(key) })
    }

    fn solve_task(&self, coeff: &MicroCoefficient, task: &MicroTask) -> Result<SymTensor> {
        let cell = Rect::square(task.origin, self.cfg.delta)?;
        let n = self.cfg.micro_cells();
        let frozen;
        let a: &dyn TensorCoefficient = match &task.m {
            Some(m) => {
                frozen = FrozenCoefficient { coeff, m };
                &frozen
            }
            None => coeff,
        };
        match self.cfg.micro_bc {
            MicroBc::Dirichlet => affine_dirichlet_tensor(cell, n, a),
            MicroBc::Periodic => solve_periodic_cell(cell, n, a).map(|(_, t)| t),
        }
    }

    /// `A_HMM(x_l)` for a single point.
    pub fn estimate_tensor(&self, coeff: &MicroCoefficient, x: Point) -> Result<EffectiveTensor> {
        self.cfg.validate(coeff.eps)?;
        let task = self.task(coeff, x)?;
        self.lookup_or_solve(coeff, &[task]).map(|v| v[0])
    }

    fn lookup_or_solve(&self, coeff: &MicroCoefficient, tasks: &[MicroTask]) -> Result<Vec<SymTensor>> {
        let mut known: HashMap<CacheKey, SymTensor> = HashMap::new();
        if let Some(cache) = &self.cache {
            let cache = cache.lock().unwrap();
            for t in tasks {
                if let Some(k) = &t.key {
                    if let Some(v) = cache.get(k) {
                        known.insert(k.clone(), *v);
                    }
                }
            }
        }
        // unique pending work in first-occurrence order
        let mut pending: Vec<&MicroTask> = Vec::new();
        let mut seen: HashMap<&CacheKey, ()> = HashMap::new();
        for t in tasks {
            match &t.key {
                Some(k) if known.contains_key(k) => {}
                Some(k) => {
                    if seen.insert(k, ()).is_none() {
                        pending.push(t);
                    }
                }
                None => pending.push(t),
            }
        }
        let solved: Vec<SymTensor> = pending
            .par_iter()
            .map(|t| self.solve_task(coeff, t))
            .collect::<Result<Vec<_>>>()?;
        let mut fresh = Vec::new();
        let mut by_position = Vec::with_capacity(tasks.len());
        let mut keyless: Vec<SymTensor> = Vec::new();
        for (t, v) in pending.iter().zip(&solved) {
            match &t.key {
                Some(k) => {
                    known.insert(k.clone(), *v);
                    fresh.push((k.clone(), *v));
                }
                None => keyless.push(*v),
            }
        }
        let mut keyless = keyless.into_iter();
        for t in tasks {
            by_position.push(match &t.key {
                Some(k) => known[k],
                None => keyless.next().unwrap(),
            });
        }
        if let Some(cache) = &self.cache {
            cache.lock().unwrap().extend(fresh);
        }
        for (i, a) in by_position.iter().enumerate() {
            if !a.is_spd() {
                return Err(Error::numerical(format!("micro estimate {a:?} at quadrature point {i} is not SPD")));
            }
        }
        Ok(by_position)
    }

    /// `A_HMM` at the barycenter of every macro element.
    pub fn tensors(&self, coeff: &MicroCoefficient, macro_mesh: &TriMesh) -> Result<Vec<EffectiveTensor>> {
        self.cfg.validate(coeff.eps)?;
        let tasks = (0..macro_mesh.num_triangles())
            .map(|t| self.task(coeff, macro_mesh.barycenter(t)))
            .collect::<Result<Vec<_>>>()?;
        self.lookup_or_solve(coeff, &tasks)
    }
}

/// `(1/δ²) ∫ ∇v_i · a ∇v_j` with `v_i = x_i` on the boundary of `cell`.
pub fn affine_dirichlet_tensor(cell: Rect, n: usize, a: &dyn TensorCoefficient) -> Result<SymTensor> {
    let mesh = build_uniform_mesh(n, cell)?;
    let tensors = crate::fem::element_tensors(&mesh, a);
    let problem = Problem::new(&tensors);
    let sys = assemble_with_tensors::<f64>(&mesh, &tensors, &problem, &BoundaryCondition::Dirichlet(&|_| 0.0))?;
    let mask: Vec<bool> = sys.constraints.iter().map(|c| c.is_some()).collect();
    let factored = FactoredSystem::new(&sys.matrix, &mask)?;
    let o = cell.min;
    let traces: Vec<Vec<f64>> =
        (0..2).map(|i| mesh.nodes.iter().map(|p| p[i] - o[i]).collect()).collect();
    let zero = vec![0.0; mesh.num_nodes()];
    let v = factored
        .solve_many(&[&zero, &zero], &[&traces[0], &traces[1]])
        .map_err(|e| e.context("micro problem"))?;
    let mut acc = [[0.0; 2]; 2];
    for t in 0..mesh.num_triangles() {
        let (g, area) = mesh.gradients(t);
        let tri = mesh.triangles[t];
        let mut w = [[0.0; 2]; 2];
        for (i, vi) in v.iter().enumerate() {
            for (l, &node) in tri.iter().enumerate() {
                w[i][0] += vi[node] * g[l][0];
                w[i][1] += vi[node] * g[l][1];
            }
        }
        for (i, row) in acc.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e += area * tensors[t].form(w[i], w[j]);
            }
        }
    }
    let vol = cell.area();
    Ok(SymTensor::symmetrize([[acc[0][0] / vol, acc[0][1] / vol], [acc[1][0] / vol, acc[1][1] / vol]]))
}

/// `estimate_tensor` as a free function without caching.
pub fn estimate_tensor(coeff: &MicroCoefficient, x: Point, cfg: &HmmConfig) -> Result<EffectiveTensor> {
    HmmSolver::without_cache(*cfg).estimate_tensor(coeff, x)
}

/// Macro mesh with `round(1/H)` cells per side of the unit square.
pub fn macro_mesh(h_macro: f64) -> Result<TriMesh> {
    cells_for(h_macro).and_then(TriMesh::unit_square)
}

/// `round(1/h)`, rejecting spacings that do not divide the unit interval.
pub fn cells_for(h: f64) -> Result<usize> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::config(format!("mesh spacing {h} must lie in (0, 1]")));
    }
    let n = (1.0 / h).round();
    if ((n * h) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("mesh spacing {h} does not divide the unit square")));
    }
    Ok(n as usize)
}

/// Solves the macro problem with HMM conductivities at the barycenters.
pub fn hmm_solve<'m, S: crate::fem::Scalar>(
    solver: &HmmSolver,
    coeff: &MicroCoefficient,
    b: &dyn ScalarCoefficient,
    f: &dyn ScalarCoefficient,
    bc: &BoundaryCondition<'_>,
    macro_mesh: &'m TriMesh,
) -> Result<FeField<'m, S>> {
    let tensors = solver.tensors(coeff, macro_mesh)?;
    let problem = Problem::new(&tensors).reaction(b).load(f);
    let sys = assemble_with_tensors::<S>(macro_mesh, &tensors, &problem, bc)?;
    solve(macro_mesh, &sys)
}

/// Closed-form effective tensor at each macro barycenter.
pub fn analytic_tensors(coeff: &MicroCoefficient, macro_mesh: &TriMesh) -> Result<Vec<EffectiveTensor>> {
    (0..macro_mesh.num_triangles())
        .map(|t| {
            let m = coeff.field.eval(macro_mesh.barycenter(t));
            crate::homogenization::effective_tensor(&coeff.model, &m)
        })
        .collect()
}

/// Sweep variable of an error study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyAxis {
    /// Vary ε; δ and k scale with ε by the given factors.
    Eps { values: Vec<f64>, delta_over_eps: f64, k_over_eps: f64 },
    /// Vary δ at fixed ε.
    Delta { eps: f64, values: Vec<f64>, k_over_eps: f64 },
}

/// One row of an error study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStudyRow {
    pub eps_or_delta: f64,
    /// `‖u^ε − U_HOM‖_{L²}` on the macro mesh.
    pub err_hom: f64,
    /// `‖u^ε − U_HMM‖_{L²}` on the macro mesh.
    pub err_hmm: f64,
}

/// `f = 1`, `u = 0` on the boundary: fine-mesh reference against the
/// homogenized and HMM macro solutions.
pub fn hmm_error_study(
    model: crate::microstructure::MicroModel,
    field: &ParamField,
    axis: &StudyAxis,
    h_fine: f64,
    h_macro: f64,
    micro_bc: MicroBc,
) -> Result<Vec<ErrorStudyRow>> {
    let macro_mesh = macro_mesh(h_macro)?;
    let fine = TriMesh::unit_square(cells_for(h_fine)?)?;
    let runs: Vec<(f64, f64, f64, f64)> = match axis {
        StudyAxis::Eps { values, delta_over_eps, k_over_eps } => {
            values.iter().map(|&e| (e, e, delta_over_eps * e, k_over_eps * e)).collect()
        }
        StudyAxis::Delta { eps, values, k_over_eps } => {
            values.iter().map(|&d| (d, *eps, d, k_over_eps * eps)).collect()
        }
    };
    let zero = BoundaryCondition::Dirichlet(&|_| 0.0);
    let mut rows = Vec::with_capacity(runs.len());
    let mut dns_cache: Option<(u64, Vec<f64>)> = None;
    for (label, eps, delta, k) in runs {
        if h_fine > eps / 6.0 * (1.0 + 1e-9) {
            return Err(Error::config(format!("fine mesh h = {h_fine} does not resolve ε = {eps} (need h ≤ ε/6)")));
        }
        let coeff = MicroCoefficient::new(model, field.clone(), eps)?;
        let dns_values = match &dns_cache {
            Some((bits, v)) if *bits == eps.to_bits() => v.clone(),
            _ => {
                let sys = crate::fem::assemble::<f64>(&fine, &Problem::new(&coeff).load(&1.0), &zero)?;
                let v = solve(&fine, &sys)?.values;
                dns_cache = Some((eps.to_bits(), v.clone()));
                v
            }
        };
        let dns = FeField::new(&fine, dns_values)?;
        let reference = restrict_to_coarse(&dns, &macro_mesh)?;
        let hom_tensors = analytic_tensors(&coeff, &macro_mesh)?;
        let hom_sys =
            assemble_with_tensors::<f64>(&macro_mesh, &hom_tensors, &Problem::new(&hom_tensors).load(&1.0), &zero)?;
        let hom = solve(&macro_mesh, &hom_sys)?;
        let solver = HmmSolver::new(HmmConfig::new(h_macro, delta, k).with_micro_bc(micro_bc));
        let hmm = hmm_solve::<f64>(&solver, &coeff, &0.0, &1.0, &zero, &macro_mesh)?;
        rows.push(ErrorStudyRow {
            eps_or_delta: label,
            err_hom: l2_error(&reference, &hom)?,
            err_hmm: l2_error(&reference, &hmm)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenization::effective_layered;
    use crate::microstructure::{MicroModel, ParamField};

    fn coeff(kind: ModelKind, m: &[f64], eps: f64) -> MicroCoefficient {
        MicroCoefficient::new(MicroModel::new(kind), ParamField::constant(m, kind.bounds()).unwrap(), eps).unwrap()
    }

    #[test]
    fn constant_coefficient_is_exact() {
        let a = SymTensor::isotropic(1.7);
        let t = affine_dirichlet_tensor(Rect::square([0.3, 0.1], 0.07).unwrap(), 8, &a).unwrap();
        assert!(t.sub(&a).frobenius() < 1e-10);
    }

    #[test]
    fn config_rejects_coarse_micro_mesh() {
        let c = coeff(ModelKind::Amplitude, &[0.5], 0.05);
        let r = estimate_tensor(&c, [0.5, 0.5], &HmmConfig::new(0.125, 0.05, 0.05));
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn matching_box_recovers_laminate() {
        let eps = 1.0 / 20.0;
        let c = coeff(ModelKind::Amplitude, &[0.5], eps);
        let exact = effective_layered(&c.model, &[0.5]).unwrap();
        let per = estimate_tensor(&c, [0.41, 0.63], &HmmConfig::new(0.1, eps, eps / 32.0).with_micro_bc(MicroBc::Periodic))
            .unwrap();
        assert!(per.sub(&exact).spectral_norm() < 5e-3, "{per:?}");
    }

    #[test]
    fn cache_is_transparent() {
        let eps = 1.0 / 10.0;
        let mesh = TriMesh::unit_square(4).unwrap();
        for kind in [ModelKind::AreaFraction, ModelKind::Angle, ModelKind::SquareInclusion] {
            let m: Vec<f64> = kind.bounds().iter().map(|b| b.midpoint() + 0.05).collect();
            let c = coeff(kind, &m, eps);
            let cfg = HmmConfig::new(0.25, 2.5 * eps, eps / 8.0);
            let cached = HmmSolver::new(cfg);
            let a = cached.tensors(&c, &mesh).unwrap();
            let again = cached.tensors(&c, &mesh).unwrap();
            let b = HmmSolver::without_cache(cfg).tensors(&c, &mesh).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, again);
            if kind != ModelKind::Angle {
                assert!(cached.cache_len() < mesh.num_triangles(), "{kind}: {}", cached.cache_len());
            }
        }
    }

    #[test]
    fn canonical_box_matches_actual_location() {
        let eps = 1.0 / 10.0;
        let c = coeff(ModelKind::Angle, &[0.13], eps);
        let cfg = HmmConfig::new(0.25, 2.0 * eps, eps / 8.0);
        let solver = HmmSolver::without_cache(cfg);
        let x = [0.61, 0.37];
        let canonical = solver.estimate_tensor(&c, x).unwrap();
        let origin = solver.box_origin(x).unwrap();
        let m = [0.13];
        let direct = affine_dirichlet_tensor(
            Rect::square(origin, cfg.delta).unwrap(),
            cfg.micro_cells(),
            &FrozenCoefficient { coeff: &c, m: &m },
        )
        .unwrap();
        assert!(canonical.sub(&direct).frobenius() < 1e-6, "{canonical:?} {direct:?}");
    }
}
