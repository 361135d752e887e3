//! Box-constrained Levenberg–Marquardt and the inversion strategies built on
//! it: direct fits with analytic or HMM predictions, and a two-stage fit
//! through a piecewise-constant effective tensor field.

use std::sync::Arc;
use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{HmmConfig, HmmSolver};
use crate::homogenization::effective_tensor;
use crate::mesh::TriMesh;
use crate::microstructure::{sample_random, Bounds, MicroCoefficient, ModelKind, ParamField};
use crate::observation::{ForwardKind, Medium, ObservationSet};
use crate::tensor::SymTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative forward-difference step.
    pub fd_step: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Stop when the projected step has ∞-norm below this.
    pub step_tolerance: f64,
    /// Stop when an accepted step lowers the residual norm by less than this fraction.
    pub reduction_tolerance: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            fd_step: 1e-6,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            step_tolerance: 1e-8,
            reduction_tolerance: 1e-12,
        }
    }
}

impl LsqOptions {
    fn validate(&self, bounds: &[Bounds]) -> Result<()> {
        let positive = [self.fd_step, self.initial_damping, self.step_tolerance, self.reduction_tolerance]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || !(self.damping_up > 1.0) || !(self.damping_down > 1.0) {
            return Err(Error::arg("least-squares tolerances must be positive and damping factors above one"));
        }
        if let Some(b) = bounds.iter().find(|b| !(b.width() > self.fd_step)) {
            return Err(Error::arg(format!("bound [{}, {}] is narrower than the difference step", b.lo, b.hi)));
        }
        Ok(())
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    StepTolerance,
    ReductionTolerance,
    MaxIterations,
    /// Damping grew without finding a decrease.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseResult {
    pub theta: Vec<f64>,
    /// Final residual norm.
    pub residual: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// `‖θ̂ − θ*‖₂ / ‖θ*‖₂` when the truth is known.
    pub rel_error: Option<f64>,
    /// Residual norm at the start and after every accepted step.
    pub history: Vec<f64>,
    pub termination: Termination,
    pub seconds: f64,
}

impl InverseResult {
    pub fn with_truth(mut self, truth: &[f64]) -> Self {
        self.rel_error = Some(relative_error(&self.theta, truth));
        self
    }
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn checked<F>(f: &F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let r = f(theta).map_err(|e| e.context(format!("residual at θ = {theta:?}")))?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("non-finite residual at θ = {theta:?}")));
    }
    Ok(r)
}

/// Forward-difference Jacobian, one column per component; the step turns
/// backward at the upper bound.
pub fn fd_jacobian<F>(f: &F, theta: &[f64], r0: &[f64], bounds: &[Bounds], rel_step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let mut h = rel_step * theta[j].abs().max(1.0);
            if theta[j] + h > bounds[j].hi {
                h = -h;
            }
            let mut t = theta.to_vec();
            t[j] += h;
            let h = t[j] - theta[j];
            let r = checked(f, &t)?;
            if r.len() != r0.len() {
                return Err(Error::numerical("residual length changed between evaluations"));
            }
            Ok(r.iter().zip(r0).map(|(a, b)| (a - b) / h).collect())
        })
        .collect()
}

fn solve_dense(a: &Mat<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut rhs = Mat::<f64>::zeros(n, 1);
    for (i, v) in b.iter().enumerate() {
        rhs[(i, 0)] = *v;
    }
    a.partial_piv_lu().solve_in_place(rhs.as_mut());
    let x: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Minimizes `‖r(θ)‖₂` over the box `bounds` by damped Gauss–Newton steps
/// `(JᵀJ + μI) Δ = −Jᵀr`, projecting every trial point onto the box.
pub fn lm_minimize<F>(residual: F, theta0: &[f64], bounds: &[Bounds], opts: &LsqOptions) -> Result<InverseResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let start = Instant::now();
    if theta0.len() != bounds.len() || theta0.is_empty() {
        return Err(Error::arg("θ₀ and bounds must have the same nonzero length"));
    }
    opts.validate(bounds)?;
    if let Some((v, b)) = theta0.iter().zip(bounds).find(|(v, b)| !b.contains(**v)) {
        return Err(Error::arg(format!("θ₀ component {v} outside [{}, {}]", b.lo, b.hi)));
    }
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut r = checked(&residual, &theta)?;
    let mut cost = norm(&r);
    let mut history = vec![cost];
    let mut evaluations = 1;
    let mut mu = opts.initial_damping;
    let mut iterations = 0;
    let termination = 'outer: loop {
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let jac = fd_jacobian(&residual, &theta, &r, bounds, opts.fd_step)?;
        evaluations += n;
        let mut jtj = Mat::<f64>::zeros(n, n);
        let mut g = vec![0.0; n];
        for a in 0..n {
            g[a] = jac[a].iter().zip(&r).map(|(x, y)| x * y).sum();
            for b in 0..=a {
                let v: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                jtj[(a, b)] = v;
                jtj[(b, a)] = v;
            }
        }
        loop {
            let mut m = jtj.clone();
            for a in 0..n {
                m[(a, a)] += mu;
            }
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let trial: Vec<f64> = match solve_dense(&m, &neg_g) {
                Some(d) => theta.iter().zip(&d).zip(bounds).map(|((t, d), b)| b.clamp(t + d)).collect(),
                None => theta.clone(),
            };
            let step = theta.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if step < opts.step_tolerance {
                break 'outer Termination::StepTolerance;
            }
            let r_new = checked(&residual, &trial)?;
            evaluations += 1;
            let c_new = norm(&r_new);
            if c_new < cost {
                let reduction = (cost - c_new) / cost.max(f64::MIN_POSITIVE);
                theta = trial;
                r = r_new;
                cost = c_new;
                history.push(cost);
                mu = (mu / opts.damping_down).max(1e-12);
                if reduction < opts.reduction_tolerance {
                    break 'outer Termination::ReductionTolerance;
                }
                break;
            }
            mu *= opts.damping_up;
            if mu > 1e16 {
                break 'outer Termination::Stalled;
            }
        }
    };
    Ok(InverseResult {
        theta,
        residual: cost,
        iterations,
        evaluations,
        rel_error: None,
        history,
        termination,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Inversion strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Analytic,
    Hmm,
    TwoStage,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Analytic => "analytic",
            Strategy::Hmm => "hmm",
            Strategy::TwoStage => "two-stage",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "analytic" => Ok(Self::Analytic),
            "hmm" => Ok(Self::Hmm),
            "two-stage" | "twostage" => Ok(Self::TwoStage),
            _ => Err(Error::arg(format!("unknown strategy '{s}'"))),
        }
    }
}

/// Everything a prediction needs besides `θ`.
pub struct Predictor<'a> {
    /// Model, ε, realization and parameter layout; its θ is ignored.
    pub template: &'a MicroCoefficient,
    pub macro_mesh: &'a TriMesh,
    pub hmm: Option<&'a HmmSolver>,
}

impl Predictor<'_> {
    fn coefficient(&self, theta: &[f64]) -> Result<MicroCoefficient> {
        self.template.with_field(self.template.field.with_theta(theta)?)
    }

    /// Predicted data for `θ` with the given forward model.
    pub fn predict(&self, data: &ObservationSet, forward: ForwardKind, theta: &[f64]) -> Result<Vec<f64>> {
        let coeff = self.coefficient(theta)?;
        let medium = Medium::build(forward, self.macro_mesh, &coeff, self.hmm)?;
        data.descriptor.operator.evaluate(&medium)
    }
}

fn check_data(data: &ObservationSet) -> Result<f64> {
    data.validate().map_err(|e| Error::config(format!("data set: {e}")))?;
    let scale = norm(&data.values);
    if !(scale > 0.0) {
        return Err(Error::data("data vector is zero"));
    }
    Ok(scale)
}

/// Data misfit `(G(θ) − y) / ‖y‖` for predictions from `medium_of(θ)`.
fn misfit<'a>(
    data: &'a ObservationSet,
    scale: f64,
    predict: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a {
    move |theta: &[f64]| {
        let p = predict(theta)?;
        if p.len() != data.values.len() {
            return Err(Error::config(format!(
                "{} predictions for {} data entries",
                p.len(),
                data.values.len()
            )));
        }
        Ok(p.iter().zip(&data.values).map(|(a, b)| (a - b) / scale).collect())
    }
}

fn midpoints(bounds: &[Bounds]) -> Vec<f64> {
    bounds.iter().map(|b| b.midpoint()).collect()
}

/// Fits `θ` so that the effective-model predictions match the data.
pub fn invert_direct(
    data: &ObservationSet,
    predictor: &Predictor<'_>,
    forward: ForwardKind,
    truth: Option<&[f64]>,
    opts: &LsqOptions,
) -> Result<InverseResult> {
    if forward == ForwardKind::Dns {
        return Err(Error::config("direct inversion predicts with the analytic or HMM forward model"));
    }
    if forward == ForwardKind::Hmm && predictor.hmm.is_none() {
        return Err(Error::config("HMM inversion needs HMM parameters"));
    }
    if forward == ForwardKind::Analytic && predictor.template.model.kind == ModelKind::RandomLayered {
        return Err(Error::config("the random model has no analytic effective tensor"));
    }
    let scale = check_data(data)?;
    let bounds = predictor.template.field.theta_bounds();
    let r = misfit(data, scale, |theta| predictor.predict(data, forward, theta));
    let res = lm_minimize(r, &midpoints(&bounds), &bounds, opts)?;
    Ok(match truth {
        Some(t) => res.with_truth(t),
        None => res,
    })
}

/// Stage-one unknowns `(A₁₁, A₁₂, A₂₂)` per strip, stage-two fit of `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    pub tensors: Vec<SymTensor>,
    pub stage_one: InverseResult,
    pub stage_two: InverseResult,
}

/// Tensor field constant on each strip of the parameter layout, with
/// eigenvalues clamped to `floor`.
pub fn strip_tensors(field: &ParamField, entries: &[f64], mesh: &TriMesh, floor: f64) -> Vec<SymTensor> {
    let patches: Vec<SymTensor> = entries
        .chunks(3)
        .map(|c| SymTensor::new(c[0], c[1], c[2]).clamp_eigenvalues(floor))
        .collect();
    (0..mesh.num_triangles()).map(|t| patches[field.strip_of(mesh.barycenter(t)[0])]).collect()
}

/// (i) fit an SPD tensor per strip to the data, (ii) fit `θ` to those tensors
/// in the Frobenius norm through the closed-form effective tensor.
pub fn invert_two_stage(
    data: &ObservationSet,
    predictor: &Predictor<'_>,
    truth: Option<&[f64]>,
    opts: &LsqOptions,
) -> Result<TwoStageResult> {
    let start = Instant::now();
    let scale = check_data(data)?;
    let template = predictor.template;
    let model = template.model;
    if model.kind == ModelKind::RandomLayered {
        return Err(Error::config("two-stage inversion needs a closed-form effective tensor"));
    }
    let field = &template.field;
    let patches = field.dofs();
    let (lo, hi) = model.kind.ellipticity();
    let diag = Bounds::new(lo, hi);
    let off = Bounds::new(-0.5 * (hi - lo), 0.5 * (hi - lo));
    let bounds: Vec<Bounds> = (0..patches).flat_map(|_| [diag, off, diag]).collect();
    let mesh = predictor.macro_mesh;
    let r1 = misfit(data, scale, |entries: &[f64]| {
        let medium = Medium::new(mesh, strip_tensors(field, entries, mesh, lo))?;
        data.descriptor.operator.evaluate(&medium)
    });
    let stage_one = lm_minimize(r1, &midpoints(&bounds), &bounds, opts)?;
    let tensors: Vec<SymTensor> = stage_one
        .theta
        .chunks(3)
        .map(|c| SymTensor::new(c[0], c[1], c[2]).clamp_eigenvalues(lo))
        .collect();
    let centers = field.strip_centers();
    let targets = tensors.clone();
    let r2 = |theta: &[f64]| -> Result<Vec<f64>> {
        let f = field.with_theta(theta)?;
        let mut out = Vec::with_capacity(3 * centers.len());
        for (&c, target) in centers.iter().zip(&targets) {
            let a = effective_tensor(&model, &f.eval([c, 0.5]))?;
            let d = a.sub(target);
            out.extend([d.xx, std::f64::consts::SQRT_2 * d.xy, d.yy]);
        }
        Ok(out)
    };
    let tb = field.theta_bounds();
    let mut stage_two = lm_minimize(r2, &midpoints(&tb), &tb, opts)?;
    if let Some(t) = truth {
        stage_two = stage_two.with_truth(t);
    }
    stage_two.seconds = start.elapsed().as_secs_f64();
    Ok(TwoStageResult { tensors, stage_one, stage_two })
}

/// Generic entry point returning the final parameter fit.
pub fn invert(
    data: &ObservationSet,
    predictor: &Predictor<'_>,
    strategy: Strategy,
    truth: Option<&[f64]>,
    opts: &LsqOptions,
) -> Result<InverseResult> {
    match strategy {
        Strategy::Analytic => invert_direct(data, predictor, ForwardKind::Analytic, truth, opts),
        Strategy::Hmm => invert_direct(data, predictor, ForwardKind::Hmm, truth, opts),
        Strategy::TwoStage => invert_two_stage(data, predictor, truth, opts).map(|r| r.stage_two),
    }
}

/// Settings of the random-microstructure study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomStudy {
    pub theta_star: f64,
    pub eps: f64,
    /// Box sizes δ.
    pub deltas: Vec<f64>,
    /// Micro mesh spacing.
    pub k: f64,
    pub h_fine: f64,
    pub h_macro: f64,
    pub seeds: Vec<u64>,
    /// Intervals `E_θ`, widest first.
    pub intervals: Vec<(f64, f64)>,
}

impl RandomStudy {
    pub fn default_intervals() -> Vec<(f64, f64)> {
        vec![(0.7, 0.9), (0.75, 0.85), (0.79, 0.81)]
    }
}

/// One inversion of the random study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTrial {
    pub seed: u64,
    pub delta: f64,
    pub theta: f64,
    pub result: InverseResult,
}

/// Hit frequencies, `freq[i][j]` for interval `i` and box size `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub intervals: Vec<(f64, f64)>,
    pub deltas: Vec<f64>,
    pub freq: Vec<Vec<f64>>,
    pub trials: Vec<RandomTrial>,
}

/// For each seed: one realization shared by the fine-mesh data and every HMM
/// prediction; for each δ: a direct HMM inversion of `θ`.
pub fn invert_random_study(
    study: &RandomStudy,
    operator: &crate::observation::ObservationOperator,
    opts: &LsqOptions,
) -> Result<FrequencyTable> {
    use crate::hmm::{cells_for, macro_mesh};
    use crate::microstructure::MicroModel;
    let model = MicroModel::new(ModelKind::RandomLayered);
    let truth = ParamField::constant(&[study.theta_star], model.kind.bounds())?;
    let fine = TriMesh::unit_square(cells_for(study.h_fine)?)?;
    let coarse = macro_mesh(study.h_macro)?;
    let per_seed: Vec<Vec<RandomTrial>> = study
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<RandomTrial>> {
            let realization = Arc::new(sample_random(study.eps, seed)?);
            let coeff = MicroCoefficient::new(model, truth.clone(), study.eps)?.with_realization(realization);
            let data = operator.observe(&Medium::dns(&fine, &coeff)?, study.eps)?;
            study
                .deltas
                .iter()
                .map(|&delta| {
                    let solver = HmmSolver::new(HmmConfig::new(study.h_macro, delta, study.k));
                    let predictor = Predictor { template: &coeff, macro_mesh: &coarse, hmm: Some(&solver) };
                    let result = invert_direct(&data, &predictor, ForwardKind::Hmm, Some(&[study.theta_star]), opts)?;
                    Ok(RandomTrial { seed, delta, theta: result.theta[0], result })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut trials: Vec<RandomTrial> = per_seed.into_iter().flatten().collect();
    trials.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.delta.total_cmp(&b.delta)));
    let freq = study
        .intervals
        .iter()
        .map(|&(lo, hi)| {
            study
                .deltas
                .iter()
                .map(|&d| {
                    let col: Vec<&RandomTrial> = trials.iter().filter(|t| t.delta == d).collect();
                    let hits = col.iter().filter(|t| t.theta > lo && t.theta < hi).count();
                    if col.is_empty() {
                        0.0
                    } else {
                        hits as f64 / col.len() as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(FrequencyTable { intervals: study.intervals.clone(), deltas: study.deltas.clone(), freq, trials })
}
