//! Experiment configurations, the named presets and their CSV/JSON outputs.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::g12;
use crate::hmm::{cells_for, hmm_error_study, macro_mesh, ErrorStudyRow, HmmConfig, HmmSolver, MicroBc, StudyAxis};
use crate::inversion::{
    invert, invert_random_study, FrequencyTable, InverseResult, LsqOptions, Predictor, RandomStudy, Strategy,
};
use crate::mesh::TriMesh;
use crate::microstructure::{MicroCoefficient, MicroModel, ModelKind, ParamField, ParamKind};
use crate::observation::{add_noise, Medium, ObservationOperator, ObservationSet, OperatorKind};

/// Exact rational parameter, written `"p/q"` or `"p"` in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rational(Ratio<i64>);

impl Rational {
    /// Panics if `denom` is zero.
    pub fn new(numer: i64, denom: i64) -> Self {
        Self(Ratio::new(numer, denom))
    }

    pub fn integer(n: i64) -> Self {
        Self(Ratio::from_integer(n))
    }

    pub fn value(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn times(self, other: Rational) -> Rational {
        Self(self.0 * other.0)
    }

    pub fn over(self, other: Rational) -> Result<Rational> {
        if *other.0.numer() == 0 {
            return Err(Error::config("division by a zero parameter"));
        }
        Ok(Self(self.0 / other.0))
    }

    /// `n` when the value is `1/n` for a positive integer `n`.
    pub fn reciprocal_integer(self) -> Option<usize> {
        let r = self.0.recip();
        (self.0 > Ratio::from_integer(0) && r.is_integer()).then(|| r.to_integer() as usize)
    }

    fn is_positive(self) -> bool {
        self.0 > Ratio::from_integer(0)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<Ratio<i64>>()
            .map(Self)
            .map_err(|e| Error::config(format!("'{s}' is not a rational number: {e}")))
    }
}

impl TryFrom<String> for Rational {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Rational> for String {
    fn from(r: Rational) -> Self {
        r.to_string()
    }
}

/// Equation class generating the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equation {
    /// Conductivity equation with boundary flux data.
    Dtn,
    Qpat,
    Helmholtz,
}

/// Kind of computation a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    /// Macro solution errors while ε runs through `sweep`.
    ErrorEps,
    /// Macro solution errors while δ/ε runs through `sweep`.
    ErrorDelta,
    /// Parameter recovery from fine-mesh data, per model, N, seed and strategy.
    Inversion,
    /// Random layered medium, hit frequencies over δ/ε in `sweep`.
    Random,
}

/// Resolution of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::config(format!("unknown scale '{s}' (expected paper or desk)"))),
        }
    }
}

fn default_omega_over_pi() -> Rational {
    Rational::integer(4)
}

/// Every numerical parameter of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub study: Study,
    pub equation: Equation,
    pub models: Vec<ModelKind>,
    pub param_kind: ParamKind,
    /// Degrees of freedom N per feature, one run each.
    pub dofs: Vec<usize>,
    /// True parameter vector; defaults per model when absent.
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    pub eps: Rational,
    /// Fine (reference) mesh spacing.
    pub h: Rational,
    /// Macro mesh spacing, also the coarse sampling grid.
    pub h_macro: Rational,
    pub delta: Rational,
    /// Micro mesh spacing.
    pub k: Rational,
    #[serde(default = "default_omega_over_pi")]
    pub omega_over_pi: Rational,
    /// Helmholtz sensors closer than this to the active source are dropped.
    #[serde(default)]
    pub sensor_exclusion: f64,
    pub micro_bc: MicroBc,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    /// ε values or δ/ε ratios, depending on the study.
    #[serde(default)]
    pub sweep: Vec<Rational>,
    #[serde(default)]
    pub noise: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub lsq: LsqOptions,
}

/// Default true parameter of the first dof of each feature.
fn base_truth(kind: ModelKind) -> Vec<f64> {
    match kind {
        ModelKind::Amplitude | ModelKind::SeparableAmplitude | ModelKind::SquareInclusion => vec![0.6],
        ModelKind::AreaFraction => vec![0.35],
        ModelKind::Angle => vec![0.15],
        ModelKind::AmpAngle => vec![0.6, 0.15],
        ModelKind::AfAngle => vec![0.35, 0.15],
        ModelKind::AmpAf => vec![0.6, 0.35],
        ModelKind::RandomLayered => vec![0.8],
    }
}

/// Deterministic true parameter: the model's base value at the first dof,
/// then a golden-ratio walk through the middle 40% of each bound.
pub fn default_truth(kind: ModelKind, dofs: usize) -> Vec<f64> {
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut theta = Vec::with_capacity(dofs * kind.features());
    for (b, base) in kind.bounds().iter().zip(base_truth(kind)) {
        let start = ((base - b.lo) / b.width() - 0.3) / 0.4;
        theta.push(base);
        for i in 1..dofs {
            let t = (start + golden * i as f64).rem_euclid(1.0);
            theta.push(b.lo + b.width() * (0.3 + 0.4 * t));
        }
    }
    theta
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Overlays the top-level keys of `overrides` (a JSON object) and revalidates.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(extra) = overrides else {
            return Err(Error::config("overrides must be a JSON object"));
        };
        let mut base = serde_json::to_value(self)?;
        let serde_json::Value::Object(map) = &mut base else { unreachable!() };
        for (k, v) in extra {
            map.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::config(format!("overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keeps the number of seeds but starts them at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (seed..seed + n).collect();
        self
    }

    /// Grid cells per side of the macro mesh.
    pub fn grid(&self) -> Result<usize> {
        self.h_macro
            .reciprocal_integer()
            .ok_or_else(|| Error::config(format!("H = {} is not the reciprocal of an integer", self.h_macro)))
    }

    pub fn omega(&self) -> f64 {
        self.omega_over_pi.value() * std::f64::consts::PI
    }

    pub fn operator(&self) -> Result<ObservationOperator> {
        let grid = self.grid()?;
        let mut op = match self.equation {
            Equation::Dtn => ObservationOperator::dtn(grid),
            Equation::Qpat => ObservationOperator::qpat(grid),
            Equation::Helmholtz => ObservationOperator::helmholtz(grid, self.omega()),
        };
        if let OperatorKind::Helmholtz { exclusion, .. } = &mut op.kind {
            *exclusion = self.sensor_exclusion;
        }
        op.validate()?;
        Ok(op)
    }

    pub fn hmm_config(&self) -> HmmConfig {
        HmmConfig::new(self.h_macro.value(), self.delta.value(), self.k.value()).with_micro_bc(self.micro_bc)
    }

    /// True parameter vector for `model` with `dofs` degrees of freedom per feature.
    pub fn truth(&self, model: ModelKind, dofs: usize) -> Result<Vec<f64>> {
        let theta = match &self.theta_star {
            Some(t) => t.clone(),
            None => default_truth(model, dofs),
        };
        if theta.len() != model.features() * dofs {
            return Err(Error::config(format!(
                "θ* has {} entries; model {model} with N = {dofs} needs {}",
                theta.len(),
                model.features() * dofs
            )));
        }
        Ok(theta)
    }

    fn field(&self, model: ModelKind, dofs: usize) -> Result<ParamField> {
        ParamField::new(self.param_kind, dofs, model.bounds(), self.truth(model, dofs)?)
            .map_err(|e| Error::config(e.to_string()))
    }

    /// ε values the study actually uses.
    fn eps_values(&self) -> Vec<Rational> {
        match self.study {
            Study::ErrorEps => self.sweep.clone(),
            _ => vec![self.eps],
        }
    }

    /// Checks the configuration before anything is computed.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.models.is_empty() || self.dofs.is_empty() || self.seeds.is_empty() {
            return bad("models, dofs and seeds must be non-empty".into());
        }
        if self.dofs.contains(&0) {
            return bad("N must be at least 1".into());
        }
        if self.param_kind == ParamKind::Constant && self.dofs.iter().any(|&n| n != 1) {
            return bad("a constant parameter has N = 1".into());
        }
        for (name, v) in [("ε", self.eps), ("h", self.h), ("H", self.h_macro), ("δ", self.delta), ("k", self.k)] {
            if !v.is_positive() {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        let grid = self.grid()?;
        let Some(fine) = self.h.reciprocal_integer() else {
            return bad(format!("h = {} is not the reciprocal of an integer", self.h));
        };
        if fine % grid != 0 {
            return bad(format!("fine grid 1/h = {fine} is not a multiple of 1/H = {grid}"));
        }
        let delta_ratio = self.delta.over(self.eps)?;
        let k_ratio = self.k.over(self.eps)?;
        for eps in self.eps_values() {
            if !eps.is_positive() {
                return bad(format!("ε = {eps} must be positive"));
            }
            let (delta, k) = (delta_ratio.times(eps), k_ratio.times(eps));
            if !(self.h.value() < eps.value() && k.value() < eps.value() && eps.value() <= delta.value()) {
                return bad(format!("need h < ε ≤ δ and k < ε; got h = {}, ε = {eps}, δ = {delta}, k = {k}", self.h));
            }
        }
        if matches!(self.study, Study::ErrorDelta | Study::Random) {
            if let Some(r) = self.sweep.iter().find(|r| r.value() < 1.0) {
                return bad(format!("box ratio δ/ε = {r} is below one"));
            }
        }
        if self.study != Study::Inversion && self.sweep.is_empty() {
            return bad("this study needs a non-empty sweep".into());
        }
        if self.study != Study::Inversion && self.equation != Equation::Dtn {
            return bad("error and random studies use the conductivity equation".into());
        }
        if self.study == Study::Inversion && self.strategies.is_empty() {
            return bad("an inversion needs at least one strategy".into());
        }
        let random = self.models.contains(&ModelKind::RandomLayered);
        if random != (self.study == Study::Random) || (random && self.models.len() != 1) {
            return bad("the random model is used exactly by the random study".into());
        }
        if self.theta_star.is_some() && (self.models.len() != 1 || self.dofs.len() != 1) {
            return bad("θ* can only be given for a single model and N".into());
        }
        for &m in &self.models {
            for &n in &self.dofs {
                self.field(m, n)?;
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise level {} must be non-negative", self.noise));
        }
        if !(self.sensor_exclusion >= 0.0 && self.sensor_exclusion.is_finite()) {
            return bad("sensor exclusion radius must be non-negative".into());
        }
        self.operator().map(|_| ()).map_err(|e| Error::config(e.to_string()))
    }
}

/// Name and one-line description of a preset.
#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const PRESETS: [PresetInfo; 10] = [
    PresetInfo { name: "fig-erreps", summary: "macro solution error of homogenized and HMM models as ε decreases" },
    PresetInfo { name: "fig-errcellsize", summary: "HMM solution error against the micro box size δ/ε" },
    PresetInfo { name: "table-inverr", summary: "scalar parameter recovery, models A-C (A-E at paper scale), three strategies" },
    PresetInfo { name: "table-mcontinuous", summary: "spline parameter m(x) with N dofs, HMM predictions" },
    PresetInfo { name: "table-mdiscontinuous", summary: "piecewise-constant m(x) with N dofs, HMM predictions" },
    PresetInfo { name: "table-mcontinuous2M", summary: "two coupled features (AC, BC, AB), spline m(x)" },
    PresetInfo { name: "table-inverrrand", summary: "random layered medium, hit frequencies of θ̂ around 0.8" },
    PresetInfo { name: "fig-noisydata", summary: "model B with 10% multiplicative noise over many seeds" },
    PresetInfo { name: "table-qpat", summary: "photoacoustic data, models D and E, piecewise-constant m(x)" },
    PresetInfo { name: "table-helm", summary: "Helmholtz boundary data at ω = 4π, models A-C" },
];

struct Resolution {
    eps: Rational,
    h: Rational,
    h_macro: Rational,
    delta_over_eps: i64,
    k_per_eps: i64,
}

fn resolution(equation: Equation, scale: Scale) -> Resolution {
    let r = |e, h, hm, d, k| Resolution {
        eps: Rational::new(1, e),
        h: Rational::new(1, h),
        h_macro: Rational::new(1, hm),
        delta_over_eps: d,
        k_per_eps: k,
    };
    match (equation, scale) {
        (Equation::Dtn, Scale::Paper) => r(80, 600, 10, 3, 16),
        (Equation::Dtn, Scale::Desk) => r(40, 320, 8, 3, 16),
        (Equation::Qpat, Scale::Paper) => r(100, 800, 20, 3, 16),
        (Equation::Qpat, Scale::Desk) => r(50, 400, 10, 3, 16),
        (Equation::Helmholtz, Scale::Paper) => r(120, 800, 40, 6, 8),
        (Equation::Helmholtz, Scale::Desk) => r(60, 480, 20, 6, 8),
    }
}

/// Default configuration of a named preset.
pub fn preset(name: &str, scale: Scale) -> Result<ExperimentConfig> {
    use ModelKind::*;
    let paper = scale == Scale::Paper;
    let upto = |n: usize| (1..=n).collect::<Vec<_>>();
    let ints = |v: &[i64]| v.iter().map(|&i| Rational::integer(i)).collect::<Vec<_>>();
    let base = |equation: Equation, study: Study, models: Vec<ModelKind>| {
        let r = resolution(equation, scale);
        ExperimentConfig {
            preset: name.to_string(),
            study,
            equation,
            models,
            param_kind: ParamKind::Constant,
            dofs: vec![1],
            theta_star: None,
            eps: r.eps,
            h: r.h,
            h_macro: r.h_macro,
            delta: r.eps.times(Rational::integer(r.delta_over_eps)),
            k: r.eps.times(Rational::new(1, r.k_per_eps)),
            omega_over_pi: default_omega_over_pi(),
            sensor_exclusion: 0.0,
            micro_bc: MicroBc::Dirichlet,
            strategies: vec![Strategy::Hmm],
            sweep: Vec::new(),
            noise: 0.0,
            seeds: vec![0],
            lsq: LsqOptions::default(),
        }
    };
    let cfg = match name {
        "fig-erreps" => {
            let mut c = base(Equation::Dtn, Study::ErrorEps, vec![Amplitude, AreaFraction]);
            let last = if paper { 80 } else { 40 };
            c.sweep = [10, 20, 40, 80].iter().filter(|&&d| d <= last).map(|&d| Rational::new(1, d)).collect();
            c
        }
        "fig-errcellsize" => {
            let mut c = base(Equation::Dtn, Study::ErrorDelta, vec![Amplitude, AreaFraction]);
            c.sweep = ints(&[2, 4, 6, 8, 10]);
            c
        }
        "table-inverr" => {
            let models =
                if paper { vec![Amplitude, AreaFraction, Angle, SeparableAmplitude, SquareInclusion] } else { vec![Amplitude, AreaFraction, Angle] };
            let mut c = base(Equation::Dtn, Study::Inversion, models);
            c.strategies = vec![Strategy::Hmm, Strategy::Analytic, Strategy::TwoStage];
            c
        }
        "table-mcontinuous" | "table-mdiscontinuous" => {
            let mut c = base(Equation::Dtn, Study::Inversion, vec![Amplitude, AreaFraction, Angle]);
            c.param_kind =
                if name == "table-mcontinuous" { ParamKind::CubicSpline } else { ParamKind::PiecewiseConstant };
            c.dofs = upto(if paper { 6 } else { 3 });
            c
        }
        "table-mcontinuous2M" => {
            let mut c = base(Equation::Dtn, Study::Inversion, vec![AmpAngle, AfAngle, AmpAf]);
            c.param_kind = ParamKind::CubicSpline;
            c.dofs = upto(if paper { 3 } else { 1 });
            c
        }
        "table-inverrrand" => {
            let mut c = base(Equation::Dtn, Study::Random, vec![RandomLayered]);
            c.k = c.eps.times(Rational::new(1, 8));
            c.sweep = ints(&[2, 4, 8]);
            c.seeds = (0..if paper { 100 } else { 20 }).collect();
            c
        }
        "fig-noisydata" => {
            let mut c = base(Equation::Dtn, Study::Inversion, vec![AreaFraction]);
            c.strategies = vec![Strategy::Analytic, Strategy::Hmm, Strategy::TwoStage];
            c.noise = 0.1;
            c.seeds = (0..if paper { 100 } else { 30 }).collect();
            c
        }
        "table-qpat" => {
            let mut c = base(Equation::Qpat, Study::Inversion, vec![SeparableAmplitude, SquareInclusion]);
            c.param_kind = ParamKind::PiecewiseConstant;
            c.dofs = upto(if paper { 6 } else { 1 });
            c
        }
        "table-helm" => {
            let mut c = base(Equation::Helmholtz, Study::Inversion, vec![Amplitude, AreaFraction, Angle]);
            c.param_kind = ParamKind::PiecewiseConstant;
            c.dofs = upto(if paper { 6 } else { 1 });
            c
        }
        other => {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
            return Err(Error::config(format!("unknown preset '{other}'; available: {}", names.join(", "))));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Header of inversion result tables.
pub const RESULT_HEADER: &str = "model,strategy,M,N,eps,delta,rel_error,residual,iters,seconds,seed";

/// Header of solution error tables.
pub const ERROR_HEADER: &str = "eps_or_delta,err_hom,err_hmm";

/// Header of hit-frequency tables.
pub const FREQUENCY_HEADER: &str = "interval_lo,interval_hi,delta,frequency";

/// One inversion with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: ModelKind,
    pub strategy: Strategy,
    pub features: usize,
    pub dofs: usize,
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub result: InverseResult,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let r = &self.result;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.strategy.label(),
            self.features,
            self.dofs,
            g12(self.eps),
            g12(self.delta),
            r.rel_error.map_or_else(|| "nan".to_string(), g12),
            g12(r.residual),
            r.iterations,
            g12(r.seconds),
            self.seed
        )
    }
}

/// Written next to the tables of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub seconds: f64,
    pub files: Vec<String>,
}

/// Tables produced by a run, before they are written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub results: Vec<ResultRow>,
    pub errors: Vec<(ModelKind, Vec<ErrorStudyRow>)>,
    pub frequencies: Option<FrequencyTable>,
}

fn dns_data(cfg: &ExperimentConfig, fine: &TriMesh, coeff: &MicroCoefficient) -> Result<ObservationSet> {
    cfg.operator()?.observe(&Medium::dns(fine, coeff)?, cfg.eps.value())
}

fn coefficient(cfg: &ExperimentConfig, model: ModelKind, dofs: usize, eps: f64) -> Result<MicroCoefficient> {
    MicroCoefficient::new(MicroModel::new(model), cfg.field(model, dofs)?, eps)
}

/// Fine-mesh data for the first model and N of `cfg`, with noise drawn from
/// `seed` when the configuration asks for it.
pub fn generate_data(cfg: &ExperimentConfig, seed: u64) -> Result<ObservationSet> {
    cfg.validate()?;
    let (model, dofs) = (cfg.models[0], cfg.dofs[0]);
    if model == ModelKind::RandomLayered {
        return Err(Error::config("random media are generated inside the random study"));
    }
    let fine = TriMesh::unit_square(cells_for(cfg.h.value())?)?;
    let clean = dns_data(cfg, &fine, &coefficient(cfg, model, dofs, cfg.eps.value())?)?;
    if cfg.noise > 0.0 {
        add_noise(&clean, cfg.noise, seed)
    } else {
        Ok(clean)
    }
}

/// Inverts `data` for the first model and N of `cfg` with every configured
/// strategy. The ε of the data descriptor is used and echoed.
pub fn invert_data(data: &ObservationSet, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    data.validate().map_err(|e| Error::config(format!("data set: {e}")))?;
    let eps = data.descriptor.eps;
    let expected = cfg.operator()?.descriptor(eps)?;
    if expected.fingerprint != data.descriptor.fingerprint {
        return Err(Error::config("data layout does not match the configured observation operator"));
    }
    let (model, dofs) = (cfg.models[0], cfg.dofs[0]);
    let coeff = coefficient(cfg, model, dofs, eps)?;
    let truth = cfg.truth(model, dofs)?;
    let coarse = macro_mesh(cfg.h_macro.value())?;
    let solver = HmmSolver::new(cfg.hmm_config());
    let predictor = Predictor { template: &coeff, macro_mesh: &coarse, hmm: Some(&solver) };
    cfg.strategies
        .iter()
        .map(|&s| {
            let result = invert(data, &predictor, s, Some(&truth), &cfg.lsq)?;
            Ok(ResultRow {
                model,
                strategy: s,
                features: model.features(),
                dofs,
                eps,
                delta: cfg.delta.value(),
                seed,
                result,
            })
        })
        .collect()
}

/// Reads an observation set written by [`write_data`] and inverts it.
pub fn invert_from_file(path: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)?;
    let data = ObservationSet::from_json(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    invert_data(&data, cfg, seed)
}

/// Writes `data` as JSON (lossless) and CSV next to it.
pub fn write_data(data: &ObservationSet, json_path: &Path) -> Result<PathBuf> {
    fs::write(json_path, data.to_json()?)?;
    let csv_path = json_path.with_extension("csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    data.write_csv(&mut w)?;
    w.flush()?;
    Ok(csv_path)
}

fn run_inversions(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let eps = cfg.eps.value();
    let fine = TriMesh::unit_square(cells_for(cfg.h.value())?)?;
    let coarse = macro_mesh(cfg.h_macro.value())?;
    let solver = HmmSolver::new(cfg.hmm_config());
    let mut rows = Vec::new();
    for &model in &cfg.models {
        for &dofs in &cfg.dofs {
            let coeff = coefficient(cfg, model, dofs, eps)?;
            let truth = cfg.truth(model, dofs)?;
            let clean = dns_data(cfg, &fine, &coeff)?;
            let predictor = Predictor { template: &coeff, macro_mesh: &coarse, hmm: Some(&solver) };
            let per_seed: Vec<Vec<ResultRow>> = cfg
                .seeds
                .par_iter()
                .map(|&seed| {
                    let data = if cfg.noise > 0.0 { add_noise(&clean, cfg.noise, seed)? } else { clean.clone() };
                    cfg.strategies
                        .iter()
                        .map(|&s| {
                            let result = invert(&data, &predictor, s, Some(&truth), &cfg.lsq)
                                .map_err(|e| e.context(format!("model {model}, N = {dofs}, {}, seed {seed}", s.label())))?;
                            Ok(ResultRow {
                                model,
                                strategy: s,
                                features: model.features(),
                                dofs,
                                eps,
                                delta: cfg.delta.value(),
                                seed,
                                result,
                            })
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            rows.extend(per_seed.into_iter().flatten());
        }
    }
    Ok(rows)
}

fn run_error_study(cfg: &ExperimentConfig) -> Result<Vec<(ModelKind, Vec<ErrorStudyRow>)>> {
    let delta_ratio = cfg.delta.over(cfg.eps)?.value();
    let k_ratio = cfg.k.over(cfg.eps)?.value();
    let sweep: Vec<f64> = cfg.sweep.iter().map(|r| r.value()).collect();
    let axis = match cfg.study {
        Study::ErrorEps => StudyAxis::Eps { values: sweep, delta_over_eps: delta_ratio, k_over_eps: k_ratio },
        _ => StudyAxis::Delta {
            eps: cfg.eps.value(),
            values: cfg.sweep.iter().map(|r| r.times(cfg.eps).value()).collect(),
            k_over_eps: k_ratio,
        },
    };
    cfg.models
        .iter()
        .map(|&model| {
            let field = cfg.field(model, cfg.dofs[0])?;
            let rows = hmm_error_study(
                MicroModel::new(model),
                &field,
                &axis,
                cfg.h.value(),
                cfg.h_macro.value(),
                cfg.micro_bc,
            )?;
            Ok((model, rows))
        })
        .collect()
}

fn run_random(cfg: &ExperimentConfig) -> Result<FrequencyTable> {
    let study = RandomStudy {
        theta_star: cfg.truth(ModelKind::RandomLayered, 1)?[0],
        eps: cfg.eps.value(),
        deltas: cfg.sweep.iter().map(|r| r.times(cfg.eps).value()).collect(),
        k: cfg.k.value(),
        h_fine: cfg.h.value(),
        h_macro: cfg.h_macro.value(),
        seeds: cfg.seeds.clone(),
        intervals: RandomStudy::default_intervals(),
    };
    invert_random_study(&study, &cfg.operator()?, &cfg.lsq)
}

/// Runs the study without writing anything.
pub fn run_config(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut out = RunOutput::default();
    match cfg.study {
        Study::Inversion => out.results = run_inversions(cfg)?,
        Study::ErrorEps | Study::ErrorDelta => out.errors = run_error_study(cfg)?,
        Study::Random => {
            let table = run_random(cfg)?;
            out.results = table
                .trials
                .iter()
                .map(|t| ResultRow {
                    model: ModelKind::RandomLayered,
                    strategy: Strategy::Hmm,
                    features: 1,
                    dofs: 1,
                    eps: cfg.eps.value(),
                    delta: t.delta,
                    seed: t.seed,
                    result: t.result.clone(),
                })
                .collect();
            out.frequencies = Some(table);
        }
    }
    Ok(out)
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULT_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn errors_csv(rows: &[ErrorStudyRow]) -> String {
    let mut s = format!("{ERROR_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", g12(r.eps_or_delta), g12(r.err_hom), g12(r.err_hmm)));
    }
    s
}

pub fn frequencies_csv(table: &FrequencyTable) -> String {
    let mut s = format!("{FREQUENCY_HEADER}\n");
    for (i, &(lo, hi)) in table.intervals.iter().enumerate() {
        for (j, &d) in table.deltas.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", g12(lo), g12(hi), g12(d), g12(table.freq[i][j])));
        }
    }
    s
}

/// Runs `cfg` and writes its tables and manifest into `out_dir`.
pub fn run_preset(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunOutput, Manifest)> {
    let start = Instant::now();
    let out = run_config(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        fs::write(out_dir.join(&name), body)?;
        files.push(name);
        Ok(())
    };
    let name = &cfg.preset;
    match cfg.study {
        Study::Inversion => write(format!("{name}.csv"), results_csv(&out.results))?,
        Study::ErrorEps | Study::ErrorDelta => {
            for (model, rows) in &out.errors {
                write(format!("{name}_{model}.csv"), errors_csv(rows))?;
            }
        }
        Study::Random => {
            if let Some(t) = &out.frequencies {
                write(format!("{name}.csv"), frequencies_csv(t))?;
            }
            write(format!("{name}_trials.csv"), results_csv(&out.results))?;
        }
    }
    let manifest = Manifest {
        preset: name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        threads: rayon::current_num_threads(),
        seconds: start.elapsed().as_secs_f64(),
        files,
    };
    fs::write(out_dir.join(format!("{name}.manifest.json")), serde_json::to_string_pretty(&manifest)?)?;
    Ok((out, manifest))
}
