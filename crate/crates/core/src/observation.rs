//! Observation operators: boundary flux data of Dirichlet problems, interior
//! absorbed-energy maps at several wavelengths, and boundary traces of
//! time-harmonic fields. All operators sample on a coarse grid so that
//! fine-mesh data and macro-mesh predictions line up entry by entry.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_with_tensors, c64, element_tensors, BoundaryCondition, FactoredSystem, FeField, Problem,
    SampledScalar, Scalar,
};
use crate::format::g12;
use crate::geometry::{distance, Point, Rect};
use crate::hmm::{analytic_tensors, HmmSolver};
use crate::mesh::TriMesh;
use crate::microstructure::MicroCoefficient;
use crate::tensor::SymTensor;

/// Which forward model produces the element conductivities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardKind {
    /// Oscillatory coefficient resolved on a fine mesh.
    Dns,
    /// Closed-form effective tensor on the macro mesh.
    Analytic,
    /// FE-HMM estimates on the macro mesh.
    Hmm,
}

impl std::str::FromStr for ForwardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dns" => Ok(Self::Dns),
            "analytic" => Ok(Self::Analytic),
            "hmm" => Ok(Self::Hmm),
            _ => Err(Error::arg(format!("unknown forward solver '{s}'"))),
        }
    }
}

/// A mesh with one conductivity tensor per element.
#[derive(Debug, Clone)]
pub struct Medium<'m> {
    pub mesh: &'m TriMesh,
    pub tensors: Vec<SymTensor>,
}

impl<'m> Medium<'m> {
    pub fn new(mesh: &'m TriMesh, tensors: Vec<SymTensor>) -> Result<Self> {
        if tensors.len() != mesh.num_triangles() {
            return Err(Error::arg(format!(
                "{} tensors for {} elements",
                tensors.len(),
                mesh.num_triangles()
            )));
        }
        if let Some((t, a)) = tensors.iter().enumerate().find(|(_, a)| !a.is_spd()) {
            return Err(Error::data(format!("conductivity {a:?} on element {t} is not positive definite")));
        }
        Ok(Self { mesh, tensors })
    }

    /// The oscillatory coefficient itself.
    pub fn dns(mesh: &'m TriMesh, coeff: &MicroCoefficient) -> Result<Self> {
        Self::new(mesh, element_tensors(mesh, coeff))
    }

    pub fn analytic(mesh: &'m TriMesh, coeff: &MicroCoefficient) -> Result<Self> {
        Self::new(mesh, analytic_tensors(coeff, mesh)?)
    }

    pub fn hmm(mesh: &'m TriMesh, solver: &HmmSolver, coeff: &MicroCoefficient) -> Result<Self> {
        Self::new(mesh, solver.tensors(coeff, mesh)?)
    }

    /// Dispatch on `kind`; `solver` is required for [`ForwardKind::Hmm`].
    pub fn build(
        kind: ForwardKind,
        mesh: &'m TriMesh,
        coeff: &MicroCoefficient,
        solver: Option<&HmmSolver>,
    ) -> Result<Self> {
        match kind {
            ForwardKind::Dns => Self::dns(mesh, coeff),
            ForwardKind::Analytic => Self::analytic(mesh, coeff),
            ForwardKind::Hmm => {
                let solver = solver.ok_or_else(|| Error::config("HMM forward needs HMM parameters"))?;
                Self::hmm(mesh, solver, coeff)
            }
        }
    }

    /// Every conductivity multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { mesh: self.mesh, tensors: self.tensors.iter().map(|a| a.scale(c)).collect() }
    }
}

/// How boundary fluxes are turned into data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxSampling {
    /// Discrete conormal flux tested against the coarse boundary hat
    /// functions, divided by the coarse spacing.
    Moments,
    /// Conormal flux of the adjacent element at each coarse edge midpoint.
    Midpoint,
}

/// `(2π)^{-1/2} exp(−4 d²)`, `d` the periodic arclength distance to `center`.
pub fn boundary_bump(s: f64, center: f64, perimeter: f64) -> f64 {
    let d = (s - center).rem_euclid(perimeter);
    let d = d.min(perimeter - d);
    (-4.0 * d * d).exp() / (2.0 * PI).sqrt()
}

/// Bumps centered at the midpoints of the four sides of the unit square.
pub fn side_midpoint_bumps() -> Vec<f64> {
    vec![0.5, 1.5, 2.5, 3.5]
}

/// Coefficients of the photoacoustic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpatSetup {
    pub wavelengths: Vec<f64>,
    /// Reference wavelength `λ₀`.
    pub lambda0: f64,
    /// Illumination bump centers (boundary arclength).
    pub illuminations: Vec<f64>,
    /// Background levels of `σ₁` and `σ₂`.
    pub sigma_base: [f64; 2],
    /// Amplitude of the Gaussian perturbation of `σ₁` (subtracted) and `σ₂` (added).
    pub sigma_bump: f64,
}

impl Default for QpatSetup {
    fn default() -> Self {
        Self {
            wavelengths: vec![0.2, 0.3, 0.4],
            lambda0: 0.3,
            illuminations: side_midpoint_bumps(),
            sigma_base: [0.2, 0.2],
            sigma_bump: 0.1,
        }
    }
}

impl QpatSetup {
    /// `α(λ) = (λ/λ₀)^{3/2}`.
    pub fn alpha(&self, lambda: f64) -> f64 {
        (lambda / self.lambda0).powf(1.5)
    }

    /// `σ(x, λ) = (λ/λ₀) σ₁(x) + (λ₀/λ) σ₂(x)`.
    pub fn sigma(&self, x: Point, lambda: f64) -> f64 {
        let g = (-2.0 * PI * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp();
        let s1 = self.sigma_base[0] - self.sigma_bump * g;
        let s2 = self.sigma_base[1] + self.sigma_bump * g;
        lambda / self.lambda0 * s1 + self.lambda0 / lambda * s2
    }

    /// Grüneisen coefficient `0.8 + 0.4 tanh(4x₁ − 4)`.
    pub fn gruneisen(&self, x: Point) -> f64 {
        0.8 + 0.4 * (4.0 * x[0] - 4.0).tanh()
    }
}

/// Observation operator and its excitations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operator", rename_all = "kebab-case")]
pub enum OperatorKind {
    /// Dirichlet-to-Neumann data for boundary bumps.
    Dtn { profiles: Vec<f64>, sampling: FluxSampling },
    /// `Γ σ u` at the coarse nodes for every wavelength and illumination.
    Qpat(QpatSetup),
    /// Boundary traces of `−∇·(a∇u) − ω²u = −δ(x − x_s)` with absorbing boundary.
    Helmholtz {
        omega: f64,
        sources: Vec<Point>,
        /// Sensors closer than this to the active source are skipped.
        exclusion: f64,
    },
}

/// An operator together with its coarse sampling grid on the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    pub kind: OperatorKind,
    /// Cells per side of the coarse grid.
    pub grid: usize,
}

/// Part of a (possibly complex) sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Value,
    Re,
    Im,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Value => "value",
            Component::Re => "re",
            Component::Im => "im",
        }
    }
}

/// One data entry: excitation index, sample location and component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub excitation: usize,
    pub location: Point,
    pub component: Component,
}

/// Layout and provenance of an observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub operator: ObservationOperator,
    /// Scale of the microstructure that generated the data.
    pub eps: f64,
    pub entries: Vec<Entry>,
    /// SHA-256 of the operator and the entry layout.
    pub fingerprint: String,
}

/// Data vector with its descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub descriptor: Descriptor,
    pub values: Vec<f64>,
}

fn coarse_boundary_points(grid: usize) -> Vec<Point> {
    let h = 1.0 / grid as f64;
    let mut pts = Vec::with_capacity(4 * grid);
    for i in 0..grid {
        pts.push([i as f64 * h, 0.0]);
    }
    for j in 0..grid {
        pts.push([1.0, j as f64 * h]);
    }
    for i in (1..=grid).rev() {
        pts.push([i as f64 * h, 1.0]);
    }
    for j in (1..=grid).rev() {
        pts.push([0.0, j as f64 * h]);
    }
    pts
}

fn coarse_points(grid: usize) -> Vec<Point> {
    let h = 1.0 / grid as f64;
    (0..=grid).flat_map(|j| (0..=grid).map(move |i| [i as f64 * h, j as f64 * h])).collect()
}

/// Point at arclength `s` along the counterclockwise boundary of the unit square.
fn boundary_point(s: f64) -> Point {
    let s = s.rem_euclid(4.0);
    match s {
        s if s < 1.0 => [s, 0.0],
        s if s < 2.0 => [1.0, s - 1.0],
        s if s < 3.0 => [3.0 - s, 1.0],
        s => [0.0, 4.0 - s],
    }
}

impl ObservationOperator {
    /// Flux moments for the four side-centered bumps.
    pub fn dtn(grid: usize) -> Self {
        Self { kind: OperatorKind::Dtn { profiles: side_midpoint_bumps(), sampling: FluxSampling::Moments }, grid }
    }

    pub fn dtn_midpoint(grid: usize) -> Self {
        Self { kind: OperatorKind::Dtn { profiles: side_midpoint_bumps(), sampling: FluxSampling::Midpoint }, grid }
    }

    pub fn qpat(grid: usize) -> Self {
        Self { kind: OperatorKind::Qpat(QpatSetup::default()), grid }
    }

    /// Four sources on the left and top sides, all boundary coarse nodes as sensors.
    pub fn helmholtz(grid: usize, omega: f64) -> Self {
        Self {
            kind: OperatorKind::Helmholtz {
                omega,
                sources: vec![[0.0, 0.25], [0.0, 0.75], [0.25, 1.0], [0.75, 1.0]],
                exclusion: 0.0,
            },
            grid,
        }
    }

    pub fn excitation_count(&self) -> usize {
        match &self.kind {
            OperatorKind::Dtn { profiles, .. } => profiles.len(),
            OperatorKind::Qpat(q) => q.wavelengths.len() * q.illuminations.len(),
            OperatorKind::Helmholtz { sources, .. } => sources.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(Error::config("sampling grid needs at least one cell"));
        }
        if self.excitation_count() == 0 {
            return Err(Error::config("observation operator has no excitations"));
        }
        match &self.kind {
            OperatorKind::Dtn { profiles, .. } => {
                if profiles.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("boundary profile centers must be finite"));
                }
            }
            OperatorKind::Qpat(q) => {
                if !(q.lambda0 > 0.0) || q.wavelengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::config("wavelengths must be positive"));
                }
            }
            OperatorKind::Helmholtz { omega, sources, exclusion } => {
                if !(omega.is_finite() && *omega != 0.0) {
                    return Err(Error::config(format!("angular frequency ω = {omega} must be nonzero")));
                }
                if !(*exclusion >= 0.0) {
                    return Err(Error::config("sensor exclusion radius must be non-negative"));
                }
                if let Some(p) = sources.iter().find(|p| !Rect::unit().contains(**p, 1e-12)) {
                    return Err(Error::config(format!("source {p:?} lies outside the domain")));
                }
            }
        }
        Ok(())
    }

    /// Entry layout: excitation-major, then sample, then component.
    pub fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        let value = |excitation, location| Entry { excitation, location, component: Component::Value };
        match &self.kind {
            OperatorKind::Dtn { profiles, sampling } => {
                let h = 1.0 / self.grid as f64;
                let samples: Vec<Point> = match sampling {
                    FluxSampling::Moments => coarse_boundary_points(self.grid),
                    FluxSampling::Midpoint => {
                        (0..4 * self.grid).map(|j| boundary_point((j as f64 + 0.5) * h)).collect()
                    }
                };
                for k in 0..profiles.len() {
                    out.extend(samples.iter().map(|&p| value(k, p)));
                }
            }
            OperatorKind::Qpat(_) => {
                let samples = coarse_points(self.grid);
                for k in 0..self.excitation_count() {
                    out.extend(samples.iter().map(|&p| value(k, p)));
                }
            }
            OperatorKind::Helmholtz { sources, exclusion, .. } => {
                let samples = coarse_boundary_points(self.grid);
                for (k, &src) in sources.iter().enumerate() {
                    for &p in &samples {
                        if *exclusion > 0.0 && distance(p, src) < *exclusion {
                            continue;
                        }
                        out.push(Entry { excitation: k, location: p, component: Component::Re });
                        out.push(Entry { excitation: k, location: p, component: Component::Im });
                    }
                }
            }
        }
        out
    }

    pub fn descriptor(&self, eps: f64) -> Result<Descriptor> {
        self.validate()?;
        let entries = self.entries();
        let fingerprint = fingerprint(self, &entries)?;
        Ok(Descriptor { operator: self.clone(), eps, entries, fingerprint })
    }

    fn check_mesh(&self, mesh: &TriMesh) -> Result<()> {
        if mesh.rect != Rect::unit() {
            return Err(Error::config("observation operators are defined on the unit square"));
        }
        if !mesh.n.is_multiple_of(self.grid) {
            return Err(Error::config(format!(
                "mesh with {} cells per side does not refine the {}-cell sampling grid",
                mesh.n, self.grid
            )));
        }
        Ok(())
    }

    /// Data vector for the conductivities of `medium`, laid out as [`Self::entries`].
    pub fn evaluate(&self, medium: &Medium<'_>) -> Result<Vec<f64>> {
        self.validate()?;
        self.check_mesh(medium.mesh)?;
        let values = match &self.kind {
            OperatorKind::Dtn { profiles, sampling } => dtn_values(medium, profiles, *sampling, self.grid)?,
            OperatorKind::Qpat(q) => qpat_values(medium, q, self.grid)?,
            OperatorKind::Helmholtz { omega, sources, exclusion } => {
                helmholtz_values(medium, *omega, sources, *exclusion, self.grid)?
            }
        };
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("observation produced non-finite value {v}")));
        }
        Ok(values)
    }

    pub fn observe(&self, medium: &Medium<'_>, eps: f64) -> Result<ObservationSet> {
        let descriptor = self.descriptor(eps)?;
        let values = self.evaluate(medium)?;
        debug_assert_eq!(values.len(), descriptor.entries.len());
        Ok(ObservationSet { descriptor, values })
    }
}

fn fingerprint(op: &ObservationOperator, entries: &[Entry]) -> Result<String> {
    let bytes = serde_json::to_vec(&(op, entries))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn dirichlet_factor(medium: &Medium<'_>, b: &dyn crate::fem::ScalarCoefficient) -> Result<(crate::fem::CsrMatrix<f64>, FactoredSystem<f64>)> {
    let sys = assemble_with_tensors::<f64>(
        medium.mesh,
        &medium.tensors,
        &Problem::new(&medium.tensors).reaction(b),
        &BoundaryCondition::Dirichlet(&|_| 0.0),
    )?;
    let mask: Vec<bool> = sys.constraints.iter().map(|c| c.is_some()).collect();
    let factored = FactoredSystem::new(&sys.matrix, &mask)?;
    Ok((sys.matrix, factored))
}

fn bump_traces(mesh: &TriMesh, centers: &[f64]) -> Vec<Vec<f64>> {
    let perimeter = mesh.rect.perimeter();
    centers
        .iter()
        .map(|&c| {
            let mut t = vec![0.0; mesh.num_nodes()];
            for k in mesh.boundary_nodes() {
                t[k] = boundary_bump(mesh.arclength(mesh.nodes[k]), c, perimeter);
            }
            t
        })
        .collect()
}

fn solve_dirichlet_bank(
    medium: &Medium<'_>,
    b: &dyn crate::fem::ScalarCoefficient,
    centers: &[f64],
) -> Result<(crate::fem::CsrMatrix<f64>, Vec<Vec<f64>>)> {
    let (matrix, factored) = dirichlet_factor(medium, b)?;
    let traces = bump_traces(medium.mesh, centers);
    let zero = vec![0.0; medium.mesh.num_nodes()];
    let rhs: Vec<&[f64]> = traces.iter().map(|_| zero.as_slice()).collect();
    let tr: Vec<&[f64]> = traces.iter().map(|t| t.as_slice()).collect();
    let solutions = factored.solve_many(&rhs, &tr)?;
    Ok((matrix, solutions))
}

fn dtn_values(medium: &Medium<'_>, profiles: &[f64], sampling: FluxSampling, grid: usize) -> Result<Vec<f64>> {
    let (matrix, solutions) = solve_dirichlet_bank(medium, &0.0, profiles)?;
    let mesh = medium.mesh;
    let mut out = Vec::with_capacity(profiles.len() * 4 * grid);
    for u in &solutions {
        match sampling {
            FluxSampling::Moments => out.extend(flux_moments(mesh, &matrix, u, grid)),
            FluxSampling::Midpoint => out.extend(midpoint_fluxes(medium, u, grid)?),
        }
    }
    Ok(out)
}

/// `Σ_i (K u)_i φ_j(x_i) / H` over the boundary nodes `x_i` of the mesh, with
/// `φ_j` the coarse boundary hat functions in arclength.
fn flux_moments(mesh: &TriMesh, matrix: &crate::fem::CsrMatrix<f64>, u: &[f64], grid: usize) -> Vec<f64> {
    let count = 4 * grid;
    let hc = 1.0 / grid as f64;
    let mut y = vec![0.0; count];
    for k in mesh.boundary_nodes() {
        let r: f64 = matrix.row(k).map(|(c, a)| a * u[c]).sum();
        let t = mesh.arclength(mesh.nodes[k]) / hc;
        let mut j = t.round();
        let w = if (t - j).abs() < 1e-9 {
            0.0
        } else {
            j = t.floor();
            t - j
        };
        let j = (j as usize) % count;
        y[j] += (1.0 - w) * r;
        if w > 0.0 {
            y[(j + 1) % count] += w * r;
        }
    }
    y.iter().map(|v| v / hc).collect()
}

/// Conormal flux at the midpoints of the coarse boundary edges; a midpoint on
/// a mesh node averages the two adjacent edges.
fn midpoint_fluxes(medium: &Medium<'_>, u: &[f64], grid: usize) -> Result<Vec<f64>> {
    let mesh = medium.mesh;
    let field = FeField::new(mesh, u.to_vec())?;
    let edges = &mesh.boundary_edges;
    let flux = |e: usize| {
        let edge = &edges[e];
        let g = field.gradient(edge.element);
        let ag = medium.tensors[edge.element].apply(g);
        let n = edge.side.outward_normal();
        ag[0] * n[0] + ag[1] * n[1]
    };
    let h = 1.0 / mesh.n as f64;
    let hc = 1.0 / grid as f64;
    let count = edges.len();
    Ok((0..4 * grid)
        .map(|j| {
            let t = (j as f64 + 0.5) * hc / h;
            let r = t.round();
            if (t - r).abs() < 1e-9 {
                let i = r as usize % count;
                0.5 * (flux((i + count - 1) % count) + flux(i))
            } else {
                flux(t.floor() as usize % count)
            }
        })
        .collect())
}

fn qpat_values(medium: &Medium<'_>, q: &QpatSetup, grid: usize) -> Result<Vec<f64>> {
    let mesh = medium.mesh;
    for t in 0..mesh.num_triangles() {
        let p = mesh.barycenter(t);
        for &lambda in &q.wavelengths {
            let s = q.sigma(p, lambda);
            if !(s > 0.0) {
                return Err(Error::data(format!("absorption σ = {s} at {p:?} must be positive")));
            }
        }
    }
    let samples: Vec<usize> =
        coarse_points(grid).into_iter().map(|p| mesh.nearest_node(p)).collect::<Result<_>>()?;
    let per_lambda: Vec<Vec<f64>> = q
        .wavelengths
        .par_iter()
        .map(|&lambda| -> Result<Vec<f64>> {
            let scaled = medium.scaled(q.alpha(lambda));
            let sigma = SampledScalar(|p: Point| q.sigma(p, lambda));
            let (_, solutions) = solve_dirichlet_bank(&scaled, &sigma, &q.illuminations)?;
            let mut out = Vec::with_capacity(solutions.len() * samples.len());
            for u in &solutions {
                for &k in &samples {
                    let p = mesh.nodes[k];
                    out.push(q.gruneisen(p) * q.sigma(p, lambda) * u[k]);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_lambda.concat())
}

fn helmholtz_values(
    medium: &Medium<'_>,
    omega: f64,
    sources: &[Point],
    exclusion: f64,
    grid: usize,
) -> Result<Vec<f64>> {
    let mesh = medium.mesh;
    let k = move |_: Point, n: [f64; 2], a: &SymTensor| omega / a.form(n, n).sqrt();
    let reaction = -omega * omega;
    let sys = assemble_with_tensors::<c64>(
        mesh,
        &medium.tensors,
        &Problem::new(&medium.tensors).reaction(&reaction),
        &BoundaryCondition::Robin(&k),
    )?;
    let factored = FactoredSystem::new(&sys.matrix, &vec![false; mesh.num_nodes()])?;
    let mut loads = Vec::with_capacity(sources.len());
    for &s in sources {
        let mut f = vec![c64::zero(); mesh.num_nodes()];
        f[mesh.nearest_node(s)?] = c64::from_f64(-1.0);
        loads.push(f);
    }
    let zero = vec![c64::zero(); mesh.num_nodes()];
    let rhs: Vec<&[c64]> = loads.iter().map(|f| f.as_slice()).collect();
    let traces: Vec<&[c64]> = loads.iter().map(|_| zero.as_slice()).collect();
    let solutions = factored.solve_many(&rhs, &traces)?;
    let sensors: Vec<(Point, usize)> = coarse_boundary_points(grid)
        .into_iter()
        .map(|p| mesh.nearest_node(p).map(|k| (p, k)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (u, &src) in solutions.iter().zip(sources) {
        for &(p, k) in &sensors {
            if exclusion > 0.0 && distance(p, src) < exclusion {
                continue;
            }
            out.push(u[k].re);
            out.push(u[k].im);
        }
    }
    Ok(out)
}

impl ObservationSet {
    /// Checks the layout against the operator and the fingerprint.
    pub fn validate(&self) -> Result<()> {
        let d = &self.descriptor;
        let entries = d.operator.entries();
        if entries != d.entries {
            return Err(Error::data("descriptor entries do not match the observation operator"));
        }
        if fingerprint(&d.operator, &entries)? != d.fingerprint {
            return Err(Error::data("descriptor fingerprint mismatch"));
        }
        if self.values.len() != entries.len() {
            return Err(Error::data(format!(
                "{} values for {} descriptor entries",
                self.values.len(),
                entries.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("observation values must be finite"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a set written by [`Self::to_json`].
    pub fn from_json(s: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(s).map_err(|e| Error::data(format!("observation file: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    /// `excitation,location_x,location_y,component,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "excitation,location_x,location_y,component,value")?;
        for (e, v) in self.descriptor.entries.iter().zip(&self.values) {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.excitation,
                g12(e.location[0]),
                g12(e.location[1]),
                e.component.label(),
                g12(*v)
            )?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Multiplies every entry by `1 + ξ`, `ξ ~ N(0, σ²)` drawn from a seeded stream.
pub fn add_noise(obs: &ObservationSet, sigma: f64, seed: u64) -> Result<ObservationSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("noise level σ = {sigma} must be non-negative")));
    }
    let mut out = obs.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for v in &mut out.values {
        *v *= 1.0 + normal.sample(&mut rng);
    }
    Ok(out)
}

/// `uᵀ_h K u_g` for the discrete harmonic extensions of two boundary bumps;
/// the discrete form of `⟨Λ g, h⟩`.
pub fn dtn_pairing(medium: &Medium<'_>, g: f64, h: f64) -> Result<(f64, f64)> {
    let (matrix, sol) = solve_dirichlet_bank(medium, &0.0, &[g, h])?;
    let (ug, uh) = (&sol[0], &sol[1]);
    let kug = matrix.matvec(ug);
    let kuh = matrix.matvec(uh);
    let gh: f64 = uh.iter().zip(&kug).map(|(a, b)| a * b).sum();
    let hg: f64 = ug.iter().zip(&kuh).map(|(a, b)| a * b).sum();
    Ok((gh, hg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{MicroModel, ModelKind, ParamField};

    fn uniform(mesh: &TriMesh, a: SymTensor) -> Medium<'_> {
        Medium::new(mesh, vec![a; mesh.num_triangles()]).unwrap()
    }

    /// Flux of the linear field `u = x₁` with all traces given explicitly.
    fn linear_flux(mesh: &TriMesh, a: SymTensor) -> Vec<f64> {
        let medium = uniform(mesh, a);
        let sys = assemble_with_tensors::<f64>(
            mesh,
            &medium.tensors,
            &Problem::new(&medium.tensors),
            &BoundaryCondition::Dirichlet(&|p| p[0]),
        )
        .unwrap();
        let u = crate::fem::solve(mesh, &sys).unwrap().values;
        midpoint_fluxes(&medium, &u, 4).unwrap()
    }

    #[test]
    fn linear_solution_has_normal_flux() {
        let mesh = TriMesh::unit_square(8).unwrap();
        let flux = linear_flux(&mesh, SymTensor::IDENTITY);
        for (j, f) in flux.iter().enumerate() {
            let p = boundary_point((j as f64 + 0.5) / 4.0);
            let n1 = if p[0] == 1.0 { 1.0 } else if p[0] == 0.0 { -1.0 } else { 0.0 };
            assert!((f - n1).abs() < 1e-10, "{j}: {f}");
        }
    }

    #[test]
    fn flux_scales_with_conductivity() {
        let mesh = TriMesh::unit_square(8).unwrap();
        let op = ObservationOperator::dtn(4);
        let a = op.evaluate(&uniform(&mesh, SymTensor::IDENTITY)).unwrap();
        let b = op.evaluate(&uniform(&mesh, SymTensor::isotropic(2.5))).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.5 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn moments_equal_nodal_residual_on_the_sampling_grid() {
        // on the coarse grid the hat test picks out single boundary rows
        let mesh = TriMesh::unit_square(4).unwrap();
        let medium = uniform(&mesh, SymTensor::diag(1.3, 0.7));
        let (matrix, sol) = solve_dirichlet_bank(&medium, &0.0, &[1.5]).unwrap();
        let y = flux_moments(&mesh, &matrix, &sol[0], 4);
        let ku = matrix.matvec(&sol[0]);
        for (j, k) in mesh.boundary_nodes().into_iter().enumerate() {
            assert!((y[j] - 4.0 * ku[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn refined_mesh_moments_are_consistent() {
        let coarse = TriMesh::unit_square(8).unwrap();
        let fine = TriMesh::unit_square(64).unwrap();
        let op = ObservationOperator::dtn(8);
        let a = SymTensor::diag(1.2, 0.8);
        let yc = op.evaluate(&uniform(&coarse, a)).unwrap();
        let yf = op.evaluate(&uniform(&fine, a)).unwrap();
        let gap = crate::fem::norm2(&yc.iter().zip(&yf).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(gap / crate::fem::norm2(&yf) < 0.1, "{gap}");
    }

    #[test]
    fn pairing_is_symmetric() {
        let mesh = TriMesh::unit_square(12).unwrap();
        let medium = uniform(&mesh, SymTensor::new(1.4, 0.3, 0.9));
        let (gh, hg) = dtn_pairing(&medium, 0.3, 2.2).unwrap();
        assert!((gh - hg).abs() < 1e-10);
    }

    #[test]
    fn layout_and_fingerprint() {
        let op = ObservationOperator::helmholtz(5, 4.0 * PI);
        let d = op.descriptor(0.1).unwrap();
        assert_eq!(d.entries.len(), 4 * 20 * 2);
        assert_eq!(op.descriptor(0.05).unwrap().fingerprint, d.fingerprint);
        assert_ne!(ObservationOperator::helmholtz(4, 4.0 * PI).descriptor(0.1).unwrap().fingerprint, d.fingerprint);
        assert_eq!(ObservationOperator::qpat(4).entries().len(), 12 * 25);
    }

    #[test]
    fn zero_frequency_is_rejected() {
        let mesh = TriMesh::unit_square(4).unwrap();
        let r = ObservationOperator::helmholtz(4, 0.0).evaluate(&uniform(&mesh, SymTensor::IDENTITY));
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn vanishing_absorption_is_rejected() {
        let mesh = TriMesh::unit_square(4).unwrap();
        let q = QpatSetup { sigma_base: [0.0, 0.0], sigma_bump: 0.0, ..QpatSetup::default() };
        let op = ObservationOperator { kind: OperatorKind::Qpat(q), grid: 4 };
        let r = op.evaluate(&uniform(&mesh, SymTensor::IDENTITY));
        assert!(matches!(r, Err(Error::InvalidData(_))));
    }

    #[test]
    fn qpat_maximum_principle() {
        let mesh = TriMesh::unit_square(16).unwrap();
        let q = QpatSetup { illuminations: vec![], ..QpatSetup::default() };
        let medium = uniform(&mesh, SymTensor::IDENTITY);
        let one = vec![1.0; mesh.num_nodes()];
        let sigma = SampledScalar(|p: Point| q.sigma(p, 0.3));
        let (_, f) = dirichlet_factor(&medium, &sigma).unwrap();
        let u = f.solve(&vec![0.0; mesh.num_nodes()], &one).unwrap();
        for (k, v) in u.iter().enumerate() {
            if !mesh.is_boundary_node(k) {
                assert!(*v < 1.0 && *v > 0.0, "{v}");
            }
        }
        let data = ObservationOperator::qpat(4).evaluate(&medium).unwrap();
        assert!(data.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn reference_wavelength_is_unscaled() {
        let q = QpatSetup::default();
        assert!((q.alpha(0.3) - 1.0).abs() < 1e-15);
        // the Gaussian perturbations of σ₁ and σ₂ cancel at λ₀
        assert!((q.sigma([0.2, 0.7], 0.3) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn noise_statistics() {
        let op = ObservationOperator::dtn(4);
        let d = op.descriptor(0.1).unwrap();
        let clean = ObservationSet { values: vec![2.0; d.entries.len()], descriptor: d };
        assert_eq!(add_noise(&clean, 0.0, 1).unwrap(), clean);
        assert_eq!(add_noise(&clean, 0.1, 5).unwrap(), add_noise(&clean, 0.1, 5).unwrap());
        let mut xi = Vec::new();
        for seed in 0..157 {
            let n = add_noise(&clean, 0.1, seed).unwrap();
            xi.extend(n.values.iter().map(|v| v / 2.0 - 1.0));
        }
        let mean = xi.iter().sum::<f64>() / xi.len() as f64;
        let sd = (xi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xi.len() - 1) as f64).sqrt();
        assert!(xi.len() >= 10_000 && (0.095..=0.105).contains(&sd), "{sd}");
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mesh = TriMesh::unit_square(8).unwrap();
        let model = MicroModel::new(ModelKind::Amplitude);
        let field = ParamField::constant(&[0.4], model.kind.bounds()).unwrap();
        let coeff = MicroCoefficient::new(model, field, 0.25).unwrap();
        let obs = ObservationOperator::dtn(4).observe(&Medium::dns(&mesh, &coeff).unwrap(), 0.25).unwrap();
        let back = ObservationSet::from_json(&obs.to_json().unwrap()).unwrap();
        assert_eq!(back, obs);
        let mut bad = obs.clone();
        bad.descriptor.fingerprint.replace_range(0..1, "x");
        assert!(ObservationSet::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }

    #[test]
    fn helmholtz_reflection_symmetry() {
        // a ≡ 1 and the mesh are invariant under x ↦ (1 − x₂, 1 − x₁), which
        // swaps the first and last sources
        let mesh = TriMesh::unit_square(16).unwrap();
        let op = ObservationOperator::helmholtz(4, 4.0 * PI);
        let v = op.evaluate(&uniform(&mesh, SymTensor::IDENTITY)).unwrap();
        let entries = op.entries();
        let find = |k: usize, p: Point, c: Component| {
            let i = entries
                .iter()
                .position(|e| e.excitation == k && distance(e.location, p) < 1e-12 && e.component == c)
                .unwrap();
            v[i]
        };
        for e in entries.iter().filter(|e| e.excitation == 0) {
            let q = [1.0 - e.location[1], 1.0 - e.location[0]];
            let a = find(0, e.location, e.component);
            let b = find(3, q, e.component);
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{:?}: {a} vs {b}", e.location);
        }
    }
}
