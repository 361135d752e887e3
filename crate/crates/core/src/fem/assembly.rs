use rayon::prelude::*;

use super::scalar::Scalar;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::geometry::{distance, midpoint, Point};
use crate::mesh::TriMesh;
use crate::tensor::SymTensor;

/// Conductivity given element by element.
pub trait TensorCoefficient: Sync {
    fn element_tensor(&self, mesh: &TriMesh, t: usize) -> SymTensor;

    /// Lines `x₁ = c` and `x₂ = c` across which the coefficient jumps.
    fn interfaces(&self) -> [Vec<f64>; 2] {
        [Vec::new(), Vec::new()]
    }
}

/// Scalar coefficient (reaction or load) given element by element.
pub trait ScalarCoefficient: Sync {
    fn element_value(&self, mesh: &TriMesh, t: usize) -> f64;
}

impl TensorCoefficient for SymTensor {
    fn element_tensor(&self, _: &TriMesh, _: usize) -> SymTensor {
        *self
    }
}

impl TensorCoefficient for [SymTensor] {
    fn element_tensor(&self, _: &TriMesh, t: usize) -> SymTensor {
        self[t]
    }
}

impl TensorCoefficient for Vec<SymTensor> {
    fn element_tensor(&self, _: &TriMesh, t: usize) -> SymTensor {
        self[t]
    }
}

impl ScalarCoefficient for f64 {
    fn element_value(&self, _: &TriMesh, _: usize) -> f64 {
        *self
    }
}

impl ScalarCoefficient for [f64] {
    fn element_value(&self, _: &TriMesh, t: usize) -> f64 {
        self[t]
    }
}

impl ScalarCoefficient for Vec<f64> {
    fn element_value(&self, _: &TriMesh, t: usize) -> f64 {
        self[t]
    }
}

/// Pointwise sampler evaluated at element barycenters.
pub struct Sampled<F>(pub F);

impl<F: Fn(Point) -> SymTensor + Sync> TensorCoefficient for Sampled<F> {
    fn element_tensor(&self, mesh: &TriMesh, t: usize) -> SymTensor {
        (self.0)(mesh.barycenter(t))
    }
}

/// Scalar sampler evaluated at element barycenters.
pub struct SampledScalar<F>(pub F);

impl<F: Fn(Point) -> f64 + Sync> ScalarCoefficient for SampledScalar<F> {
    fn element_value(&self, mesh: &TriMesh, t: usize) -> f64 {
        (self.0)(mesh.barycenter(t))
    }
}

/// `−∇·(A∇u) + b u = f + Σ c_s δ(x − x_s)`.
pub struct Problem<'a> {
    pub a: &'a dyn TensorCoefficient,
    pub b: &'a dyn ScalarCoefficient,
    pub f: &'a dyn ScalarCoefficient,
    pub point_sources: &'a [(Point, f64)],
}

impl<'a> Problem<'a> {
    pub fn new(a: &'a dyn TensorCoefficient) -> Self {
        Self { a, b: &0.0, f: &0.0, point_sources: &[] }
    }

    pub fn reaction(mut self, b: &'a dyn ScalarCoefficient) -> Self {
        self.b = b;
        self
    }

    pub fn load(mut self, f: &'a dyn ScalarCoefficient) -> Self {
        self.f = f;
        self
    }

    pub fn sources(mut self, s: &'a [(Point, f64)]) -> Self {
        self.point_sources = s;
        self
    }
}

/// Wavenumber for the absorbing condition from the edge midpoint, the outward
/// normal and the conductivity of the adjacent element.
pub type Wavenumber<'a> = &'a (dyn Fn(Point, [f64; 2], &SymTensor) -> f64 + Sync);

pub enum BoundaryCondition<'a> {
    /// `u = g` on the whole boundary.
    Dirichlet(&'a (dyn Fn(Point) -> f64 + Sync)),
    /// `A∇u·n − i k u = 0`.
    Robin(Wavenumber<'a>),
}

/// Assembled matrix, load vector and Dirichlet constraints.
#[derive(Debug, Clone)]
pub struct LinearSystem<S> {
    pub matrix: CsrMatrix<S>,
    pub rhs: Vec<S>,
    /// Prescribed value per node, `None` for free nodes.
    pub constraints: Vec<Option<S>>,
}

impl<S: Scalar> LinearSystem<S> {
    /// `K u − f` restricted to free nodes (zero on constrained ones).
    pub fn residual(&self, u: &[S]) -> Vec<S> {
        let ku = self.matrix.matvec(u);
        ku.into_iter()
            .zip(&self.rhs)
            .zip(&self.constraints)
            .map(|((k, &f), c)| if c.is_some() { S::zero() } else { k - f })
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.constraints.iter().filter(|c| c.is_none()).count()
    }

    /// Replaces the constraints by a Dirichlet trace on the boundary nodes.
    pub fn set_dirichlet(&mut self, mesh: &TriMesh, g: &dyn Fn(Point) -> f64) -> Result<()> {
        self.constraints = dirichlet_constraints(mesh, g)?;
        Ok(())
    }
}

pub(crate) fn dirichlet_constraints<S: Scalar>(
    mesh: &TriMesh,
    g: &dyn Fn(Point) -> f64,
) -> Result<Vec<Option<S>>> {
    let mut c = vec![None; mesh.num_nodes()];
    for k in mesh.boundary_nodes() {
        let v = g(mesh.nodes[k]);
        if !v.is_finite() {
            return Err(Error::data(format!("Dirichlet trace {v} at node {k}")));
        }
        c[k] = Some(S::from_f64(v));
    }
    Ok(c)
}

/// Element conductivities for a whole mesh, evaluated in parallel.
pub fn element_tensors(mesh: &TriMesh, a: &dyn TensorCoefficient) -> Vec<SymTensor> {
    (0..mesh.num_triangles()).into_par_iter().map(|t| a.element_tensor(mesh, t)).collect()
}

/// Assembles the P1 system with one-point coefficient quadrature per element.
pub fn assemble<S: Scalar>(
    mesh: &TriMesh,
    problem: &Problem<'_>,
    bc: &BoundaryCondition<'_>,
) -> Result<LinearSystem<S>> {
    let tensors = element_tensors(mesh, problem.a);
    assemble_with_tensors(mesh, &tensors, problem, bc)
}

/// As [`assemble`] with precomputed element conductivities.
pub fn assemble_with_tensors<S: Scalar>(
    mesh: &TriMesh,
    tensors: &[SymTensor],
    problem: &Problem<'_>,
    bc: &BoundaryCondition<'_>,
) -> Result<LinearSystem<S>> {
    let nn = mesh.num_nodes();
    let nt = mesh.num_triangles();
    if tensors.len() != nt {
        return Err(Error::arg("one conductivity per element is required"));
    }
    let mut triplets: Vec<(usize, usize, S)> = Vec::with_capacity(9 * nt + 4 * mesh.boundary_edges.len());
    let mut rhs = vec![S::zero(); nn];
    for t in 0..nt {
        let tri = mesh.triangles[t];
        let (g, area) = mesh.gradients(t);
        let a = &tensors[t];
        let b = problem.b.element_value(mesh, t);
        let f = problem.f.element_value(mesh, t);
        for i in 0..3 {
            for j in 0..3 {
                let mut v = area * a.form(g[i], g[j]);
                if b != 0.0 {
                    v += b * area / 12.0 * if i == j { 2.0 } else { 1.0 };
                }
                triplets.push((tri[i], tri[j], S::from_f64(v)));
            }
            if f != 0.0 {
                rhs[tri[i]] += S::from_f64(f * area / 3.0);
            }
        }
    }
    for &(p, c) in problem.point_sources {
        let k = mesh.nearest_node(p)?;
        rhs[k] += S::from_f64(c);
    }
    let constraints = match bc {
        BoundaryCondition::Dirichlet(g) => dirichlet_constraints(mesh, *g)?,
        BoundaryCondition::Robin(wavenumber) => {
            for e in &mesh.boundary_edges {
                let [p, q] = [mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]];
                let len = distance(p, q);
                let n = e.side.outward_normal();
                let k = wavenumber(midpoint(p, q), n, &tensors[e.element]);
                if !(k.is_finite() && k > 0.0) {
                    return Err(Error::data(format!("absorbing wavenumber {k} must be positive")));
                }
                let Some(unit) = S::imaginary(-k * len / 6.0) else {
                    return Err(Error::arg("absorbing boundary needs complex scalars"));
                };
                for i in 0..2 {
                    for j in 0..2 {
                        let w = if i == j { 2.0 } else { 1.0 };
                        triplets.push((e.nodes[i], e.nodes[j], unit.scale(w)));
                    }
                }
            }
            vec![None; nn]
        }
    };
    Ok(LinearSystem { matrix: CsrMatrix::from_triplets(nn, nn, &triplets), rhs, constraints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiffness_is_symmetric_with_zero_row_sums() {
        let mesh = TriMesh::unit_square(5).unwrap();
        let a = Sampled(|p: Point| SymTensor::new(1.0 + p[0], 0.3 * p[1], 2.0));
        let sys: LinearSystem<f64> =
            assemble(&mesh, &Problem::new(&a), &BoundaryCondition::Dirichlet(&|_| 0.0)).unwrap();
        assert!(sys.matrix.asymmetry() < 1e-14);
        for r in 0..mesh.num_nodes() {
            let s: f64 = sys.matrix.row(r).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-13);
        }
    }

    #[test]
    fn mass_matrix_integrates_to_area() {
        let mesh = TriMesh::unit_square(3).unwrap();
        let sys: LinearSystem<f64> = assemble(
            &mesh,
            &Problem::new(&SymTensor::ZERO).reaction(&1.0).load(&1.0),
            &BoundaryCondition::Dirichlet(&|_| 0.0),
        )
        .unwrap();
        let total: f64 = sys.matrix.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        let load: f64 = sys.rhs.iter().sum();
        assert!((load - 1.0).abs() < 1e-14);
    }

    #[test]
    fn robin_requires_complex_and_positive_wavenumber() {
        let mesh = TriMesh::unit_square(2).unwrap();
        let p = Problem::new(&SymTensor::IDENTITY);
        let r: Result<LinearSystem<f64>> = assemble(&mesh, &p, &BoundaryCondition::Robin(&|_, _, _| 1.0));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r: Result<LinearSystem<super::super::scalar::c64>> =
            assemble(&mesh, &p, &BoundaryCondition::Robin(&|_, _, _| -1.0));
        assert!(matches!(r, Err(Error::InvalidData(_))));
    }

    #[test]
    fn non_finite_trace_is_rejected() {
        let mesh = TriMesh::unit_square(2).unwrap();
        let r: Result<LinearSystem<f64>> = assemble(
            &mesh,
            &Problem::new(&SymTensor::IDENTITY),
            &BoundaryCondition::Dirichlet(&|_| f64::NAN),
        );
        assert!(matches!(r, Err(Error::InvalidData(_))));
    }
}
