use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::geometry::{midpoint, Point};
use crate::mesh::TriMesh;

/// Nodal P1 field on a mesh.
#[derive(Debug, Clone)]
pub struct FeField<'m, S> {
    pub mesh: &'m TriMesh,
    pub values: Vec<S>,
}

impl<'m, S: Scalar> FeField<'m, S> {
    pub fn new(mesh: &'m TriMesh, values: Vec<S>) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return Err(Error::arg(format!(
                "{} values for a mesh with {} nodes",
                values.len(),
                mesh.num_nodes()
            )));
        }
        Ok(Self { mesh, values })
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &'m TriMesh, f: impl Fn(Point) -> S) -> Self {
        Self { mesh, values: mesh.nodes.iter().map(|&p| f(p)).collect() }
    }

    pub fn eval(&self, p: Point) -> Result<S> {
        let (t, l) = self.mesh.locate(p)?;
        let tri = self.mesh.triangles[t];
        Ok(self.values[tri[0]].scale(l[0]) + self.values[tri[1]].scale(l[1]) + self.values[tri[2]].scale(l[2]))
    }

    /// Constant gradient on element `t`.
    pub fn gradient(&self, t: usize) -> [S; 2] {
        let (g, _) = self.mesh.gradients(t);
        let tri = self.mesh.triangles[t];
        let mut out = [S::zero(); 2];
        for (k, &node) in tri.iter().enumerate() {
            out[0] += self.values[node].scale(g[k][0]);
            out[1] += self.values[node].scale(g[k][1]);
        }
        out
    }

    fn edge_midpoint_values(&self, t: usize) -> ([Point; 3], [S; 3]) {
        let tri = self.mesh.triangles[t];
        let e = self.mesh.element(t);
        let v = |a: usize, b: usize| (self.values[tri[a]] + self.values[tri[b]]).scale(0.5);
        (
            [midpoint(e[0], e[1]), midpoint(e[1], e[2]), midpoint(e[2], e[0])],
            [v(0, 1), v(1, 2), v(2, 0)],
        )
    }
}

fn check_same_mesh<S>(u: &FeField<'_, S>, v: &FeField<'_, S>) -> Result<()> {
    if std::ptr::eq(u.mesh, v.mesh) || u.mesh.same_grid(v.mesh) {
        Ok(())
    } else {
        Err(Error::arg("fields live on different meshes"))
    }
}

/// `‖u − v‖_{L²}` by the edge-midpoint rule, exact for P1 differences.
pub fn l2_error<S: Scalar>(u: &FeField<'_, S>, v: &FeField<'_, S>) -> Result<f64> {
    check_same_mesh(u, v)?;
    let mut acc = 0.0;
    for t in 0..u.mesh.num_triangles() {
        let (_, a) = u.edge_midpoint_values(t);
        let (_, b) = v.edge_midpoint_values(t);
        let s: f64 = (0..3).map(|k| (a[k] - b[k]).modulus().powi(2)).sum();
        acc += s * u.mesh.area(t) / 3.0;
    }
    Ok(acc.sqrt())
}

/// `‖u − f‖_{L²}` against an analytic function.
pub fn l2_error_fn<S: Scalar>(u: &FeField<'_, S>, f: impl Fn(Point) -> S) -> f64 {
    let mut acc = 0.0;
    for t in 0..u.mesh.num_triangles() {
        let (pts, a) = u.edge_midpoint_values(t);
        let s: f64 = (0..3).map(|k| (a[k] - f(pts[k])).modulus().powi(2)).sum();
        acc += s * u.mesh.area(t) / 3.0;
    }
    acc.sqrt()
}

/// `‖∇(u − v)‖_{L²}`.
pub fn h1_error<S: Scalar>(u: &FeField<'_, S>, v: &FeField<'_, S>) -> Result<f64> {
    check_same_mesh(u, v)?;
    let mut acc = 0.0;
    for t in 0..u.mesh.num_triangles() {
        let (gu, gv) = (u.gradient(t), v.gradient(t));
        let d = (gu[0] - gv[0]).modulus().powi(2) + (gu[1] - gv[1]).modulus().powi(2);
        acc += d * u.mesh.area(t);
    }
    Ok(acc.sqrt())
}

/// `‖∇u − g‖_{L²}` against an analytic gradient, edge-midpoint rule.
pub fn h1_error_fn<S: Scalar>(u: &FeField<'_, S>, grad: impl Fn(Point) -> [S; 2]) -> f64 {
    let mut acc = 0.0;
    for t in 0..u.mesh.num_triangles() {
        let gu = u.gradient(t);
        let (pts, _) = u.edge_midpoint_values(t);
        let s: f64 = pts
            .iter()
            .map(|&p| {
                let g = grad(p);
                (gu[0] - g[0]).modulus().powi(2) + (gu[1] - g[1]).modulus().powi(2)
            })
            .sum();
        acc += s * u.mesh.area(t) / 3.0;
    }
    acc.sqrt()
}

/// Nodal interpolation of a fine field at the nodes of `coarse`.
pub fn restrict_to_coarse<'c, S: Scalar>(fine: &FeField<'_, S>, coarse: &'c TriMesh) -> Result<FeField<'c, S>> {
    let values = coarse.nodes.iter().map(|&p| fine.eval(p)).collect::<Result<Vec<S>>>()?;
    FeField::new(coarse, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::mesh::build_uniform_mesh;

    #[test]
    fn unit_difference_has_unit_norm() {
        let m = TriMesh::unit_square(3).unwrap();
        let u = FeField::interpolate(&m, |_| 1.0);
        let v = FeField::interpolate(&m, |_| 0.0);
        assert!((l2_error(&u, &v).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(l2_error(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn linears_are_reproduced() {
        let m = TriMesh::unit_square(5).unwrap();
        let u = FeField::interpolate(&m, |p| p[0]);
        assert!(l2_error_fn(&u, |p| p[0]) <= 1e-14);
        assert!(h1_error_fn(&u, |_| [1.0, 0.0]) <= 1e-13);
        let c = TriMesh::unit_square(2).unwrap();
        let r = restrict_to_coarse(&u, &c).unwrap();
        assert!(r.values.iter().zip(&c.nodes).all(|(v, p)| (v - p[0]).abs() < 1e-15));
    }

    #[test]
    fn mismatched_meshes_are_rejected() {
        let a = TriMesh::unit_square(2).unwrap();
        let b = TriMesh::unit_square(3).unwrap();
        let u = FeField::interpolate(&a, |_| 0.0);
        let v = FeField::interpolate(&b, |_| 0.0);
        assert!(matches!(l2_error(&u, &v), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn restriction_outside_is_rejected() {
        let fine = TriMesh::unit_square(4).unwrap();
        let coarse = build_uniform_mesh(2, Rect::new([0.0, 0.0], [2.0, 1.0]).unwrap()).unwrap();
        let u = FeField::interpolate(&fine, |_| 0.0);
        assert!(restrict_to_coarse(&u, &coarse).is_err());
    }

    #[test]
    fn oscillatory_field_restricts_to_samples() {
        let eps = 1.0 / 64.0;
        let fine = TriMesh::unit_square(256).unwrap();
        let coarse = TriMesh::unit_square(8).unwrap();
        let f = |p: Point| (2.0 * std::f64::consts::PI * p[0] / eps).sin();
        let u = FeField::interpolate(&fine, f);
        let r = restrict_to_coarse(&u, &coarse).unwrap();
        for (v, &p) in r.values.iter().zip(&coarse.nodes) {
            assert!((v - f(p)).abs() < 1e-12);
        }
    }
}
