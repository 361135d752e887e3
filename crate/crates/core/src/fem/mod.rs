//! P1 finite elements for `−∇·(A∇u) + b u = f` with Dirichlet or absorbing boundaries.

mod assembly;
mod field;
mod linear;
mod scalar;
mod sparse;

pub use assembly::{
    assemble, assemble_with_tensors, element_tensors, BoundaryCondition, LinearSystem, Problem, Sampled,
    SampledScalar, ScalarCoefficient, TensorCoefficient, Wavenumber,
};
pub use field::{h1_error, h1_error_fn, l2_error, l2_error_fn, restrict_to_coarse, FeField};
pub use linear::{relative_residual, solve, FactoredSystem, RESIDUAL_TOLERANCE};
pub use scalar::{c64, norm2, Scalar};
pub use sparse::CsrMatrix;

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::geometry::Point;
    use crate::mesh::TriMesh;
    use crate::tensor::SymTensor;

    /// Value of the unit-square torsion function at the center from its
    /// double sine series, summed to convergence.
    fn poisson_center_series() -> f64 {
        let mut s = 0.0;
        for m in (1..400).step_by(2) {
            for n in (1..400).step_by(2) {
                let (mf, nf) = (m as f64, n as f64);
                let sign = if ((m + n) / 2 - 1) % 2 == 0 { 1.0 } else { -1.0 };
                s += sign * 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf));
            }
        }
        s
    }

    #[test]
    fn series_oracle_value() {
        assert!((poisson_center_series() - 0.07367).abs() < 1e-5);
    }

    #[test]
    fn poisson_center_value() {
        let mesh = TriMesh::unit_square(64).unwrap();
        let sys = assemble::<f64>(
            &mesh,
            &Problem::new(&SymTensor::IDENTITY).load(&1.0),
            &BoundaryCondition::Dirichlet(&|_| 0.0),
        )
        .unwrap();
        let u = solve(&mesh, &sys).unwrap();
        let c = u.eval([0.5, 0.5]).unwrap();
        assert!((c - 0.07367).abs() < 2e-3, "{c}");
        assert!(relative_residual(&sys, &u.values) < 1e-10);
    }

    fn manufactured_errors(n: usize) -> (f64, f64) {
        let exact = |p: Point| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
        let grad = |p: Point| {
            [(1.0 - 2.0 * p[0]) * p[1] * (1.0 - p[1]), p[0] * (1.0 - p[0]) * (1.0 - 2.0 * p[1])]
        };
        let f = SampledScalar(|p: Point| 2.0 * (p[0] * (1.0 - p[0]) + p[1] * (1.0 - p[1])));
        let mesh = TriMesh::unit_square(n).unwrap();
        let sys =
            assemble::<f64>(&mesh, &Problem::new(&SymTensor::IDENTITY).load(&f), &BoundaryCondition::Dirichlet(&|_| 0.0))
                .unwrap();
        let u = solve(&mesh, &sys).unwrap();
        (l2_error_fn(&u, exact), h1_error_fn(&u, grad))
    }

    #[test]
    fn manufactured_convergence_orders() {
        let e: Vec<(f64, f64)> = [16, 32, 64].iter().map(|&n| manufactured_errors(n)).collect();
        for w in e.windows(2) {
            let l2 = (w[0].0 / w[1].0).log2();
            let h1 = (w[0].1 / w[1].1).log2();
            assert!((1.8..=2.2).contains(&l2), "L2 order {l2}");
            assert!((0.8..=1.2).contains(&h1), "H1 order {h1}");
        }
    }

    #[test]
    fn helmholtz_point_source_is_bounded() {
        let omega = 4.0 * PI;
        let mesh = TriMesh::unit_square(48).unwrap();
        let b = -omega * omega;
        let src = [([0.0, 0.25], -1.0)];
        let sys = assemble::<c64>(
            &mesh,
            &Problem::new(&SymTensor::IDENTITY).reaction(&b).sources(&src),
            &BoundaryCondition::Robin(&|_, n, a| omega / a.form(n, n).sqrt()),
        )
        .unwrap();
        assert!(sys.matrix.asymmetry() < 1e-14);
        let u = solve(&mesh, &sys).unwrap();
        assert!(u.values.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        assert!(relative_residual(&sys, &u.values) < 1e-10);
    }

    #[test]
    fn galerkin_orthogonality_after_solve() {
        let mesh = TriMesh::unit_square(20).unwrap();
        let a = Sampled(|p: Point| SymTensor::new(2.0 + p[0], 0.5, 1.0 + p[1] * p[1]));
        let b = SampledScalar(|p: Point| 1.0 + p[0]);
        let sys = assemble::<f64>(
            &mesh,
            &Problem::new(&a).reaction(&b).load(&1.0),
            &BoundaryCondition::Dirichlet(&|p| p[0] - p[1]),
        )
        .unwrap();
        let u = solve(&mesh, &sys).unwrap();
        let r = sys.residual(&u.values);
        assert!(r.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn dirichlet_only_mesh_returns_trace() {
        let mesh = TriMesh::unit_square(1).unwrap();
        let sys = assemble::<f64>(
            &mesh,
            &Problem::new(&SymTensor::IDENTITY),
            &BoundaryCondition::Dirichlet(&|p| 3.0 * p[0] + p[1]),
        )
        .unwrap();
        let u = solve(&mesh, &sys).unwrap();
        for (v, p) in u.values.iter().zip(&mesh.nodes) {
            assert_eq!(*v, 3.0 * p[0] + p[1]);
        }
    }
}
