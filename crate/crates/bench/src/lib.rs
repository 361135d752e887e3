//! Fixtures shared by the benchmarks in `benches/`.

use mhinv_core::microstructure::{MicroCoefficient, MicroModel, ModelKind, ParamField};

/// Coefficient of `kind` with a constant parameter field.
pub fn constant_coefficient(kind: ModelKind, theta: &[f64], eps: f64) -> MicroCoefficient {
    let field = ParamField::constant(theta, kind.bounds()).expect("parameter inside the model bounds");
    MicroCoefficient::new(MicroModel::new(kind), field, eps).expect("valid scale")
}
