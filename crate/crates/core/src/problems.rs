//! Built-in problems addressed by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix};

use crate::error::{Error, Result};
use crate::geometry::{FnField, FnScalar, ProblemDefinition};

/// `ẋ₁ = x₂, ẋ₂ = u − αx₂`, cost `|u x₂|`.
pub fn vehicle_problem(alpha: f64) -> ProblemDefinition {
    drag_problem(alpha, 0.0, 0.0)
}

/// Vehicle with cubic drag and shifted cost: `ẋ₂ = u − αx₂ − βx₂³`, `ψ = x₂ − b`.
///
/// For `0 < b` below the peak speed the cost crosses zero on both bang arcs.
pub fn drag_problem(alpha: f64, beta: f64, b: f64) -> ProblemDefinition {
    let f0 = FnField::new(2, move |x| dvector![x[1], -alpha * x[1] - beta * x[1].powi(3)])
        .with_jacobian(move |x| dmatrix![0.0, 1.0; 0.0, -alpha - 3.0 * beta * x[1] * x[1]])
        .with_second_derivative(move |x| {
            vec![DMatrix::zeros(2, 2), dmatrix![0.0, 0.0; 0.0, -6.0 * beta * x[1]]]
        });
    let f1 = FnField::constant(dvector![0.0, 1.0]);
    let psi = FnScalar::affine(dvector![0.0, 1.0], -b);
    let name = if beta == 0.0 && b == 0.0 { "vehicle" } else { "drag" };
    ProblemDefinition::new(name, Arc::new(f0), Arc::new(f1), Arc::new(psi)).expect("consistent dimensions")
}

/// `ẋ = u` on the line with cost `|u ψ(x)|`, `ψ(x) = c₀ + c₁x + c₂x²`.
pub fn line_problem(c0: f64, c1: f64, c2: f64) -> ProblemDefinition {
    let f0 = FnField::constant(dvector![0.0]);
    let f1 = FnField::constant(dvector![1.0]);
    let psi = FnScalar::new(1, move |x| c0 + c1 * x[0] + c2 * x[0] * x[0])
        .with_gradient(move |x| dvector![c1 + 2.0 * c2 * x[0]])
        .with_hessian(move |_| dmatrix![2.0 * c2]);
    ProblemDefinition::new("line", Arc::new(f0), Arc::new(f1), Arc::new(psi)).expect("consistent dimensions")
}

/// Names accepted by [`lookup`].
pub const PROBLEM_NAMES: [&str; 3] = ["vehicle", "drag", "line"];

fn param(params: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> Result<f64> {
    match params.get(key).copied().or(default) {
        Some(v) if v.is_finite() => Ok(v),
        Some(v) => Err(Error::InvalidSchedule(format!("parameter {key} is not finite ({v})"))),
        None => Err(Error::InvalidSchedule(format!("missing parameter {key}"))),
    }
}

/// Builds a registered problem from its parameters.
pub fn lookup(name: &str, params: &BTreeMap<String, f64>) -> Result<ProblemDefinition> {
    match name {
        "vehicle" => {
            let alpha = param(params, "alpha", None)?;
            if alpha <= 0.0 {
                return Err(Error::InvalidSchedule("alpha must be positive".into()));
            }
            Ok(vehicle_problem(alpha))
        }
        "drag" => Ok(drag_problem(
            param(params, "alpha", None)?,
            param(params, "beta", Some(0.0))?,
            param(params, "b", Some(0.0))?,
        )),
        "line" => Ok(line_problem(
            param(params, "c0", Some(0.0))?,
            param(params, "c1", Some(0.0))?,
            param(params, "c2", Some(0.0))?,
        )),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{check_consistency, check_scalar_consistency, lie_bracket};

    #[test]
    fn derivatives_are_consistent() {
        let p = drag_problem(1.0, 0.3, 0.1);
        let probes = [dvector![0.0, 0.0], dvector![0.4, 0.7], dvector![-1.0, -0.3]];
        assert!(check_consistency(p.f0.as_ref(), &probes) < 1e-5);
        assert!(check_scalar_consistency(p.psi.as_ref(), &probes) < 1e-5);
        let l = line_problem(0.5, 1.0, -2.0);
        assert!(check_scalar_consistency(l.psi.as_ref(), &[dvector![0.3]]) < 1e-5);
    }

    #[test]
    fn vehicle_bracket() {
        let p = vehicle_problem(1.5);
        let b = lie_bracket(p.f0.as_ref(), p.f1.as_ref(), &dvector![0.2, 0.4]).unwrap();
        assert!((b - dvector![-1.0, 1.5]).norm() < 1e-14);
    }

    #[test]
    fn registry() {
        let mut params = BTreeMap::new();
        assert!(lookup("vehicle", &params).is_err());
        params.insert("alpha".to_string(), 1.0);
        assert_eq!(lookup("vehicle", &params).unwrap().n, 2);
        assert_eq!(lookup("line", &params).unwrap().n, 1);
        assert!(matches!(lookup("nope", &params), Err(Error::UnknownProblem(_))));
    }
}
