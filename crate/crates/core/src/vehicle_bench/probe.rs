use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremal::ReferenceSchedule;
use crate::geometry::ProblemDefinition;
use crate::odeflow::{integrate, FnSystem};
use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Largest switch-time offset.
    pub radius: f64,
    /// Grid points per axis, `−radius..radius`.
    pub points: usize,
    /// Costs may undercut the reference by this much before a point counts as a violation.
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { radius: 1e-2, points: 9, tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbePoint {
    pub delta1: f64,
    pub delta2: f64,
    pub feasible: bool,
    pub cost: Option<f64>,
    pub delta_cost: Option<f64>,
    /// Control levels on the equal pieces of the middle arc that restore the endpoint.
    pub levels: Vec<f64>,
    pub terminal_gap: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeTable {
    pub reference_cost: f64,
    pub reference_gap: f64,
    pub points: Vec<ProbePoint>,
    pub feasible: usize,
    /// Smallest `C − Ĉ` over the feasible points.
    pub min_delta_cost: f64,
    /// Least-squares `q` in `C − Ĉ ≈ q·r²`, `r² = δ₁² + δ₂²`.
    pub quadratic_coefficient: f64,
    pub tolerance: f64,
}

impl ProbeTable {
    pub fn reference_is_minimal(&self) -> bool {
        self.min_delta_cost >= -self.tolerance
    }
}

/// Piecewise-constant control `(breakpoints, levels)` on `[0, T]`.
struct Control {
    breaks: Vec<f64>,
    levels: Vec<f64>,
}

/// `(ξ(T), ∫|u ψ(ξ)| dt)` integrated piece by piece.
fn endpoint_and_cost(problem: &ProblemDefinition, x0: &DVector<f64>, c: &Control, settings: &Settings) -> Result<(DVector<f64>, f64)> {
    let n = problem.n;
    let tol = settings.tight_tolerances();
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(x0);
    for (k, w) in c.breaks.windows(2).enumerate() {
        let u = c.levels[k];
        let (f0, f1, psi) = (problem.f0.clone(), problem.f1.clone(), problem.psi.clone());
        let sys = FnSystem {
            dim: n + 1,
            f: move |_, y: &DVector<f64>| {
                let x = y.rows(0, n).into_owned();
                let mut out = DVector::zeros(n + 1);
                out.rows_mut(0, n).copy_from(&(f0.value(&x) + f1.value(&x) * u));
                out[n] = (u * psi.value(&x)).abs();
                out
            },
        };
        let (traj, _) = integrate(&sys, w[0], &y, w[1], &[], &tol)?;
        y = traj.last().clone();
    }
    Ok((y.rows(0, n).into_owned(), y[n]))
}

fn control(s: &ReferenceSchedule, tau1: f64, tau2: f64, mid: &[f64]) -> Control {
    let m = mid.len();
    let mut breaks = vec![0.0, tau1];
    for k in 1..m {
        breaks.push(tau1 + (tau2 - tau1) * k as f64 / m as f64);
    }
    breaks.push(tau2);
    breaks.push(s.t_final);
    let mut levels = vec![s.u1];
    levels.extend_from_slice(mid);
    levels.push(s.u3);
    Control { breaks, levels }
}

/// Newton on the `n` middle-arc levels so that the perturbed schedule reaches `x_f`.
fn restore(problem: &ProblemDefinition, s: &ReferenceSchedule, tau1: f64, tau2: f64, settings: &Settings) -> Result<(Vec<f64>, f64, f64)> {
    let n = problem.n;
    let target = 1e-11 * s.xf.norm().max(1.0);
    let residual = |v: &DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let (x, c) = endpoint_and_cost(problem, &s.x0, &control(s, tau1, tau2, v.as_slice()), settings)?;
        Ok((x - &s.xf, c))
    };
    let mut v = DVector::zeros(n);
    let (mut r, mut cost) = residual(&v)?;
    for _ in 0..30 {
        if r.norm() < target {
            return Ok((v.iter().copied().collect(), cost, r.norm()));
        }
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-7;
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[k] += h;
            vm[k] -= h;
            jac.set_column(k, &((residual(&vp)?.0 - residual(&vm)?.0) / (2.0 * h)));
        }
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| Error::Evaluation("singular endpoint sensitivity".into()))?;
        v += step;
        (r, cost) = residual(&v)?;
    }
    if r.norm() < target {
        return Ok((v.iter().copied().collect(), cost, r.norm()));
    }
    Err(Error::ShootingFailure { iterations: 30, residual: r.norm() })
}

fn probe_point(problem: &ProblemDefinition, s: &ReferenceSchedule, d1: f64, d2: f64, settings: &Settings) -> ProbePoint {
    let (tau1, tau2) = (s.tau1 + d1, s.tau2 + d2);
    let infeasible = |reason: String| ProbePoint {
        delta1: d1,
        delta2: d2,
        feasible: false,
        cost: None,
        delta_cost: None,
        levels: Vec::new(),
        terminal_gap: None,
        reason: Some(reason),
    };
    if !(0.0 < tau1 && tau1 < tau2 && tau2 < s.t_final) {
        return infeasible(format!("switch order violated: tau1 = {tau1}, tau2 = {tau2}"));
    }
    match restore(problem, s, tau1, tau2, settings) {
        Ok((levels, cost, gap)) => {
            if levels.iter().any(|u| u.abs() > 1.0) {
                return infeasible(format!("restoring control exceeds the bound: {levels:?}"));
            }
            ProbePoint {
                delta1: d1,
                delta2: d2,
                feasible: true,
                cost: Some(cost),
                delta_cost: None,
                levels,
                terminal_gap: Some(gap),
                reason: None,
            }
        }
        Err(e) => infeasible(e.to_string()),
    }
}

/// Costs of admissible neighbours of the reference: the switches are offset by `(δ₁, δ₂)` and the
/// endpoint is restored by constant control levels on equal pieces of the middle arc.
pub fn perturbation_probe(
    problem: &ProblemDefinition,
    schedule: &ReferenceSchedule,
    config: &ProbeConfig,
    settings: &Settings,
) -> Result<ProbeTable> {
    if config.points < 2 || !(config.radius > 0.0) {
        return Err(Error::InvalidSchedule("probe needs radius > 0 and at least two points".into()));
    }
    let zero = vec![0.0; problem.n];
    let (xr, reference_cost) =
        endpoint_and_cost(problem, &schedule.x0, &control(schedule, schedule.tau1, schedule.tau2, &zero), settings)?;
    let reference_gap = (xr - &schedule.xf).norm();
    let m = config.points;
    let offsets: Vec<f64> = (0..m).map(|k| config.radius * (2.0 * k as f64 / (m - 1) as f64 - 1.0)).collect();
    let pairs: Vec<(f64, f64)> = offsets.iter().flat_map(|&a| offsets.iter().map(move |&b| (a, b))).collect();
    let mut points: Vec<ProbePoint> =
        pairs.par_iter().map(|&(d1, d2)| probe_point(problem, schedule, d1, d2, settings)).collect();

    let (mut num, mut den) = (0.0, 0.0);
    let mut min_delta = f64::INFINITY;
    let mut feasible = 0;
    for p in points.iter_mut() {
        if let Some(c) = p.cost {
            let dc = c - reference_cost;
            p.delta_cost = Some(dc);
            let r2 = p.delta1 * p.delta1 + p.delta2 * p.delta2;
            num += dc * r2;
            den += r2 * r2;
            if r2 > 0.0 {
                min_delta = min_delta.min(dc);
            }
            feasible += 1;
        }
    }
    Ok(ProbeTable {
        reference_cost,
        reference_gap,
        points,
        feasible,
        min_delta_cost: min_delta,
        quadratic_coefficient: if den > 0.0 { num / den } else { f64::NAN },
        tolerance: config.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::vehicle_problem;
    use crate::vehicle_bench::{oracle, VehicleInstance};

    #[test]
    fn reference_point_and_ordering() {
        let inst = VehicleInstance::new(1.0, 1.0, 2.3);
        let s = oracle(&inst).unwrap().schedule(&inst);
        let problem = vehicle_problem(1.0);
        let settings = Settings::default();
        let p0 = probe_point(&problem, &s, 0.0, 0.0, &settings);
        assert!(p0.feasible);
        assert!(p0.levels.iter().all(|u| u.abs() < 1e-8));
        let bad = probe_point(&problem, &s, 0.5, -0.5, &settings);
        assert!(!bad.feasible);
    }
}
