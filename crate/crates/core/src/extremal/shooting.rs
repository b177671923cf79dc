use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{integrate_reference_extremal, ArcTag, ReferenceSchedule};
use crate::error::{Error, Result};
use crate::geometry::{Covector, ProblemDefinition, StatePoint};
use crate::settings::Settings;

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingGuess {
    pub lambda0: Covector,
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingOutcome {
    pub schedule: ReferenceSchedule,
    pub iterations: usize,
    pub residual: f64,
}

struct Shooter<'a> {
    problem: &'a ProblemDefinition,
    x0: &'a StatePoint,
    xf: &'a StatePoint,
    t_final: f64,
    u1: f64,
    u3: f64,
    settings: Settings,
}

impl Shooter<'_> {
    fn schedule(&self, z: &DVector<f64>) -> ReferenceSchedule {
        let n = self.problem.n;
        ReferenceSchedule {
            t_final: self.t_final,
            tau1: z[n],
            tau2: z[n + 1],
            u1: self.u1,
            u3: self.u3,
            x0: self.x0.clone(),
            xf: self.xf.clone(),
            lambda0: z.rows(0, n).into_owned(),
        }
    }

    /// `[ξ(T) − x_f; (H₂ − H₁^σ)(ℓ₁); (H₃^σ − H₂)(ℓ₂)]`.
    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.problem.n;
        let (t1, t2) = (z[n], z[n + 1]);
        if !(0.0 < t1 && t1 < t2 && t2 < self.t_final) {
            return Err(Error::StructureViolation(format!("tau1 = {t1}, tau2 = {t2}, T = {}", self.t_final)));
        }
        let path = integrate_reference_extremal(self.problem, &self.schedule(z), &self.settings)?;
        let psi = self.problem.psi.as_ref();
        let value = |tag: ArcTag, y: &DVector<f64>| {
            let x = y.rows(0, n).into_owned();
            let p = y.rows(n, n).into_owned();
            path.hamiltonian(self.problem, tag).value(psi, &p, &x)
        };
        let (l1, l2) = (path.ell1(), path.ell2());
        let mut r = DVector::zeros(n + 2);
        r.rows_mut(0, n).copy_from(&(path.state(self.t_final) - self.xf));
        r[n] = value(ArcTag::H2, &l1) - value(path.last_tag_arc1(), &l1);
        r[n + 1] = value(path.first_tag_arc3(), &l2) - value(ArcTag::H2, &l2);
        Ok(r)
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = z.len();
        let mut jac = DMatrix::zeros(m, m);
        for k in 0..m {
            let h = 1e-7 * z[k].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let col = (self.residual(&zp)? - self.residual(&zm)?) / (2.0 * h);
            jac.set_column(k, &col);
        }
        Ok(jac)
    }
}

/// Damped Newton on `(λ₀, τ₁, τ₂)` with a finite-difference Jacobian.
#[allow(clippy::too_many_arguments)]
pub fn shoot_extremal(
    problem: &ProblemDefinition,
    x0: &StatePoint,
    xf: &StatePoint,
    t_final: f64,
    u1: f64,
    u3: f64,
    guess: &ShootingGuess,
    settings: &Settings,
) -> Result<ShootingOutcome> {
    let n = problem.n;
    let mut inner = *settings;
    let tight = settings.tight_tolerances();
    inner.rtol = tight.rtol;
    inner.atol = tight.atol;
    let shooter = Shooter { problem, x0, xf, t_final, u1, u3, settings: inner };
    let scale = xf.norm().max(1.0);
    let target = 1e-10 * scale;
    const MAX_ITER: usize = 50;

    let mut z = DVector::zeros(n + 2);
    z.rows_mut(0, n).copy_from(&guess.lambda0);
    z[n] = guess.tau1;
    z[n + 1] = guess.tau2;
    let mut r = shooter.residual(&z)?;
    let mut norm = r.norm();

    for it in 0..MAX_ITER {
        if norm < target {
            return Ok(ShootingOutcome { schedule: shooter.schedule(&z), iterations: it, residual: norm });
        }
        let jac = shooter.jacobian(&z)?;
        let step = jac
            .svd(true, true)
            .solve(&(-&r), 1e-14)
            .map_err(|e| Error::Evaluation(format!("newton step: {e}")))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut last_err = None;
        for _ in 0..30 {
            let trial = &z + &step * lambda;
            match shooter.residual(&trial) {
                Ok(rt) if rt.norm() < norm || rt.norm() < target => {
                    z = trial;
                    r = rt;
                    norm = r.norm();
                    accepted = true;
                    break;
                }
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
            lambda *= 0.5;
        }
        if !accepted {
            if let Some(e @ Error::StructureViolation(_)) = last_err {
                return Err(e);
            }
            return Err(Error::ShootingFailure { iterations: it + 1, residual: norm });
        }
    }
    if norm < target {
        return Ok(ShootingOutcome { schedule: shooter.schedule(&z), iterations: MAX_ITER, residual: norm });
    }
    Err(Error::ShootingFailure { iterations: MAX_ITER, residual: norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::vehicle_problem;
    use crate::vehicle_bench::{oracle, VehicleInstance};
    use nalgebra::dvector;

    #[test]
    fn recovers_vehicle_oracle() {
        let inst = VehicleInstance { alpha: 1.0, x_target: 1.0, t_final: 2.3 };
        let o = oracle(&inst).unwrap();
        let problem = vehicle_problem(1.0);
        let guess = ShootingGuess { lambda0: dvector![1.5, 0.5], tau1: 1.0, tau2: 2.0 };
        let out = shoot_extremal(
            &problem,
            &dvector![0.0, 0.0],
            &dvector![1.0, 0.0],
            2.3,
            1.0,
            -1.0,
            &guess,
            &Settings::default(),
        )
        .unwrap();
        assert!((out.schedule.tau1 - o.tau1).abs() < 1e-8);
        assert!((out.schedule.tau2 - o.tau2).abs() < 1e-8);
        assert!((out.schedule.lambda0[0] - o.p1).abs() < 1e-8 * o.p1);
        assert!((out.schedule.lambda0[1] - o.p2_0).abs() < 1e-8 * o.p2_0);
    }

    #[test]
    fn exact_guess_converges_immediately() {
        let inst = VehicleInstance { alpha: 1.0, x_target: 1.0, t_final: 2.3 };
        let s = oracle(&inst).unwrap().schedule(&inst);
        let problem = vehicle_problem(1.0);
        let guess = ShootingGuess { lambda0: s.lambda0.clone(), tau1: s.tau1, tau2: s.tau2 };
        let out =
            shoot_extremal(&problem, &s.x0, &s.xf, s.t_final, s.u1, s.u3, &guess, &Settings::default()).unwrap();
        assert!(out.iterations <= 2);
    }

    #[test]
    fn inverted_guess_is_a_structure_violation() {
        let problem = vehicle_problem(1.0);
        let guess = ShootingGuess { lambda0: dvector![1.5, 0.5], tau1: 2.0, tau2: 1.0 };
        let err = shoot_extremal(
            &problem,
            &dvector![0.0, 0.0],
            &dvector![1.0, 0.0],
            2.3,
            1.0,
            -1.0,
            &guess,
            &Settings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::StructureViolation(_)));
    }
}
