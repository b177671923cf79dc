//! Pull-back fields `gᵢ = Ŝ_{t*}⁻¹ hᵢ ∘ Ŝ_t` at `x̂₀`, their brackets, and the pulled-back cost data.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremal::ExtremalPath;
use crate::geometry::{ProblemDefinition, StatePoint, VectorField};
use crate::odeflow::{integrate, integrate_on_grid, pack_state_matrix, unpack_state_matrix, StateVariational, Trajectory};
use crate::quadrature;
use crate::settings::Settings;

/// Fixed step grids of the reference flow `Ŝ_t` with its linearization, for replay from nearby points.
pub struct ReferenceFlow {
    n: usize,
    times: [f64; 4],
    fields: [Arc<dyn VectorField>; 3],
    grids: [Vec<f64>; 3],
    base: FlowReplay,
}

/// `(S_t(y), DS_t(y))` on `[0, T]` for one initial point `y`.
#[derive(Debug, Clone)]
pub struct FlowReplay {
    n: usize,
    times: [f64; 4],
    arcs: Vec<Trajectory>,
}

impl FlowReplay {
    fn arc_of(&self, t: f64) -> usize {
        if t <= self.times[1] {
            0
        } else if t <= self.times[2] {
            1
        } else {
            2
        }
    }

    /// `(S_t(y), M_y(t))`.
    pub fn at(&self, t: f64) -> (StatePoint, DMatrix<f64>) {
        unpack_state_matrix(&self.arcs[self.arc_of(t)].dense_eval(t), self.n)
    }

    pub fn state(&self, t: f64) -> StatePoint {
        self.arcs[self.arc_of(t)].dense_eval(t).rows(0, self.n).into_owned()
    }

    /// `M_y(t)⁻¹ h(S_t(y))`.
    pub fn pull_back(&self, field: &dyn VectorField, t: f64) -> Result<DVector<f64>> {
        let (x, m) = self.at(t);
        let rhs = field.value(&x);
        let lu = m.lu();
        lu.solve(&rhs).filter(|v| v.iter().all(|c| c.is_finite())).ok_or(Error::SingularFlow { t })
    }
}

impl ReferenceFlow {
    /// Adaptive integration of state and linearization along the reference controls.
    pub fn new(problem: &ProblemDefinition, path: &ExtremalPath, settings: &Settings) -> Result<Self> {
        let s = &path.schedule;
        let n = problem.n;
        let times = [0.0, s.tau1, s.tau2, s.t_final];
        let fields = [problem.arc_field(s.u1), problem.arc_field(0.0), problem.arc_field(s.u3)];
        let tol = settings.tolerances();
        let mut y = pack_state_matrix(&s.x0, &DMatrix::identity(n, n));
        let mut grids: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            let sys = StateVariational { field: fields[k].as_ref() };
            let (traj, _) = integrate(&sys, times[k], &y, times[k + 1], &[], &tol)?;
            y = traj.last().clone();
            grids[k] = traj.grid;
        }
        let mut flow = ReferenceFlow {
            n,
            times,
            fields,
            grids,
            base: FlowReplay { n, times, arcs: Vec::new() },
        };
        flow.base = flow.replay(&s.x0)?;
        Ok(flow)
    }

    pub fn replay(&self, y0: &StatePoint) -> Result<FlowReplay> {
        let n = self.n;
        let mut y = pack_state_matrix(y0, &DMatrix::identity(n, n));
        let mut arcs = Vec::with_capacity(3);
        for k in 0..3 {
            let sys = StateVariational { field: self.fields[k].as_ref() };
            let traj = integrate_on_grid(&sys, &y, &self.grids[k])?;
            y = traj.last().clone();
            arcs.push(traj);
        }
        Ok(FlowReplay { n, times: self.times, arcs })
    }

    pub fn base(&self) -> &FlowReplay {
        &self.base
    }

    /// Arc field `hᵢ`, `i ∈ {1, 2, 3}`.
    pub fn field(&self, i: usize) -> &dyn VectorField {
        self.fields[i - 1].as_ref()
    }

    /// Start time `τ̂ᵢ₋₁` of arc `i`.
    pub fn arc_start(&self, i: usize) -> f64 {
        self.times[i - 1]
    }

    pub fn arc_interval(&self, i: usize) -> (f64, f64) {
        (self.times[i - 1], self.times[i])
    }

    /// `gᵢ(y)` evaluated through the replay from `y`.
    pub fn pullback_at(&self, replay: &FlowReplay, i: usize) -> Result<DVector<f64>> {
        replay.pull_back(self.field(i), self.arc_start(i))
    }

    /// `Ŝ_{t*}⁻¹ hᵢ(Ŝ_t(x̂₀))` for `t` in arc `i`.
    pub fn pullback_field(&self, i: usize, t: f64) -> Result<DVector<f64>> {
        let (a, b) = self.arc_interval(i);
        if !(t >= a && t <= b) {
            return Err(Error::InvalidSchedule(format!("t = {t} outside arc {i} = [{a}, {b}]")));
        }
        self.base.pull_back(self.field(i), t)
    }

    /// Norm of `gᵢ` evaluated at one quarter and three quarters of arc `i`.
    pub fn independence_check(&self, i: usize) -> Result<f64> {
        let (a, b) = self.arc_interval(i);
        let ga = self.pullback_field(i, a + 0.25 * (b - a))?;
        let gb = self.pullback_field(i, a + 0.75 * (b - a))?;
        Ok((ga - gb).norm())
    }
}

/// Finite-difference scheme for derivatives of pulled-back quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdScheme {
    /// Displacement length relative to `max(1, |x̂₀|)`.
    pub step: f64,
    pub richardson: bool,
}

fn displaced(x0: &StatePoint, dir: &DVector<f64>, step: f64) -> (f64, Vec<(f64, StatePoint)>) {
    let h = step * x0.norm().max(1.0) / dir.norm().max(f64::MIN_POSITIVE);
    let offsets = [h, -h, 2.0 * h, -2.0 * h];
    (h, offsets.iter().map(|&o| (o, x0 + dir * o)).collect())
}

/// Central difference from values at `+h, −h, +2h, −2h`.
fn central(vals: &[DVector<f64>], h: f64, richardson: bool) -> DVector<f64> {
    let d1 = (&vals[0] - &vals[1]) / (2.0 * h);
    if !richardson {
        return d1;
    }
    let d2 = (&vals[2] - &vals[3]) / (4.0 * h);
    (d1 * 4.0 - d2) / 3.0
}

/// `[gᵢ, gⱼ](x̂₀)` for `(i, j) ∈ {(1,2), (1,3), (2,3)}` from differences of replayed pull-backs.
pub fn pullback_brackets(flow: &ReferenceFlow, g: &[DVector<f64>], x0: &StatePoint, scheme: FdScheme) -> Result<[DVector<f64>; 3]> {
    // dg[i][j] = Dg_j(x̂₀) g_i(x̂₀)
    let dg: Vec<Vec<DVector<f64>>> = (0..3)
        .into_par_iter()
        .map(|i| -> Result<Vec<DVector<f64>>> {
            let (h, pts) = displaced(x0, &g[i], scheme.step);
            let mut per_point = Vec::new();
            for (_, y) in &pts {
                let rep = flow.replay(y)?;
                per_point.push((1..=3).map(|j| flow.pullback_at(&rep, j)).collect::<Result<Vec<_>>>()?);
            }
            Ok((0..3)
                .map(|j| {
                    let vals: Vec<DVector<f64>> = per_point.iter().map(|v| v[j].clone()).collect();
                    central(&vals, h, scheme.richardson)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let br = |i: usize, j: usize| &dg[i][j] - &dg[j][i];
    Ok([br(0, 1), br(0, 2), br(1, 2)])
}

/// `L_v ψ̂_s(y) = ⟨Dψ(S_s(y)), M_y(s) v⟩`.
fn pulled_lie(problem: &ProblemDefinition, replay: &FlowReplay, s: f64, v: &DVector<f64>) -> f64 {
    let (x, m) = replay.at(s);
    problem.psi.gradient(&x).dot(&(m * v))
}

/// `L_{gⱼ}ψ̂_s(x̂₀)`, `j = 1, 2, 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LieRow {
    pub t: f64,
    pub values: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackData {
    #[serde(serialize_with = "crate::ser::vectors")]
    pub g: Vec<DVector<f64>>,
    /// `[g₁,g₂], [g₁,g₃], [g₂,g₃]` at `x̂₀`.
    #[serde(serialize_with = "crate::ser::vectors")]
    pub brackets: Vec<DVector<f64>>,
    /// `dβ̂(x̂₀) = −ℓ̂_T ∘ Ŝ_{T*}`.
    #[serde(serialize_with = "crate::ser::vector")]
    pub dbeta_hat: DVector<f64>,
    pub lie_tau1: LieRow,
    pub lie_tau2: LieRow,
    pub lie_t: LieRow,
    pub lie_s1: Vec<LieRow>,
    pub lie_s3: Vec<LieRow>,
    /// `Σᵢ sᵢ ∫ L_{g_a} L_{g_b} ψ̂_t dt` over the sign-resolved pieces of the last arc, `a, b ∈ {1, 2}`.
    pub second_lie_integrals: [[f64; 2]; 2],
    /// `∫_{Î₃} L_{[g₁,g₂]}|ψ̂_t| dt` via the bracket vector.
    pub bracket_integral: f64,
    /// `w = Σᵢ sᵢ ∫ Dψ(Ŝ_t x̂₀) M(t) dt`, so that `∫_{Î₃} L_v|ψ̂_t| dt = ⟨w, v⟩`.
    #[serde(serialize_with = "crate::ser::vector")]
    pub abs_psi_integral_gradient: DVector<f64>,
    pub quadrature_error: f64,
    pub quadrature_converged: bool,
    /// `|gᵢ(t_a) − gᵢ(t_b)|` at two interior times of each arc.
    pub independence: [f64; 3],
    pub scheme: FdScheme,
}

impl PullbackData {
    /// `∫_{Î₃} L²_{ε₁g₁+ε₂g₂}|ψ̂_t| dt`.
    pub fn second_lie_integral(&self, e1: f64, e2: f64) -> f64 {
        let q = &self.second_lie_integrals;
        e1 * e1 * q[0][0] + e1 * e2 * (q[0][1] + q[1][0]) + e2 * e2 * q[1][1]
    }

    /// `∫_{Î₃} L_{[g₁,g₂]}|ψ̂_t| dt` through the antisymmetric part of the second-derivative table.
    pub fn bracket_integral_from_table(&self) -> f64 {
        self.second_lie_integrals[0][1] - self.second_lie_integrals[1][0]
    }

    /// `L_w β̂(x̂₀)`.
    pub fn lie_beta(&self, w: &DVector<f64>) -> f64 {
        self.dbeta_hat.dot(w)
    }
}

/// Builds every pulled-back quantity at `x̂₀` used by the second variation and the identities.
pub fn compute_pullback(problem: &ProblemDefinition, path: &ExtremalPath, settings: &Settings) -> Result<(ReferenceFlow, PullbackData)> {
    let flow = ReferenceFlow::new(problem, path, settings)?;
    let data = pullback_data(problem, path, &flow, settings, FdScheme { step: settings.fd_step, richardson: true })?;
    Ok((flow, data))
}

pub fn pullback_data(
    problem: &ProblemDefinition,
    path: &ExtremalPath,
    flow: &ReferenceFlow,
    settings: &Settings,
    scheme: FdScheme,
) -> Result<PullbackData> {
    let s = &path.schedule;
    let n = problem.n;
    let x0 = &s.x0;
    let base = flow.base();
    let g: Vec<DVector<f64>> = (1..=3).map(|i| flow.pullback_at(base, i)).collect::<Result<_>>()?;
    let brackets = pullback_brackets(flow, &g, x0, scheme)?.to_vec();

    let (_, m_t) = base.at(s.t_final);
    let p_t = path.costate(s.t_final);
    let dbeta_hat = -(m_t.transpose() * p_t);

    let row = |t: f64| LieRow { t, values: [0, 1, 2].map(|j| pulled_lie(problem, base, t, &g[j])) };
    let z = &path.zero_structure;

    // replays displaced along g₁ and g₂ for the second Lie derivatives
    let mut displaced_replays = Vec::new();
    for a in 0..2 {
        let (h, pts) = displaced(x0, &g[a], scheme.step);
        let reps: Vec<(FlowReplay, [DVector<f64>; 2])> = pts
            .par_iter()
            .map(|(_, y)| -> Result<_> {
                let rep = flow.replay(y)?;
                let g1 = flow.pullback_at(&rep, 1)?;
                let g2 = flow.pullback_at(&rep, 2)?;
                Ok((rep, [g1, g2]))
            })
            .collect::<Result<_>>()?;
        displaced_replays.push((h, reps));
    }
    // integrand: [Q11, Q12, Q21, Q22, Dψ·M (n entries)], Q_ab = L_{g_a} L_{g_b} ψ̂_t
    let integrand = |t: f64| -> DVector<f64> {
        let mut out = DVector::zeros(4 + n);
        for a in 0..2 {
            let (h, reps) = &displaced_replays[a];
            for b in 0..2 {
                let vals: Vec<DVector<f64>> =
                    reps.iter().map(|(rep, gs)| DVector::from_element(1, pulled_lie(problem, rep, t, &gs[b]))).collect();
                out[2 * a + b] = central(&vals, *h, scheme.richardson)[0];
            }
        }
        let (x, m) = base.at(t);
        let row = m.transpose() * problem.psi.gradient(&x);
        out.rows_mut(4, n).copy_from(&row);
        out
    };

    let mut bounds = vec![s.tau2];
    bounds.extend(z.s3.iter().copied());
    bounds.push(s.t_final);
    let pieces: Vec<(f64, f64, f64)> = bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| (w[0], w[1], z.a2 as f64 * if i % 2 == 0 { 1.0 } else { -1.0 }))
        .collect();
    let results: Vec<(DVector<f64>, f64, bool)> = pieces
        .par_iter()
        .map(|&(a, b, sign)| {
            let q = quadrature::integrate(&integrand, a, b, settings.quad_rtol, 1e-13);
            (q.value * sign, q.error, q.converged)
        })
        .collect();
    let mut total = DVector::zeros(4 + n);
    let mut qerr = 0.0;
    let mut converged = true;
    for (v, e, c) in results {
        total += v;
        qerr += e;
        converged &= c;
    }
    let w = total.rows(4, n).into_owned();
    let independence = [1, 2, 3].map(|i| flow.independence_check(i).unwrap_or(f64::INFINITY));

    Ok(PullbackData {
        bracket_integral: w.dot(&brackets[0]),
        second_lie_integrals: [[total[0], total[1]], [total[2], total[3]]],
        abs_psi_integral_gradient: w,
        lie_tau1: row(s.tau1),
        lie_tau2: row(s.tau2),
        lie_t: row(s.t_final),
        lie_s1: z.s1.iter().map(|&t| row(t)).collect(),
        lie_s3: z.s3.iter().map(|&t| row(t)).collect(),
        g,
        brackets,
        dbeta_hat,
        quadrature_error: qerr,
        quadrature_converged: converged,
        independence,
        scheme,
    })
}

/// `max_t |M(t)gᵢ − hᵢ(Ŝ_t x̂₀)| / max(1, |hᵢ|)` over `samples` points of arc `i`.
pub fn pushforward_residual(flow: &ReferenceFlow, g: &DVector<f64>, i: usize, samples: usize) -> f64 {
    let (a, b) = flow.arc_interval(i);
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let t = a + (b - a) * k as f64 / (samples.max(2) - 1) as f64;
        let (x, m) = flow.base().at(t);
        let h = flow.field(i).value(&x);
        worst = worst.max((m * g - &h).norm() / h.norm().max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::integrate_reference_extremal;
    use crate::problems::vehicle_problem;
    use crate::vehicle_bench::{oracle, VehicleInstance};
    use nalgebra::dvector;

    fn vehicle(alpha: f64, x: f64, t: f64) -> (ProblemDefinition, ExtremalPath, ReferenceFlow, PullbackData) {
        let inst = VehicleInstance::new(alpha, x, t);
        let problem = vehicle_problem(alpha);
        let settings = Settings::default();
        let path = integrate_reference_extremal(&problem, &oracle(&inst).unwrap().schedule(&inst), &settings).unwrap();
        let (flow, data) = compute_pullback(&problem, &path, &settings).unwrap();
        (problem, path, flow, data)
    }

    #[test]
    fn first_pullback_is_the_first_field() {
        let (problem, path, flow, data) = vehicle(1.0, 1.0, 2.3);
        let h1 = problem.arc_field(1.0).value(&path.schedule.x0);
        assert_eq!(data.g[0], h1);
        for t in [0.0, 0.3, path.schedule.tau1] {
            assert!((flow.pullback_field(1, t).unwrap() - &h1).norm() < 1e-10);
        }
    }

    #[test]
    fn vehicle_closed_forms() {
        let alpha = 1.0;
        let (_, path, _, data) = vehicle(alpha, 1.0, 2.3);
        let s = &path.schedule;
        let eta = |t: f64| 1.0 - (alpha * t).exp();
        // at x̂₀ = 0: f₀ = 0, f₁ = (0, 1), f₀₁ = (−1, α)
        let f01 = dvector![-1.0, alpha];
        let g2 = &f01 * (eta(s.tau1) / alpha);
        let g3 = dvector![0.0, -1.0] + &f01 * ((eta(s.tau1) + eta(s.tau2)) / alpha);
        assert!((&data.g[1] - g2).norm() < 1e-8 * data.g[1].norm());
        assert!((&data.g[2] - g3).norm() < 1e-8 * data.g[2].norm());
    }

    #[test]
    fn vehicle_brackets_match_composition() {
        let alpha = 1.0;
        let (_, path, _, data) = vehicle(alpha, 1.0, 2.3);
        let s = &path.schedule;
        let f01 = dvector![-1.0, alpha];
        let (e1, e2) = ((alpha * s.tau1).exp(), (alpha * s.tau2).exp());
        let expect = [-&f01 * e1, -&f01 * (e1 + e2), -&f01 * e2];
        for (b, e) in data.brackets.iter().zip(expect.iter()) {
            assert!((b - e).norm() < 1e-6 * e.norm(), "{b} vs {e}");
        }
    }

    #[test]
    fn pullbacks_are_time_independent() {
        let (_, path, flow, data) = vehicle(1.0, 1.0, 2.3);
        for i in 1..=3 {
            assert!(data.independence[i - 1] < 1e-8, "arc {i}: {}", data.independence[i - 1]);
            assert!(pushforward_residual(&flow, &data.g[i - 1], i, 20) < 1e-8);
        }
        let s = &path.schedule;
        let a = flow.pullback_field(2, s.tau1 + 0.1).unwrap();
        let b = flow.pullback_field(2, s.tau2 - 0.1).unwrap();
        assert!((a - b).norm() < 1e-8);
        assert!(flow.pullback_field(2, s.t_final).is_err());
    }

    #[test]
    fn dbeta_matches_finite_differences() {
        let (_, path, flow, data) = vehicle(1.0, 1.0, 2.3);
        let s = &path.schedule;
        let ell_t = path.costate(s.t_final);
        let beta = |y: &StatePoint| -ell_t.dot(&(flow.replay(y).unwrap().state(s.t_final) - &s.xf));
        for k in 0..2 {
            let mut e = DVector::zeros(2);
            e[k] = 1e-5;
            let fd = (beta(&(&s.x0 + &e)) - beta(&(&s.x0 - &e))) / 2e-5;
            assert!((fd - data.dbeta_hat[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn lie_table_uses_linearized_flow() {
        let (problem, path, flow, data) = vehicle(1.0, 1.0, 2.3);
        let s = &path.schedule;
        // L_{g₃}ψ̂_T against differences of ψ∘Ŝ_T along g₃
        let g3 = &data.g[2];
        let h = 1e-5;
        let val = |y: StatePoint| problem.psi.value(&flow.replay(&y).unwrap().state(s.t_final));
        let fd = (val(&s.x0 + g3 * h) - val(&s.x0 - g3 * h)) / (2.0 * h);
        assert!((fd - data.lie_t.values[2]).abs() < 1e-7);
        // time 0 is the plain Lie derivative
        let r0 = LieRow { t: 0.0, values: [0, 1, 2].map(|j| pulled_lie(&problem, flow.base(), 0.0, &data.g[j])) };
        assert!((r0.values[1] - problem.psi.gradient(&s.x0).dot(&data.g[1])).abs() < 1e-14);
    }

    #[test]
    fn second_lie_integrals_are_quadratic() {
        let (_, _, _, data) = vehicle(1.0, 1.0, 2.3);
        assert_eq!(data.second_lie_integral(0.0, 0.0), 0.0);
        let v = data.second_lie_integral(0.3, -0.7);
        assert!((data.second_lie_integral(0.6, -1.4) - 4.0 * v).abs() <= 1e-12 * v.abs().max(1.0));
        assert!(data.quadrature_converged);
        // antisymmetric part of the table against the bracket route
        assert!((data.bracket_integral_from_table() - data.bracket_integral).abs() < 1e-6 * data.bracket_integral.abs().max(1.0));
    }
}
