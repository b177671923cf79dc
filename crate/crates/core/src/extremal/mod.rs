//! Reference bang–zero–bang extremal, its assumption checks and a shooting solver.

mod checks;
mod shooting;

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{lie_derivative, AffineHamiltonian, Covector, ProblemDefinition, StatePoint};
use crate::odeflow::{integrate, locate_zeros, FieldSystem, HamiltonianSystem, Trajectory};
use crate::settings::Settings;

pub use checks::{
    check_boundary, check_nontangency, check_strict_maximality, check_strict_switching, check_switch_nonvanishing,
    golden_min, maximality_slack, switching_brackets, AssumptionId, AssumptionReport, Verdict, Witness,
};
pub use shooting::{shoot_extremal, ShootingGuess, ShootingOutcome};

/// Candidate data `(T, τ₁, τ₂, u₁, u₃, x₀, x_f, λ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSchedule {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub u1: f64,
    pub u3: f64,
    #[serde(serialize_with = "crate::ser::vector")]
    pub x0: StatePoint,
    #[serde(serialize_with = "crate::ser::vector")]
    pub xf: StatePoint,
    #[serde(serialize_with = "crate::ser::vector")]
    pub lambda0: Covector,
}

impl ReferenceSchedule {
    pub fn validate(&self, n: usize) -> Result<()> {
        let times = [self.t_final, self.tau1, self.tau2];
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSchedule("non-finite time".into()));
        }
        if !(0.0 < self.tau1 && self.tau1 < self.tau2 && self.tau2 < self.t_final) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < tau1 < tau2 < T, got tau1 = {}, tau2 = {}, T = {}",
                self.tau1, self.tau2, self.t_final
            )));
        }
        for (name, u) in [("u1", self.u1), ("u3", self.u3)] {
            if u != 1.0 && u != -1.0 {
                return Err(Error::InvalidSchedule(format!("{name} must be +1 or -1, got {u}")));
            }
        }
        for (name, v) in [("x0", &self.x0), ("xf", &self.xf), ("lambda0", &self.lambda0)] {
            if v.len() != n {
                return Err(Error::Dimension(format!("{name} has length {}, expected {n}", v.len())));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidSchedule(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// `[τ_{k−1}, τ_k]` for arc `k ∈ {1, 2, 3}`.
    pub fn arc_interval(&self, arc: usize) -> (f64, f64) {
        match arc {
            1 => (0.0, self.tau1),
            2 => (self.tau1, self.tau2),
            _ => (self.tau2, self.t_final),
        }
    }

    pub fn control(&self, arc: usize) -> f64 {
        match arc {
            1 => self.u1,
            2 => 0.0,
            _ => self.u3,
        }
    }
}

/// Active piecewise Hamiltonian `H₁^σ`, `H₂` or `H₃^σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArcTag {
    H1 { sigma: i8 },
    H2,
    H3 { sigma: i8 },
}

impl ArcTag {
    pub fn arc(&self) -> usize {
        match self {
            ArcTag::H1 { .. } => 1,
            ArcTag::H2 => 2,
            ArcTag::H3 { .. } => 3,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            ArcTag::H1 { sigma } | ArcTag::H3 { sigma } => *sigma as f64,
            ArcTag::H2 => 0.0,
        }
    }

    fn with_sigma(arc: usize, sigma: i8) -> Self {
        match arc {
            1 => ArcTag::H1 { sigma },
            2 => ArcTag::H2,
            _ => ArcTag::H3 { sigma },
        }
    }
}

impl fmt::Display for ArcTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = |s: i8| match s {
            1 => "+",
            -1 => "-",
            _ => "0",
        };
        match self {
            ArcTag::H1 { sigma } => write!(f, "H1^{}", sign(*sigma)),
            ArcTag::H2 => write!(f, "H2"),
            ArcTag::H3 { sigma } => write!(f, "H3^{}", sign(*sigma)),
        }
    }
}

/// A zero of `ψ∘ξ` classified as belonging to an arc end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointZero {
    pub t: f64,
    pub arc: usize,
}

/// Interior zeros of `ψ∘ξ` on the bang arcs and the induced sign sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroStructure {
    pub s1: Vec<f64>,
    pub s3: Vec<f64>,
    pub a0: i8,
    pub a2: i8,
    /// `σ₀ᵢ = a₀(−1)^i` for the sub-arcs `i = 1..n₁+1` of the first arc.
    pub sigma0: Vec<i8>,
    /// `σ₂ᵢ = a₂(−1)^i` for the sub-arcs `i = 1..n₃+1` of the last arc.
    pub sigma2: Vec<i8>,
    pub endpoint_zeros: Vec<EndpointZero>,
    /// Crossings on the zero-control arc (not sub-arc boundaries).
    pub zero_arc_crossings: Vec<f64>,
    /// Midpoint signs of ψ∘ξ follow the alternation `a(−1)^{i−1}`.
    pub alternation_ok: bool,
}

impl ZeroStructure {
    pub fn n1(&self) -> usize {
        self.s1.len()
    }

    pub fn n3(&self) -> usize {
        self.s3.len()
    }
}

/// One smooth piece of the extremal, integrated under a single Hamiltonian.
#[derive(Debug, Clone)]
pub struct SubArc {
    pub tag: ArcTag,
    pub t0: f64,
    pub t1: f64,
    /// Phase points `[x; p]`.
    pub trajectory: Trajectory,
}

/// State–costate solution on `[0, T]` with per-piece Hamiltonian labels.
#[derive(Debug, Clone)]
pub struct ExtremalPath {
    pub n: usize,
    pub schedule: ReferenceSchedule,
    pub pieces: Vec<SubArc>,
    pub zero_structure: ZeroStructure,
    pub warnings: Vec<String>,
}

impl ExtremalPath {
    fn piece_index(&self, t: f64) -> usize {
        self.pieces.iter().position(|p| t <= p.t1).unwrap_or(self.pieces.len() - 1)
    }

    /// `[x; p]` at `t`; at a piece boundary the left piece is used.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        self.pieces[self.piece_index(t)].trajectory.dense_eval(t)
    }

    pub fn state(&self, t: f64) -> StatePoint {
        self.eval(t).rows(0, self.n).into_owned()
    }

    pub fn costate(&self, t: f64) -> Covector {
        self.eval(t).rows(self.n, self.n).into_owned()
    }

    pub fn tag_at(&self, t: f64) -> ArcTag {
        self.pieces[self.piece_index(t)].tag
    }

    fn arc_end(&self, arc: usize) -> DVector<f64> {
        let piece = self.pieces.iter().rev().find(|p| p.tag.arc() == arc).expect("every arc has a piece");
        piece.trajectory.last().clone()
    }

    /// `ℓ̂₁ = λ̂(τ̂₁)` as `[x; p]`.
    pub fn ell1(&self) -> DVector<f64> {
        self.arc_end(1)
    }

    /// `ℓ̂₂ = λ̂(τ̂₂)`.
    pub fn ell2(&self) -> DVector<f64> {
        self.arc_end(2)
    }

    /// `ℓ̂_T = λ̂(T)`.
    pub fn ell_t(&self) -> DVector<f64> {
        self.pieces.last().unwrap().trajectory.last().clone()
    }

    /// Tag active just before `τ̂₁`.
    pub fn last_tag_arc1(&self) -> ArcTag {
        self.pieces.iter().rev().find(|p| p.tag.arc() == 1).unwrap().tag
    }

    /// Tag active just after `τ̂₂`.
    pub fn first_tag_arc3(&self) -> ArcTag {
        self.pieces.iter().find(|p| p.tag.arc() == 3).unwrap().tag
    }

    pub fn hamiltonian(&self, problem: &ProblemDefinition, tag: ArcTag) -> AffineHamiltonian {
        problem.hamiltonian(self.schedule.control(tag.arc()), tag.sigma())
    }

    /// Largest variation of the active Hamiltonian along any piece, relative to `max(|H|, 1)`.
    pub fn hamiltonian_drift(&self, problem: &ProblemDefinition) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for piece in &self.pieces {
            let ham = self.hamiltonian(problem, piece.tag);
            let value = |y: &DVector<f64>| {
                let x = y.rows(0, n).into_owned();
                let p = y.rows(n, n).into_owned();
                ham.value(problem.psi.as_ref(), &p, &x)
            };
            let h0 = value(piece.trajectory.first());
            for y in &piece.trajectory.states {
                worst = worst.max((value(y) - h0).abs() / h0.abs().max(1.0));
            }
        }
        worst
    }

    /// Dense samples `(t, [x; p], tag)`, `per_piece` points on each piece.
    pub fn sample(&self, per_piece: usize) -> Vec<(f64, DVector<f64>, ArcTag)> {
        let mut out = Vec::new();
        for piece in &self.pieces {
            for (t, y) in piece.trajectory.sample(per_piece.max(2)) {
                out.push((t, y, piece.tag));
            }
        }
        out
    }

    /// CSV with header `t, x1..xn, p1..pn, tag`.
    pub fn write_csv<W: Write>(&self, writer: W, per_piece: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        header.extend((1..=self.n).map(|i| format!("p{i}")));
        header.push("tag".into());
        w.write_record(&header)?;
        for (t, y, tag) in self.sample(per_piece) {
            let mut row = vec![format!("{t:.15e}")];
            row.extend(y.iter().map(|v| format!("{v:.15e}")));
            row.push(tag.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sign_of(v: f64, tol: f64) -> i8 {
    if v > tol {
        1
    } else if v < -tol {
        -1
    } else {
        0
    }
}

struct ArcResult {
    pieces: Vec<SubArc>,
    roots: Vec<f64>,
    signs: Vec<i8>,
    endpoint_values: Vec<f64>,
}

/// Integrates arc `arc` from the phase point `(x, p)`, splitting bang arcs at the zeros of ψ∘ξ.
fn integrate_arc(
    problem: &ProblemDefinition,
    schedule: &ReferenceSchedule,
    arc: usize,
    x: &StatePoint,
    p: &Covector,
    settings: &Settings,
) -> Result<ArcResult> {
    let n = problem.n;
    let (a, b) = schedule.arc_interval(arc);
    let u = schedule.control(arc);
    let field = problem.arc_field(u);
    let psi = problem.psi.clone();
    let tol = settings.tolerances();
    let window = settings.exclusion_rel * schedule.t_final;

    let (state_traj, _) = integrate(&FieldSystem { field: field.as_ref() }, a, x, b, &[], &tol)?;
    let scan = locate_zeros(&state_traj, &|_, y: &DVector<f64>| psi.value(y), window, settings.zero_value_tol)?;

    for &r in &scan.endpoint_roots {
        let near_start = r - a < window;
        let switch = match (arc, near_start) {
            (1, false) => Some(1),
            (2, true) => Some(1),
            (2, false) => Some(2),
            (3, true) => Some(2),
            _ => None,
        };
        if let Some(switch) = switch {
            return Err(Error::SsViolation { switch, t: r });
        }
    }

    let mut bounds = vec![a];
    if arc != 2 {
        for &s in &scan.interior {
            let rate = lie_derivative(field.as_ref(), psi.as_ref(), &state_traj.dense_eval(s))?;
            if rate.abs() < settings.tangency_tol {
                return Err(Error::NtViolation { t: s, rate });
            }
            bounds.push(s);
        }
    }
    bounds.push(b);

    let mut pieces = Vec::new();
    let mut signs = Vec::new();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, n).copy_from(p);
    for w in bounds.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let sign = sign_of(psi.value(&state_traj.dense_eval(0.5 * (t0 + t1))), settings.zero_value_tol);
        signs.push(sign);
        let tag = ArcTag::with_sigma(arc, -sign);
        let ham = problem.hamiltonian(u, tag.sigma());
        let sys = HamiltonianSystem { ham: &ham, psi: psi.as_ref() };
        let (traj, _) = integrate(&sys, t0, &y, t1, &[], &tol)?;
        y = traj.last().clone();
        pieces.push(SubArc { tag, t0, t1, trajectory: traj });
    }
    let mut endpoint_values = Vec::new();
    for &t in &scan.endpoint {
        endpoint_values.push(t);
    }
    Ok(ArcResult { pieces, roots: scan.interior, signs, endpoint_values })
}

/// Integrates state and costate under the piecewise Hamiltonians, recording the zero structure.
pub fn integrate_reference_extremal(
    problem: &ProblemDefinition,
    schedule: &ReferenceSchedule,
    settings: &Settings,
) -> Result<ExtremalPath> {
    schedule.validate(problem.n)?;
    let n = problem.n;
    let mut x = schedule.x0.clone();
    let mut p = schedule.lambda0.clone();
    let mut results = Vec::new();
    for arc in 1..=3 {
        let res = integrate_arc(problem, schedule, arc, &x, &p, settings)?;
        let end = res.pieces.last().unwrap().trajectory.last().clone();
        x = end.rows(0, n).into_owned();
        p = end.rows(n, n).into_owned();
        results.push(res);
    }

    let alternates = |signs: &[i8]| {
        let first = signs[0];
        signs.iter().enumerate().all(|(i, &s)| s == if i % 2 == 0 { first } else { -first })
    };
    let (r1, r2, r3) = (&results[0], &results[1], &results[2]);
    let a0 = r1.signs[0];
    let a2 = r3.signs[0];
    let sigma0 = (1..=r1.signs.len()).map(|i| if i % 2 == 0 { a0 } else { -a0 }).collect();
    let sigma2 = (1..=r3.signs.len()).map(|i| if i % 2 == 0 { a2 } else { -a2 }).collect();
    let mut endpoint_zeros = Vec::new();
    for (k, res) in results.iter().enumerate() {
        for &t in &res.endpoint_values {
            endpoint_zeros.push(EndpointZero { t, arc: k + 1 });
        }
    }
    let zero_structure = ZeroStructure {
        s1: r1.roots.clone(),
        s3: r3.roots.clone(),
        a0,
        a2,
        sigma0,
        sigma2,
        endpoint_zeros,
        zero_arc_crossings: r2.roots.clone(),
        alternation_ok: alternates(&r1.signs) && alternates(&r3.signs) && a0 != 0 && a2 != 0,
    };

    let mut warnings = Vec::new();
    if !zero_structure.zero_arc_crossings.is_empty() {
        warnings.push(format!("psi changes sign on the zero-control arc at {:?}", zero_structure.zero_arc_crossings));
    }
    let pieces = results.into_iter().flat_map(|r| r.pieces).collect();
    Ok(ExtremalPath { n, schedule: schedule.clone(), pieces, zero_structure, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::vehicle_problem;
    use crate::vehicle_bench::{oracle, VehicleInstance};

    fn vehicle_path(alpha: f64, x: f64, t: f64) -> (ProblemDefinition, ExtremalPath) {
        let inst = VehicleInstance { alpha, x_target: x, t_final: t };
        let o = oracle(&inst).unwrap();
        let problem = vehicle_problem(alpha);
        let path = integrate_reference_extremal(&problem, &o.schedule(&inst), &Settings::default()).unwrap();
        (problem, path)
    }

    #[test]
    fn vehicle_structure() {
        let (_, path) = vehicle_path(1.0, 1.0, 2.3);
        let z = &path.zero_structure;
        assert_eq!((z.n1(), z.n3(), z.a0, z.a2), (0, 0, 1, 1));
        assert!(z.alternation_ok);
        let ends: Vec<f64> = z.endpoint_zeros.iter().map(|e| e.t).collect();
        assert_eq!(ends, vec![0.0, 2.3]);
        assert_eq!(path.pieces.len(), 3);
        assert_eq!(path.pieces[0].tag, ArcTag::H1 { sigma: -1 });
        assert_eq!(path.pieces[2].tag, ArcTag::H3 { sigma: -1 });
    }

    #[test]
    fn starts_at_initial_data() {
        let (_, path) = vehicle_path(1.0, 1.0, 2.3);
        let y = path.eval(0.0);
        assert_eq!(y.rows(0, 2).into_owned(), path.schedule.x0);
        assert_eq!(y.rows(2, 2).into_owned(), path.schedule.lambda0);
    }

    #[test]
    fn vehicle_p1_is_constant() {
        let (_, path) = vehicle_path(1.0, 1.0, 2.3);
        let p10 = path.schedule.lambda0[0];
        for (_, y, _) in path.sample(50) {
            assert!((y[2] - p10).abs() < 1e-9);
        }
    }

    #[test]
    fn hamiltonians_are_conserved() {
        let (problem, path) = vehicle_path(1.0, 1.0, 2.3);
        assert!(path.hamiltonian_drift(&problem) < 1e-8);
    }

    #[test]
    fn state_matches_closed_form_at_switches() {
        let (_, path) = vehicle_path(1.0, 1.0, 2.3);
        let s = &path.schedule;
        let x2_tau1 = 1.0 - (-s.tau1).exp();
        let x2_tau2 = (-s.tau2).exp() * (s.tau1.exp() - 1.0);
        assert!((path.ell1()[1] - x2_tau1).abs() < 1e-10);
        assert!((path.ell2()[1] - x2_tau2).abs() < 1e-10);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let inst = VehicleInstance { alpha: 1.0, x_target: 1.0, t_final: 2.3 };
        let mut s = oracle(&inst).unwrap().schedule(&inst);
        s.tau2 = s.tau1;
        let problem = vehicle_problem(1.0);
        assert!(matches!(
            integrate_reference_extremal(&problem, &s, &Settings::default()),
            Err(Error::InvalidSchedule(_))
        ));
        s.tau2 = 2.0;
        s.u1 = 0.5;
        assert!(s.validate(2).is_err());
    }

    #[test]
    fn csv_has_expected_header() {
        let (_, path) = vehicle_path(1.0, 1.0, 2.3);
        let mut buf = Vec::new();
        path.write_csv(&mut buf, 5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,p1,p2,tag");
        assert_eq!(text.lines().count(), 16);
        assert!(text.contains("H2"));
    }
}
