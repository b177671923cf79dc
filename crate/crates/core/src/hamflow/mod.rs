//! Maximized Hamiltonian flow `ℋ_t` of the bang–zero–bang structure, differentials of its
//! switching times, and the Clarke invertibility test at the two switches.

mod clarke;
mod differentials;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremal::{ArcTag, SubArc};
use crate::geometry::{lie_derivative, ProblemDefinition};
use crate::odeflow::{integrate, Direction, EventSpec, HamiltonianSystem};
use crate::settings::Settings;

pub use clarke::{
    clarke_invertibility, clarke_parts, clarke_scan, ClarkeParts, ClarkePoint, ClarkeReport, ClarkeSweepPoint,
};
pub use differentials::{switch_time_differentials, CorrectionSign, FdMethod, SwitchDifferentials};

/// Switching events met by the maximized flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowLog {
    pub s1: Vec<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub s3: Vec<f64>,
    /// Sign of ψ on the first sub-arc of the first and last arc.
    pub a0: i8,
    pub a2: i8,
}

#[derive(Debug, Clone)]
pub struct MaxFlowState {
    /// `ℋ_t(ℓ)` as `[x; p]`.
    pub point: DVector<f64>,
    pub tag: ArcTag,
    pub log: FlowLog,
    pub pieces: Vec<SubArc>,
}

fn split(y: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (y.rows(0, n).into_owned(), y.rows(n, n).into_owned())
}

/// Sign of ψ at `x`, or of its rate along `u` when `x` lies on `ψ = 0`.
fn start_sign(problem: &ProblemDefinition, u: f64, x: &DVector<f64>, settings: &Settings) -> Result<i8> {
    let v = problem.psi.value(x);
    let s = if v.abs() > settings.zero_value_tol {
        v
    } else {
        lie_derivative(problem.arc_field(u).as_ref(), problem.psi.as_ref(), x)?
    };
    if s == 0.0 {
        return Err(Error::NtViolation { t: 0.0, rate: 0.0 });
    }
    Ok(if s > 0.0 { 1 } else { -1 })
}

const MAX_FLOW_STEPS: f64 = 200.0;

enum Outcome {
    Cross,
    Switch,
    Guard(&'static str),
    End,
}

/// Integrates `ℋ` from `ℓ = [x; p]` at time 0 up to `t_end`, following the structure
/// bang(u₁) – zero – bang(u₃) with σ flips at the zeros of ψ on the bang arcs.
pub fn maximized_flow(
    problem: &ProblemDefinition,
    u1: f64,
    u3: f64,
    ell: &DVector<f64>,
    t_end: f64,
    settings: &Settings,
) -> Result<MaxFlowState> {
    let n = problem.n;
    if ell.len() != 2 * n {
        return Err(Error::Dimension(format!("phase point has length {}, expected {}", ell.len(), 2 * n)));
    }
    let mut tol = settings.tight_tolerances();
    // short steps keep nearly tangential switches resolvable by the event sampling
    tol.h_max = tol.h_max.min(t_end.abs().max(1e-3) / MAX_FLOW_STEPS);
    let etol = settings.event_tol_rel * t_end.abs().max(1.0);
    let psi = problem.psi.clone();
    let f1 = problem.f1.clone();
    let big_f1 = move |y: &DVector<f64>| {
        let (x, p) = split(y, n);
        p.dot(&f1.value(&x))
    };

    let (x0, _) = split(ell, n);
    let mut arc = 1usize;
    let mut sign = start_sign(problem, u1, &x0, settings)?;
    let mut log = FlowLog { s1: Vec::new(), tau1: None, tau2: None, s3: Vec::new(), a0: sign, a2: 0 };
    let mut t = 0.0;
    let mut y = ell.clone();
    let mut pieces = Vec::new();

    while t < t_end {
        let u = match arc {
            1 => u1,
            2 => 0.0,
            _ => u3,
        };
        let tag = match arc {
            1 => ArcTag::H1 { sigma: -sign },
            2 => ArcTag::H2,
            _ => ArcTag::H3 { sigma: -sign },
        };
        let ham = problem.hamiltonian(u, tag.sigma());
        let sys = HamiltonianSystem { ham: &ham, psi: psi.as_ref() };
        let ps = psi.clone();
        let psi_of = move |y: &DVector<f64>| ps.value(&y.rows(0, n).into_owned());
        // next crossing of ψ goes against the current sign
        let cross_dir = if sign > 0 { Direction::Down } else { Direction::Up };
        let mut events: Vec<(EventSpec, Outcome)> = Vec::new();
        match arc {
            1 => {
                events.push((EventSpec::new(|_, y| psi_of(y), cross_dir, true, etol), Outcome::Cross));
                events.push((EventSpec::new(|_, y| psi_of(y).abs() - u1 * big_f1(y), Direction::Up, true, etol), Outcome::Switch));
                events.push((
                    EventSpec::new(|_, y| -u1 * big_f1(y) - psi_of(y).abs(), Direction::Up, true, etol),
                    Outcome::Guard("opposite bang on the first arc"),
                ));
            }
            2 => {
                events.push((EventSpec::new(|_, y| u3 * big_f1(y) - psi_of(y).abs(), Direction::Up, true, etol), Outcome::Switch));
                if u1 != u3 {
                    events.push((
                        EventSpec::new(|_, y| u1 * big_f1(y) - psi_of(y).abs(), Direction::Up, true, etol),
                        Outcome::Guard("return to the first bang on the zero arc"),
                    ));
                }
            }
            _ => {
                events.push((EventSpec::new(|_, y| psi_of(y), cross_dir, true, etol), Outcome::Cross));
                events.push((
                    EventSpec::new(|_, y| u3 * big_f1(y) - psi_of(y).abs(), Direction::Down, true, etol),
                    Outcome::Guard("exit from the last bang"),
                ));
                events.push((
                    EventSpec::new(|_, y| -u3 * big_f1(y) - psi_of(y).abs(), Direction::Up, true, etol),
                    Outcome::Guard("opposite bang on the last arc"),
                ));
            }
        }
        let (specs, outcomes): (Vec<EventSpec>, Vec<Outcome>) = events.into_iter().unzip();
        let (traj, hits) = integrate(&sys, t, &y, t_end, &specs, &tol)?;
        let t1 = traj.t1();
        y = traj.last().clone();
        pieces.push(SubArc { tag, t0: t, t1, trajectory: traj });
        let outcome = hits.first().map(|h| &outcomes[h.index]).unwrap_or(&Outcome::End);
        t = t1;
        match outcome {
            Outcome::End => break,
            Outcome::Guard(what) => return Err(Error::StructureMismatch(format!("{what} at t = {t}"))),
            Outcome::Cross => {
                sign = -sign;
                if arc == 1 {
                    log.s1.push(t);
                } else {
                    log.s3.push(t);
                }
            }
            Outcome::Switch => {
                if arc == 1 {
                    log.tau1 = Some(t);
                    arc = 2;
                } else {
                    log.tau2 = Some(t);
                    arc = 3;
                    let (x, _) = split(&y, n);
                    sign = start_sign(problem, u3, &x, settings)?;
                    log.a2 = sign;
                }
            }
        }
    }
    let tag = pieces.last().map(|p| p.tag).unwrap_or(ArcTag::H1 { sigma: -sign });
    Ok(MaxFlowState { point: y, tag, log, pieces })
}
