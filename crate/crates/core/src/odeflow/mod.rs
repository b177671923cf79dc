//! Adaptive integration with dense output, event location and variational equations.

mod dop853;
mod events;
mod systems;
mod zeros;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{StatePoint, VectorField};

pub use events::{brent, Direction, EventHit, EventSpec};
pub use systems::{
    pack_state_matrix, unpack_state_matrix, FieldSystem, FnSystem, HamiltonianSystem, HamiltonianVariational,
    StateVariational,
};
pub use zeros::{locate_zeros, ZeroScan};

/// Right-hand side `ẏ = F(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-10, atol: 1e-12, h_max: f64::INFINITY, max_steps: 200_000 }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Tolerances { rtol, atol, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    cont: [DVector<f64>; 8],
}

/// Accepted-step grid, stored states and a piecewise dense interpolant.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn single_point(t: f64, y: DVector<f64>) -> Self {
        Trajectory { grid: vec![t], states: vec![y], segments: Vec::new() }
    }

    pub fn t0(&self) -> f64 {
        self.grid[0]
    }

    pub fn t1(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Interpolated point; `t` is clamped to `[t0, t1]`.
    pub fn dense_eval(&self, t: f64) -> DVector<f64> {
        if let Ok(i) = self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            return self.states[i].clone();
        }
        if self.segments.is_empty() || t <= self.t0() {
            return self.states[0].clone();
        }
        if t >= self.t1() {
            return self.last().clone();
        }
        let idx = self.segments.partition_point(|s| s.t0 <= t).saturating_sub(1);
        let seg = &self.segments[idx];
        dop853::dense_eval(&seg.cont, (t - seg.t0) / seg.h)
    }

    /// `count` equally spaced samples including both ends.
    pub fn sample(&self, count: usize) -> Vec<(f64, DVector<f64>)> {
        let (a, b) = (self.t0(), self.t1());
        if count < 2 || b == a {
            return vec![(a, self.states[0].clone())];
        }
        (0..count)
            .map(|k| {
                let t = if k + 1 == count { b } else { a + (b - a) * k as f64 / (count - 1) as f64 };
                (t, self.dense_eval(t))
            })
            .collect()
    }

    /// Step boundaries of segment `i`.
    pub(crate) fn segment_bounds(&self) -> Vec<(f64, f64)> {
        self.grid.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    span: f64,
    tol: &Tolerances,
) -> f64 {
    let sk = y0.map(|v| tol.atol + tol.rtol * v.abs());
    let dnf: f64 = f0.iter().zip(sk.iter()).map(|(f, s)| (f / s).powi(2)).sum();
    let dny: f64 = y0.iter().zip(sk.iter()).map(|(y, s)| (y / s).powi(2)).sum();
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
    h = h.min(tol.h_max).min(span);
    let y1 = y0 + f0 * h;
    let f1 = sys.rhs(t0 + h, &y1);
    let der2: f64 = (&f1 - f0).iter().zip(sk.iter()).map(|(d, s)| (d / s).powi(2)).sum::<f64>().sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / 8.0) };
    (100.0 * h).min(h1).min(tol.h_max).min(span)
}

/// Sub-intervals of each accepted step on which event functions are sign-checked.
const EVENT_SUBDIVISIONS: usize = 16;

/// Integrate `sys` from `(t0, y0)` to `t1` with adaptive steps, locating `events` on the dense output.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    events: &[EventSpec<'_>],
    tol: &Tolerances,
) -> Result<(Trajectory, Vec<EventHit>)> {
    if !(t1 >= t0) {
        return Err(Error::InvalidSchedule(format!("integration interval [{t0}, {t1}] is reversed")));
    }
    if t1 == t0 {
        return Ok((Trajectory::single_point(t0, y0.clone()), Vec::new()));
    }
    let span = t1 - t0;
    let tiny = 1e-14 * t0.abs().max(t1.abs()).max(1.0);
    let mut traj = Trajectory { grid: vec![t0], states: vec![y0.clone()], segments: Vec::new() };
    let mut hits = Vec::new();
    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = sys.rhs(t, &y);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite derivative at t = {t}")));
    }
    let mut h = initial_step(sys, t, &y, &k1, span, tol);
    let mut last_rejected = false;
    let mut steps = 0usize;
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.function)(t, &y)).collect();
    let mut first = true;

    while t < t1 {
        steps += 1;
        if steps > tol.max_steps {
            return Err(Error::TooManySteps { t });
        }
        let remaining = t1 - t;
        let mut h_try = h.min(remaining);
        if t + 1.01 * h_try >= t1 {
            h_try = remaining;
        }
        if h_try < tiny {
            if remaining < 4.0 * tiny {
                *traj.grid.last_mut().unwrap() = t1;
                break;
            }
            return Err(Error::StepUnderflow { t });
        }
        let trial = dop853::trial_step(sys, t, &y, &k1, h_try, tol.rtol, tol.atol);
        let err = if trial.err.is_finite() { trial.err } else { 1e10 };
        let fac11 = err.powf(1.0 / 8.0);
        if err <= 1.0 {
            let k13 = sys.rhs(t + h_try, &trial.y_new);
            if k13.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation(format!("non-finite derivative at t = {}", t + h_try)));
            }
            let cont = dop853::dense_coefficients(sys, t, &y, &trial.y_new, h_try, &trial.k, &k13);
            let seg = Segment { t0: t, h: h_try, cont };
            let t_new = if h_try == remaining { t1 } else { t + h_try };

            let mut terminal_at: Option<(f64, DVector<f64>)> = None;
            if !events.is_empty() {
                let guard = if first { (1e-12 * span.max(1.0)).max(4.0 * tiny).min(0.5 * h_try) } else { 0.0 };
                let mut step_hits = Vec::new();
                for (i, ev) in events.iter().enumerate() {
                    let ga = if first {
                        let s = guard / h_try;
                        (ev.function)(t + guard, &dop853::dense_eval(&seg.cont, s))
                    } else {
                        g_prev[i]
                    };
                    let gb = (ev.function)(t_new, &trial.y_new);
                    g_prev[i] = gb;
                    if ga == 0.0 {
                        continue;
                    }
                    let g = |tt: f64| (ev.function)(tt, &dop853::dense_eval(&seg.cont, (tt - t) / h_try));
                    // interior samples catch pairs of roots inside one step
                    let (a0, width) = (t + guard, t_new - t - guard);
                    let mut prev = (a0, ga);
                    for k in 1..=EVENT_SUBDIVISIONS {
                        let next = if k == EVENT_SUBDIVISIONS {
                            (t_new, gb)
                        } else {
                            let tk = a0 + width * k as f64 / EVENT_SUBDIVISIONS as f64;
                            (tk, g(tk))
                        };
                        if prev.1 != 0.0 && ev.direction.matches(prev.1, next.1) {
                            let root = if next.1 == 0.0 {
                                next.0
                            } else {
                                brent(g, prev.0, next.0, prev.1, next.1, ev.tolerance, 200)
                                    .ok_or(Error::EventRefinement { t: t_new })?
                            };
                            step_hits.push((root, i));
                            break;
                        }
                        prev = next;
                    }
                }
                step_hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for (root, i) in step_hits {
                    if matches!(&terminal_at, Some((tt, _)) if root > *tt) {
                        break;
                    }
                    let state = dop853::dense_eval(&seg.cont, (root - t) / h_try);
                    if events[i].terminal && terminal_at.is_none() {
                        terminal_at = Some((root, state.clone()));
                    }
                    hits.push(EventHit { index: i, t: root, state });
                }
            }
            first = false;
            traj.segments.push(seg);
            if let Some((te, ye)) = terminal_at {
                if te > t {
                    traj.grid.push(te);
                    traj.states.push(ye);
                } else {
                    traj.segments.pop();
                }
                return Ok((traj, hits));
            }
            t = t_new;
            y = trial.y_new;
            k1 = k13;
            traj.grid.push(t);
            traj.states.push(y.clone());
            let fac = (fac11 / 0.9).clamp(1.0 / 6.0, 3.0);
            let mut h_new = h_try / fac;
            if last_rejected {
                h_new = h_new.min(h_try);
            }
            last_rejected = false;
            h = h_new.min(tol.h_max);
        } else {
            h = h_try / (fac11 / 0.9).min(3.0);
            last_rejected = true;
        }
    }
    Ok((traj, hits))
}

/// Fixed-step replay of DOP853 on a prescribed grid (no error control).
pub fn integrate_on_grid<S: OdeSystem + ?Sized>(sys: &S, y0: &DVector<f64>, grid: &[f64]) -> Result<Trajectory> {
    if grid.is_empty() {
        return Err(Error::InvalidSchedule("empty replay grid".into()));
    }
    let mut traj = Trajectory { grid: vec![grid[0]], states: vec![y0.clone()], segments: Vec::new() };
    let mut y = y0.clone();
    let mut k1 = sys.rhs(grid[0], &y);
    for w in grid.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        if !(h > 0.0) {
            return Err(Error::InvalidSchedule("replay grid is not strictly increasing".into()));
        }
        let trial = dop853::trial_step(sys, t, &y, &k1, h, 1.0, 1.0);
        let k13 = sys.rhs(w[1], &trial.y_new);
        let cont = dop853::dense_coefficients(sys, t, &y, &trial.y_new, h, &trial.k, &k13);
        traj.segments.push(Segment { t0: t, h, cont });
        y = trial.y_new;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("non-finite state at t = {}", w[1])));
        }
        k1 = k13;
        traj.grid.push(w[1]);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// Linearized flow `M(t₁)` of `ẋ = f(x)` about the solution from `basepoint`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLinearization {
    pub matrix: DMatrix<f64>,
    pub basepoint: StatePoint,
    pub t0: f64,
    pub t1: f64,
}

/// Integrates `Ṁ = Df(x(t)) M`, `M(t₀) = I` alongside the state.
pub fn variational_flow(
    field: &dyn VectorField,
    x0: &StatePoint,
    t0: f64,
    t1: f64,
    tol: &Tolerances,
) -> Result<FlowLinearization> {
    let n = x0.len();
    let sys = StateVariational { field };
    let y0 = pack_state_matrix(x0, &DMatrix::identity(n, n));
    let (traj, _) = integrate(&sys, t0, &y0, t1, &[], tol)?;
    let (_, m) = unpack_state_matrix(traj.last(), n);
    Ok(FlowLinearization { matrix: m, basepoint: x0.clone(), t0, t1 })
}
