use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ArcTag, ExtremalPath};
use crate::error::Result;
use crate::geometry::{lie_derivative, poisson_bracket, Hamiltonian, ProblemDefinition};
use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AssumptionId {
    #[serde(rename = "NT")]
    Nt,
    #[serde(rename = "SS")]
    Ss,
    #[serde(rename = "PMP-boundary")]
    PmpBoundary,
    #[serde(rename = "RA")]
    Ra,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "SecondVar")]
    SecondVar,
}

impl AssumptionId {
    pub fn label(&self) -> &'static str {
        match self {
            AssumptionId::Nt => "NT",
            AssumptionId::Ss => "SS",
            AssumptionId::PmpBoundary => "PMP-boundary",
            AssumptionId::Ra => "RA",
            AssumptionId::Rs => "RS",
            AssumptionId::SecondVar => "SecondVar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Marginal,
    Fail,
}

impl Verdict {
    /// `pass` iff `margin > threshold`, `marginal` iff `0 < margin ≤ threshold`.
    pub fn from_margin(margin: f64, threshold: f64) -> Self {
        if margin > threshold {
            Verdict::Pass
        } else if margin > 0.0 {
            Verdict::Marginal
        } else {
            Verdict::Fail
        }
    }
}

/// Where the margin is attained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub point: Vec<f64>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub id: AssumptionId,
    pub verdict: Verdict,
    /// `null` in JSON when the minimum is vacuous.
    pub margin: f64,
    pub witness: Option<Witness>,
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn new(id: AssumptionId, margin: f64, threshold: f64) -> Self {
        AssumptionReport {
            id,
            verdict: Verdict::from_margin(margin, threshold),
            margin,
            witness: None,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn witness(mut self, path: &ExtremalPath, t: f64, label: impl Into<String>) -> Self {
        self.witness = Some(Witness { t, point: path.eval(t).iter().copied().collect(), label: label.into() });
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// `margin = tol − |ξ̂(T) − x̂_f|`; `tol = None` uses `boundary_tol · max(1, |x̂_f|)`.
pub fn check_boundary(path: &ExtremalPath, tol: Option<f64>, settings: &Settings) -> AssumptionReport {
    let xf = &path.schedule.xf;
    let tol = tol.unwrap_or(settings.boundary_tol * xf.norm().max(1.0));
    let t = path.schedule.t_final;
    let gap = (path.state(t) - xf).norm();
    let mut r = AssumptionReport::new(AssumptionId::PmpBoundary, tol - gap, 0.0).witness(path, t, "terminal state");
    r.details.insert("terminal_gap".into(), gap);
    r.details.insert("tolerance".into(), tol);
    r
}

/// Smallest `|L_h ψ|` over bang-arc crossings and endpoint zeros; zero-arc tangencies only warn.
pub fn check_nontangency(
    path: &ExtremalPath,
    problem: &ProblemDefinition,
    settings: &Settings,
) -> Result<AssumptionReport> {
    let z = &path.zero_structure;
    let s = &path.schedule;
    let mut candidates: Vec<(f64, usize, &str)> = Vec::new();
    candidates.extend(z.s1.iter().map(|&t| (t, 1, "crossing on arc 1")));
    candidates.extend(z.s3.iter().map(|&t| (t, 3, "crossing on arc 3")));
    for e in &z.endpoint_zeros {
        // zeros at the switches belong to the adjacent bang arc
        let arc = if e.arc == 2 { if e.t == s.tau1 { 1 } else { 3 } } else { e.arc };
        candidates.push((e.t, arc, "endpoint zero"));
    }

    let mut margin = f64::INFINITY;
    let mut best: Option<(f64, String)> = None;
    for (t, arc, label) in candidates {
        let field = problem.arc_field(s.control(arc));
        let rate = lie_derivative(field.as_ref(), problem.psi.as_ref(), &path.state(t))?.abs();
        if rate < margin {
            margin = rate;
            best = Some((t, format!("{label} (arc {arc})")));
        }
    }
    let mut r = AssumptionReport::new(AssumptionId::Nt, margin, settings.margin_threshold);
    if let Some((t, label)) = best {
        r = r.witness(path, t, label);
    }
    let h2 = problem.arc_field(0.0);
    for &t in &z.zero_arc_crossings {
        let rate = lie_derivative(h2.as_ref(), problem.psi.as_ref(), &path.state(t))?.abs();
        r.details.insert(format!("zero_arc_rate@{t:.9}"), rate);
        if rate <= settings.margin_threshold {
            r.notes.push(format!("warning: psi is tangent to zero on the zero-control arc at t = {t}"));
        }
    }
    r.notes.extend(path.warnings.iter().cloned());
    Ok(r)
}

/// `min(|ψ(ξ̂(τ̂₁))|, |ψ(ξ̂(τ̂₂))|)`.
pub fn check_switch_nonvanishing(path: &ExtremalPath, problem: &ProblemDefinition, settings: &Settings) -> AssumptionReport {
    let s = &path.schedule;
    let v1 = problem.psi.value(&path.state(s.tau1)).abs();
    let v2 = problem.psi.value(&path.state(s.tau2)).abs();
    let (margin, t) = if v1 <= v2 { (v1, s.tau1) } else { (v2, s.tau2) };
    let mut r = AssumptionReport::new(AssumptionId::Ss, margin, settings.margin_threshold).witness(path, t, "switch");
    r.details.insert("psi_at_tau1".into(), v1);
    r.details.insert("psi_at_tau2".into(), v2);
    r
}

/// The strict maximality slack at `t` for arc `arc`.
pub fn maximality_slack(path: &ExtremalPath, problem: &ProblemDefinition, arc: usize, t: f64) -> f64 {
    let y = path.eval(t);
    let n = path.n;
    let x = y.rows(0, n).into_owned();
    let p = y.rows(n, n).into_owned();
    let f1 = p.dot(&problem.f1.value(&x));
    let psi = problem.psi.value(&x).abs();
    match arc {
        1 => path.schedule.u1 * f1 - psi,
        2 => psi - f1.abs(),
        _ => path.schedule.u3 * f1 - psi,
    }
}

pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Minimum of the strict maximality slacks away from windows around the switches.
pub fn check_strict_maximality(path: &ExtremalPath, problem: &ProblemDefinition, settings: &Settings) -> AssumptionReport {
    let s = &path.schedule;
    let r = settings.ra_exclusion_rel * s.t_final;
    let ranges = [(1, 0.0, s.tau1 - r), (2, s.tau1 + r, s.tau2 - r), (3, s.tau2 + r, s.t_final)];
    let mut margin = f64::INFINITY;
    let mut at = (0.0, 1);
    let mut weak_ok = true;
    let mut details = BTreeMap::new();
    let mut notes = Vec::new();

    for &(arc, a, b) in &ranges {
        if b <= a {
            notes.push(format!("arc {arc} shorter than the exclusion windows; skipped"));
            continue;
        }
        let slack = |t: f64| maximality_slack(path, problem, arc, t);
        let m = settings.ra_samples_per_arc;
        let mut ts: Vec<f64> = (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect();
        ts.extend(path.pieces.iter().flat_map(|p| p.trajectory.grid.iter().copied()).filter(|&t| t > a && t < b));
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let vals: Vec<f64> = ts.iter().map(|&t| slack(t)).collect();
        weak_ok &= vals.iter().all(|&v| v >= -settings.margin_threshold);
        let (imin, _) = vals.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let lo = ts[imin.saturating_sub(1)];
        let hi = ts[(imin + 1).min(ts.len() - 1)];
        let (mut tm, mut vm) = (ts[imin], vals[imin]);
        if hi > lo {
            let (tr, vr) = golden_min(slack, lo, hi, 1e-10 * s.t_final);
            if vr < vm {
                tm = tr;
                vm = vr;
            }
        }
        details.insert(format!("arc{arc}_min"), vm);
        if vm < margin {
            margin = vm;
            at = (tm, arc);
        }
    }

    // linear decay of the slack into each switch and its extrapolated value there
    for (name, arc, t_edge, dir) in [
        ("tau1_left", 1, s.tau1 - r, -1.0),
        ("tau1_right", 2, s.tau1 + r, 1.0),
        ("tau2_left", 2, s.tau2 - r, -1.0),
        ("tau2_right", 3, s.tau2 + r, 1.0),
    ] {
        let m1 = maximality_slack(path, problem, arc, t_edge);
        let m2 = maximality_slack(path, problem, arc, t_edge + dir * r);
        let rate = (m2 - m1) / r;
        details.insert(format!("rate_{name}"), rate);
        details.insert(format!("extrapolated_{name}"), m1 - rate * r);
    }
    details.insert("window_radius".into(), r);

    let mut rep = AssumptionReport::new(AssumptionId::Ra, margin, settings.margin_threshold);
    if margin.is_finite() {
        rep = rep.witness(path, at.0, format!("arc {}", at.1));
    }
    rep.details = details;
    rep.details.insert("weak_conditions_hold".into(), if weak_ok { 1.0 } else { 0.0 });
    rep.notes = notes;
    rep
}

/// `{H₁^σ, H₂}(ℓ̂₁)` and `{H₂, H₃^σ}(ℓ̂₂)` with the adjacent sub-arc signs.
pub fn switching_brackets(path: &ExtremalPath, problem: &ProblemDefinition) -> Result<(f64, f64)> {
    let n = path.n;
    let split = |y: DVector<f64>| (y.rows(0, n).into_owned(), y.rows(n, n).into_owned());
    let h = |tag: ArcTag| Hamiltonian::Affine(path.hamiltonian(problem, tag));
    let psi = problem.psi.as_ref();
    let (x1, p1) = split(path.ell1());
    let (x2, p2) = split(path.ell2());
    let b1 = poisson_bracket(&h(path.last_tag_arc1()), &h(ArcTag::H2), psi, &p1, &x1)?;
    let b2 = poisson_bracket(&h(ArcTag::H2), &h(path.first_tag_arc3()), psi, &p2, &x2)?;
    Ok((b1, b2))
}

pub fn check_strict_switching(
    path: &ExtremalPath,
    problem: &ProblemDefinition,
    settings: &Settings,
) -> Result<AssumptionReport> {
    let (b1, b2) = switching_brackets(path, problem)?;
    let s = &path.schedule;
    let (margin, t, label) = if b1 <= b2 { (b1, s.tau1, "{H1,H2} at tau1") } else { (b2, s.tau2, "{H2,H3} at tau2") };
    let mut r = AssumptionReport::new(AssumptionId::Rs, margin, settings.margin_threshold).witness(path, t, label);
    r.details.insert("bracket_h1_h2".into(), b1);
    r.details.insert("bracket_h2_h3".into(), b2);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::integrate_reference_extremal;
    use crate::geometry::{FnField, FnScalar};
    use crate::problems::vehicle_problem;
    use crate::vehicle_bench::{oracle, VehicleInstance};
    use nalgebra::dvector;
    use std::sync::Arc;

    fn setup(t: f64) -> (ProblemDefinition, ExtremalPath, Settings) {
        let inst = VehicleInstance { alpha: 1.0, x_target: 1.0, t_final: t };
        let o = oracle(&inst).unwrap();
        let problem = vehicle_problem(1.0);
        let settings = Settings::default();
        let path = integrate_reference_extremal(&problem, &o.schedule(&inst), &settings).unwrap();
        (problem, path, settings)
    }

    #[test]
    fn verdict_thresholds() {
        assert_eq!(Verdict::from_margin(1.0, 1e-7), Verdict::Pass);
        assert_eq!(Verdict::from_margin(1e-8, 1e-7), Verdict::Marginal);
        assert_eq!(Verdict::from_margin(0.0, 1e-7), Verdict::Fail);
        assert_eq!(Verdict::from_margin(f64::INFINITY, 1e-7), Verdict::Pass);
    }

    #[test]
    fn vehicle_nontangency_margin_is_one() {
        let (problem, path, settings) = setup(2.3);
        let r = check_nontangency(&path, &problem, &settings).unwrap();
        // |1 − αx₂| at t = 0 and |−1 − αx₂| at t = T with x₂ = 0
        assert!((r.margin - 1.0).abs() < 1e-8, "{}", r.margin);
        assert!(r.passed());
    }

    #[test]
    fn vehicle_switch_values_match_closed_form() {
        let (problem, path, settings) = setup(2.3);
        let r = check_switch_nonvanishing(&path, &problem, &settings);
        let s = &path.schedule;
        assert!((r.details["psi_at_tau1"] - (1.0 - (-s.tau1).exp())).abs() < 1e-10);
        assert!((r.details["psi_at_tau2"] - (-s.tau2).exp() * (s.tau1.exp() - 1.0)).abs() < 1e-10);
        assert!(r.passed());
    }

    #[test]
    fn vehicle_maximality() {
        let (problem, path, settings) = setup(2.3);
        let r = check_strict_maximality(&path, &problem, &settings);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.details["weak_conditions_hold"], 1.0);
        // at 0⁺ the slack is p₂(0) − x₂(0) = p₂(0)
        let s0 = maximality_slack(&path, &problem, 1, 0.0);
        assert!((s0 - path.schedule.lambda0[1]).abs() < 1e-14);
        // p₂(τ̂₁) = x₂(τ̂₁)
        assert!(maximality_slack(&path, &problem, 1, path.schedule.tau1).abs() < 1e-9);
        for key in ["extrapolated_tau1_left", "extrapolated_tau2_right"] {
            assert!(r.details[key].abs() < 1e-7, "{key}: {}", r.details[key]);
        }
    }

    #[test]
    fn vehicle_switching_brackets_match_printed_forms() {
        let (problem, path, settings) = setup(2.3);
        let r = check_strict_switching(&path, &problem, &settings).unwrap();
        let (l1, l2) = (path.ell1(), path.ell2());
        let b1 = l1[2] - (l1[1] + l1[3]);
        let b2 = l2[2] + (l2[1] - l2[3]);
        assert!((r.details["bracket_h1_h2"] - b1).abs() < 1e-10);
        assert!((r.details["bracket_h2_h3"] - b2).abs() < 1e-10);
        assert!(r.passed());
    }

    #[test]
    fn boundary_detects_perturbed_target() {
        let (_, mut path, settings) = setup(2.3);
        assert!(check_boundary(&path, None, &settings).passed());
        path.schedule.xf[0] += 1e-3;
        assert_eq!(check_boundary(&path, None, &settings).verdict, Verdict::Fail);
    }

    #[test]
    fn vanishing_cost_fails_switch_check() {
        let f0 = Arc::new(FnField::new(2, |x| dvector![x[1], -x[1]]));
        let f1 = Arc::new(FnField::constant(dvector![0.0, 1.0]));
        let psi = Arc::new(FnScalar::new(2, |_| 0.0));
        let problem = ProblemDefinition::new("null", f0, f1, psi).unwrap();
        let (_, path, settings) = setup(2.3);
        let path = integrate_reference_extremal(&problem, &path.schedule, &settings).unwrap();
        let r = check_switch_nonvanishing(&path, &problem, &settings);
        assert_eq!(r.margin, 0.0);
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(!path.zero_structure.alternation_ok);
    }

    #[test]
    fn golden_section_finds_minimum() {
        let (t, v) = golden_min(|t| (t - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-10);
        assert!((t - 0.3).abs() < 1e-7 && (v - 1.0).abs() < 1e-14);
    }
}
