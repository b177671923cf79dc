//! The verification pipeline and its machine-readable report.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremal::{
    check_boundary, check_nontangency, check_strict_maximality, check_strict_switching, check_switch_nonvanishing,
    integrate_reference_extremal, AssumptionId, AssumptionReport, ExtremalPath, ReferenceSchedule, Verdict,
};
use crate::geometry::ProblemDefinition;
use crate::hamflow::{clarke_invertibility, switch_time_differentials, ClarkeReport, CorrectionSign, SwitchDifferentials};
use crate::odeflow::{integrate, pack_state_matrix, unpack_state_matrix, FieldSystem, HamiltonianSystem, HamiltonianVariational};
use crate::pullback::{compute_pullback, PullbackData, ReferenceFlow};
use crate::secondvar::{
    admissible_space, check_bracket_identities, coercivity_verdict, identity_convergence, CoercivityVerdict,
    IdentityConvergence, IdentityResidual, SecondVariationReport,
};
use crate::settings::Settings;

pub const ASSUMPTION_ORDER: [AssumptionId; 6] = [
    AssumptionId::Nt,
    AssumptionId::Ss,
    AssumptionId::PmpBoundary,
    AssumptionId::Ra,
    AssumptionId::Rs,
    AssumptionId::SecondVar,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub problem: String,
    pub parameters: BTreeMap<String, f64>,
    pub schedule: ReferenceSchedule,
    pub settings: Settings,
}

/// Agreement of the variational equations with finite differences of the flows, and energy drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hygiene {
    /// `max |DS_T − DS_T^{fd}| / (1 + |DS_T|)` for the state flow.
    pub state_variational_error: f64,
    /// Same for the phase flow with fixed switching times.
    pub phase_variational_error: f64,
    pub hamiltonian_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalVerdict {
    pub certified: bool,
    pub summary: String,
    pub failing: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub config: ConfigEcho,
    pub assumptions: Vec<AssumptionReport>,
    pub second_variation: Option<SecondVariationReport>,
    pub pullback: Option<PullbackData>,
    pub identities: Vec<IdentityResidual>,
    pub identity_convergence: Option<IdentityConvergence>,
    pub switch_differentials: Option<SwitchDifferentials>,
    pub clarke: Option<ClarkeReport>,
    pub hygiene: Option<Hygiene>,
    pub zero_structure: Option<crate::extremal::ZeroStructure>,
    /// Failures of diagnostic stages that do not enter the verdict.
    pub diagnostics: Vec<String>,
    pub verdict: FinalVerdict,
}

impl VerificationReport {
    pub fn assumption(&self, id: AssumptionId) -> Option<&AssumptionReport> {
        self.assumptions.iter().find(|r| r.id == id)
    }

    pub fn margin(&self, id: AssumptionId) -> Option<f64> {
        self.assumption(id).map(|r| r.margin)
    }

    pub fn certified(&self) -> bool {
        self.verdict.certified
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn final_verdict(assumptions: &[AssumptionReport]) -> FinalVerdict {
    let failing: Vec<String> = ASSUMPTION_ORDER
        .iter()
        .filter(|id| !assumptions.iter().any(|r| r.id == **id && r.passed()))
        .map(|id| id.label().to_string())
        .collect();
    let certified = failing.is_empty();
    let summary = if certified {
        "strict strong-local minimizer certified".to_string()
    } else {
        format!("not certified: {}", failing.join(", "))
    };
    FinalVerdict { certified, summary, failing }
}

fn failed(id: AssumptionId, note: String) -> AssumptionReport {
    let mut r = AssumptionReport::new(id, f64::NAN, 0.0);
    r.verdict = Verdict::Fail;
    r.notes.push(note);
    r
}

fn second_variation_assumption(sv: &SecondVariationReport, threshold: f64) -> AssumptionReport {
    let mut r = AssumptionReport::new(AssumptionId::SecondVar, sv.margin, threshold);
    r.verdict = match sv.verdict {
        CoercivityVerdict::TriviallyCoercive => Verdict::Pass,
        CoercivityVerdict::Coercive => Verdict::Pass,
        CoercivityVerdict::NotCoercive if sv.margin > 0.0 => Verdict::Marginal,
        CoercivityVerdict::NotCoercive => Verdict::Fail,
    };
    r.details.insert("dimension".into(), sv.dimension as f64);
    r
}

/// Runs every check on the candidate. Violations of the structural assumptions found while
/// integrating (tangential crossings, zeros at the switches) give a not-certified report;
/// other computational failures are errors.
pub fn verify(problem: &ProblemDefinition, schedule: &ReferenceSchedule, settings: &Settings) -> Result<VerificationReport> {
    settings.validate().map_err(Error::InvalidSchedule)?;
    let config = ConfigEcho {
        problem: problem.name.clone(),
        parameters: BTreeMap::new(),
        schedule: schedule.clone(),
        settings: *settings,
    };
    let path = match integrate_reference_extremal(problem, schedule, settings) {
        Ok(p) => p,
        Err(e @ (Error::NtViolation { .. } | Error::SsViolation { .. })) => {
            let id = if matches!(e, Error::NtViolation { .. }) { AssumptionId::Nt } else { AssumptionId::Ss };
            let assumptions = vec![failed(id, e.to_string())];
            let verdict = final_verdict(&assumptions);
            return Ok(VerificationReport {
                config,
                assumptions,
                second_variation: None,
                pullback: None,
                identities: Vec::new(),
                identity_convergence: None,
                switch_differentials: None,
                clarke: None,
                hygiene: None,
                zero_structure: None,
                diagnostics: vec![format!("integration stopped: {e}")],
                verdict,
            });
        }
        Err(e) => return Err(e),
    };
    verify_path(problem, &path, config, settings)
}

fn verify_path(
    problem: &ProblemDefinition,
    path: &ExtremalPath,
    config: ConfigEcho,
    settings: &Settings,
) -> Result<VerificationReport> {
    let mut diagnostics = Vec::new();
    let mut assumptions = vec![
        check_nontangency(path, problem, settings)?,
        check_switch_nonvanishing(path, problem, settings),
        check_boundary(path, None, settings),
        check_strict_maximality(path, problem, settings),
        check_strict_switching(path, problem, settings)?,
    ];

    let mut second_variation = None;
    let mut pullback = None;
    let mut identities = Vec::new();
    let mut convergence = None;
    let mut differentials = None;
    let mut clarke = None;
    let mut flow_opt: Option<ReferenceFlow> = None;
    match compute_pullback(problem, path, settings) {
        Ok((flow, data)) => {
            let space = admissible_space(&data.g);
            match coercivity_verdict(&space, &data, &path.zero_structure, settings.margin_threshold) {
                Ok(sv) => {
                    assumptions.push(second_variation_assumption(&sv, settings.margin_threshold));
                    second_variation = Some(sv);
                }
                Err(e) => assumptions.push(failed(AssumptionId::SecondVar, e.to_string())),
            }
            match check_bracket_identities(problem, path, &data, settings) {
                Ok(r) => identities = r,
                Err(e) => diagnostics.push(format!("bracket identities: {e}")),
            }
            match identity_convergence(problem, path, &flow, &data, settings.fd_step * 100.0, settings) {
                Ok(c) => convergence = Some(c),
                Err(e) => diagnostics.push(format!("identity convergence: {e}")),
            }
            match switch_time_differentials(problem, path, &flow, &data, CorrectionSign::Transported, settings) {
                Ok(d) => {
                    match clarke_invertibility(&data.g, &d, settings.clarke_k, settings.clarke_points, settings.clarke_k_sweep) {
                        Ok(c) => clarke = Some(c),
                        Err(e) => diagnostics.push(format!("clarke test: {e}")),
                    }
                    differentials = Some(d);
                }
                Err(e) => diagnostics.push(format!("switch-time differentials: {e}")),
            }
            pullback = Some(data);
            flow_opt = Some(flow);
        }
        Err(e) => {
            assumptions.push(failed(AssumptionId::SecondVar, format!("pull-back failed: {e}")));
            diagnostics.push(format!("pull-back: {e}"));
        }
    }

    let hygiene = match &flow_opt {
        Some(flow) => match hygiene(problem, path, flow, settings) {
            Ok(h) => Some(h),
            Err(e) => {
                diagnostics.push(format!("hygiene: {e}"));
                None
            }
        },
        None => None,
    };
    let verdict = final_verdict(&assumptions);
    Ok(VerificationReport {
        config,
        assumptions,
        second_variation,
        pullback,
        identities,
        identity_convergence: convergence,
        switch_differentials: differentials,
        clarke,
        hygiene,
        zero_structure: Some(path.zero_structure.clone()),
        diagnostics,
        verdict,
    })
}

fn mixed_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / (1.0 + x.abs())).fold(0.0, f64::max)
}

/// `ξ(T)` from `x0` along the reference controls, integrated adaptively.
fn state_endpoint(problem: &ProblemDefinition, s: &ReferenceSchedule, x0: &DVector<f64>, settings: &Settings) -> Result<DVector<f64>> {
    let tol = settings.tight_tolerances();
    let mut x = x0.clone();
    for arc in 1..=3 {
        let (a, b) = s.arc_interval(arc);
        let field = problem.arc_field(s.control(arc));
        let (traj, _) = integrate(&FieldSystem { field: field.as_ref() }, a, &x, b, &[], &tol)?;
        x = traj.last().clone();
    }
    Ok(x)
}

/// Phase point at `T` from `y0` under the reference piece Hamiltonians with frozen piece times.
fn phase_endpoint(problem: &ProblemDefinition, path: &ExtremalPath, y0: &DVector<f64>, settings: &Settings) -> Result<DVector<f64>> {
    let tol = settings.tight_tolerances();
    let mut y = y0.clone();
    for piece in &path.pieces {
        let ham = path.hamiltonian(problem, piece.tag);
        let (traj, _) = integrate(&HamiltonianSystem { ham: &ham, psi: problem.psi.as_ref() }, piece.t0, &y, piece.t1, &[], &tol)?;
        y = traj.last().clone();
    }
    Ok(y)
}

fn central_fd(f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>, y0: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = y0.len();
    let mut cols = Vec::with_capacity(m);
    for k in 0..m {
        let h = 1e-6 * y0[k].abs().max(1.0);
        let mut yp = y0.clone();
        let mut ym = y0.clone();
        yp[k] += h;
        ym[k] -= h;
        cols.push((f(&yp)? - f(&ym)?) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Variational flows against central differences of the flows, plus the Hamiltonian drift.
pub fn hygiene(problem: &ProblemDefinition, path: &ExtremalPath, flow: &ReferenceFlow, settings: &Settings) -> Result<Hygiene> {
    let s = &path.schedule;
    let (_, m_t) = flow.base().at(s.t_final);
    let m_fd = central_fd(|x| state_endpoint(problem, s, x, settings), &s.x0)?;

    let n2 = 2 * path.n;
    let mut phi = DMatrix::identity(n2, n2);
    for piece in &path.pieces {
        let ham = path.hamiltonian(problem, piece.tag);
        let sys = HamiltonianVariational { ham: &ham, psi: problem.psi.as_ref() };
        let y0 = pack_state_matrix(piece.trajectory.first(), &DMatrix::identity(n2, n2));
        let (traj, _) = integrate(&sys, piece.t0, &y0, piece.t1, &[], &settings.tight_tolerances())?;
        phi = unpack_state_matrix(traj.last(), n2).1 * phi;
    }
    let ell0 = path.pieces[0].trajectory.first().clone();
    let phi_fd = central_fd(|y| phase_endpoint(problem, path, y, settings), &ell0)?;
    Ok(Hygiene {
        state_variational_error: mixed_error(&m_t, &m_fd),
        phase_variational_error: mixed_error(&phi, &phi_fd),
        hamiltonian_drift: path.hamiltonian_drift(problem),
    })
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub margins: BTreeMap<String, f64>,
    pub clarke_margin: Option<f64>,
    pub verdict: String,
}

impl SweepRow {
    pub fn from_report(value: f64, report: &VerificationReport) -> Self {
        let margins = ASSUMPTION_ORDER
            .iter()
            .map(|id| (id.label().to_string(), report.margin(*id).unwrap_or(f64::NAN)))
            .collect();
        let verdict = if report.certified() { "certified".to_string() } else { report.verdict.summary.clone() };
        SweepRow { value, margins, clarke_margin: report.clarke.as_ref().map(|c| c.margin), verdict }
    }

    pub fn from_error(value: f64, err: &Error) -> Self {
        let verdict = match err {
            Error::BranchInapplicable(_) => "branch-inapplicable".to_string(),
            other => format!("error: {other}"),
        };
        let margins = ASSUMPTION_ORDER.iter().map(|id| (id.label().to_string(), f64::NAN)).collect();
        SweepRow { value, margins, clarke_margin: None, verdict }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.12e}")
    }
}

/// CSV with columns `<parameter>, NT, SS, PMP-boundary, RA, RS, SecondVar, Clarke, verdict`.
pub fn write_sweep_csv<W: Write>(writer: W, parameter: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![parameter.to_string()];
    header.extend(ASSUMPTION_ORDER.iter().map(|id| id.label().to_string()));
    header.push("Clarke".into());
    header.push("verdict".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![fmt_num(row.value)];
        for id in ASSUMPTION_ORDER {
            rec.push(fmt_num(row.margins.get(id.label()).copied().unwrap_or(f64::NAN)));
        }
        rec.push(row.clarke_margin.map(fmt_num).unwrap_or_default());
        rec.push(row.verdict.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
