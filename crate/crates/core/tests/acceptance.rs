//! The ten acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary so the summary is always printed by `cargo test`.

use std::time::Instant;

use nalgebra::{dvector, DVector};
use rayon::prelude::*;

use bzb_core::extremal::{integrate_reference_extremal, shoot_extremal, AssumptionId, ShootingGuess};
use bzb_core::hamflow::{clarke_scan, switch_time_differentials, ClarkeParts, CorrectionSign};
use bzb_core::problems::{drag_problem, vehicle_problem};
use bzb_core::pullback::compute_pullback;
use bzb_core::report::{verify, VerificationReport};
use bzb_core::secondvar::{admissible_space, coercivity_from_form, CoercivityVerdict};
use bzb_core::vehicle_bench::{end_to_end_verify, oracle, perturbation_probe, t_lim, t_min, ProbeConfig, VehicleInstance};
use bzb_core::Settings;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference() -> VehicleInstance {
    VehicleInstance::new(1.0, 1.0, 2.3)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let inst = reference();
    let o = oracle(&inst).unwrap();
    let start = Instant::now();
    let guess = ShootingGuess { lambda0: dvector![1.5, 0.5], tau1: 1.0, tau2: 2.0 };
    let out = shoot_extremal(
        &vehicle_problem(1.0),
        &dvector![0.0, 0.0],
        &dvector![1.0, 0.0],
        inst.t_final,
        1.0,
        -1.0,
        &guess,
        &Settings::default(),
    );
    let secs = start.elapsed().as_secs_f64();
    match out {
        Ok(out) => {
            let s = &out.schedule;
            let e = [
                (s.tau1 - o.tau1).abs(),
                (s.tau2 - o.tau2).abs(),
                rel(s.lambda0[0], o.p1),
                rel(s.lambda0[1], o.p2_0),
            ];
            let pass = e[0] < 1e-8 && e[1] < 1e-8 && e[2] < 1e-8 && e[3] < 1e-8 && secs < 5.0;
            outcome(
                pass,
                format!(
                    "|dtau1| = {:.1e}, |dtau2| = {:.1e}, rel dp1 = {:.1e}, rel dp2 = {:.1e}, {} iterations, {secs:.2} s",
                    e[0], e[1], e[2], e[3], out.iterations
                ),
            )
        }
        Err(e) => outcome(false, format!("shooting failed: {e}")),
    }
}

fn criterion_2() -> Outcome {
    let inst = reference();
    let s = oracle(&inst).unwrap().schedule(&inst);
    let path = integrate_reference_extremal(&vehicle_problem(1.0), &s, &Settings::default()).unwrap();
    let gap = (path.state(s.t_final) - &s.xf).norm();
    outcome(gap < 1e-8, format!("|x(T) - (X, 0)| = {gap:.2e}"))
}

/// Verification reports on 21 horizons from just above `T_min` up to `T_lim`, with `K = I`.
fn t_sweep() -> (Vec<(f64, VerificationReport)>, f64) {
    let (lo, hi) = (t_min(1.0, 1.0), t_lim(1.0, 1.0));
    let ts: Vec<f64> = (0..21).map(|k| lo + (hi - lo) * (0.02 + 0.98 * k as f64 / 20.0)).collect();
    let settings = Settings { clarke_k: 1.0, ..Settings::default() };
    let start = Instant::now();
    let rows = ts
        .par_iter()
        .map(|&t| (t, end_to_end_verify(&VehicleInstance::new(1.0, 1.0, t), &settings).unwrap()))
        .collect();
    (rows, start.elapsed().as_secs_f64())
}

fn criterion_3(sweep: &[(f64, VerificationReport)], secs: f64) -> Outcome {
    let rep = end_to_end_verify(&reference(), &Settings::default()).unwrap();
    let ids = [AssumptionId::Nt, AssumptionId::Ss, AssumptionId::PmpBoundary, AssumptionId::Ra, AssumptionId::Rs];
    let mid_ok = ids.iter().all(|&id| rep.assumption(id).is_some_and(|r| r.passed() && r.margin > 0.0));
    let margins: Vec<String> = ids.iter().map(|&id| format!("{}={:.2e}", id.label(), rep.margin(id).unwrap())).collect();

    let mid = end_to_end_verify(&VehicleInstance::mid_range(1.0, 1.0), &Settings::default()).unwrap();
    let lim = end_to_end_verify(&VehicleInstance::new(1.0, 1.0, t_lim(1.0, 1.0)), &Settings::default()).unwrap();
    let rs_mid = mid.margin(AssumptionId::Rs).unwrap();
    let rs_lim = lim.margin(AssumptionId::Rs).unwrap();
    let lim_ok = rs_lim < 1e-3 * rs_mid && !lim.certified() && lim.verdict.failing.iter().any(|f| f == "RS");

    let rs: Vec<f64> = sweep.iter().map(|(_, r)| r.margin(AssumptionId::Rs).unwrap()).collect();
    let monotone = rs.windows(2).all(|w| w[1] < w[0]);
    outcome(
        rep.certified() && mid_ok && lim_ok && monotone && secs < 60.0,
        format!(
            "T=2.3 {}; T_lim RS = {rs_lim:.2e} vs mid {rs_mid:.3} ({}); 21-point RS {} ({secs:.1} s)",
            margins.join(" "),
            lim.verdict.summary,
            if monotone { "strictly decreasing" } else { "NOT monotone" }
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0] {
        let inst = VehicleInstance::mid_range(alpha, 1.0);
        let o = oracle(&inst).unwrap();
        let settings = Settings::default();
        let path = integrate_reference_extremal(&vehicle_problem(alpha), &o.schedule(&inst), &settings).unwrap();
        let (_, data) = compute_pullback(&vehicle_problem(alpha), &path, &settings).unwrap();
        // at the origin f₀ = 0, f₁ = (0, 1) and f₀₁ = [f₀, f₁] = (−1, α)
        let f01 = dvector![-1.0, alpha];
        let g2 = &f01 * o.g2_coeff;
        let g3 = dvector![0.0, -1.0] + &f01 * o.g3_coeff;
        worst = worst.max((&data.g[1] - &g2).norm() / g2.norm());
        worst = worst.max((&data.g[2] - &g3).norm() / g3.norm());
    }
    outcome(worst < 1e-8, format!("largest relative deviation of g2, g3 over alpha in {{0.5, 1, 2}}: {worst:.2e}"))
}

fn criterion_5(sweep: &[(f64, VerificationReport)]) -> Outcome {
    let dims_ok = sweep.iter().all(|(_, r)| {
        r.second_variation.as_ref().is_some_and(|s| s.dimension == 0 && s.verdict == CoercivityVerdict::TriviallyCoercive)
    });
    // g₂ − g₁ = g₃ − g₂: the constraints are ε₁ + ε₂ + ε₃ = 0 and ε₁ + 2ε₂ + 3ε₃ = 0
    let g = [dvector![0.4, -1.0], dvector![0.8, -2.0], dvector![1.2, -3.0]];
    let space = admissible_space(&g);
    let mut basis_ok = space.dimension == 1;
    if basis_ok {
        let b = space.basis[0];
        let brute = [1.0, -2.0, 1.0];
        let scale = b[0] / brute[0];
        basis_ok = (0..3).all(|k| (b[k] - scale * brute[k]).abs() < 1e-12);
        let residual: f64 = (0..2).map(|r| (0..3).map(|k| b[k] * g[k][r]).sum::<f64>().abs()).sum::<f64>()
            + (b[0] + b[1] + b[2]).abs();
        basis_ok &= residual < 1e-12;
    }
    let mut signs_ok = true;
    for q in [2.5, -1.0] {
        let rep = coercivity_from_form(&space, |e| Ok(q * e[0] * e[0]), 1e-7).unwrap();
        let expect = if q > 0.0 { CoercivityVerdict::Coercive } else { CoercivityVerdict::NotCoercive };
        signs_ok &= rep.verdict == expect && rep.smallest_eigenvalue.is_some_and(|l| l.signum() == q.signum());
    }
    outcome(
        dims_ok && basis_ok && signs_ok,
        format!(
            "V0 trivial at all {} swept T: {dims_ok}; parallel-field basis ~ (1,-2,1): {basis_ok}; verdict follows coefficient sign: {signs_ok}",
            sweep.len()
        ),
    )
}

/// Vehicle variant with cubic drag and cost `|u (x₂ − b)|`: zeros of the cost on both bang arcs.
fn crossing_problem() -> (bzb_core::geometry::ProblemDefinition, bzb_core::extremal::ReferenceSchedule) {
    let inst = reference();
    let o = oracle(&inst).unwrap();
    let problem = drag_problem(1.0, 0.2, 0.1);
    let guess = ShootingGuess { lambda0: dvector![o.p1, o.p2_0], tau1: o.tau1, tau2: o.tau2 };
    let out = shoot_extremal(&problem, &dvector![0.0, 0.0], &dvector![1.0, 0.0], 2.3, 1.0, -1.0, &guess, &Settings::default())
        .expect("crossing problem shoots");
    (problem, out.schedule)
}

fn criterion_6(vehicle: &VerificationReport, drag: &VerificationReport) -> Outcome {
    let worst = vehicle.identities.iter().map(|r| r.relative).fold(0.0, f64::max);
    let three = vehicle.identities.len() == 3;
    let vc = vehicle.identity_convergence.as_ref().unwrap();
    let dc = drag.identity_convergence.as_ref().unwrap();
    let drag_ratios_ok = dc.ratios.iter().all(|r| (3.0..5.0).contains(r));
    let drag_worst = drag.identities.iter().map(|r| r.relative).fold(0.0, f64::max);
    outcome(
        three && worst < 1e-6 && vc.second_order && drag_ratios_ok && drag_worst < 1e-6,
        format!(
            "vehicle relative residuals max {worst:.1e}, step halving residuals {:.1e}/{:.1e} (floor {:.1e}); crossing problem max {drag_worst:.1e}, ratios {:.2} {:.2} {:.2}",
            vc.residuals[0].iter().copied().fold(0.0, f64::max),
            vc.residuals[1].iter().copied().fold(0.0, f64::max),
            vc.floor,
            dc.ratios[0],
            dc.ratios[1],
            dc.ratios[2]
        ),
    )
}

fn criterion_7(vehicle: &VerificationReport, drag: &VerificationReport, drag_printed_dev: f64) -> Outcome {
    let v = vehicle.switch_differentials.as_ref().unwrap();
    let d = drag.switch_differentials.as_ref().unwrap();
    let z = drag.zero_structure.as_ref().unwrap();
    let crossings = z.n1() >= 1 && z.n3() >= 1;
    outcome(
        v.max_deviation() < 1e-4 && d.max_deviation() < 1e-4 && crossings,
        format!(
            "vehicle {:.1e}; crossing problem (n1 = {}, n3 = {}) tau1 {:.1e} tau2 {:.1e} crossings {:.1e}; printed correction sign would give {drag_printed_dev:.2}",
            v.max_deviation(),
            z.n1(),
            z.n3(),
            d.deviation_tau1,
            d.deviation_tau2,
            d.deviation_crossings
        ),
    )
}

fn criterion_8(sweep: &[(f64, VerificationReport)], vehicle_k0: &VerificationReport) -> Outcome {
    let parts = &vehicle_k0.clarke.as_ref().unwrap().parts;
    let identity = parts.sigma_min(1, 0.0) == 1.0;
    let range_margin = sweep
        .iter()
        .filter(|(_, r)| r.certified())
        .map(|(_, r)| r.clarke.as_ref().unwrap().margin)
        .fold(f64::INFINITY, f64::min);
    let certified_rows = sweep.iter().filter(|(_, r)| r.certified()).count();

    let a0 = 0.37;
    let degenerate = ClarkeParts {
        u1: dvector![1.0, 0.0],
        d1: dvector![-1.0 / a0, 0.0],
        u2: DVector::zeros(2),
        d2: DVector::zeros(2),
    };
    let deg = clarke_scan(&degenerate, 0.0, 21).unwrap();
    let deg_ok = deg.margin <= 1e-9 && (deg.worst.a - a0).abs() < 1e-6;

    let k0 = vehicle_k0.clarke.as_ref().unwrap();
    let b = vehicle_k0.margin(AssumptionId::Rs).unwrap();
    outcome(
        identity && range_margin > 0.0 && deg_ok,
        format!(
            "a=0 margin 1 exactly: {identity}; K=I margin over {certified_rows} certified T >= {range_margin:.3}; designed a0={a0}: margin {:.1e} at a={:.6}; note K=0 at T=2.3 gives {:.1e} at a={:.6} (analytic a={{H1,H2}}={b:.6})",
            deg.margin, deg.worst.a, k0.margin, k0.worst.a
        ),
    )
}

fn criterion_9() -> Outcome {
    let inst = reference();
    let s = oracle(&inst).unwrap().schedule(&inst);
    let start = Instant::now();
    let table = perturbation_probe(&vehicle_problem(1.0), &s, &ProbeConfig::default(), &Settings::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let reference_ok = table.reference_gap < 1e-8;
    outcome(
        reference_ok && table.feasible > 1 && table.reference_is_minimal() && table.quadratic_coefficient > 0.0 && secs < 120.0,
        format!(
            "{}/{} feasible, min C - C_ref = {:.2e}, q = {:.3}, reference gap {:.1e}, {secs:.1} s",
            table.feasible,
            table.points.len(),
            table.min_delta_cost,
            table.quadratic_coefficient,
            table.reference_gap
        ),
    )
}

fn criterion_10(sweep: &[(f64, VerificationReport)], extra: &[&VerificationReport]) -> Outcome {
    let mut worst_var: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    let mut runs = 0;
    for r in sweep.iter().map(|(_, r)| r).chain(extra.iter().copied()).filter(|r| r.certified()) {
        let h = r.hygiene.unwrap();
        worst_var = worst_var.max(h.state_variational_error).max(h.phase_variational_error);
        worst_drift = worst_drift.max(h.hamiltonian_drift);
        runs += 1;
    }
    outcome(
        runs > 0 && worst_var < 1e-5 && worst_drift < 1e-8,
        format!("{runs} certified runs: variational vs FD {worst_var:.1e}, Hamiltonian drift {worst_drift:.1e}"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "vehicle oracle reproduction", criterion_1()));
    results.push((2, "boundary reproduction", criterion_2()));

    let (sweep, sweep_secs) = t_sweep();
    results.push((3, "assumption suite", criterion_3(&sweep, sweep_secs)));
    results.push((4, "pull-back oracle", criterion_4()));
    results.push((5, "second variation", criterion_5(&sweep)));

    let vehicle = end_to_end_verify(&reference(), &Settings::default()).unwrap();
    let (problem, schedule) = crossing_problem();
    let drag = verify(&problem, &schedule, &Settings::default()).unwrap();
    let printed_dev = {
        let settings = Settings::default();
        let path = integrate_reference_extremal(&problem, &schedule, &settings).unwrap();
        let (flow, data) = compute_pullback(&problem, &path, &settings).unwrap();
        switch_time_differentials(&problem, &path, &flow, &data, CorrectionSign::Printed, &settings)
            .unwrap()
            .max_deviation()
    };
    results.push((6, "bracket identities", criterion_6(&vehicle, &drag)));
    results.push((7, "switch-time differentials", criterion_7(&vehicle, &drag, printed_dev)));
    results.push((8, "Clarke test", criterion_8(&sweep, &vehicle)));
    results.push((9, "local-optimality probe", criterion_9()));
    results.push((10, "numerics hygiene", criterion_10(&sweep, &[&vehicle, &drag])));

    let mut failures = 0;
    for (k, name, o) in &results {
        println!("[{}] criterion {k:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
