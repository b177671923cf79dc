use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{maximized_flow, FlowLog};
use crate::error::{Error, Result};
use crate::extremal::{ArcTag, ExtremalPath};
use crate::geometry::{symplectic, ProblemDefinition};
use crate::odeflow::{integrate, pack_state_matrix, unpack_state_matrix, HamiltonianVariational};
use crate::pullback::{PullbackData, ReferenceFlow};
use crate::ser;
use crate::settings::Settings;

/// Sign in front of the crossing correction `2Σσ₀ᵢ L_{π*δℓ}ψ̂ L_{g_b−g_a}ψ̂ / L_{g₁}ψ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionSign {
    /// `−2Σ…`, obtained by transporting the jump `2σ₀ᵢ Ψ⃗ ds₁ᵢ` of each crossing.
    Transported,
    /// `+2Σ…`.
    Printed,
}

impl CorrectionSign {
    fn factor(self) -> f64 {
        match self {
            CorrectionSign::Transported => -1.0,
            CorrectionSign::Printed => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdMethod {
    Central,
    Forward,
    Backward,
}

/// Differentials of `τ₁, τ₂, s₁ᵢ, s₃ᵢ` at `ℓ̂₀` on the basis `e₁..e₂ₙ` of `[δx; δp]`.
#[derive(Debug, Clone, Serialize)]
pub struct SwitchDifferentials {
    pub sign: CorrectionSign,
    #[serde(serialize_with = "ser::vector")]
    pub dtau1: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub dtau2: DVector<f64>,
    #[serde(serialize_with = "ser::vectors")]
    pub ds1: Vec<DVector<f64>>,
    #[serde(serialize_with = "ser::vectors")]
    pub ds3: Vec<DVector<f64>>,
    /// Same quantities with the other correction sign (identical when `n₁ = 0`).
    #[serde(serialize_with = "ser::vector")]
    pub dtau1_alt: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub dtau2_alt: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub dtau1_fd: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub dtau2_fd: DVector<f64>,
    #[serde(serialize_with = "ser::vectors")]
    pub ds1_fd: Vec<DVector<f64>>,
    #[serde(serialize_with = "ser::vectors")]
    pub ds3_fd: Vec<DVector<f64>>,
    pub fd_methods: Vec<FdMethod>,
    /// `‖d − d_fd‖_∞ / ‖d_fd‖_∞` for `τ₁`, `τ₂`, and the largest over the crossings.
    pub deviation_tau1: f64,
    pub deviation_tau2: f64,
    pub deviation_crossings: f64,
    pub deviation_tau1_alt: f64,
    pub deviation_tau2_alt: f64,
    /// `⟨dτᵢ, H⃗(ℓ̂₀)⟩ + 1` for the field of the first piece: starting later along the
    /// extremal moves every switch earlier by the same amount.
    pub time_shift_residual: [f64; 2],
    pub bracket_tau1: f64,
    pub bracket_tau2: f64,
}

impl SwitchDifferentials {
    pub fn max_deviation(&self) -> f64 {
        self.deviation_tau1.max(self.deviation_tau2).max(self.deviation_crossings)
    }
}

fn relative_deviation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.amax().max(a.amax());
    if scale == 0.0 {
        return 0.0;
    }
    (a - b).amax() / scale
}

/// Linearized reference flow over one piece, started at the piece's initial point.
fn piece_transport(problem: &ProblemDefinition, path: &ExtremalPath, k: usize, settings: &Settings) -> Result<DMatrix<f64>> {
    let piece = &path.pieces[k];
    let n2 = 2 * path.n;
    let ham = path.hamiltonian(problem, piece.tag);
    let sys = HamiltonianVariational { ham: &ham, psi: problem.psi.as_ref() };
    let y0 = pack_state_matrix(piece.trajectory.first(), &DMatrix::identity(n2, n2));
    let (traj, _) = integrate(&sys, piece.t0, &y0, piece.t1, &[], &settings.tight_tolerances())?;
    Ok(unpack_state_matrix(traj.last(), n2).1)
}

fn phase_field(problem: &ProblemDefinition, path: &ExtremalPath, tag: ArcTag, y: &DVector<f64>) -> DVector<f64> {
    let n = path.n;
    let x = y.rows(0, n).into_owned();
    let p = y.rows(n, n).into_owned();
    path.hamiltonian(problem, tag).vector_field(problem.psi.as_ref(), &p, &x)
}

struct Formula {
    dtau1: DVector<f64>,
    dtau2: DVector<f64>,
    ds1: Vec<DVector<f64>>,
    ds3: Vec<DVector<f64>>,
}

struct Ingredients {
    t1: DMatrix<f64>,
    t2: DMatrix<f64>,
    x21: DVector<f64>,
    x32: DVector<f64>,
    b1: f64,
    b2: f64,
    c2: f64,
    /// `Dψ(ξ̂(s)) M(s)` at the crossings of the first and last arc.
    rows_s1: Vec<DVector<f64>>,
    rows_s3: Vec<DVector<f64>>,
}

fn formula(path: &ExtremalPath, data: &PullbackData, ing: &Ingredients, sign: CorrectionSign) -> Formula {
    let n2 = 2 * path.n;
    let n = path.n;
    let z = &path.zero_structure;
    let f = sign.factor();
    let mut dtau1 = DVector::zeros(n2);
    let mut dtau2 = DVector::zeros(n2);
    let mut ds1 = vec![DVector::zeros(n2); z.n1()];
    let mut ds3 = vec![DVector::zeros(n2); z.n3()];
    for k in 0..n2 {
        let mut e = DVector::zeros(n2);
        e[k] = 1.0;
        let dx = e.rows(0, n).into_owned();
        let mut corr1 = 0.0;
        let mut corr2 = 0.0;
        for (i, row) in data.lie_s1.iter().enumerate() {
            let [v1, v2, v3] = row.values;
            let ld = ing.rows_s1[i].dot(&dx);
            let s = z.sigma0[i] as f64;
            corr1 += 2.0 * s * ld * (v2 - v1) / v1;
            corr2 += 2.0 * s * ld * (v3 - v2) / v1;
            ds1[i][k] = -ld / v1;
        }
        let d1 = (-symplectic(&(&ing.t1 * &e), &ing.x21) + f * corr1) / ing.b1;
        let d2 = (-symplectic(&(&ing.t2 * &e), &ing.x32) + d1 * ing.c2 + f * corr2) / ing.b2;
        dtau1[k] = d1;
        dtau2[k] = d2;
        for (i, row) in data.lie_s3.iter().enumerate() {
            let [v1, v2, v3] = row.values;
            let ld = ing.rows_s3[i].dot(&dx);
            ds3[i][k] = -(ld - d1 * (v2 - v1) - d2 * (v3 - v2)) / v3;
        }
    }
    Formula { dtau1, dtau2, ds1, ds3 }
}

/// Switching data of `ℋ_T(ℓ)` with crossings inside the end window of `T` dropped.
fn switching_vector(log: &FlowLog, t_final: f64, window: f64) -> Option<Vec<f64>> {
    let mut v = log.s1.clone();
    v.push(log.tau1?);
    v.push(log.tau2?);
    v.extend(log.s3.iter().copied().filter(|&s| s < t_final - window));
    Some(v)
}

/// Analytic differentials with the selected correction sign, checked against finite differences
/// of the switching times of the maximized flow. Where a two-sided difference would change the
/// number of crossings (e.g. `x̂₀` on `ψ = 0`) a second-order one-sided difference is used.
pub fn switch_time_differentials(
    problem: &ProblemDefinition,
    path: &ExtremalPath,
    flow: &ReferenceFlow,
    data: &PullbackData,
    sign: CorrectionSign,
    settings: &Settings,
) -> Result<SwitchDifferentials> {
    let n = path.n;
    let n2 = 2 * n;
    let s = &path.schedule;
    let z = &path.zero_structure;
    if data.lie_s1.len() != z.n1() || data.lie_s3.len() != z.n3() {
        return Err(Error::IncompletePullback("crossing rows do not match the zero structure".into()));
    }

    let transports: Vec<DMatrix<f64>> =
        (0..path.pieces.len()).into_par_iter().map(|k| piece_transport(problem, path, k, settings)).collect::<Result<_>>()?;
    let mut t1 = DMatrix::identity(n2, n2);
    let mut t21 = DMatrix::identity(n2, n2);
    for (piece, m) in path.pieces.iter().zip(&transports) {
        match piece.tag.arc() {
            1 => t1 = m * t1,
            2 => t21 = m * t21,
            _ => {}
        }
    }
    let t2 = &t21 * &t1;
    let (l1, l2) = (path.ell1(), path.ell2());
    let x1 = phase_field(problem, path, path.last_tag_arc1(), &l1);
    let x2_l1 = phase_field(problem, path, ArcTag::H2, &l1);
    let x2_l2 = phase_field(problem, path, ArcTag::H2, &l2);
    let x3 = phase_field(problem, path, path.first_tag_arc3(), &l2);
    let x21 = &x2_l1 - &x1;
    let x32 = &x3 - &x2_l2;
    let b1 = symplectic(&x1, &x2_l1);
    let b2 = symplectic(&x2_l2, &x3);
    if b1 == 0.0 || b2 == 0.0 {
        return Err(Error::DegenerateSwitch(format!("brackets at the switches are {b1:e} and {b2:e}")));
    }
    let c2 = symplectic(&(&t21 * &x21), &x32);
    let base = flow.base();
    let dpsi_row = |t: f64| {
        let (x, m) = base.at(t);
        m.transpose() * problem.psi.gradient(&x)
    };
    let ing = Ingredients {
        t1,
        t2,
        x21,
        x32,
        b1,
        b2,
        c2,
        rows_s1: z.s1.iter().map(|&t| dpsi_row(t)).collect(),
        rows_s3: z.s3.iter().map(|&t| dpsi_row(t)).collect(),
    };
    let alt = match sign {
        CorrectionSign::Transported => CorrectionSign::Printed,
        CorrectionSign::Printed => CorrectionSign::Transported,
    };
    let main = formula(path, data, &ing, sign);
    let other = formula(path, data, &ing, alt);

    // finite differences of the maximized flow
    let mut ell0 = DVector::zeros(n2);
    ell0.rows_mut(0, n).copy_from(&s.x0);
    ell0.rows_mut(n, n).copy_from(&s.lambda0);
    // an endpoint zero at T moves inside under perturbation; it cannot affect the switches
    let end_zero = z.endpoint_zeros.iter().any(|e| e.arc == 3 && s.t_final - e.t <= settings.exclusion_rel * s.t_final);
    let window = if end_zero { 1e3 * settings.switch_fd_step * s.t_final } else { settings.exclusion_rel * s.t_final };
    let expected = z.n1() + 2 + z.n3();
    let run = |y: &DVector<f64>| -> Option<Vec<f64>> {
        let st = maximized_flow(problem, s.u1, s.u3, y, s.t_final, settings).ok()?;
        let v = switching_vector(&st.log, s.t_final, window)?;
        (st.log.s1.len() == z.n1() && v.len() == expected).then_some(v)
    };
    let f0 = run(&ell0).ok_or_else(|| {
        Error::StructureMismatch("maximized flow from the reference point does not reproduce the switches".into())
    })?;
    let columns: Vec<(Vec<f64>, FdMethod)> = (0..n2)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, FdMethod)> {
            let h = settings.switch_fd_step * ell0[k].abs().max(1.0);
            let at = |m: f64| {
                let mut y = ell0.clone();
                y[k] += m * h;
                run(&y)
            };
            let (fp, fm) = (at(1.0), at(-1.0));
            if let (Some(fp), Some(fm)) = (&fp, &fm) {
                return Ok(((0..expected).map(|j| (fp[j] - fm[j]) / (2.0 * h)).collect(), FdMethod::Central));
            }
            for (dir, method) in [(1.0, FdMethod::Forward), (-1.0, FdMethod::Backward)] {
                if let (Some(a), Some(b)) = (at(dir), at(2.0 * dir)) {
                    let col = (0..expected).map(|j| (-3.0 * f0[j] + 4.0 * a[j] - b[j]) / (2.0 * dir * h)).collect();
                    return Ok((col, method));
                }
            }
            Err(Error::StructureMismatch(format!("no admissible finite difference along coordinate {k}")))
        })
        .collect::<Result<_>>()?;
    let fd_row = |j: usize| DVector::from_iterator(n2, columns.iter().map(|(c, _)| c[j]));
    let n1 = z.n1();
    let dtau1_fd = fd_row(n1);
    let dtau2_fd = fd_row(n1 + 1);
    let ds1_fd: Vec<_> = (0..n1).map(fd_row).collect();
    let ds3_fd: Vec<_> = (0..z.n3()).map(|i| fd_row(n1 + 2 + i)).collect();

    let mut deviation_crossings: f64 = 0.0;
    for (a, b) in main.ds1.iter().zip(&ds1_fd).chain(main.ds3.iter().zip(&ds3_fd)) {
        deviation_crossings = deviation_crossings.max(relative_deviation(a, b));
    }
    let first = &path.pieces[0];
    let shift = phase_field(problem, path, first.tag, first.trajectory.first());
    Ok(SwitchDifferentials {
        sign,
        deviation_tau1: relative_deviation(&main.dtau1, &dtau1_fd),
        deviation_tau2: relative_deviation(&main.dtau2, &dtau2_fd),
        deviation_crossings,
        deviation_tau1_alt: relative_deviation(&other.dtau1, &dtau1_fd),
        deviation_tau2_alt: relative_deviation(&other.dtau2, &dtau2_fd),
        time_shift_residual: [main.dtau1.dot(&shift) + 1.0, main.dtau2.dot(&shift) + 1.0],
        bracket_tau1: b1,
        bracket_tau2: b2,
        dtau1: main.dtau1,
        dtau2: main.dtau2,
        ds1: main.ds1,
        ds3: main.ds3,
        dtau1_alt: other.dtau1,
        dtau2_alt: other.dtau2,
        dtau1_fd,
        dtau2_fd,
        ds1_fd,
        ds3_fd,
        fd_methods: columns.into_iter().map(|(_, m)| m).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::integrate_reference_extremal;
    use crate::problems::vehicle_problem;
    use crate::pullback::compute_pullback;
    use crate::vehicle_bench::{oracle, VehicleInstance};

    #[test]
    fn vehicle_formula_matches_finite_differences() {
        let inst = VehicleInstance::new(1.0, 1.0, 2.3);
        let sched = oracle(&inst).unwrap().schedule(&inst);
        let problem = vehicle_problem(1.0);
        let settings = Settings::default();
        let path = integrate_reference_extremal(&problem, &sched, &settings).unwrap();
        let (flow, data) = compute_pullback(&problem, &path, &settings).unwrap();
        let d = switch_time_differentials(&problem, &path, &flow, &data, CorrectionSign::Transported, &settings).unwrap();
        assert!(d.max_deviation() < 1e-4, "{d:?}");
        assert!(d.time_shift_residual.iter().all(|r| r.abs() < 1e-8), "{:?}", d.time_shift_residual);
        // x̂₀ on ψ = 0: moving x₂ down creates a crossing, so that coordinate is one-sided
        assert_eq!(d.fd_methods[1], FdMethod::Forward);
        assert!((d.bracket_tau1 - 0.476895279002646).abs() < 1e-8);
    }
}
