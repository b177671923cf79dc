//! Admissible variations `V₀`, the reduced second variation on it, and first-order bracket identities.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremal::{switching_brackets, ExtremalPath, ZeroStructure};
use crate::geometry::ProblemDefinition;
use crate::odeflow::{integrate, pack_state_matrix, unpack_state_matrix, HamiltonianVariational};
use crate::pullback::{pullback_brackets, FdScheme, PullbackData, ReferenceFlow};
use crate::settings::Settings;

/// `{ε ∈ R³ : Σεᵢ = 0, Σεᵢgᵢ(x̂₀) = 0}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibleSpace {
    pub basis: Vec<[f64; 3]>,
    pub dimension: usize,
    pub singular_values: Vec<f64>,
}

/// Null space of the stacked constraints by SVD, rank threshold `10⁻⁹·σ_max`.
pub fn admissible_space(g: &[DVector<f64>]) -> AdmissibleSpace {
    let n = g[0].len();
    let rows = (n + 1).max(3);
    let mut a = DMatrix::zeros(rows, 3);
    for j in 0..3 {
        a[(0, j)] = 1.0;
        a.view_mut((1, j), (n, 1)).copy_from(&g[j]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let mut basis = Vec::new();
    for (k, &s) in sv.iter().enumerate() {
        if s <= 1e-9 * smax || smax == 0.0 {
            let mut v = [vt[(k, 0)], vt[(k, 1)], vt[(k, 2)]];
            // largest entry positive
            let big = v.iter().copied().fold(0.0, |m: f64, c| if c.abs() > m.abs() { c } else { m });
            if big < 0.0 {
                v = v.map(|c| -c);
            }
            basis.push(v);
        }
    }
    AdmissibleSpace { dimension: basis.len(), basis, singular_values: sv }
}

/// The reduced second variation `J″[0, ε]²` assembled from the pull-back tables.
pub fn evaluate_reduced_j(data: &PullbackData, z: &ZeroStructure, eps: [f64; 3]) -> Result<f64> {
    if data.lie_s3.len() != z.n3() || data.lie_s1.len() != z.n1() || data.brackets.len() != 3 || data.g.len() != 3 {
        return Err(Error::IncompletePullback(format!(
            "tables have {} / {} crossing rows for n1 = {}, n3 = {}",
            data.lie_s1.len(),
            data.lie_s3.len(),
            z.n1(),
            z.n3()
        )));
    }
    let [e1, e2, e3] = eps;
    let parity = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let mut j = 0.5 * z.a0 as f64 * parity(z.n1()) * e1 * e1 * data.lie_tau1.values[0];
    j -= 0.5 * e3 * e3 * data.lie_t.values[2];
    let crossing_sum: f64 = data.lie_s3.iter().enumerate().map(|(i, r)| parity(i + 1) * r.values[2]).sum();
    j += z.a2 as f64 * e3 * e3 * crossing_sum;
    j += 0.5 * data.second_lie_integral(e1, e2);
    j += 0.5 * e1 * e2 * data.bracket_integral;
    let pairs = [(e1 * e2, 0), (e1 * e3, 1), (e2 * e3, 2)];
    j += 0.5 * pairs.iter().map(|&(c, k)| c * data.lie_beta(&data.brackets[k])).sum::<f64>();
    Ok(j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoercivityVerdict {
    Coercive,
    NotCoercive,
    TriviallyCoercive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondVariationReport {
    pub dimension: usize,
    pub basis: Vec<[f64; 3]>,
    /// Symmetric matrix of `J″` on the basis.
    pub quadratic_form: Vec<Vec<f64>>,
    pub smallest_eigenvalue: Option<f64>,
    pub verdict: CoercivityVerdict,
    /// Smallest eigenvalue, `+∞` for the trivial space.
    pub margin: f64,
}

/// Polarized matrix of a quadratic form on the basis of `space` and its coercivity verdict.
pub fn coercivity_from_form(
    space: &AdmissibleSpace,
    j: impl Fn([f64; 3]) -> Result<f64>,
    threshold: f64,
) -> Result<SecondVariationReport> {
    let d = space.dimension;
    if d == 0 {
        return Ok(SecondVariationReport {
            dimension: 0,
            basis: Vec::new(),
            quadratic_form: Vec::new(),
            smallest_eigenvalue: None,
            verdict: CoercivityVerdict::TriviallyCoercive,
            margin: f64::INFINITY,
        });
    }
    let diag: Vec<f64> = space.basis.iter().map(|&b| j(b)).collect::<Result<_>>()?;
    let mut q = DMatrix::zeros(d, d);
    for a in 0..d {
        q[(a, a)] = diag[a];
        for b in (a + 1)..d {
            let sum = [0, 1, 2].map(|k| space.basis[a][k] + space.basis[b][k]);
            let v = 0.5 * (j(sum)? - diag[a] - diag[b]);
            q[(a, b)] = v;
            q[(b, a)] = v;
        }
    }
    let lmin = q.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SecondVariationReport {
        dimension: d,
        basis: space.basis.clone(),
        quadratic_form: q.row_iter().map(|r| r.iter().copied().collect()).collect(),
        smallest_eigenvalue: Some(lmin),
        verdict: if lmin > threshold { CoercivityVerdict::Coercive } else { CoercivityVerdict::NotCoercive },
        margin: lmin,
    })
}

pub fn coercivity_verdict(
    space: &AdmissibleSpace,
    data: &PullbackData,
    z: &ZeroStructure,
    threshold: f64,
) -> Result<SecondVariationReport> {
    coercivity_from_form(space, |e| evaluate_reduced_j(data, z, e), threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `residual / max(|lhs|, |rhs|)`.
    pub relative: f64,
}

impl IdentityResidual {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        let residual = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        IdentityResidual {
            name: name.into(),
            lhs,
            rhs,
            residual,
            relative: if scale > 0.0 { residual / scale } else { 0.0 },
        }
    }
}

/// Left sides from pull-back data only.
fn identity_lhs(data: &PullbackData, z: &ZeroStructure, brackets: &[DVector<f64>]) -> [f64; 3] {
    let w = &data.abs_psi_integral_gradient;
    let cost = |b: &DVector<f64>| data.lie_beta(b) + w.dot(b);
    let s1 = z.a0 as f64 * if z.n1() % 2 == 0 { 1.0 } else { -1.0 };
    let a2 = z.a2 as f64;
    let g2g1 = cost(&brackets[0]) - s1 * data.lie_tau1.values[1];
    let g3g2 = cost(&brackets[2]) + a2 * data.lie_tau2.values[1];
    let g3g1 = cost(&brackets[1]) - s1 * data.lie_tau1.values[2] + a2 * data.lie_tau2.values[0];
    [g2g1, g3g2, g3g1]
}

/// Right sides from Poisson brackets on the extremal; the last transports `H⃗₁(ℓ̂₁)` to `ℓ̂₂`.
fn identity_rhs(problem: &ProblemDefinition, path: &ExtremalPath, settings: &Settings) -> Result<[f64; 3]> {
    let n = path.n;
    let (b1, b2) = switching_brackets(path, problem)?;
    let s = &path.schedule;
    let l1 = path.ell1();
    let l2 = path.ell2();
    let split = |y: &DVector<f64>| (y.rows(0, n).into_owned(), y.rows(n, n).into_owned());
    let psi = problem.psi.as_ref();
    let h1 = path.hamiltonian(problem, path.last_tag_arc1());
    let h2 = path.hamiltonian(problem, crate::extremal::ArcTag::H2);
    let h3 = path.hamiltonian(problem, path.first_tag_arc3());
    let (x1, p1) = split(&l1);
    let v = h1.vector_field(psi, &p1, &x1);
    let sys = HamiltonianVariational { ham: &h2, psi };
    let y0 = pack_state_matrix(&l1, &DMatrix::identity(2 * n, 2 * n));
    let (traj, _) = integrate(&sys, s.tau1, &y0, s.tau2, &[], &settings.tight_tolerances())?;
    let (_, phi) = unpack_state_matrix(traj.last(), 2 * n);
    let (x2, p2) = split(&l2);
    let transported = phi * v;
    let g3g1 = -h3.differential(psi, &p2, &x2).dot(&transported);
    Ok([-b1, -b2, g3g1])
}

const IDENTITY_NAMES: [&str; 3] = ["G2G1", "G3G2", "G3G1"];

pub fn check_bracket_identities(
    problem: &ProblemDefinition,
    path: &ExtremalPath,
    data: &PullbackData,
    settings: &Settings,
) -> Result<Vec<IdentityResidual>> {
    let lhs = identity_lhs(data, &path.zero_structure, &data.brackets);
    let rhs = identity_rhs(problem, path, settings)?;
    Ok((0..3).map(|k| IdentityResidual::new(IDENTITY_NAMES[k], lhs[k], rhs[k])).collect())
}

/// Identity residuals with plain central-difference brackets at two steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityConvergence {
    pub steps: [f64; 2],
    pub residuals: [[f64; 3]; 2],
    /// `r(h) / r(h/2)` per identity.
    pub ratios: [f64; 3],
    /// Residuals below this are at the integration floor.
    pub floor: f64,
    /// Every identity either shrinks at least threefold or stays at the floor.
    pub second_order: bool,
}

pub fn identity_convergence(
    problem: &ProblemDefinition,
    path: &ExtremalPath,
    flow: &ReferenceFlow,
    data: &PullbackData,
    step: f64,
    settings: &Settings,
) -> Result<IdentityConvergence> {
    let rhs = identity_rhs(problem, path, settings)?;
    let x0 = &path.schedule.x0;
    let mut residuals = [[0.0; 3]; 2];
    for (k, h) in [step, 0.5 * step].into_iter().enumerate() {
        let br = pullback_brackets(flow, &data.g, x0, FdScheme { step: h, richardson: false })?;
        let lhs = identity_lhs(data, &path.zero_structure, &br);
        residuals[k] = [0, 1, 2].map(|i| (lhs[i] - rhs[i]).abs());
    }
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-9 * scale;
    let ratios = [0, 1, 2].map(|i| residuals[0][i] / residuals[1][i].max(f64::MIN_POSITIVE));
    let second_order =
        (0..3).all(|i| ratios[i] >= 3.0 || (residuals[0][i] <= floor && residuals[1][i] <= floor));
    Ok(IdentityConvergence { steps: [step, 0.5 * step], residuals, ratios, floor, second_order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn independent_fields_give_trivial_space() {
        let s = admissible_space(&[dvector![1.0, 0.0], dvector![0.0, 1.0], dvector![1.0, 1.0]]);
        assert_eq!(s.dimension, 0);
    }

    #[test]
    fn parallel_fields_give_one_dimension() {
        let s = admissible_space(&[dvector![1.0, 0.0], dvector![2.0, 0.0], dvector![3.0, 0.0]]);
        assert_eq!(s.dimension, 1);
        let b = s.basis[0];
        let scale = b[0];
        for (x, y) in b.iter().zip([1.0, -2.0, 1.0]) {
            assert!((x / scale - y).abs() < 1e-12);
        }
        // brute force: both constraints vanish on the basis
        assert!((b[0] + b[1] + b[2]).abs() < 1e-12);
        assert!((b[0] + 2.0 * b[1] + 3.0 * b[2]).abs() < 1e-12);
    }

    #[test]
    fn coincident_fields_give_two_dimensions() {
        let g = dvector![0.3, -0.1];
        let s = admissible_space(&[g.clone(), g.clone(), g]);
        assert_eq!(s.dimension, 2);
    }

    #[test]
    fn scalar_forms() {
        let space = AdmissibleSpace { basis: vec![[1.0, -2.0, 1.0]], dimension: 1, singular_values: vec![] };
        let pos = coercivity_from_form(&space, |e| Ok(e[0] * e[0]), 1e-7).unwrap();
        assert_eq!(pos.verdict, CoercivityVerdict::Coercive);
        let neg = coercivity_from_form(&space, |e| Ok(-e[0] * e[0]), 1e-7).unwrap();
        assert_eq!(neg.verdict, CoercivityVerdict::NotCoercive);
        assert_eq!(neg.smallest_eigenvalue, Some(-1.0));
    }

    #[test]
    fn polarization_is_symmetric_and_consistent() {
        let space = AdmissibleSpace { basis: vec![[1.0, 0.0, -1.0], [0.0, 1.0, -1.0]], dimension: 2, singular_values: vec![] };
        let form = |e: [f64; 3]| Ok(2.0 * e[0] * e[0] + 3.0 * e[0] * e[1] - e[1] * e[1] + 0.5 * e[2] * e[2]);
        let r = coercivity_from_form(&space, form, 1e-7).unwrap();
        assert_eq!(r.quadratic_form[0][1], r.quadratic_form[1][0]);
        let q = &r.quadratic_form;
        let sum = form([1.0, 1.0, -2.0]).unwrap();
        assert!((q[0][0] + q[1][1] + 2.0 * q[0][1] - sum).abs() < 1e-12);
    }
}
