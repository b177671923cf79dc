use nalgebra::{dvector, DVector};
use proptest::prelude::*;

use bzb_core::extremal::{integrate_reference_extremal, ReferenceSchedule};
use bzb_core::geometry::{poisson_bracket, symplectic, Hamiltonian};
use bzb_core::problems::{drag_problem, line_problem, vehicle_problem};
use bzb_core::pullback::{compute_pullback, PullbackData};
use bzb_core::secondvar::{admissible_space, coercivity_verdict, evaluate_reduced_j, CoercivityVerdict};
use bzb_core::vehicle_bench::{oracle, VehicleInstance};
use bzb_core::Settings;

fn vehicle_data() -> (PullbackData, bzb_core::extremal::ZeroStructure) {
    let inst = VehicleInstance::new(1.0, 1.0, 2.3);
    let problem = vehicle_problem(1.0);
    let settings = Settings::default();
    let path = integrate_reference_extremal(&problem, &oracle(&inst).unwrap().schedule(&inst), &settings).unwrap();
    let (_, data) = compute_pullback(&problem, &path, &settings).unwrap();
    (data, path.zero_structure)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reduced_second_variation_is_homogeneous(e in prop::array::uniform3(-3.0f64..3.0), k in -4.0f64..4.0) {
        let (data, z) = vehicle_data_cached();
        let j = evaluate_reduced_j(data, z, e).unwrap();
        let jk = evaluate_reduced_j(data, z, e.map(|c| k * c)).unwrap();
        prop_assert!((jk - k * k * j).abs() <= 1e-10 * (k * k * j).abs().max(1e-12));
    }

    #[test]
    fn symplectic_form_is_antisymmetric(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        prop_assert!((symplectic(&a, &b) + symplectic(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(symplectic(&a, &a), 0.0);
    }

    #[test]
    fn poisson_bracket_is_antisymmetric(x in prop::array::uniform2(-1.0f64..1.0), p in prop::array::uniform2(-2.0f64..2.0), u in prop::sample::select(vec![-1.0, 1.0])) {
        let problem = drag_problem(1.0, 0.3, 0.1);
        let (x, p) = (dvector![x[0], x[1]], dvector![p[0], p[1]]);
        let h = Hamiltonian::Affine(problem.hamiltonian(u, -1.0));
        let z = Hamiltonian::Affine(problem.hamiltonian(0.0, 1.0));
        let psi = problem.psi.as_ref();
        let ab = poisson_bracket(&h, &z, psi, &p, &x).unwrap();
        let ba = poisson_bracket(&z, &h, psi, &p, &x).unwrap();
        prop_assert!((ab + ba).abs() < 1e-9 * (1.0 + ab.abs()));
    }
}

fn vehicle_data_cached() -> &'static (PullbackData, bzb_core::extremal::ZeroStructure) {
    use std::sync::OnceLock;
    static DATA: OnceLock<(PullbackData, bzb_core::extremal::ZeroStructure)> = OnceLock::new();
    DATA.get_or_init(vehicle_data)
}

fn line_schedule(c0: f64) -> ReferenceSchedule {
    ReferenceSchedule {
        t_final: 2.5,
        tau1: 1.0,
        tau2: 2.0,
        u1: 1.0,
        u3: 1.0,
        x0: dvector![0.0],
        xf: dvector![1.5],
        lambda0: dvector![c0],
    }
}

/// `∫|ψ|` over the arcs of the line problem with arc lengths `(L₁, L₂, L₃)` and unit speed.
fn line_cost(c: [f64; 3], lengths: [f64; 3]) -> f64 {
    let big = |x: f64| c[0] * x + 0.5 * c[1] * x * x + c[2] * x * x * x / 3.0;
    let x1 = lengths[0];
    let xf = x1 + lengths[2];
    big(x1) - big(0.0) + big(xf) - big(x1)
}

#[test]
fn line_problem_second_variation_matches_brute_force() {
    for c in [[2.0, 1.0, 0.0], [5.0, -1.0, 0.0], [2.0, 0.5, 0.3]] {
        let problem = line_problem(c[0], c[1], c[2]);
        let settings = Settings::default();
        let path = integrate_reference_extremal(&problem, &line_schedule(c[0]), &settings).unwrap();
        let (_, data) = compute_pullback(&problem, &path, &settings).unwrap();
        let space = admissible_space(&data.g);
        assert_eq!(space.dimension, 1);
        let b = space.basis[0];
        assert!(b[1].abs() < 1e-12 && (b[0] + b[2]).abs() < 1e-12);
        // brute force: second difference of the cost along the admissible family
        let h = 1e-3;
        let l = |s: f64| [1.0 + s * b[0], 1.0 + s * b[1], 0.5 + s * b[2]];
        let brute = (line_cost(c, l(h)) - 2.0 * line_cost(c, l(0.0)) + line_cost(c, l(-h))) / (h * h);
        let j = evaluate_reduced_j(&data, &path.zero_structure, b).unwrap();
        assert!((2.0 * j - brute).abs() < 1e-6, "c = {c:?}: J = {j}, brute = {brute}");
        let rep = coercivity_verdict(&space, &data, &path.zero_structure, 1e-7).unwrap();
        assert_eq!(rep.verdict, CoercivityVerdict::NotCoercive);
    }
}
