//! Adaptive Gauss–Kronrod (7, 15) quadrature for vector-valued integrands.

use nalgebra::DVector;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, PartialEq)]
pub struct QuadResult {
    pub value: DVector<f64>,
    pub error: f64,
    pub converged: bool,
    pub intervals: usize,
}

fn gk15<F: Fn(f64) -> DVector<f64>>(f: &F, a: f64, b: f64) -> (DVector<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        let s = &f1 + &f2;
        kron += &s * WGK[j];
        if j % 2 == 1 {
            gauss += &s * WG[j / 2];
        }
    }
    let err = ((&kron - &gauss) * h).amax();
    (kron * h, err)
}

/// Integrate `f` over `[a, b]` until the error estimate is below `max(atol, rtol·|I|)`.
pub fn integrate<F: Fn(f64) -> DVector<f64>>(f: F, a: f64, b: f64, rtol: f64, atol: f64) -> QuadResult {
    if a == b {
        let dim = f(a).len();
        return QuadResult { value: DVector::zeros(dim), error: 0.0, converged: true, intervals: 0 };
    }
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let max_intervals = 2000;
    loop {
        let total: DVector<f64> = parts.iter().fold(DVector::zeros(parts[0].2.len()), |acc, p| acc + &p.2);
        let err: f64 = parts.iter().map(|p| p.3).sum();
        let target = atol.max(rtol * total.amax());
        if err <= target || parts.len() >= max_intervals {
            return QuadResult { value: total, error: err, converged: err <= target, intervals: parts.len() };
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Scalar convenience wrapper.
pub fn integrate_scalar<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rtol: f64, atol: f64) -> (f64, f64, bool) {
    let r = integrate(|t| DVector::from_element(1, f(t)), a, b, rtol, atol);
    (r.value[0], r.error, r.converged)
}
