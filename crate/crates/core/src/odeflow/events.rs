use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Any,
    Up,
    Down,
}

impl Direction {
    /// Whether `ga → gb` is a crossing in this direction (`ga ≠ 0`).
    pub fn matches(self, ga: f64, gb: f64) -> bool {
        match self {
            Direction::Any => ga * gb < 0.0 || gb == 0.0,
            Direction::Up => ga < 0.0 && gb >= 0.0,
            Direction::Down => ga > 0.0 && gb <= 0.0,
        }
    }
}

type EventFn<'a> = Box<dyn Fn(f64, &DVector<f64>) -> f64 + 'a>;

pub struct EventSpec<'a> {
    pub function: EventFn<'a>,
    pub direction: Direction,
    pub terminal: bool,
    /// Time tolerance of the root refinement.
    pub tolerance: f64,
}

impl<'a> EventSpec<'a> {
    pub fn new(
        function: impl Fn(f64, &DVector<f64>) -> f64 + 'a,
        direction: Direction,
        terminal: bool,
        tolerance: f64,
    ) -> Self {
        EventSpec { function: Box::new(function), direction, terminal, tolerance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub index: usize,
    pub t: f64,
    pub state: DVector<f64>,
}

/// Brent's bracketing root finder on `[a, b]` with `fa·fb ≤ 0`.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
    max_iter: usize,
) -> Option<f64> {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa * fb > 0.0 {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    None
}
