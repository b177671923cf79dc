use nalgebra::DVector;
use serde::Serialize;

use super::{brent, Trajectory};
use crate::error::{Error, Result};

/// Sign-change roots of a scalar along a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ZeroScan {
    /// Roots at least one exclusion window away from both ends.
    pub interior: Vec<f64>,
    /// Roots inside an end window, and ends where the scalar is within `value_tol` of 0.
    pub endpoint: Vec<f64>,
    /// Genuine sign changes that fell inside an end window.
    pub endpoint_roots: Vec<f64>,
}

const SUBDIVISIONS: usize = 8;

/// Locate sign changes of `scalar(t, y(t))` on the dense output of `traj`.
pub fn locate_zeros(
    traj: &Trajectory,
    scalar: &dyn Fn(f64, &DVector<f64>) -> f64,
    exclusion_window: f64,
    value_tol: f64,
) -> Result<ZeroScan> {
    let (t0, t1) = (traj.t0(), traj.t1());
    let g = |t: f64| scalar(t, &traj.dense_eval(t));
    let root_tol = (1e-14 * (t1 - t0).max(1.0)).max(f64::EPSILON * t1.abs());
    let mut roots: Vec<f64> = Vec::new();

    for (a, b) in traj.segment_bounds() {
        let ts: Vec<f64> = (0..=SUBDIVISIONS)
            .map(|k| if k == SUBDIVISIONS { b } else { a + (b - a) * k as f64 / SUBDIVISIONS as f64 })
            .collect();
        let vs: Vec<f64> = ts.iter().map(|&t| g(t)).collect();
        for k in 0..SUBDIVISIONS {
            let (ta, tb, va, vb) = (ts[k], ts[k + 1], vs[k], vs[k + 1]);
            if va * vb < 0.0 {
                let r = brent(g, ta, tb, va, vb, root_tol, 200).ok_or(Error::EventRefinement { t: ta })?;
                roots.push(r);
            } else if vb == 0.0 && va != 0.0 {
                roots.push(tb);
            } else if va != 0.0 && vb != 0.0 {
                let vm = g(0.5 * (ta + tb));
                if vm * va < 0.0 && vm.abs() > value_tol {
                    return Err(Error::Resolution { t: 0.5 * (ta + tb) });
                }
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 2.0 * root_tol);

    let mut scan = ZeroScan::default();
    if g(t0).abs() <= value_tol {
        scan.endpoint.push(t0);
    }
    for r in roots {
        if r - t0 < exclusion_window || t1 - r < exclusion_window {
            let near_start = r - t0 < exclusion_window;
            scan.endpoint_roots.push(r);
            let already = scan.endpoint.iter().any(|&e| if near_start { e == t0 } else { e == t1 });
            if !already {
                scan.endpoint.push(if near_start { t0 } else { t1 });
            }
        } else {
            scan.interior.push(r);
        }
    }
    if g(t1).abs() <= value_tol && !scan.endpoint.contains(&t1) {
        scan.endpoint.push(t1);
    }
    Ok(scan)
}
