use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::SwitchDifferentials;
use crate::error::{Error, Result};
use crate::extremal::golden_min;
use crate::ser;

/// Rank-one pieces of the projected linearizations at the switches:
/// `I + a u₁d₁ᵀ` at `τ̂₁` and `I + u₁d₁ᵀ + a u₂d₂ᵀ` at `τ̂₂`, `a ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarkeParts {
    /// `(g₁ − g₂)(x̂₀)`.
    #[serde(serialize_with = "ser::vector")]
    pub u1: DVector<f64>,
    /// `dτ₁` restricted to `δℓ = (δx, Kδx)`.
    #[serde(serialize_with = "ser::vector")]
    pub d1: DVector<f64>,
    /// `(g₂ − g₃)(x̂₀)`.
    #[serde(serialize_with = "ser::vector")]
    pub u2: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub d2: DVector<f64>,
}

impl ClarkeParts {
    pub fn matrix(&self, switch: usize, a: f64) -> DMatrix<f64> {
        let n = self.u1.len();
        let r1 = &self.u1 * self.d1.transpose();
        match switch {
            1 => DMatrix::identity(n, n) + r1 * a,
            _ => DMatrix::identity(n, n) + r1 + (&self.u2 * self.d2.transpose()) * a,
        }
    }

    pub fn sigma_min(&self, switch: usize, a: f64) -> f64 {
        self.matrix(switch, a).singular_values().min()
    }
}

/// Builds the parts for the Lagrangian manifold `p = c·x` (tangent `δp = c δx`).
pub fn clarke_parts(g: &[DVector<f64>], d: &SwitchDifferentials, c: f64) -> ClarkeParts {
    let n = g[0].len();
    let restrict = |v: &DVector<f64>| v.rows(0, n).into_owned() + v.rows(n, n).into_owned() * c;
    ClarkeParts { u1: &g[0] - &g[1], d1: restrict(&d.dtau1), u2: &g[1] - &g[2], d2: restrict(&d.dtau2) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClarkePoint {
    pub switch: usize,
    pub a: f64,
    pub sigma_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClarkeSweepPoint {
    pub c: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarkeReport {
    pub c: f64,
    pub parts: ClarkeParts,
    pub grid: Vec<ClarkePoint>,
    /// Smallest singular value over both switches and all `a ∈ [0, 1]`.
    pub margin: f64,
    pub worst: ClarkePoint,
    pub sweep: Vec<ClarkeSweepPoint>,
    pub best_c: Option<f64>,
    pub best_margin: Option<f64>,
}

/// Grid over `a` with golden refinement around the smallest value of each switch.
pub fn clarke_scan(parts: &ClarkeParts, c: f64, points: usize) -> Result<ClarkeReport> {
    if points < 2 {
        return Err(Error::InvalidSchedule("clarke scan needs at least two points".into()));
    }
    let mut grid = Vec::with_capacity(2 * points);
    let mut worst = ClarkePoint { switch: 1, a: 0.0, sigma_min: f64::INFINITY };
    for switch in [1, 2] {
        let row: Vec<ClarkePoint> = (0..points)
            .map(|j| {
                let a = j as f64 / (points - 1) as f64;
                ClarkePoint { switch, a, sigma_min: parts.sigma_min(switch, a) }
            })
            .collect();
        let (j, best) = row.iter().enumerate().min_by(|x, y| x.1.sigma_min.total_cmp(&y.1.sigma_min)).unwrap();
        let mut cand = *best;
        let lo = row[j.saturating_sub(1)].a;
        let hi = row[(j + 1).min(points - 1)].a;
        if hi > lo {
            let (a, v) = golden_min(|a| parts.sigma_min(switch, a), lo, hi, 1e-12);
            if v < cand.sigma_min {
                cand = ClarkePoint { switch, a, sigma_min: v };
            }
        }
        if cand.sigma_min < worst.sigma_min {
            worst = cand;
        }
        grid.extend(row);
    }
    Ok(ClarkeReport {
        c,
        parts: parts.clone(),
        grid,
        margin: worst.sigma_min,
        worst,
        sweep: Vec::new(),
        best_c: None,
        best_margin: None,
    })
}

/// Clarke scan at `K = c·I`, optionally sweeping `c ∈ {0, ±10^{k/2}, k = −4..4}`.
pub fn clarke_invertibility(
    g: &[DVector<f64>],
    d: &SwitchDifferentials,
    c: f64,
    points: usize,
    sweep: bool,
) -> Result<ClarkeReport> {
    let mut report = clarke_scan(&clarke_parts(g, d, c), c, points)?;
    if sweep {
        let mut cs = vec![0.0];
        for k in -4..=4 {
            let v = 10f64.powf(k as f64 / 2.0);
            cs.push(v);
            cs.push(-v);
        }
        for cc in cs {
            let m = clarke_scan(&clarke_parts(g, d, cc), cc, points)?.margin;
            report.sweep.push(ClarkeSweepPoint { c: cc, margin: m });
        }
        let best = report.sweep.iter().max_by(|x, y| x.margin.total_cmp(&y.margin)).copied();
        report.best_c = best.map(|b| b.c);
        report.best_margin = best.map(|b| b.margin);
    }
    Ok(report)
}
