//! Electric-vehicle benchmark: closed-form oracle, end-to-end verification and a cost probe.

mod probe;

use nalgebra::dvector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremal::ReferenceSchedule;
use crate::problems::vehicle_problem;
use crate::report::{verify, VerificationReport};
use crate::settings::Settings;

pub use probe::{perturbation_probe, ProbeConfig, ProbePoint, ProbeTable};

/// `ẋ₁ = x₂, ẋ₂ = u − αx₂` from the origin to `(X, 0)` in time `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleInstance {
    pub alpha: f64,
    #[serde(rename = "X")]
    pub x_target: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
}

/// Closed-form data of the bang–zero–bang branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleOracle {
    pub t_min: f64,
    pub t_lim: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub p1: f64,
    pub p2_0: f64,
    /// `η(τ̂₁)/α`, coefficient of `f₀₁` in `g₂`.
    pub g2_coeff: f64,
    /// `(η(τ̂₁) + η(τ̂₂))/α`, coefficient of `f₀₁` in `g₃`.
    pub g3_coeff: f64,
}

/// `η(t) = 1 − e^{αt}`.
pub fn eta(alpha: f64, t: f64) -> f64 {
    1.0 - (alpha * t).exp()
}

/// Minimum transfer time.
pub fn t_min(alpha: f64, x: f64) -> f64 {
    let r = (1.0 - (-alpha * alpha * x).exp()).sqrt();
    ((1.0 + r) / (1.0 - r)).ln() / alpha
}

/// Largest horizon of the bang–zero–bang branch.
pub fn t_lim(alpha: f64, x: f64) -> f64 {
    let a = (1.0 + 2f64.sqrt()) * (alpha * alpha * x).exp() - 1.0;
    (a + (a * a - 1.0).sqrt()).ln() / alpha
}

impl VehicleInstance {
    pub fn new(alpha: f64, x_target: f64, t_final: f64) -> Self {
        VehicleInstance { alpha, x_target, t_final }
    }

    /// Mid-point of the branch `(T_min + T_lim)/2`.
    pub fn mid_range(alpha: f64, x_target: f64) -> Self {
        VehicleInstance { alpha, x_target, t_final: 0.5 * (t_min(alpha, x_target) + t_lim(alpha, x_target)) }
    }
}

/// Every closed form of the branch, evaluated as printed.
pub fn oracle(inst: &VehicleInstance) -> Result<VehicleOracle> {
    let VehicleInstance { alpha: a, x_target: x, t_final: t } = *inst;
    if !(a > 0.0 && x > 0.0 && t.is_finite()) {
        return Err(Error::BranchInapplicable(format!("need alpha > 0 and X > 0, got alpha = {a}, X = {x}")));
    }
    let (tmin, tlim) = (t_min(a, x), t_lim(a, x));
    if !(t > tmin && t <= tlim) {
        return Err(Error::BranchInapplicable(format!("T = {t} outside (T_min, T_lim] = ({tmin}, {tlim}]")));
    }
    let eat = (a * t).exp();
    let disc = 1.0 + 2.0 * eat + eat * eat - 4.0 * (a * a * x + a * t).exp();
    let tau1 = (0.5 * (1.0 + eat - disc.max(0.0).sqrt())).ln() / a;
    let tau2 = (1.0 - (a * tau1).exp() + eat).ln() / a;
    let d = tau2 - tau1;
    let p1 = (-a * tau2).exp() * ((a * tau1).exp() - 1.0) * (1.0 + (2.0 * a * d).exp()) / ((a * d).exp() - 1.0);
    let e1 = (-a * tau1).exp();
    let p2_0 = (1.0 - e1) * (p1 - 1.0 + e1) / a;
    Ok(VehicleOracle {
        t_min: tmin,
        t_lim: tlim,
        tau1,
        tau2,
        p1,
        p2_0,
        g2_coeff: eta(a, tau1) / a,
        g3_coeff: (eta(a, tau1) + eta(a, tau2)) / a,
    })
}

impl VehicleOracle {
    pub fn schedule(&self, inst: &VehicleInstance) -> ReferenceSchedule {
        ReferenceSchedule {
            t_final: inst.t_final,
            tau1: self.tau1,
            tau2: self.tau2,
            u1: 1.0,
            u3: -1.0,
            x0: dvector![0.0, 0.0],
            xf: dvector![inst.x_target, 0.0],
            lambda0: dvector![self.p1, self.p2_0],
        }
    }

    /// `x₂(τ̂₁) = (1 − e^{−ατ̂₁})/α`.
    pub fn x2_tau1(&self, alpha: f64) -> f64 {
        (1.0 - (-alpha * self.tau1).exp()) / alpha
    }

    /// `x₂(τ̂₂) = e^{−ατ̂₂}(e^{ατ̂₁} − 1)/α`.
    pub fn x2_tau2(&self, alpha: f64) -> f64 {
        (-alpha * self.tau2).exp() * ((alpha * self.tau1).exp() - 1.0) / alpha
    }

    /// `{H₁, H₂}(ℓ̂₁) = αx₂(τ̂₁)(e^{−αΔ} − e^{αΔ} + 2)/(e^{αΔ} − 1)`, which equals `p₁ − 2αx₂(τ̂₁)`.
    pub fn bracket_h1_h2(&self, alpha: f64) -> f64 {
        let e = (alpha * (self.tau2 - self.tau1)).exp();
        alpha * self.x2_tau1(alpha) * (1.0 / e - e + 2.0) / (e - 1.0)
    }

    /// The same bracket with the extra factor `e^{−ατ̂₂}` of the printed display.
    pub fn bracket_h1_h2_as_printed(&self, alpha: f64) -> f64 {
        (-alpha * self.tau2).exp() * self.bracket_h1_h2(alpha)
    }

    /// `{H₂, H₃}(ℓ̂₂) = αx₂(τ̂₂)((1 + e^{2αΔ})/(e^{αΔ} − 1) + 2)`.
    pub fn bracket_h2_h3(&self, alpha: f64) -> f64 {
        let e = (alpha * (self.tau2 - self.tau1)).exp();
        alpha * self.x2_tau2(alpha) * ((1.0 + e * e) / (e - 1.0) + 2.0)
    }
}

/// Verification of the oracle schedule with every check of the pipeline.
pub fn end_to_end_verify(inst: &VehicleInstance, settings: &Settings) -> Result<VerificationReport> {
    let o = oracle(inst)?;
    let problem = vehicle_problem(inst.alpha);
    let report = verify(&problem, &o.schedule(inst), settings)?;
    Ok(report)
}
