use serde::{Deserialize, Serialize};

use crate::odeflow::Tolerances;

/// Numerical knobs shared by the whole pipeline. Time-like entries ending in
/// `_rel` are multiplied by the horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Slack separating `pass` from `marginal`.
    pub margin_threshold: f64,
    pub rtol: f64,
    pub atol: f64,
    pub event_tol_rel: f64,
    /// Roots of ψ∘ξ closer than this to an arc end are endpoint zeros.
    pub exclusion_rel: f64,
    /// Radius of the windows around the switches skipped by the maximality check.
    pub ra_exclusion_rel: f64,
    pub ra_samples_per_arc: usize,
    /// Values of ψ below this at an arc end count as endpoint zeros.
    pub zero_value_tol: f64,
    pub boundary_tol: f64,
    /// Crossings with |L_h ψ| below this abort the integration.
    pub tangency_tol: f64,
    /// Relative step of the pullback finite differences.
    pub fd_step: f64,
    pub quad_rtol: f64,
    pub clarke_points: usize,
    /// Hessian `K = c·I` of the initial Lagrangian manifold.
    pub clarke_k: f64,
    /// Also scan `c` over a logarithmic grid and report the best margin.
    pub clarke_k_sweep: bool,
    /// Relative perturbation of the finite-difference switch-time estimates.
    pub switch_fd_step: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            margin_threshold: 1e-7,
            rtol: 1e-10,
            atol: 1e-12,
            event_tol_rel: 1e-12,
            exclusion_rel: 1e-8,
            ra_exclusion_rel: 1e-4,
            ra_samples_per_arc: 400,
            zero_value_tol: 1e-9,
            boundary_tol: 1e-8,
            tangency_tol: 1e-10,
            fd_step: 1e-5,
            quad_rtol: 1e-9,
            clarke_points: 21,
            clarke_k: 0.0,
            clarke_k_sweep: false,
            switch_fd_step: 1e-5,
        }
    }
}

impl Settings {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances::new(self.rtol, self.atol)
    }

    /// Tolerances for flows whose event times are differentiated numerically.
    pub fn tight_tolerances(&self) -> Tolerances {
        Tolerances::new(self.rtol.min(1e-13), self.atol.min(1e-15))
    }

    /// Positive, finite entries everywhere they are required.
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            ("margin_threshold", self.margin_threshold),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("event_tol_rel", self.event_tol_rel),
            ("exclusion_rel", self.exclusion_rel),
            ("ra_exclusion_rel", self.ra_exclusion_rel),
            ("zero_value_tol", self.zero_value_tol),
            ("boundary_tol", self.boundary_tol),
            ("tangency_tol", self.tangency_tol),
            ("fd_step", self.fd_step),
            ("quad_rtol", self.quad_rtol),
            ("switch_fd_step", self.switch_fd_step),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.clarke_points < 2 {
            return Err("clarke_points must be at least 2".into());
        }
        if self.ra_samples_per_arc < 4 {
            return Err("ra_samples_per_arc must be at least 4".into());
        }
        if !self.clarke_k.is_finite() {
            return Err("clarke_k must be finite".into());
        }
        Ok(())
    }
}
