//! Numerical certification of bang–zero–bang extremals for control-affine
//! problems `ẋ = f₀(x) + u f₁(x)`, `|u| ≤ 1`, with running cost `|u ψ(x)|`.
//!
//! The pipeline integrates the candidate extremal, checks the first-order
//! and switching conditions with explicit margins, pulls the arc fields back
//! to the initial point, tests the reduced second variation, and runs the
//! invertibility test for the maximized Hamiltonian flow.

pub mod error;
pub mod extremal;
pub mod geometry;
pub mod hamflow;
pub mod odeflow;
pub mod problems;
pub mod pullback;
pub mod quadrature;
pub mod report;
pub mod secondvar;
mod ser;
pub mod settings;
pub mod vehicle_bench;

pub use error::{Error, Result};
pub use settings::Settings;
