use nalgebra::{DMatrix, DVector};

use super::OdeSystem;
use crate::geometry::{AffineHamiltonian, ScalarField, StatePoint, VectorField};

/// `ẏ = f(t, y)` from a closure.
pub struct FnSystem<F: Fn(f64, &DVector<f64>) -> DVector<f64>> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &DVector<f64>) -> DVector<f64>> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, y)
    }
}

/// `ẋ = f(x)`.
pub struct FieldSystem<'a> {
    pub field: &'a dyn VectorField,
}

impl OdeSystem for FieldSystem<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        self.field.value(y)
    }
}

/// `[x; vec M]` with column-major `M`.
pub fn pack_state_matrix(x: &DVector<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    let n = x.len();
    let k = m.len();
    let mut y = DVector::zeros(n + k);
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, k).copy_from_slice(m.as_slice());
    y
}

/// Inverse of [`pack_state_matrix`]; `n` is the length of `x`, the matrix is square in `x`'s
/// dimension times the number of its columns inferred from the remainder.
pub fn unpack_state_matrix(y: &DVector<f64>, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let x = y.rows(0, n).into_owned();
    let k = y.len() - n;
    let cols = k / n;
    let m = DMatrix::from_column_slice(n, cols, &y.as_slice()[n..]);
    (x, m)
}

/// State with the variational equation `Ṁ = Df(x) M`.
pub struct StateVariational<'a> {
    pub field: &'a dyn VectorField,
}

impl OdeSystem for StateVariational<'_> {
    fn dim(&self) -> usize {
        let n = self.field.dim();
        n + n * n
    }
    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        let n = self.field.dim();
        let (x, m) = unpack_state_matrix(y, n);
        let dm = self.field.jacobian(&x) * m;
        pack_state_matrix(&self.field.value(&x), &dm)
    }
}

/// Hamiltonian system of an affine Hamiltonian, phase point `[x; p]`.
pub struct HamiltonianSystem<'a> {
    pub ham: &'a AffineHamiltonian,
    pub psi: &'a dyn ScalarField,
}

impl OdeSystem for HamiltonianSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.ham.field.dim()
    }
    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        let n = self.ham.field.dim();
        let x: StatePoint = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        self.ham.vector_field(self.psi, &p, &x)
    }
}

/// Hamiltonian system with its `2n × 2n` variational equation.
pub struct HamiltonianVariational<'a> {
    pub ham: &'a AffineHamiltonian,
    pub psi: &'a dyn ScalarField,
}

impl OdeSystem for HamiltonianVariational<'_> {
    fn dim(&self) -> usize {
        let n = self.ham.field.dim();
        2 * n + 4 * n * n
    }
    fn rhs(&self, _t: f64, y: &DVector<f64>) -> DVector<f64> {
        let n = self.ham.field.dim();
        let (z, phi) = unpack_state_matrix(y, 2 * n);
        let x: StatePoint = z.rows(0, n).into_owned();
        let p = z.rows(n, n).into_owned();
        let a = self.ham.linearization(self.psi, &p, &x);
        pack_state_matrix(&self.ham.vector_field(self.psi, &p, &x), &(a * phi))
    }
}
