//! Problem definition on a single chart and the bracket calculus.
//!
//! Phase-space points are stored as `[x; p]` (state first). The symplectic
//! form is `σ(a, b) = ⟨a_p, b_x⟩ − ⟨b_p, a_x⟩` and the Hamiltonian vector
//! field of `F` is `(ẋ, ṗ) = (∂F/∂p, −∂F/∂x)`, so `{F, G} = σ(F⃗, G⃗)` is the
//! derivative of `G` along the flow of `F`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type StatePoint = DVector<f64>;
pub type Covector = DVector<f64>;

/// Central-difference step for coordinate `xi`.
pub fn fd_step(xi: f64) -> f64 {
    f64::EPSILON.cbrt() * xi.abs().max(1.0)
}

/// Jacobian of `f` at `x` by central differences, one column per coordinate.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut y = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        y[j] = x[j] + h;
        let fp = f(&y);
        y[j] = x[j] - h;
        let fm = f(&y);
        y[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &StatePoint) -> DVector<f64>;

    fn jacobian(&self, x: &StatePoint) -> DMatrix<f64> {
        fd_jacobian(|y| self.value(y), x)
    }

    /// Hessians of the components, `out[k][(i, j)] = ∂²f_k/∂x_i∂x_j`.
    fn second_derivative(&self, x: &StatePoint) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        let mut out = vec![DMatrix::zeros(n, n); n];
        let mut y = x.clone();
        for j in 0..n {
            let h = fd_step(x[j]);
            y[j] = x[j] + h;
            let jp = self.jacobian(&y);
            y[j] = x[j] - h;
            let jm = self.jacobian(&y);
            y[j] = x[j];
            let d = (jp - jm) / (2.0 * h);
            for (k, hk) in out.iter_mut().enumerate() {
                for i in 0..n {
                    hk[(i, j)] = d[(k, i)];
                }
            }
        }
        for hk in out.iter_mut() {
            let s = (&*hk + hk.transpose()) * 0.5;
            *hk = s;
        }
        out
    }

    /// Hessian in `x` of the lift `⟨p, f(x)⟩`.
    fn lift_hessian(&self, x: &StatePoint, p: &Covector) -> DMatrix<f64> {
        let n = self.dim();
        let mut acc = DMatrix::zeros(n, n);
        for (k, hk) in self.second_derivative(x).iter().enumerate() {
            acc += hk * p[k];
        }
        acc
    }
}

pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &StatePoint) -> f64;

    fn gradient(&self, x: &StatePoint) -> DVector<f64> {
        let g = fd_jacobian(|y| DVector::from_element(1, self.value(y)), x);
        g.row(0).transpose()
    }

    fn hessian(&self, x: &StatePoint) -> DMatrix<f64> {
        let h = fd_jacobian(|y| self.gradient(y), x);
        (&h + h.transpose()) * 0.5
    }
}

type VecFn = Box<dyn Fn(&StatePoint) -> DVector<f64> + Send + Sync>;
type MatFn = Box<dyn Fn(&StatePoint) -> DMatrix<f64> + Send + Sync>;
type TensorFn = Box<dyn Fn(&StatePoint) -> Vec<DMatrix<f64>> + Send + Sync>;
type RealFn = Box<dyn Fn(&StatePoint) -> f64 + Send + Sync>;

/// Vector field from closures; missing derivatives fall back to finite differences.
pub struct FnField {
    dim: usize,
    value: VecFn,
    jacobian: Option<MatFn>,
    second: Option<TensorFn>,
}

impl FnField {
    pub fn new(dim: usize, value: impl Fn(&StatePoint) -> DVector<f64> + Send + Sync + 'static) -> Self {
        FnField { dim, value: Box::new(value), jacobian: None, second: None }
    }

    pub fn with_jacobian(mut self, j: impl Fn(&StatePoint) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Box::new(j));
        self
    }

    pub fn with_second_derivative(
        mut self,
        s: impl Fn(&StatePoint) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.second = Some(Box::new(s));
        self
    }

    /// Constant field.
    pub fn constant(c: DVector<f64>) -> Self {
        let n = c.len();
        let v = c.clone();
        FnField::new(n, move |_| v.clone())
            .with_jacobian(move |_| DMatrix::zeros(n, n))
            .with_second_derivative(move |_| vec![DMatrix::zeros(n, n); n])
    }

    /// Linear field `x ↦ A x`.
    pub fn linear(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        let a2 = a.clone();
        FnField::new(n, move |x| &a * x)
            .with_jacobian(move |_| a2.clone())
            .with_second_derivative(move |_| vec![DMatrix::zeros(n, n); n])
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &StatePoint) -> DVector<f64> {
        (self.value)(x)
    }
    fn jacobian(&self, x: &StatePoint) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => fd_jacobian(|y| (self.value)(y), x),
        }
    }
    fn second_derivative(&self, x: &StatePoint) -> Vec<DMatrix<f64>> {
        match &self.second {
            Some(s) => s(x),
            None => {
                let n = self.dim;
                let mut out = vec![DMatrix::zeros(n, n); n];
                let mut y = x.clone();
                for j in 0..n {
                    let h = fd_step(x[j]);
                    y[j] = x[j] + h;
                    let jp = self.jacobian(&y);
                    y[j] = x[j] - h;
                    let jm = self.jacobian(&y);
                    y[j] = x[j];
                    let d = (jp - jm) / (2.0 * h);
                    for (k, hk) in out.iter_mut().enumerate() {
                        for i in 0..n {
                            hk[(i, j)] = d[(k, i)];
                        }
                    }
                }
                out.into_iter().map(|h| (&h + h.transpose()) * 0.5).collect()
            }
        }
    }
}

/// Scalar field from closures.
pub struct FnScalar {
    dim: usize,
    value: RealFn,
    gradient: Option<VecFn>,
    hessian: Option<MatFn>,
}

impl FnScalar {
    pub fn new(dim: usize, value: impl Fn(&StatePoint) -> f64 + Send + Sync + 'static) -> Self {
        FnScalar { dim, value: Box::new(value), gradient: None, hessian: None }
    }

    pub fn with_gradient(mut self, g: impl Fn(&StatePoint) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Box::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&StatePoint) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Box::new(h));
        self
    }

    /// Affine scalar `x ↦ ⟨c, x⟩ + b`.
    pub fn affine(c: DVector<f64>, b: f64) -> Self {
        let n = c.len();
        let c1 = c.clone();
        FnScalar::new(n, move |x| c1.dot(x) + b)
            .with_gradient(move |_| c.clone())
            .with_hessian(move |_| DMatrix::zeros(n, n))
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &StatePoint) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &StatePoint) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => fd_jacobian(|y| DVector::from_element(1, (self.value)(y)), x).row(0).transpose(),
        }
    }
    fn hessian(&self, x: &StatePoint) -> DMatrix<f64> {
        let h = match &self.hessian {
            Some(h) => h(x),
            None => fd_jacobian(|y| self.gradient(y), x),
        };
        (&h + h.transpose()) * 0.5
    }
}

/// `a + u·b`, the arc field `h = f₀ + u f₁`.
pub struct Combination {
    pub a: Arc<dyn VectorField>,
    pub b: Arc<dyn VectorField>,
    pub u: f64,
}

impl VectorField for Combination {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value(&self, x: &StatePoint) -> DVector<f64> {
        self.a.value(x) + self.b.value(x) * self.u
    }
    fn jacobian(&self, x: &StatePoint) -> DMatrix<f64> {
        self.a.jacobian(x) + self.b.jacobian(x) * self.u
    }
    fn second_derivative(&self, x: &StatePoint) -> Vec<DMatrix<f64>> {
        let sa = self.a.second_derivative(x);
        if self.u == 0.0 {
            return sa;
        }
        let sb = self.b.second_derivative(x);
        sa.into_iter().zip(sb).map(|(a, b)| a + b * self.u).collect()
    }
}

fn check_finite(v: &DVector<f64>, what: &str, x: &StatePoint) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("{what} is not finite at x = {:?}", x.as_slice())))
    }
}

/// `⟨dφ(x), f(x)⟩`.
pub fn lie_derivative(field: &dyn VectorField, scalar: &dyn ScalarField, x: &StatePoint) -> Result<f64> {
    let f = field.value(x);
    check_finite(&f, "field value", x)?;
    let g = scalar.gradient(x);
    check_finite(&g, "scalar gradient", x)?;
    Ok(g.dot(&f))
}

/// `[f, g](x) = Dg(x) f(x) − Df(x) g(x)`.
pub fn lie_bracket(f: &dyn VectorField, g: &dyn VectorField, x: &StatePoint) -> Result<DVector<f64>> {
    let fv = f.value(x);
    let gv = g.value(x);
    check_finite(&fv, "field value", x)?;
    check_finite(&gv, "field value", x)?;
    let out = g.jacobian(x) * fv - f.jacobian(x) * gv;
    check_finite(&out, "bracket", x)?;
    Ok(out)
}

/// `⟨ℓ, f(x)⟩`.
pub fn hamiltonian_lift(field: &dyn VectorField, ell: &Covector, x: &StatePoint) -> f64 {
    ell.dot(&field.value(x))
}

/// `H(p, x) = ⟨p, h(x)⟩ + c·ψ(x)`.
#[derive(Clone)]
pub struct AffineHamiltonian {
    pub field: Arc<dyn VectorField>,
    pub psi_coeff: f64,
}

impl fmt::Debug for AffineHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineHamiltonian").field("psi_coeff", &self.psi_coeff).finish()
    }
}

impl AffineHamiltonian {
    pub fn new(field: Arc<dyn VectorField>, psi_coeff: f64) -> Self {
        AffineHamiltonian { field, psi_coeff }
    }

    pub fn value(&self, psi: &dyn ScalarField, p: &Covector, x: &StatePoint) -> f64 {
        p.dot(&self.field.value(x)) + self.psi_coeff * psi.value(x)
    }

    /// `(ẋ, ṗ)` stacked as `[x; p]`.
    pub fn vector_field(&self, psi: &dyn ScalarField, p: &Covector, x: &StatePoint) -> DVector<f64> {
        let n = x.len();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&self.field.value(x));
        let mut dp = -(self.field.jacobian(x).transpose() * p);
        if self.psi_coeff != 0.0 {
            dp -= psi.gradient(x) * self.psi_coeff;
        }
        out.rows_mut(n, n).copy_from(&dp);
        out
    }

    /// Differential `dH` stacked as `[∂H/∂x; ∂H/∂p]`.
    pub fn differential(&self, psi: &dyn ScalarField, p: &Covector, x: &StatePoint) -> DVector<f64> {
        let n = x.len();
        let mut out = DVector::zeros(2 * n);
        let mut hx = self.field.jacobian(x).transpose() * p;
        if self.psi_coeff != 0.0 {
            hx += psi.gradient(x) * self.psi_coeff;
        }
        out.rows_mut(0, n).copy_from(&hx);
        out.rows_mut(n, n).copy_from(&self.field.value(x));
        out
    }

    /// Jacobian of the Hamiltonian vector field in `[x; p]` coordinates.
    pub fn linearization(&self, psi: &dyn ScalarField, p: &Covector, x: &StatePoint) -> DMatrix<f64> {
        let n = x.len();
        let dh = self.field.jacobian(x);
        let mut hxx = self.field.lift_hessian(x, p);
        if self.psi_coeff != 0.0 {
            hxx += psi.hessian(x) * self.psi_coeff;
        }
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&dh);
        a.view_mut((n, 0), (n, n)).copy_from(&(-hxx));
        a.view_mut((n, n), (n, n)).copy_from(&(-dh.transpose()));
        a
    }
}

pub type GeneralHamiltonian = Arc<dyn Fn(&Covector, &StatePoint) -> f64 + Send + Sync>;

/// A Hamiltonian on the cotangent bundle. Only the affine family supports brackets.
#[derive(Clone)]
pub enum Hamiltonian {
    Affine(AffineHamiltonian),
    General(GeneralHamiltonian),
}

impl Hamiltonian {
    pub fn value(&self, psi: &dyn ScalarField, p: &Covector, x: &StatePoint) -> f64 {
        match self {
            Hamiltonian::Affine(h) => h.value(psi, p, x),
            Hamiltonian::General(h) => h(p, x),
        }
    }
}

/// `{F, G}(ℓ) = ⟨ℓ, [h_F, h_G]⟩ + c_G·L_{h_F}ψ − c_F·L_{h_G}ψ` for affine `F`, `G`.
pub fn poisson_bracket(
    f: &Hamiltonian,
    g: &Hamiltonian,
    psi: &dyn ScalarField,
    ell: &Covector,
    x: &StatePoint,
) -> Result<f64> {
    let (Hamiltonian::Affine(f), Hamiltonian::Affine(g)) = (f, g) else {
        return Err(Error::UnsupportedForm);
    };
    let br = lie_bracket(f.field.as_ref(), g.field.as_ref(), x)?;
    let mut out = ell.dot(&br);
    if g.psi_coeff != 0.0 {
        out += g.psi_coeff * lie_derivative(f.field.as_ref(), psi, x)?;
    }
    if f.psi_coeff != 0.0 {
        out -= f.psi_coeff * lie_derivative(g.field.as_ref(), psi, x)?;
    }
    Ok(out)
}

/// `σ(a, b) = ⟨a_p, b_x⟩ − ⟨b_p, a_x⟩` for `[x; p]` stacked vectors.
pub fn symplectic(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() / 2;
    a.rows(n, n).dot(&b.rows(0, n)) - b.rows(n, n).dot(&a.rows(0, n))
}

/// The triple `(f₀, f₁, ψ)` defining `ẋ = f₀ + u f₁` with running cost `|u ψ(x)|`.
#[derive(Clone)]
pub struct ProblemDefinition {
    pub name: String,
    pub n: usize,
    pub f0: Arc<dyn VectorField>,
    pub f1: Arc<dyn VectorField>,
    pub psi: Arc<dyn ScalarField>,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition").field("name", &self.name).field("n", &self.n).finish()
    }
}

impl ProblemDefinition {
    pub fn new(
        name: impl Into<String>,
        f0: Arc<dyn VectorField>,
        f1: Arc<dyn VectorField>,
        psi: Arc<dyn ScalarField>,
    ) -> Result<Self> {
        let n = f0.dim();
        if n == 0 || f1.dim() != n || psi.dim() != n {
            return Err(Error::Dimension(format!(
                "f0 has dimension {n}, f1 {}, psi {}",
                f1.dim(),
                psi.dim()
            )));
        }
        Ok(ProblemDefinition { name: name.into(), n, f0, f1, psi })
    }

    /// `h = f₀ + u f₁`.
    pub fn arc_field(&self, u: f64) -> Arc<dyn VectorField> {
        if u == 0.0 {
            return self.f0.clone();
        }
        Arc::new(Combination { a: self.f0.clone(), b: self.f1.clone(), u })
    }

    pub fn hamiltonian(&self, u: f64, sigma: f64) -> AffineHamiltonian {
        AffineHamiltonian::new(self.arc_field(u), sigma)
    }
}

/// Largest mixed error between supplied and finite-difference derivatives over the probes.
pub fn check_consistency(field: &dyn VectorField, probes: &[StatePoint]) -> f64 {
    let mut worst: f64 = 0.0;
    for x in probes {
        let j = field.jacobian(x);
        let jf = fd_jacobian(|y| field.value(y), x);
        for (a, b) in j.iter().zip(jf.iter()) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    worst
}

/// Same as [`check_consistency`] for the gradient and Hessian of a scalar field.
pub fn check_scalar_consistency(scalar: &dyn ScalarField, probes: &[StatePoint]) -> f64 {
    let mut worst: f64 = 0.0;
    for x in probes {
        let g = scalar.gradient(x);
        let gf = fd_jacobian(|y| DVector::from_element(1, scalar.value(y)), x);
        for (a, b) in g.iter().zip(gf.iter()) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
        let h = scalar.hessian(x);
        let hf = fd_jacobian(|y| scalar.gradient(y), x);
        for (a, b) in h.iter().zip(hf.iter()) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    worst
}
