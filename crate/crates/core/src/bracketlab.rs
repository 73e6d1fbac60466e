//! Small laboratory for the quantum-classical bracket and for Hamiltonian and
//! non-Hamiltonian flows of wave fields.
//!
//! Phase points are flat slices `[R_1, …, R_n, P_1, …, P_n]`. Derivatives use a
//! five-point central stencil with step `fd_step·max(1, |x_k|)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Tolerance on the homogeneity residual, relative to the size of its terms.
pub const HOMOGENEITY_TOLERANCE: f64 = 1e-10;

type EvalFn = dyn Fn(&[f64]) -> Result<CMatrix> + Send + Sync;

/// Phase-space dependent d×d operator.
#[derive(Clone)]
pub struct PhaseSpaceOperator {
    dim: usize,
    n_dof: usize,
    fd_step: f64,
    eval: Arc<EvalFn>,
}

impl std::fmt::Debug for PhaseSpaceOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseSpaceOperator")
            .field("dim", &self.dim)
            .field("n_dof", &self.n_dof)
            .field("fd_step", &self.fd_step)
            .finish_non_exhaustive()
    }
}

impl PhaseSpaceOperator {
    pub fn new<F>(dim: usize, n_dof: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> CMatrix + Send + Sync + 'static,
    {
        Self::from_fallible(dim, n_dof, move |x| Ok(f(x)))
    }

    fn from_fallible<F>(dim: usize, n_dof: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<CMatrix> + Send + Sync + 'static,
    {
        Self {
            dim,
            n_dof,
            fd_step: DEFAULT_FD_STEP,
            eval: Arc::new(f),
        }
    }

    /// Operator declared Hermitian; the claim is checked at `samples`.
    pub fn hermitian<F>(dim: usize, n_dof: usize, f: F, samples: &[Vec<f64>]) -> Result<Self>
    where
        F: Fn(&[f64]) -> CMatrix + Send + Sync + 'static,
    {
        let op = Self::new(dim, n_dof, f);
        for x in samples {
            let m = op.eval(x)?;
            let scale = max_abs(&m).max(1.0);
            if max_abs(&(&m - m.adjoint())) > 1e-12 * scale {
                return Err(Error::NotHermitian { point: x.clone() });
            }
        }
        Ok(op)
    }

    /// X-independent operator.
    pub fn constant(m: CMatrix, n_dof: usize) -> Self {
        let dim = m.nrows();
        Self::new(dim, n_dof, move |_| m.clone())
    }

    /// Scalar phase-space function times the identity.
    pub fn classical<F>(dim: usize, n_dof: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(dim, n_dof, move |x| CMatrix::identity(dim, dim) * C64::from(f(x)))
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn eval(&self, x: &[f64]) -> Result<CMatrix> {
        if x.len() != 2 * self.n_dof {
            return Err(Error::Dimension(format!(
                "phase point has {} coordinates, operator expects {}",
                x.len(),
                2 * self.n_dof
            )));
        }
        let m = (self.eval)(x)?;
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::Dimension(format!(
                "operator returned {}x{}, declared {}x{}",
                m.nrows(),
                m.ncols(),
                self.dim,
                self.dim
            )));
        }
        if !m.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFiniteOperator { point: x.to_vec() });
        }
        Ok(m)
    }

    /// ∂/∂x_k by the five-point stencil.
    pub fn partial(&self, x: &[f64], k: usize) -> Result<CMatrix> {
        let h = self.fd_step * x[k].abs().max(1.0);
        let at = |offset: f64| {
            let mut y = x.to_vec();
            y[k] += offset * h;
            self.eval(&y)
        };
        let (m2, m1, p1, p2) = (at(-2.0)?, at(-1.0)?, at(1.0)?, at(2.0)?);
        Ok(((m2 - p2) + (p1 - m1) * C64::from(8.0)) / C64::from(12.0 * h))
    }
}

fn check_compatible(a: &PhaseSpaceOperator, b: &PhaseSpaceOperator) -> Result<()> {
    if a.dim != b.dim || a.n_dof != b.n_dof {
        return Err(Error::Dimension(format!(
            "operators differ in shape: ({}, {} dof) vs ({}, {} dof)",
            a.dim, a.n_dof, b.dim, b.n_dof
        )));
    }
    Ok(())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// {A, B} = Σ_k ∂A/∂R_k ∂B/∂P_k − ∂A/∂P_k ∂B/∂R_k, keeping operator order.
pub fn poisson_bracket(a: &PhaseSpaceOperator, b: &PhaseSpaceOperator, x: &[f64]) -> Result<CMatrix> {
    check_compatible(a, b)?;
    let n = a.n_dof;
    let mut acc = CMatrix::zeros(a.dim, a.dim);
    for k in 0..n {
        acc += a.partial(x, k)? * b.partial(x, n + k)?;
        acc -= a.partial(x, n + k)? * b.partial(x, k)?;
    }
    Ok(acc)
}

/// i[A, B] − ½{A, B} + ½{B, A} with ℏ = 1.
pub fn qc_bracket(a: &PhaseSpaceOperator, b: &PhaseSpaceOperator, x: &[f64]) -> Result<CMatrix> {
    check_compatible(a, b)?;
    let (ma, mb) = (a.eval(x)?, b.eval(x)?);
    let commutator = &ma * &mb - &mb * &ma;
    let half = C64::from(0.5);
    Ok(commutator * C64::new(0.0, 1.0) - poisson_bracket(a, b, x)? * half + poisson_bracket(b, a, x)? * half)
}

/// The bracket (a, b) as an operator in its own right, for nesting.
pub fn bracket_operator(a: &PhaseSpaceOperator, b: &PhaseSpaceOperator) -> Result<PhaseSpaceOperator> {
    check_compatible(a, b)?;
    let (a2, b2) = (a.clone(), b.clone());
    Ok(PhaseSpaceOperator::from_fallible(a.dim, a.n_dof, move |x| qc_bracket(&a2, &b2, x)).with_fd_step(a.fd_step))
}

/// (a,(b,c)) + (c,(a,b)) + (b,(c,a)).
pub fn jacobi_defect(
    a: &PhaseSpaceOperator,
    b: &PhaseSpaceOperator,
    c: &PhaseSpaceOperator,
    x: &[f64],
) -> Result<CMatrix> {
    let bc = bracket_operator(b, c)?;
    let ab = bracket_operator(a, b)?;
    let ca = bracket_operator(c, a)?;
    Ok(qc_bracket(a, &bc, x)? + qc_bracket(c, &ab, x)? + qc_bracket(b, &ca, x)?)
}

/// Size of the stencil error in a Jacobi defect: the change between step h
/// and 2h, floored at 1e-8.
pub fn jacobi_step_noise(
    a: &PhaseSpaceOperator,
    b: &PhaseSpaceOperator,
    c: &PhaseSpaceOperator,
    x: &[f64],
) -> Result<f64> {
    let coarse = |op: &PhaseSpaceOperator| op.clone().with_fd_step(2.0 * op.fd_step);
    let fine = jacobi_defect(a, b, c, x)?;
    let wide = jacobi_defect(&coarse(a), &coarse(b), &coarse(c), x)?;
    Ok(max_abs(&(fine - wide)).max(1e-8))
}

/// Pauli matrix by name (`'x'`, `'y'`, `'z'`; anything else gives 𝟙).
pub fn pauli_matrix(which: char) -> CMatrix {
    let (o, z, i) = (C64::from(1.0), C64::from(0.0), C64::new(0.0, 1.0));
    match which {
        'x' => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        'y' => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        'z' => CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => CMatrix::identity(2, 2),
    }
}

/// Mixed triple on one classical dof with a non-vanishing Jacobi defect:
/// R²σ_x, R²σ_z, P²σ_x. The exact defect is diag(−8R², 8R²).
pub fn witness_triple() -> [PhaseSpaceOperator; 3] {
    let term = |which: char, f: fn(&[f64]) -> f64| {
        let s = pauli_matrix(which);
        PhaseSpaceOperator::new(2, 1, move |x| &s * C64::from(f(x)))
    };
    [
        term('x', |x| x[0] * x[0]),
        term('z', |x| x[0] * x[0]),
        term('x', |x| x[1] * x[1]),
    ]
}

/// Phase point (R, P) at which the witness is evaluated.
pub const WITNESS_POINT: [f64; 2] = [0.7, -0.4];

/// Exact witness defect at `x`.
pub fn witness_exact(x: &[f64]) -> CMatrix {
    let v = 8.0 * x[0] * x[0];
    CMatrix::from_diagonal(&CVector::from_vec(vec![C64::from(-v), C64::from(v)]))
}

/// Wave-field coordinate |Ψ⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    vec: CVector,
}

impl WaveState {
    pub fn new(vec: CVector) -> Result<Self> {
        if !vec.iter().all(|z| z.is_finite()) {
            return Err(Error::Dimension("wave state has non-finite entries".into()));
        }
        Ok(Self { vec })
    }

    pub fn from_slice(v: &[C64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(v))
    }

    pub fn ket(&self) -> &CVector {
        &self.vec
    }

    /// ⟨Ψ| as a column of conjugated entries.
    pub fn bra(&self) -> CVector {
        self.vec.map(|z| z.conj())
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }
}

/// Real functional 𝓗(⟨Ψ|, |Ψ⟩) with its two Wirtinger gradients.
pub trait ObservableFunctional {
    fn value(&self, state: &WaveState) -> f64;
    /// ∂𝓗/∂⟨Ψ|.
    fn grad_bra(&self, state: &WaveState) -> CVector;
    /// ∂𝓗/∂|Ψ⟩.
    fn grad_ket(&self, state: &WaveState) -> CVector;
}

/// ⟨Ψ|Â|Ψ⟩ for Hermitian Â.
#[derive(Debug, Clone)]
pub struct Bilinear(pub CMatrix);

impl ObservableFunctional for Bilinear {
    fn value(&self, s: &WaveState) -> f64 {
        s.ket().dotc(&(&self.0 * s.ket())).re
    }
    fn grad_bra(&self, s: &WaveState) -> CVector {
        &self.0 * s.ket()
    }
    fn grad_ket(&self, s: &WaveState) -> CVector {
        self.0.transpose() * s.bra()
    }
}

/// (⟨Ψ|Â|Ψ⟩)² / ⟨Ψ|Ψ⟩.
#[derive(Debug, Clone)]
pub struct BalancedQuartic(pub CMatrix);

impl ObservableFunctional for BalancedQuartic {
    fn value(&self, s: &WaveState) -> f64 {
        let q = Bilinear(self.0.clone()).value(s);
        q * q / s.ket().norm_squared()
    }
    fn grad_bra(&self, s: &WaveState) -> CVector {
        let q = Bilinear(self.0.clone()).value(s);
        let n = s.ket().norm_squared();
        &self.0 * s.ket() * C64::from(2.0 * q / n) - s.ket() * C64::from(q * q / (n * n))
    }
    fn grad_ket(&self, s: &WaveState) -> CVector {
        let q = Bilinear(self.0.clone()).value(s);
        let n = s.ket().norm_squared();
        self.0.transpose() * s.bra() * C64::from(2.0 * q / n) - s.bra() * C64::from(q * q / (n * n))
    }
}

/// ⟨Ψ|Â|Ψ⟩ + c; not homogeneous unless c = 0.
#[derive(Debug, Clone)]
pub struct Shifted(pub CMatrix, pub f64);

impl ObservableFunctional for Shifted {
    fn value(&self, s: &WaveState) -> f64 {
        Bilinear(self.0.clone()).value(s) + self.1
    }
    fn grad_bra(&self, s: &WaveState) -> CVector {
        Bilinear(self.0.clone()).grad_bra(s)
    }
    fn grad_ket(&self, s: &WaveState) -> CVector {
        Bilinear(self.0.clone()).grad_ket(s)
    }
}

/// Returns the residual, 𝓗, and the magnitude of the summed terms.
fn homogeneity_violation(h: &dyn ObservableFunctional, s: &WaveState) -> (f64, f64, f64) {
    let value = h.value(s);
    let (v, u) = (h.grad_bra(s), h.grad_ket(s));
    let bra_side = s.ket().dotc(&v);
    let ket_side = u.dot(s.ket());
    let residual = (bra_side - value).norm().max((ket_side - value).norm());
    let magnitude = s.ket().iter().zip(v.iter().zip(&u)).map(|(p, (a, b))| p.norm() * a.norm().max(b.norm())).sum();
    (residual, value, magnitude)
}

/// Largest |⟨Ψ|∂𝓗/∂⟨Ψ|⟩ − 𝓗| or |⟨∂𝓗/∂|Ψ⟩|Ψ⟩ − 𝓗| over `states`.
pub fn homogeneity_check(h: &dyn ObservableFunctional, states: &[WaveState]) -> f64 {
    states.iter().map(|s| homogeneity_violation(h, s).0).fold(0.0, f64::max)
}

fn require_homogeneous(h: &dyn ObservableFunctional, s: &WaveState) -> Result<()> {
    let (violation, value, magnitude) = homogeneity_violation(h, s);
    if violation > HOMOGENEITY_TOLERANCE * value.abs().max(magnitude).max(1.0) {
        return Err(Error::Homogeneity { violation });
    }
    Ok(())
}

/// d|Ψ⟩/dt = −i ∂𝓗/∂⟨Ψ|.
pub fn weinberg_rhs(state: &WaveState, h: &dyn ObservableFunctional) -> Result<CVector> {
    require_homogeneous(h, state)?;
    Ok(h.grad_bra(state) * C64::new(0.0, -1.0))
}

/// Off-diagonal blocks of Ω acting on (∂𝓗/∂|Ψ⟩, ∂𝓗/∂⟨Ψ|):
/// d|Ψ⟩/dt = upper·∂𝓗/∂⟨Ψ| and d⟨Ψ|/dt = lower·∂𝓗/∂|Ψ⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaBlocks {
    pub upper: CMatrix,
    pub lower: CMatrix,
}

impl OmegaBlocks {
    /// The canonical structure: upper = −i𝟙, lower = i𝟙.
    pub fn canonical(dim: usize) -> Self {
        let id = CMatrix::identity(dim, dim);
        Self {
            upper: &id * C64::new(0.0, -1.0),
            lower: id * C64::new(0.0, 1.0),
        }
    }

    /// upper = −iK, lower = iKᵀ for Hermitian K.
    pub fn from_hermitian(k: &CMatrix) -> Self {
        Self {
            upper: k * C64::new(0.0, -1.0),
            lower: k.transpose() * C64::new(0.0, 1.0),
        }
    }

    /// Requires Ωᵀ = −Ω and an anti-Hermitian upper block, so that the
    /// ⟨Ψ| flow stays the conjugate of the |Ψ⟩ flow.
    pub fn validate(&self) -> Result<()> {
        let scale = max_abs(&self.upper).max(max_abs(&self.lower)).max(1.0);
        let deviation = max_abs(&(&self.lower + self.upper.transpose()));
        if deviation > 1e-12 * scale {
            return Err(Error::NotAntisymmetric { deviation });
        }
        let deviation = max_abs(&(&self.upper + self.upper.adjoint()));
        if deviation > 1e-12 * scale {
            return Err(Error::OmegaNotAntiHermitian { deviation });
        }
        Ok(())
    }
}

/// d|Ψ⟩/dt for the generalized bracket with state-dependent Ω.
pub fn nh_bracket_rhs(
    state: &WaveState,
    h: &dyn ObservableFunctional,
    omega: &dyn Fn(&WaveState) -> OmegaBlocks,
) -> Result<CVector> {
    require_homogeneous(h, state)?;
    let blocks = omega(state);
    blocks.validate()?;
    if blocks.upper.nrows() != state.dim() || blocks.upper.ncols() != state.dim() {
        return Err(Error::Dimension(format!("omega blocks must be {0}x{0}", state.dim())));
    }
    Ok(blocks.upper * h.grad_bra(state))
}

/// Fixed-step RK4 for an autonomous wave flow; returns all n_steps + 1 states.
pub fn rk4_flow<F>(start: &WaveState, dt: f64, n_steps: usize, rhs: F) -> Result<Vec<WaveState>>
where
    F: Fn(&WaveState) -> Result<CVector>,
{
    let h = C64::from(dt);
    let half = C64::from(0.5 * dt);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(start.clone());
    let mut y = start.ket().clone();
    for _ in 0..n_steps {
        let k1 = rhs(&WaveState::new(y.clone())?)?;
        let k2 = rhs(&WaveState::new(&y + &k1 * half)?)?;
        let k3 = rhs(&WaveState::new(&y + &k2 * half)?)?;
        let k4 = rhs(&WaveState::new(&y + &k3 * h)?)?;
        y += (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(dt / 6.0);
        out.push(WaveState::new(y.clone())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
        let m = CMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&m + m.adjoint()) * C64::from(0.5)
    }

    fn random_state(rng: &mut ChaCha8Rng, d: usize) -> WaveState {
        WaveState::new(CVector::from_fn(d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
            .unwrap()
    }

    /// Smooth operator with coefficients drawn from `seed`.
    fn smooth_operator(seed: u64) -> PhaseSpaceOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats: Vec<CMatrix> = (0..4).map(|_| random_hermitian(&mut rng, 2)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        PhaseSpaceOperator::new(2, 1, move |x| {
            let (r, p) = (x[0], x[1]);
            &mats[0]
                + &mats[1] * C64::from(w[0] * r + w[1] * p * p)
                + &mats[2] * C64::from((w[2] * r * p).sin())
                + &mats[3] * C64::from(w[3] * (r * r).cos())
        })
    }

    #[test]
    fn classical_position_momentum_bracket() {
        let r = PhaseSpaceOperator::classical(2, 1, |x| x[0]);
        let p = PhaseSpaceOperator::classical(2, 1, |x| x[1]);
        let b = qc_bracket(&r, &p, &[0.3, -1.2]).unwrap();
        assert!(max_abs(&(b + CMatrix::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn constant_operators_give_commutator() {
        let (sx, sy) = (pauli_matrix('x'), pauli_matrix('y'));
        let a = PhaseSpaceOperator::constant(sx.clone(), 1);
        let b = PhaseSpaceOperator::constant(sy.clone(), 1);
        let expected = (&sx * &sy - &sy * &sx) * C64::new(0.0, 1.0);
        assert_eq!(qc_bracket(&a, &b, &[0.1, 0.2]).unwrap(), expected);
    }

    #[test]
    fn self_bracket_vanishes() {
        let a = smooth_operator(3);
        assert!(max_abs(&qc_bracket(&a, &a, &[0.4, 0.9]).unwrap()) < 1e-10);
    }

    proptest! {
        #[test]
        fn bracket_is_antisymmetric(sa in 0u64..1000, sb in 0u64..1000, r in -2.0f64..2.0, p in -2.0f64..2.0) {
            let (a, b) = (smooth_operator(sa), smooth_operator(sb + 1000));
            let ab = qc_bracket(&a, &b, &[r, p]).unwrap();
            let ba = qc_bracket(&b, &a, &[r, p]).unwrap();
            prop_assert!(max_abs(&(ab + ba)) < 1e-10);
        }
    }

    #[test]
    fn pure_quantum_jacobi_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops: Vec<_> = (0..3).map(|_| PhaseSpaceOperator::constant(random_hermitian(&mut rng, 3), 2)).collect();
        let j = jacobi_defect(&ops[0], &ops[1], &ops[2], &[0.1, -0.3, 0.7, 0.2]).unwrap();
        assert!(max_abs(&j) < 1e-8);
    }

    #[test]
    fn pure_classical_jacobi_vanishes() {
        let a = PhaseSpaceOperator::classical(2, 2, |x| x[0] * x[2] + x[1].sin());
        let b = PhaseSpaceOperator::classical(2, 2, |x| x[3] * x[3] + x[0] * x[1]);
        let c = PhaseSpaceOperator::classical(2, 2, |x| (x[0] - x[3]).cos());
        let j = jacobi_defect(&a, &b, &c, &[0.3, -0.5, 0.8, 0.1]).unwrap();
        assert!(max_abs(&j) < 1e-8, "{}", max_abs(&j));
    }

    #[test]
    fn low_degree_mixed_triple_satisfies_jacobi() {
        let (sx, sz) = (pauli_matrix('x'), pauli_matrix('z'));
        let sz2 = sz.clone();
        let a = PhaseSpaceOperator::new(2, 1, move |x| {
            CMatrix::identity(2, 2) * C64::from(0.5 * (x[0] * x[0] + x[1] * x[1])) + &sz2 * C64::from(x[0])
        });
        let b = PhaseSpaceOperator::new(2, 1, move |x| &sx * C64::from(x[0]));
        let c = PhaseSpaceOperator::new(2, 1, move |x| &sz * C64::from(x[1]));
        let j = jacobi_defect(&a, &b, &c, &WITNESS_POINT).unwrap();
        assert!(max_abs(&j) < 1e-8);
    }

    #[test]
    fn witness_defect_matches_exact_value() {
        let [a, b, c] = witness_triple();
        let j = jacobi_defect(&a, &b, &c, &WITNESS_POINT).unwrap();
        assert!(max_abs(&(&j - witness_exact(&WITNESS_POINT))) < 1e-6);
        assert!((j[(0, 0)].re + 3.92).abs() < 1e-6);
        let noise = jacobi_step_noise(&a, &b, &c, &WITNESS_POINT).unwrap();
        assert!(max_abs(&j) > 10.0 * noise);
    }

    #[test]
    fn non_finite_evaluation_names_the_point() {
        let a = PhaseSpaceOperator::classical(2, 1, |x| 1.0 / x[0]);
        let b = PhaseSpaceOperator::classical(2, 1, |x| x[1]);
        match qc_bracket(&a, &b, &[0.002, 1.0]) {
            Err(Error::NonFiniteOperator { point }) => assert_eq!(point[0], 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hermitian_declaration_is_checked() {
        let samples = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        let ok = PhaseSpaceOperator::hermitian(2, 1, |x| pauli_matrix('x') * C64::from(x[0]), &samples);
        assert!(ok.is_ok());
        let bad = PhaseSpaceOperator::hermitian(2, 1, |x| pauli_matrix('y') * C64::new(0.0, 1.0 + x[0]), &samples);
        assert!(matches!(bad, Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn homogeneity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_hermitian(&mut rng, 3);
        let states: Vec<_> = (0..20).map(|_| random_state(&mut rng, 3)).collect();
        assert!(homogeneity_check(&Bilinear(a.clone()), &states) < 1e-12);
        assert!(homogeneity_check(&BalancedQuartic(a.clone()), &states) < 1e-10);
        let v = homogeneity_check(&Shifted(a, 0.37), &states);
        assert!((v - 0.37).abs() < 1e-12);
    }

    #[test]
    fn weinberg_bilinear_is_schrodinger() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = random_hermitian(&mut rng, 2);
        let s = random_state(&mut rng, 2);
        let rhs = weinberg_rhs(&s, &Bilinear(h.clone())).unwrap();
        assert!((rhs - &h * s.ket() * C64::new(0.0, -1.0)).norm() < 1e-14);
        assert!(matches!(
            weinberg_rhs(&s, &Shifted(h, 1.0)),
            Err(Error::Homogeneity { .. })
        ));
    }

    #[test]
    fn rabi_oscillation() {
        let omega = 0.7;
        let h = Bilinear(pauli_matrix('x') * C64::from(omega));
        let start = WaveState::from_slice(&[C64::from(1.0), C64::from(0.0)]).unwrap();
        let path = rk4_flow(&start, 1e-3, 10_000, |s| weinberg_rhs(s, &h)).unwrap();
        for (k, s) in path.iter().enumerate().step_by(100) {
            let t = k as f64 * 1e-3;
            assert!((s.ket()[0].norm_sqr() - (omega * t).cos().powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_hamiltonian_only_rotates_phase() {
        let h = Bilinear(CMatrix::identity(2, 2));
        let start = WaveState::from_slice(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let path = rk4_flow(&start, 1e-2, 500, |s| weinberg_rhs(s, &h)).unwrap();
        let end = path.last().unwrap();
        assert!((end.ket()[0].norm() - 0.6).abs() < 1e-9);
        assert!((end.ket()[1].norm() - 0.8).abs() < 1e-9);
    }

    #[test]
    fn canonical_omega_reproduces_weinberg() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = BalancedQuartic(random_hermitian(&mut rng, 3));
        let s = random_state(&mut rng, 3);
        let a = nh_bracket_rhs(&s, &h, &|_| OmegaBlocks::canonical(3)).unwrap();
        let b = weinberg_rhs(&s, &h).unwrap();
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn zero_omega_freezes_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = Bilinear(random_hermitian(&mut rng, 2));
        let s = random_state(&mut rng, 2);
        let zero = OmegaBlocks {
            upper: CMatrix::zeros(2, 2),
            lower: CMatrix::zeros(2, 2),
        };
        assert_eq!(nh_bracket_rhs(&s, &h, &|_| zero.clone()).unwrap(), CVector::zeros(2));
    }

    #[test]
    fn invalid_omega_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = Bilinear(random_hermitian(&mut rng, 2));
        let s = random_state(&mut rng, 2);
        let k = random_hermitian(&mut rng, 2);
        let mut broken = OmegaBlocks::from_hermitian(&k);
        broken.lower[(0, 1)] += C64::from(1e-3);
        assert!(matches!(
            nh_bracket_rhs(&s, &h, &|_| broken.clone()),
            Err(Error::NotAntisymmetric { .. })
        ));
        let real = OmegaBlocks {
            upper: k.clone(),
            lower: -k.transpose(),
        };
        assert!(matches!(
            nh_bracket_rhs(&s, &h, &|_| real.clone()),
            Err(Error::OmegaNotAntiHermitian { .. })
        ));
    }

    #[test]
    fn state_dependent_omega_conserves_functional() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = BalancedQuartic(random_hermitian(&mut rng, 3));
        let (k0, k1) = (random_hermitian(&mut rng, 3), random_hermitian(&mut rng, 3));
        let omega = move |s: &WaveState| OmegaBlocks::from_hermitian(&(&k0 + &k1 * C64::from(s.ket()[0].norm_sqr() / s.ket().norm_squared())));
        let start = random_state(&mut rng, 3);
        let h0 = h.value(&start);
        let path = rk4_flow(&start, 1e-3, 5000, |s| nh_bracket_rhs(s, &h, &omega)).unwrap();
        let drift = path.iter().map(|s| (h.value(s) - h0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-9 * h0.abs().max(1.0), "{drift}");
    }
}
