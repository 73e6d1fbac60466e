//! Coupled wave-field equations at a fixed phase point.
//!
//! With the equilibrium density matrix inserted for ρ, the adiabatic
//! coefficients obey dψ/dt = Σψ and dφ/dt = Σ*φ, where
//!
//! ```text
//!     Σ = [ −iE₁                      −P·d₁₂ (1 − (β/2)E₁₂) ]
//!         [ P·d₁₂ (1 + (β/2)E₁₂)      −iE₂                  ]
//! ```
//!
//! Phase-space points never move (Eulerian picture), so Σ is constant along
//! each trajectory. The scalar part (Σ₁₁ + Σ₂₂)/2 of the generator commutes
//! with everything and is applied as an exact exponential; only the traceless
//! remainder is stepped numerically. At the default parameters the common
//! phase V_b is of order N/(2β) ≈ 300, which would otherwise dominate the
//! step-size requirement.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adiabatic::{initial_coefficients, AdiabaticLocal, SigmaZMatrix};
use crate::bath::{BathSpec, PhasePoint, SpinBosonParams};
use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Forward field ψ and adjoint field φ at one phase point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavePair {
    pub psi: Vector2<C64>,
    pub phi: Vector2<C64>,
}

impl WavePair {
    pub fn new(psi: Vector2<C64>, phi: Vector2<C64>) -> Self {
        Self { psi, phi }
    }

    pub fn from_real(psi: [f64; 2], phi: [f64; 2]) -> Self {
        Self {
            psi: Vector2::new(psi[0].into(), psi[1].into()),
            phi: Vector2::new(phi[0].into(), phi[1].into()),
        }
    }

    /// ρ_{αα'} = ψ_α φ_α'.
    pub fn density(&self) -> DensityMatrix2 {
        DensityMatrix2(self.psi * self.phi.transpose())
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().chain(self.phi.iter()).all(|z| z.is_finite())
    }
}

/// 2×2 quantum-classical density matrix at a phase point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix2(pub Matrix2<C64>);

impl DensityMatrix2 {
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.0 - other.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Generator Σ of the ψ field; the φ field is driven by Σ*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generator2 {
    sigma: Matrix2<C64>,
}

impl Generator2 {
    pub fn new(sigma: Matrix2<C64>) -> Self {
        Self { sigma }
    }

    pub fn sigma(&self) -> &Matrix2<C64> {
        &self.sigma
    }

    /// Σ*, the generator of φ.
    pub fn conjugate(&self) -> Matrix2<C64> {
        self.sigma.map(|z| z.conj())
    }

    /// (Σ₁₁ + Σ₂₂) / 2.
    pub fn scalar_part(&self) -> C64 {
        0.5 * (self.sigma[(0, 0)] + self.sigma[(1, 1)])
    }

    /// Σ − scalar_part·𝟙.
    pub fn traceless(&self) -> Self {
        let mu = self.scalar_part();
        Self::new(self.sigma - Matrix2::from_diagonal_element(mu))
    }
}

/// Whether the nonadiabatic coupling d₁₂ enters the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// d₁₂ = 0: pure phase evolution on each surface.
    Adiabatic,
    Nonadiabatic,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Adiabatic => "adiabatic",
            Mode::Nonadiabatic => "nonadiabatic",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adiabatic" => Ok(Mode::Adiabatic),
            "nonadiabatic" => Ok(Mode::Nonadiabatic),
            other => Err(format!("expected adiabatic|nonadiabatic, got '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

impl std::fmt::Display for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Integrator::Euler => "euler",
            Integrator::Rk4 => "rk4",
        })
    }
}

impl std::str::FromStr for Integrator {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(format!("expected euler|rk4, got '{other}'")),
        }
    }
}

/// Equilibrium-approximation generator.
pub fn build_sigma(local: &AdiabaticLocal, beta: f64, mode: Mode) -> Generator2 {
    let pd = match mode {
        Mode::Adiabatic => 0.0,
        Mode::Nonadiabatic => local.p_dot_d12,
    };
    let half = 0.5 * beta * local.e12;
    Generator2::new(Matrix2::new(
        C64::new(0.0, -local.e1),
        C64::new(-pd * (1.0 - half), 0.0),
        C64::new(pd * (1.0 + half), 0.0),
        C64::new(0.0, -local.e2),
    ))
}

/// Phase-space gradients of ln ρ in the adiabatic basis, indexed
/// `[α][α']` with one length-N vector per entry.
///
/// Only state-diagonal structure is supported by
/// [`build_generator_general`]; the off-diagonal entries exist so callers can
/// pass a full matrix and have it validated.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityGradients {
    pub d_r: [[Vec<f64>; 2]; 2],
    pub d_p: [[Vec<f64>; 2]; 2],
}

impl LogDensityGradients {
    pub fn diagonal(d_r: [Vec<f64>; 2], d_p: [Vec<f64>; 2]) -> Self {
        let n = d_r[0].len();
        let [r1, r2] = d_r;
        let [p1, p2] = d_p;
        Self {
            d_r: [[r1, vec![0.0; n]], [vec![0.0; n], r2]],
            d_p: [[p1, vec![0.0; n]], [vec![0.0; n], p2]],
        }
    }

    /// Decohered thermal density to order ℏ⁰:
    /// ∂ln ρ_αα/∂R = βF_α, ∂ln ρ_αα/∂P = −βP.
    pub fn equilibrium(local: &AdiabaticLocal, p: &[f64], beta: f64) -> Self {
        let scaled = |v: &[f64], k: f64| v.iter().map(|x| k * x).collect::<Vec<_>>();
        Self::diagonal(
            [scaled(&local.force1, beta), scaled(&local.force2, beta)],
            [scaled(p, -beta), scaled(p, -beta)],
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generator of the coefficient equations for an arbitrary state-diagonal
/// ln ρ (unit masses, ℏ = 1).
///
/// The combination P·d_αβ S_αβ·∂/∂P with S_αβ = E_αβ d_αβ (P·d_αβ)⁻¹ is
/// folded into E_αβ d_αβ·∂(ln ρ)_ββ/∂P, so the singular S is never formed.
pub fn build_generator_general(
    local: &AdiabaticLocal,
    p: &[f64],
    grads: &LogDensityGradients,
    mode: Mode,
) -> Result<Generator2> {
    let n = local.d12.len();
    for (row, col) in [(0, 1), (1, 0)] {
        if grads.d_r[row][col].iter().chain(&grads.d_p[row][col]).any(|v| *v != 0.0) {
            return Err(Error::OffDiagonalLogDensity { row, col });
        }
    }
    let lens_ok = p.len() == n
        && grads.d_r.iter().flatten().chain(grads.d_p.iter().flatten()).all(|v| v.len() == n);
    if !lens_ok {
        return Err(Error::Dimension(format!("expected length-{n} gradient vectors")));
    }

    let energies = [local.e1, local.e2];
    let forces = [&local.force1, &local.force2];
    let mut sigma = Matrix2::from_element(ZERO);
    for a in 0..2 {
        let drift = -0.5 * dot(p, &grads.d_r[a][a]) - 0.5 * dot(forces[a], &grads.d_p[a][a]);
        sigma[(a, a)] = C64::new(drift, -energies[a]);
    }
    if mode == Mode::Nonadiabatic {
        // d₂₁ = −d₁₂, E₂₁ = −E₁₂
        let pd = local.p_dot_d12;
        let d_dot_b2 = dot(&local.d12, &grads.d_p[1][1]);
        let d_dot_b1 = dot(&local.d12, &grads.d_p[0][0]);
        sigma[(0, 1)] = (-pd - 0.5 * local.e12 * d_dot_b2).into();
        sigma[(1, 0)] = (pd - 0.5 * local.e12 * d_dot_b1).into();
    }
    Ok(Generator2::new(sigma))
}

fn euler_vec(m: &Matrix2<C64>, v: &Vector2<C64>, dt: f64) -> Vector2<C64> {
    v + (m * v) * C64::from(dt)
}

fn rk4_vec(m: &Matrix2<C64>, v: &Vector2<C64>, dt: f64) -> Vector2<C64> {
    let h = C64::from(dt);
    let half = C64::from(0.5 * dt);
    let k1 = m * v;
    let k2 = m * (v + k1 * half);
    let k3 = m * (v + k2 * half);
    let k4 = m * (v + k3 * h);
    v + (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(dt / 6.0)
}

/// ψ ← ψ + dτ Σψ, φ ← φ + dτ Σ*φ.
pub fn step_euler(w: &WavePair, gen: &Generator2, dtau: f64) -> WavePair {
    WavePair::new(
        euler_vec(gen.sigma(), &w.psi, dtau),
        euler_vec(&gen.conjugate(), &w.phi, dtau),
    )
}

/// Classical fourth-order Runge–Kutta step for both fields.
pub fn step_rk4(w: &WavePair, gen: &Generator2, dtau: f64) -> WavePair {
    WavePair::new(
        rk4_vec(gen.sigma(), &w.psi, dtau),
        rk4_vec(&gen.conjugate(), &w.phi, dtau),
    )
}

/// One-step propagator of a constant generator: the integrator applied to
/// each basis vector. Stepping with this matrix is the same integrator, just
/// without re-evaluating the stages every step.
pub fn step_matrix(m: &Matrix2<C64>, dtau: f64, integrator: Integrator) -> Matrix2<C64> {
    let step = match integrator {
        Integrator::Euler => euler_vec,
        Integrator::Rk4 => rk4_vec,
    };
    let c0 = step(m, &Vector2::new(C64::from(1.0), ZERO), dtau);
    let c1 = step(m, &Vector2::new(ZERO, C64::from(1.0)), dtau);
    Matrix2::from_columns(&[c0, c1])
}

/// Time stepping and output settings for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub dt: f64,
    pub t_max: f64,
    pub out_stride: usize,
    pub integrator: Integrator,
    pub mode: Mode,
    /// Inverse temperature entering Σ.
    pub beta: f64,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                reason: format!("must be non-negative, got {}", self.t_max),
            });
        }
        if self.out_stride == 0 {
            return Err(Error::InvalidParameter {
                name: "out_stride",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be non-negative, got {}", self.beta),
            });
        }
        let steps = self.t_max / self.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                reason: format!("must be an integer multiple of dt = {}", self.dt),
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    /// Step indices written to the output: every `out_stride`-th step plus
    /// the final one.
    pub fn output_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.out_stride).collect();
        if steps.last() != Some(&n) {
            steps.push(n);
        }
        steps
    }

    pub fn output_times(&self) -> Vec<f64> {
        self.output_steps().into_iter().map(|k| k as f64 * self.dt).collect()
    }
}

/// Propagates ψ under `gen` and φ under its conjugate from `init`, returning
/// the pair at each output step.
pub fn propagate_generator(gen: &Generator2, init: WavePair, cfg: &PropagationConfig) -> Result<Vec<WavePair>> {
    cfg.validate()?;
    let mu = gen.scalar_part();
    let rest = gen.traceless();
    let u_psi = step_matrix(rest.sigma(), cfg.dt, cfg.integrator);
    let u_phi = step_matrix(&rest.conjugate(), cfg.dt, cfg.integrator);

    let outputs = cfg.output_steps();
    let mut series = Vec::with_capacity(outputs.len());
    let (mut psi, mut phi) = (init.psi, init.phi);
    let mut step = 0;
    for &target in &outputs {
        while step < target {
            psi = u_psi * psi;
            phi = u_phi * phi;
            step += 1;
        }
        let t = step as f64 * cfg.dt;
        let phase = (mu * t).exp();
        let w = WavePair::new(psi * phase, phi * phase.conj());
        if !w.is_finite() {
            return Err(Error::NonFiniteField { step, time: t });
        }
        series.push(w);
    }
    Ok(series)
}

/// Wave-field series for the prepared |↑⟩ state at phase point `x`.
pub fn propagate_trajectory(
    spec: &BathSpec,
    params: &SpinBosonParams,
    x: &PhasePoint,
    cfg: &PropagationConfig,
) -> Result<Vec<WavePair>> {
    let local = AdiabaticLocal::at(spec, params, x);
    let gen = build_sigma(&local, cfg.beta, cfg.mode);
    let (psi0, phi0) = initial_coefficients(local.g);
    propagate_generator(&gen, WavePair::from_real(psi0, phi0), cfg)
}

fn density_rhs(sigma: &Matrix2<C64>, sigma_adj: &Matrix2<C64>, rho: &Matrix2<C64>) -> Matrix2<C64> {
    sigma * rho + rho * sigma_adj
}

/// Direct integration of dρ/dt = Σρ + ρΣ† from ρ(0) = ψ(0)⊗φ(0), with the
/// full generator and no scalar splitting. Serves as an independent check of
/// the factorized wave propagation.
pub fn density_oracle_generator(
    gen: &Generator2,
    init: WavePair,
    cfg: &PropagationConfig,
) -> Result<Vec<DensityMatrix2>> {
    cfg.validate()?;
    let sigma = *gen.sigma();
    let adj = sigma.adjoint();
    let h = C64::from(cfg.dt);
    let half = C64::from(0.5 * cfg.dt);
    let sixth = C64::from(cfg.dt / 6.0);
    let two = C64::from(2.0);

    let mut rho = init.density().0;
    let mut series = Vec::new();
    let mut step = 0;
    for target in cfg.output_steps() {
        while step < target {
            rho = match cfg.integrator {
                Integrator::Euler => rho + density_rhs(&sigma, &adj, &rho) * h,
                Integrator::Rk4 => {
                    let k1 = density_rhs(&sigma, &adj, &rho);
                    let k2 = density_rhs(&sigma, &adj, &(rho + k1 * half));
                    let k3 = density_rhs(&sigma, &adj, &(rho + k2 * half));
                    let k4 = density_rhs(&sigma, &adj, &(rho + k3 * h));
                    rho + (k1 + (k2 + k3) * two + k4) * sixth
                }
            };
            step += 1;
        }
        if !rho.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFiniteField {
                step,
                time: step as f64 * cfg.dt,
            });
        }
        series.push(DensityMatrix2(rho));
    }
    Ok(series)
}

/// Density-matrix oracle for the trajectory started at `x`.
pub fn density_oracle(
    spec: &BathSpec,
    params: &SpinBosonParams,
    x: &PhasePoint,
    cfg: &PropagationConfig,
) -> Result<Vec<DensityMatrix2>> {
    let local = AdiabaticLocal::at(spec, params, x);
    let gen = build_sigma(&local, cfg.beta, cfg.mode);
    let (psi0, phi0) = initial_coefficients(local.g);
    density_oracle_generator(&gen, WavePair::from_real(psi0, phi0), cfg)
}

/// Imaginary residue above which the ψ/φ pair is considered inconsistent.
pub const IMAG_TOLERANCE: f64 = 1e-10;

/// Σ_{αα'} φ_α' (σ_z)_{α'α} ψ_α at one phase point.
pub fn local_sigma_z(w: &WavePair, sz: &SigmaZMatrix) -> Result<f64> {
    let m = sz.matrix();
    let mut acc = ZERO;
    for a in 0..2 {
        for b in 0..2 {
            acc += w.phi[b] * m[(b, a)] * w.psi[a];
        }
    }
    if acc.im.abs() >= IMAG_TOLERANCE {
        return Err(Error::ComplexObservable { imag: acc.im });
    }
    Ok(acc.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adiabatic::sigma_z_matrix;
    use crate::bath::{discretize_bath, sample_phase_point, sample_stream};
    use approx::assert_relative_eq;

    const I: C64 = C64::new(0.0, 1.0);

    fn reference() -> (SpinBosonParams, BathSpec) {
        let params = SpinBosonParams::default();
        (params, discretize_bath(&params).unwrap())
    }

    fn random_local(seed: u64) -> (PhasePoint, AdiabaticLocal) {
        let (params, spec) = reference();
        let x = sample_phase_point(&spec, params.beta, &mut sample_stream(seed, 0));
        let local = AdiabaticLocal::at(&spec, &params, &x);
        (x, local)
    }

    fn toy_local(e1: f64, e2: f64, pd: f64) -> AdiabaticLocal {
        AdiabaticLocal {
            gamma: 0.0,
            g: 0.0,
            vb: 0.5 * (e1 + e2),
            e1,
            e2,
            d12: vec![pd],
            p_dot_d12: pd,
            e12: e1 - e2,
            force1: vec![0.0],
            force2: vec![0.0],
        }
    }

    fn cfg(dt: f64, t_max: f64, integrator: Integrator, mode: Mode) -> PropagationConfig {
        PropagationConfig {
            dt,
            t_max,
            out_stride: 1,
            integrator,
            mode,
            beta: 0.3,
        }
    }

    #[test]
    fn adiabatic_generator_is_diagonal() {
        let (_, local) = random_local(1);
        let s = *build_sigma(&local, 0.3, Mode::Adiabatic).sigma();
        assert_eq!(s[(0, 0)], C64::new(0.0, -local.e1));
        assert_eq!(s[(1, 1)], C64::new(0.0, -local.e2));
        assert_eq!(s[(0, 1)], ZERO);
        assert_eq!(s[(1, 0)], ZERO);
    }

    #[test]
    fn zero_beta_generator_is_anti_hermitian() {
        let (_, local) = random_local(2);
        let s = *build_sigma(&local, 0.0, Mode::Nonadiabatic).sigma();
        assert_eq!(s[(0, 1)].re, -local.p_dot_d12);
        assert_eq!(s[(0, 1)], -s[(1, 0)]);
        assert!((s + s.adjoint()).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn hopping_factors_hand_example() {
        let s = *build_sigma(&toy_local(-1.0, 1.0, 0.2), 0.3, Mode::Nonadiabatic).sigma();
        assert_relative_eq!(s[(0, 1)].re, -0.26, max_relative = 1e-14);
        assert_relative_eq!(s[(1, 0)].re, 0.14, max_relative = 1e-14);
        assert_eq!(s[(0, 1)].im, 0.0);
    }

    #[test]
    fn general_generator_reduces_to_equilibrium_sigma() {
        for seed in 0..25 {
            let (x, local) = random_local(100 + seed);
            let grads = LogDensityGradients::equilibrium(&local, &x.p, 0.3);
            let general = build_generator_general(&local, &x.p, &grads, Mode::Nonadiabatic).unwrap();
            let direct = build_sigma(&local, 0.3, Mode::Nonadiabatic);
            let diff = (general.sigma() - direct.sigma()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "seed {seed}: {diff}");
        }
    }

    #[test]
    fn general_generator_with_zero_gradients() {
        let (x, local) = random_local(7);
        let n = x.p.len();
        let grads = LogDensityGradients::diagonal([vec![0.0; n], vec![0.0; n]], [vec![0.0; n], vec![0.0; n]]);
        let general = build_generator_general(&local, &x.p, &grads, Mode::Nonadiabatic).unwrap();
        let bare = build_sigma(&local, 0.0, Mode::Nonadiabatic);
        assert_eq!(general.sigma(), bare.sigma());
    }

    #[test]
    fn hopping_deviation_is_linear_in_beta() {
        let (x, local) = random_local(8);
        let deviation = |beta: f64| {
            let grads = LogDensityGradients::equilibrium(&local, &x.p, beta);
            let s = *build_generator_general(&local, &x.p, &grads, Mode::Nonadiabatic).unwrap().sigma();
            s[(0, 1)].re / -local.p_dot_d12 - 1.0
        };
        assert_relative_eq!(deviation(0.6), 2.0 * deviation(0.3), max_relative = 1e-10);
    }

    #[test]
    fn general_generator_rejects_off_diagonal_input() {
        let (x, local) = random_local(9);
        let mut grads = LogDensityGradients::equilibrium(&local, &x.p, 0.3);
        grads.d_p[1][0][3] = 1e-3;
        assert!(matches!(
            build_generator_general(&local, &x.p, &grads, Mode::Nonadiabatic),
            Err(Error::OffDiagonalLogDensity { row: 1, col: 0 })
        ));
    }

    #[test]
    fn euler_step_examples() {
        let gen = build_sigma(&toy_local(-1.0, 1.0, 0.0), 0.3, Mode::Adiabatic);
        let w = WavePair::from_real([1.0, 0.0], [1.0, 0.0]);
        let next = step_euler(&w, &gen, 1e-2);
        assert_eq!(next.psi[0], C64::new(1.0, 1e-2));
        assert_eq!(next.phi[0], C64::new(1.0, -1e-2));

        let zero = Generator2::new(Matrix2::from_element(ZERO));
        let w = WavePair::from_real([0.3, -0.7], [0.2, 0.9]);
        assert_eq!(step_euler(&w, &zero, 0.1), w);
        assert_eq!(step_rk4(&w, &zero, 0.1), w);
    }

    fn phase_error(integrator: Integrator, dt: f64) -> f64 {
        let (e1, e2) = (-1.0, 1.0);
        let gen = build_sigma(&toy_local(e1, e2, 0.0), 0.3, Mode::Adiabatic);
        let t = 2.0;
        let mut w = WavePair::from_real([0.6, 0.8], [0.6, 0.8]);
        for _ in 0..(t / dt).round() as usize {
            w = match integrator {
                Integrator::Euler => step_euler(&w, &gen, dt),
                Integrator::Rk4 => step_rk4(&w, &gen, dt),
            };
        }
        let exact = Vector2::new(C64::new(0.0, -e1 * t).exp() * 0.6, C64::new(0.0, -e2 * t).exp() * 0.8);
        (w.psi - exact).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn euler_is_first_order() {
        let ratio = phase_error(Integrator::Euler, 2e-3) / phase_error(Integrator::Euler, 1e-3);
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let ratio = phase_error(Integrator::Rk4, 2e-2) / phase_error(Integrator::Rk4, 1e-2);
        assert!((ratio - 16.0).abs() < 3.2, "ratio {ratio}");
    }

    #[test]
    fn rk4_conserves_norm_for_anti_hermitian_generator() {
        // R = 0 keeps the energies O(Ω); P is a thermal sample
        let (params, spec) = reference();
        let mut x = sample_phase_point(&spec, params.beta, &mut sample_stream(77, 0));
        x.r.iter_mut().for_each(|r| *r = 0.0);
        let local = AdiabaticLocal::at(&spec, &params, &x);
        assert!(local.p_dot_d12.abs() > 1e-2);
        let gen = build_sigma(&local, 0.0, Mode::Nonadiabatic);
        let mut w = WavePair::from_real([0.6, 0.8], [0.6, 0.8]);
        for _ in 0..10_000 {
            w = step_rk4(&w, &gen, 1e-3);
        }
        assert!((w.psi.norm_squared() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn step_matrix_matches_staged_rk4() {
        let (_, local) = random_local(4);
        let gen = build_sigma(&local, 0.3, Mode::Nonadiabatic).traceless();
        let u = step_matrix(gen.sigma(), 1e-3, Integrator::Rk4);
        let w = WavePair::from_real([0.6, 0.8], [0.6, 0.8]);
        let staged = step_rk4(&w, &gen, 1e-3);
        assert!((u * w.psi - staged.psi).norm() < 1e-15);
    }

    #[test]
    fn zero_duration_gives_initial_pair() {
        let (params, spec) = reference();
        let (x, local) = random_local(5);
        let out = propagate_trajectory(&spec, &params, &x, &cfg(1e-3, 0.0, Integrator::Rk4, Mode::Nonadiabatic)).unwrap();
        assert_eq!(out.len(), 1);
        let (psi0, _) = initial_coefficients(local.g);
        assert_eq!(out[0], WavePair::from_real(psi0, psi0));
    }

    #[test]
    fn adiabatic_moduli_are_constant() {
        let (params, spec) = reference();
        let (x, local) = random_local(6);
        let mut c = cfg(1e-3, 5.0, Integrator::Rk4, Mode::Adiabatic);
        c.out_stride = 100;
        let out = propagate_trajectory(&spec, &params, &x, &c).unwrap();
        let (psi0, _) = initial_coefficients(local.g);
        for w in &out {
            for a in 0..2 {
                assert!((w.psi[a].norm() - psi0[a].abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fields_stay_conjugate() {
        let (params, spec) = reference();
        let (x, _) = random_local(10);
        for integrator in [Integrator::Euler, Integrator::Rk4] {
            let mut c = cfg(1e-3, 10.0, integrator, Mode::Nonadiabatic);
            c.out_stride = 50;
            for w in propagate_trajectory(&spec, &params, &x, &c).unwrap() {
                let dev = (w.phi - w.psi.map(|z| z.conj())).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(dev < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_matches_outer_product() {
        let (params, spec) = reference();
        let (x, _) = random_local(11);
        let mut c = cfg(1e-3, 10.0, Integrator::Rk4, Mode::Nonadiabatic);
        c.out_stride = 100;
        let waves = propagate_trajectory(&spec, &params, &x, &c).unwrap();
        let rhos = density_oracle(&spec, &params, &x, &c).unwrap();
        assert_eq!(rhos[0], waves[0].density());
        for (w, rho) in waves.iter().zip(&rhos) {
            assert!(rho.max_abs_diff(&w.density()) < 1e-8);
        }
    }

    #[test]
    fn adiabatic_oracle_keeps_populations() {
        let (params, spec) = reference();
        let (x, _) = random_local(12);
        let mut c = cfg(1e-3, 5.0, Integrator::Rk4, Mode::Adiabatic);
        c.out_stride = 500;
        let rhos = density_oracle(&spec, &params, &x, &c).unwrap();
        for rho in &rhos {
            assert!((rho.0[(0, 0)] - rhos[0].0[(0, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn local_observable_examples() {
        let up = WavePair::from_real([1.0, 0.0], [1.0, 0.0]);
        assert_eq!(local_sigma_z(&up, &sigma_z_matrix(0.0)).unwrap(), 0.0);
        assert_eq!(local_sigma_z(&up, &sigma_z_matrix(1.0)).unwrap(), 1.0);
        for g in [-3.0, -0.2, 0.0, 0.4, 7.0] {
            let (psi, phi) = initial_coefficients(g);
            let v = local_sigma_z(&WavePair::from_real(psi, phi), &sigma_z_matrix(g)).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }
        let bad = WavePair::new(Vector2::new(I, ZERO), Vector2::new(C64::from(1.0), ZERO));
        assert!(matches!(
            local_sigma_z(&bad, &sigma_z_matrix(0.5)),
            Err(Error::ComplexObservable { .. })
        ));
    }

    #[test]
    fn grid_includes_final_time() {
        let mut c = cfg(0.1, 1.0, Integrator::Rk4, Mode::Adiabatic);
        c.out_stride = 3;
        assert_eq!(c.output_steps(), vec![0, 3, 6, 9, 10]);
        c.t_max = 1.05;
        assert!(c.validate().is_err());
    }

    #[test]
    fn oversized_step_is_reported() {
        let gen = Generator2::new(Matrix2::new(ZERO, C64::from(-1e3), C64::from(1e3), ZERO));
        let mut c = cfg(1.0, 400.0, Integrator::Euler, Mode::Nonadiabatic);
        c.out_stride = 10;
        let err = propagate_generator(&gen, WavePair::from_real([1.0, 0.0], [1.0, 0.0]), &c).unwrap_err();
        assert!(matches!(err, Error::NonFiniteField { .. }));
    }
}
