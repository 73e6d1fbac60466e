//! Adiabatic-basis quantities of the spin-boson Hamiltonian
//! ĥ(R) = −Ωσ_x + γ(R)σ_z + V_b(R), with γ(R) = −Σ c_j R_j.
//!
//! The eigenvectors are parametrized by the mixing parameter
//! G = γ⁻¹(−Ω + √(Ω² + γ²)), which is evaluated in the equivalent form
//! γ / (Ω + √(Ω² + γ²)) so that γ = 0 needs no special casing.
//!
//! The coupling vector satisfies d₂₁ = −d₁₂ (real basis), so only d₁₂ is kept.

use nalgebra::Matrix2;

use crate::bath::{BathSpec, PhasePoint, SpinBosonParams};

/// γ(R) = −Σ_j c_j R_j.
pub fn gamma_of(spec: &BathSpec, r: &[f64]) -> f64 {
    -spec.couplings().iter().zip(r).map(|(c, x)| c * x).sum::<f64>()
}

#[inline]
fn gap_half(gamma: f64, omega: f64) -> f64 {
    omega.hypot(gamma)
}

pub fn g_of_gamma(gamma: f64, omega: f64) -> f64 {
    gamma / (omega + gap_half(gamma, omega))
}

/// dG/dγ = Ω / (s (Ω + s)), s = √(Ω² + γ²). Equals 1/(2Ω) at γ = 0.
pub fn dg_dgamma(gamma: f64, omega: f64) -> f64 {
    let s = gap_half(gamma, omega);
    omega / (s * (omega + s))
}

/// Bath potential V_b = Σ ω_j² R_j² / 2.
pub fn bath_potential(spec: &BathSpec, r: &[f64]) -> f64 {
    spec.freqs()
        .iter()
        .zip(r)
        .map(|(w, x)| 0.5 * w * w * x * x)
        .sum()
}

/// Returns (E₁, E₂, V_b) with E_{1,2} = V_b ∓ √(Ω² + γ²).
pub fn adiabatic_energies(spec: &BathSpec, params: &SpinBosonParams, x: &PhasePoint) -> (f64, f64, f64) {
    let vb = bath_potential(spec, &x.r);
    let s = gap_half(gamma_of(spec, &x.r), params.omega);
    (vb - s, vb + s, vb)
}

/// d₁₂ = (1 + G²)⁻¹ ∂G/∂R with ∂G/∂R_j = (dG/dγ)(−c_j).
pub fn coupling_vector(spec: &BathSpec, params: &SpinBosonParams, r: &[f64]) -> Vec<f64> {
    let gamma = gamma_of(spec, r);
    let g = g_of_gamma(gamma, params.omega);
    let factor = -dg_dgamma(gamma, params.omega) / (1.0 + g * g);
    spec.couplings().iter().map(|c| factor * c).collect()
}

/// Adiabatic surface label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    /// E₁ = V_b − s
    Lower,
    /// E₂ = V_b + s
    Upper,
}

/// F_α = −∂E_α/∂R.
pub fn hellmann_feynman_force(spec: &BathSpec, params: &SpinBosonParams, r: &[f64], surface: Surface) -> Vec<f64> {
    let gamma = gamma_of(spec, r);
    let s = gap_half(gamma, params.omega);
    // ∂s/∂R_j = −γ c_j / s
    let sign = match surface {
        Surface::Lower => 1.0,
        Surface::Upper => -1.0,
    };
    spec.freqs()
        .iter()
        .zip(spec.couplings())
        .zip(r)
        .map(|((w, c), x)| -w * w * x + sign * (-gamma * c / s))
        .collect()
}

/// σ_z in the adiabatic basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaZMatrix(pub Matrix2<f64>);

impl SigmaZMatrix {
    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }
}

/// (1 + G²)⁻¹ [[2G, 1 − G²], [1 − G², −2G]].
pub fn sigma_z_matrix(g: f64) -> SigmaZMatrix {
    let norm = 1.0 / (1.0 + g * g);
    let diag = 2.0 * g * norm;
    let off = (1.0 - g * g) * norm;
    SigmaZMatrix(Matrix2::new(diag, off, off, -diag))
}

/// Adiabatic coefficients of the diabatic |↑⟩ state, ψ₀ = φ₀ =
/// ((1 + G), (1 − G)) / √(2(1 + G²)). The √ρ_b factor is left out: it is
/// carried by the phase-point sampling instead.
pub fn initial_coefficients(g: f64) -> ([f64; 2], [f64; 2]) {
    let n = (2.0 * (1.0 + g * g)).sqrt().recip();
    let c = [(1.0 + g) * n, (1.0 - g) * n];
    (c, c)
}

/// Everything the wave equations need at one phase point. R and P do not
/// move during propagation, so this is computed once per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AdiabaticLocal {
    pub gamma: f64,
    pub g: f64,
    pub vb: f64,
    pub e1: f64,
    pub e2: f64,
    pub d12: Vec<f64>,
    pub p_dot_d12: f64,
    /// E₁ − E₂ (never positive).
    pub e12: f64,
    pub force1: Vec<f64>,
    pub force2: Vec<f64>,
}

impl AdiabaticLocal {
    pub fn at(spec: &BathSpec, params: &SpinBosonParams, x: &PhasePoint) -> Self {
        let gamma = gamma_of(spec, &x.r);
        let g = g_of_gamma(gamma, params.omega);
        let (e1, e2, vb) = adiabatic_energies(spec, params, x);
        let d12 = coupling_vector(spec, params, &x.r);
        let p_dot_d12 = d12.iter().zip(&x.p).map(|(d, p)| d * p).sum();
        Self {
            gamma,
            g,
            vb,
            e1,
            e2,
            d12,
            p_dot_d12,
            e12: e1 - e2,
            force1: hellmann_feynman_force(spec, params, &x.r, Surface::Lower),
            force2: hellmann_feynman_force(spec, params, &x.r, Surface::Upper),
        }
    }

    pub fn force(&self, surface: Surface) -> &[f64] {
        match surface {
            Surface::Lower => &self.force1,
            Surface::Upper => &self.force2,
        }
    }

    pub fn sigma_z(&self) -> SigmaZMatrix {
        sigma_z_matrix(self.g)
    }
}
