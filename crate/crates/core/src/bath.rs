//! Ohmic harmonic bath: mode discretization and thermal phase-space sampling.
//!
//! Mode indices run `j = 1..=N` in the physics convention; vectors here are
//! stored zero-based, so `freqs[j - 1]` is ω_j. All quantities are in the
//! dimensionless units of the spin-boson model (ℏ = 1, unit masses).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the spin-boson model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinBosonParams {
    /// Tunneling frequency Ω.
    pub omega: f64,
    /// Inverse temperature β.
    pub beta: f64,
    /// Bath cutoff frequency ω_max.
    pub omega_max: f64,
    /// Kondo parameter ξ_K.
    pub xi_k: f64,
    /// Number of bath modes N.
    pub n_osc: usize,
}

impl Default for SpinBosonParams {
    /// β = 0.3, Ω = 1/3, ω_max = 3, ξ_K = 0.007, N = 200.
    fn default() -> Self {
        Self {
            omega: 1.0 / 3.0,
            beta: 0.3,
            omega_max: 3.0,
            xi_k: 0.007,
            n_osc: 200,
        }
    }
}

impl SpinBosonParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega", self.omega),
            ("beta", self.beta),
            ("omega_max", self.omega_max),
            ("xi_k", self.xi_k),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        if self.n_osc == 0 {
            return Err(Error::InvalidParameter {
                name: "n_osc",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Discretized Ohmic bath.
#[derive(Debug, Clone, PartialEq)]
pub struct BathSpec {
    omega0: f64,
    freqs: Vec<f64>,
    couplings: Vec<f64>,
}

impl BathSpec {
    /// Builds a bath from explicit frequencies and couplings. Used for
    /// few-mode test systems; `omega0` is informational only.
    pub fn from_modes(omega0: f64, freqs: Vec<f64>, couplings: Vec<f64>) -> Result<Self> {
        if freqs.len() != couplings.len() || freqs.is_empty() {
            return Err(Error::Dimension(format!(
                "{} frequencies vs {} couplings",
                freqs.len(),
                couplings.len()
            )));
        }
        if let Some(index) = freqs.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::NonFiniteBath { index: index + 1 });
        }
        Ok(Self {
            omega0,
            freqs,
            couplings,
        })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// ω_j, zero-based.
    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// c_j, zero-based.
    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn n_modes(&self) -> usize {
        self.freqs.len()
    }
}

/// Classical bath phase point X = (R, P).
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn origin(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            p: vec![0.0; n],
        }
    }
}

/// Logarithmic discretization of the Ohmic spectral density:
/// ω₀ = (1 − e^{−ω_max})/N, ω_j = −ln(1 − jω₀), c_j = √(ξ_K ω₀) ω_j.
pub fn discretize_bath(params: &SpinBosonParams) -> Result<BathSpec> {
    params.validate()?;
    let n = params.n_osc;
    // -expm1(-x) = 1 - e^{-x} without cancellation for small cutoffs
    let omega0 = -(-params.omega_max).exp_m1() / n as f64;
    let scale = (params.xi_k * omega0).sqrt();

    let mut freqs = Vec::with_capacity(n);
    for j in 1..=n {
        let w = -(-(j as f64) * omega0).ln_1p();
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::NonFiniteBath { index: j });
        }
        freqs.push(w);
    }
    let couplings = freqs.iter().map(|w| scale * w).collect();
    Ok(BathSpec {
        omega0,
        freqs,
        couplings,
    })
}

/// Position and momentum variances of one mode of ρ_b:
/// var_p = ω / (2 tanh(βω/2)), var_r = var_p / ω².
pub fn thermal_variances(beta: f64, freq: f64) -> (f64, f64) {
    let t = (0.5 * beta * freq).tanh();
    let var_p = freq / (2.0 * t);
    let var_r = 1.0 / (2.0 * freq * t);
    (var_r, var_p)
}

/// Independent random stream for sample `index` of a run seeded by
/// `master_seed`. Streams do not depend on how samples are scheduled.
pub fn sample_stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws X exactly from the product Gaussian ρ_b. All positions are drawn
/// first, then all momenta.
pub fn sample_phase_point<R: Rng + ?Sized>(spec: &BathSpec, beta: f64, rng: &mut R) -> PhasePoint {
    let widths: Vec<(f64, f64)> = spec
        .freqs
        .iter()
        .map(|&w| {
            let (vr, vp) = thermal_variances(beta, w);
            (vr.sqrt(), vp.sqrt())
        })
        .collect();
    let r = widths
        .iter()
        .map(|(sr, _)| sr * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let p = widths
        .iter()
        .map(|(_, sp)| sp * rng.sample::<f64, _>(StandardNormal))
        .collect();
    PhasePoint { r, p }
}

fn rho_b_exponent(spec: &BathSpec, beta: f64, x: &PhasePoint) -> f64 {
    spec.freqs
        .iter()
        .zip(x.r.iter().zip(&x.p))
        .map(|(&w, (&r, &p))| {
            let t = (0.5 * beta * w).tanh();
            -(2.0 * t / w) * (0.5 * p * p + 0.5 * w * w * r * r)
        })
        .sum()
}

/// ρ_b with the per-mode prefactor tanh(βω_i/2)/ω_i, as the bath density is
/// usually written. This form integrates to Π π/ω_i, not to one.
pub fn rho_b_unnormalized(spec: &BathSpec, beta: f64, x: &PhasePoint) -> f64 {
    let prefactor: f64 = spec
        .freqs
        .iter()
        .map(|&w| (0.5 * beta * w).tanh() / w)
        .product();
    prefactor * rho_b_exponent(spec, beta, x).exp()
}

/// Normalized thermal bath density: per-mode prefactor tanh(βω_i/2)/π, so
/// that the density integrates to one over phase space.
pub fn rho_b_weight(spec: &BathSpec, beta: f64, x: &PhasePoint) -> f64 {
    let prefactor: f64 = spec
        .freqs
        .iter()
        .map(|&w| (0.5 * beta * w).tanh() / std::f64::consts::PI)
        .product();
    prefactor * rho_b_exponent(spec, beta, x).exp()
}
