//! Monte-Carlo ensemble of wave-field trajectories.
//!
//! Each sample index owns its own random stream, so the set of phase points
//! does not depend on scheduling. Per-sample series are folded into
//! (count, mean, M2) accumulators over a binary tree of index ranges whose
//! shape depends only on the sample count.

use serde::{Deserialize, Serialize};

use crate::adiabatic::{initial_coefficients, AdiabaticLocal};
use crate::bath::{discretize_bath, sample_phase_point, sample_stream, BathSpec, PhasePoint, SpinBosonParams};
use crate::dynamics::{build_sigma, local_sigma_z, propagate_generator, Generator2, Integrator, Mode, PropagationConfig, WavePair};
use crate::error::{Error, Result};

/// Samples per leaf of the reduction tree.
const LEAF: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: SpinBosonParams,
    pub n_samples: usize,
    pub dt: f64,
    pub t_max: f64,
    pub out_stride: usize,
    pub integrator: Integrator,
    pub mode: Mode,
    pub master_seed: u64,
    /// β used to build the generator; `None` means the sampling β.
    pub generator_beta: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SpinBosonParams::default(),
            n_samples: 10_000,
            dt: 1e-3,
            t_max: 20.0,
            out_stride: 100,
            integrator: Integrator::Rk4,
            mode: Mode::Nonadiabatic,
            master_seed: 20_240_601,
            generator_beta: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "must be at least 1".into(),
            });
        }
        self.propagation().validate()
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            dt: self.dt,
            t_max: self.t_max,
            out_stride: self.out_stride,
            integrator: self.integrator,
            mode: self.mode,
            beta: self.generator_beta.unwrap_or(self.params.beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub provenance: RunConfig,
}

/// Running count, mean and sum of squared deviations per output time.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn empty(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let mut out = Self::empty(self.mean.len());
        out.n = self.n + other.n;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            out.mean[k] = self.mean[k] + delta * nb / n;
            out.m2[k] = self.m2[k] + other.m2[k] + delta * delta * na * nb / n;
        }
        out
    }

    fn stderr(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.m2.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|s| (s.max(0.0) / (n - 1.0)).sqrt() / n.sqrt()).collect()
    }
}

/// ⟨σ_z⟩ at each output time for a weighted list of initial pairs at one
/// phase point.
pub fn mixture_sigma_z(
    local: &AdiabaticLocal,
    gen: &Generator2,
    mixture: &[(f64, WavePair)],
    cfg: &PropagationConfig,
) -> Result<Vec<f64>> {
    let sz = local.sigma_z();
    let mut acc = vec![0.0; cfg.output_steps().len()];
    for (w, init) in mixture {
        for (a, pair) in acc.iter_mut().zip(propagate_generator(gen, *init, cfg)?) {
            *a += w * local_sigma_z(&pair, &sz)?;
        }
    }
    Ok(acc)
}

/// ⟨σ_z⟩ series of the prepared |↑⟩ state at phase point `x`.
pub fn trajectory_sigma_z(
    spec: &BathSpec,
    params: &SpinBosonParams,
    x: &PhasePoint,
    cfg: &PropagationConfig,
) -> Result<Vec<f64>> {
    let local = AdiabaticLocal::at(spec, params, x);
    let gen = build_sigma(&local, cfg.beta, cfg.mode);
    let (psi0, phi0) = initial_coefficients(local.g);
    mixture_sigma_z(&local, &gen, &[(1.0, WavePair::from_real(psi0, phi0))], cfg)
}

struct Job<'a> {
    cfg: &'a RunConfig,
    spec: BathSpec,
    prop: PropagationConfig,
    len: usize,
}

impl Job<'_> {
    fn sample(&self, index: usize) -> Result<Vec<f64>> {
        let mut rng = sample_stream(self.cfg.master_seed, index as u64);
        let x = sample_phase_point(&self.spec, self.cfg.params.beta, &mut rng);
        trajectory_sigma_z(&self.spec, &self.cfg.params, &x, &self.prop).map_err(|e| Error::Trajectory {
            index,
            seed: self.cfg.master_seed,
            source: Box::new(e),
        })
    }

    fn reduce(&self, lo: usize, hi: usize) -> Result<Moments> {
        if hi - lo <= LEAF {
            let mut acc = Moments::empty(self.len);
            for i in lo..hi {
                acc.push(&self.sample(i)?);
            }
            return Ok(acc);
        }
        let mid = lo + (hi - lo) / 2;
        let (left, right) = rayon::join(|| self.reduce(lo, mid), || self.reduce(mid, hi));
        Ok(left?.merge(right?))
    }
}

/// Runs the ensemble on the current rayon pool.
pub fn run_ensemble(cfg: &RunConfig) -> Result<ObservableSeries> {
    cfg.validate()?;
    let spec = discretize_bath(&cfg.params)?;
    let prop = cfg.propagation();
    let times = prop.output_times();
    let job = Job {
        cfg,
        spec,
        prop,
        len: times.len(),
    };
    let moments = job.reduce(0, cfg.n_samples)?;
    Ok(ObservableSeries {
        stderr: moments.stderr(),
        mean: moments.mean,
        times,
        n_samples: cfg.n_samples,
        provenance: cfg.clone(),
    })
}

/// Runs the ensemble on a dedicated pool of `workers` threads.
pub fn run_ensemble_with_workers(cfg: &RunConfig, workers: usize) -> Result<ObservableSeries> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter {
            name: "workers",
            reason: e.to_string(),
        })?;
    pool.install(|| run_ensemble(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    /// |mean(dt) − mean(dt/2)| per output time.
    pub dt_curve: Vec<f64>,
    /// |mean(M) − mean(2M)| per output time.
    pub samples_curve: Vec<f64>,
    pub dt_discrepancy: f64,
    pub samples_discrepancy: f64,
}

fn abs_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Step-size and sample-count refinement on the same output grid.
pub fn convergence_report(cfg: &RunConfig) -> Result<ConvergenceReport> {
    let base = run_ensemble(cfg)?;

    let mut fine = cfg.clone();
    fine.dt = cfg.dt / 2.0;
    fine.out_stride = cfg.out_stride * 2;
    let fine = run_ensemble(&fine)?;

    let mut more = cfg.clone();
    more.n_samples = cfg.n_samples * 2;
    let more = run_ensemble(&more)?;

    let dt_curve = abs_diff(&base.mean, &fine.mean);
    let samples_curve = abs_diff(&base.mean, &more.mean);
    Ok(ConvergenceReport {
        times: base.times,
        dt_discrepancy: max_of(&dt_curve),
        samples_discrepancy: max_of(&samples_curve),
        dt_curve,
        samples_curve,
    })
}
