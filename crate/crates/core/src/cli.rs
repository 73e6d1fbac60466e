//! Command-line front end.
//!
//! Parameters come from three layers: built-in defaults, an optional file of
//! `key = value` lines, and flags. Every layer goes through [`apply_setting`],
//! so unknown keys and malformed values are rejected the same way wherever
//! they appear.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bracketlab::{
    homogeneity_check, jacobi_defect, jacobi_step_noise, max_abs, nh_bracket_rhs, pauli_matrix, qc_bracket, rk4_flow,
    weinberg_rhs, witness_triple, BalancedQuartic, Bilinear, CMatrix, ObservableFunctional, OmegaBlocks,
    PhaseSpaceOperator, Shifted, WaveState, WITNESS_POINT,
};
use crate::ensemble::{convergence_report, run_ensemble, run_ensemble_with_workers, ConvergenceReport, ObservableSeries, RunConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QCWAVE_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "qcwave", version, about = "Wave-field spin-boson simulations and bracket checks", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an ensemble and write <sigma_z>(t).
    Simulate(SimulateArgs),
    /// Compare dt against dt/2 and M against 2M.
    Converge(ConvergeArgs),
    /// Print the bracket-lab checks.
    BracketDemo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    JsonLines,
}

/// Parameter flags. Values are taken as raw strings so that every layer is
/// validated by the same code path.
#[derive(Debug, Args)]
struct RunArgs {
    /// File of `key = value` lines.
    #[arg(long, value_name = "PATH", conflicts_with = "replay")]
    config: Option<PathBuf>,
    /// Reuse the configuration echoed in an output file header.
    #[arg(long, value_name = "PATH")]
    replay: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    omega_max: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    xi_k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    n_osc: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    n_samples: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    t_max: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    out_stride: Option<String>,
    /// euler | rk4
    #[arg(long, allow_hyphen_values = true)]
    integrator: Option<String>,
    /// adiabatic | nonadiabatic
    #[arg(long, allow_hyphen_values = true)]
    mode: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// β used in the generator only (defaults to --beta).
    #[arg(long, allow_hyphen_values = true)]
    generator_beta: Option<String>,
    /// Worker threads (default: all cores). Does not affect results.
    #[arg(long, allow_hyphen_values = true)]
    workers: Option<String>,
}

impl RunArgs {
    fn flag_settings(&self) -> Vec<(&'static str, &String)> {
        let pairs = [
            ("omega", &self.omega),
            ("beta", &self.beta),
            ("omega_max", &self.omega_max),
            ("xi_k", &self.xi_k),
            ("n_osc", &self.n_osc),
            ("n_samples", &self.n_samples),
            ("dt", &self.dt),
            ("t_max", &self.t_max),
            ("out_stride", &self.out_stride),
            ("integrator", &self.integrator),
            ("mode", &self.mode),
            ("master_seed", &self.seed),
            ("generator_beta", &self.generator_beta),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output file; `-` for stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Also write a matplotlib script next to the output.
    #[arg(long)]
    plot_script: bool,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Per-time curves as CSV.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true, default_value = "1e-6")]
    dt_tolerance: String,
    #[arg(long, allow_hyphen_values = true, default_value = "0.05")]
    samples_tolerance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Simulate {
        out: Option<PathBuf>,
        format: Format,
        plot_script: bool,
    },
    Converge {
        out: Option<PathBuf>,
        dt_tolerance: f64,
        samples_tolerance: f64,
    },
    BracketDemo,
}

/// Fully resolved and validated command line.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub task: Task,
    pub run: RunConfig,
    pub workers: Option<usize>,
}

/// Keys accepted in config files and `# key = value` header lines.
pub const CONFIG_KEYS: [&str; 13] = [
    "omega",
    "beta",
    "omega_max",
    "xi_k",
    "n_osc",
    "n_samples",
    "dt",
    "t_max",
    "out_stride",
    "integrator",
    "mode",
    "master_seed",
    "generator_beta",
];

fn bad_value(key: &str, token: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid value '{token}' for {key}: {reason}"))
}

fn parse_positive_f64(key: &str, token: &str) -> Result<f64, CliError> {
    let v: f64 = token.trim().parse().map_err(|e| bad_value(key, token, e))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(bad_value(key, token, "must be positive and finite"));
    }
    Ok(v)
}

fn parse_nonneg_f64(key: &str, token: &str) -> Result<f64, CliError> {
    let v: f64 = token.trim().parse().map_err(|e| bad_value(key, token, e))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(bad_value(key, token, "must be non-negative and finite"));
    }
    Ok(v)
}

fn parse_count(key: &str, token: &str) -> Result<usize, CliError> {
    let v: usize = token.trim().parse().map_err(|e| bad_value(key, token, e))?;
    if v == 0 {
        return Err(bad_value(key, token, "must be at least 1"));
    }
    Ok(v)
}

/// Sets one configuration key from its textual value.
pub fn apply_setting(run: &mut RunConfig, key: &str, token: &str) -> Result<(), CliError> {
    let t = token.trim();
    match key {
        "omega" => run.params.omega = parse_positive_f64(key, t)?,
        "beta" => run.params.beta = parse_positive_f64(key, t)?,
        "omega_max" => run.params.omega_max = parse_positive_f64(key, t)?,
        "xi_k" => run.params.xi_k = parse_positive_f64(key, t)?,
        "n_osc" => run.params.n_osc = parse_count(key, t)?,
        "n_samples" => run.n_samples = parse_count(key, t)?,
        "dt" => run.dt = parse_positive_f64(key, t)?,
        "t_max" => run.t_max = parse_nonneg_f64(key, t)?,
        "out_stride" => run.out_stride = parse_count(key, t)?,
        "integrator" => run.integrator = t.parse().map_err(|e| bad_value(key, t, e))?,
        "mode" => run.mode = t.parse().map_err(|e| bad_value(key, t, e))?,
        "master_seed" => run.master_seed = t.parse().map_err(|e| bad_value(key, t, e))?,
        "generator_beta" => {
            run.generator_beta = match t {
                "none" => None,
                _ => Some(parse_nonneg_f64(key, t)?),
            }
        }
        other => return Err(CliError::Usage(format!("unknown key '{other}'"))),
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value, got '{raw}'", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if v.is_empty() {
            return Err(CliError::Usage(format!("line {}: missing value for {k}", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Extracts the `# key = value` configuration echo from an output header.
pub fn parse_header_settings(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| CONFIG_KEYS.contains(&k.as_str()))
        .collect()
}

fn resolve_run(args: &RunArgs) -> Result<(RunConfig, Option<usize>), CliError> {
    let mut run = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        for (k, v) in parse_settings(&text)? {
            apply_setting(&mut run, &k, &v)?;
        }
    }
    if let Some(path) = &args.replay {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let settings = parse_header_settings(&text);
        if settings.is_empty() {
            return Err(CliError::Usage(format!("{}: no configuration header found", path.display())));
        }
        for (k, v) in settings {
            apply_setting(&mut run, &k, &v)?;
        }
    }
    for (k, v) in args.flag_settings() {
        apply_setting(&mut run, k, v)?;
    }
    run.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let workers = args.workers.as_deref().map(|w| parse_count("workers", w)).transpose()?;
    Ok((run, workers))
}

/// Parses `argv` (including the program name). Help and version requests
/// come back as `Err(Ok(clap::Error))` so the caller can print them.
pub fn parse_config<I, T>(argv: I) -> Result<CliConfig, Result<clap::Error, CliError>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(Ok)?;
    let resolved = match cli.command {
        Command::Simulate(a) => resolve_run(&a.run).map(|(run, workers)| CliConfig {
            task: Task::Simulate {
                out: a.out,
                format: a.format,
                plot_script: a.plot_script,
            },
            run,
            workers,
        }),
        Command::Converge(a) => resolve_run(&a.run).and_then(|(run, workers)| {
            Ok(CliConfig {
                task: Task::Converge {
                    out: a.out,
                    dt_tolerance: parse_nonneg_f64("dt_tolerance", &a.dt_tolerance)?,
                    samples_tolerance: parse_nonneg_f64("samples_tolerance", &a.samples_tolerance)?,
                },
                run,
                workers,
            })
        }),
        Command::BracketDemo => Ok(CliConfig {
            task: Task::BracketDemo,
            run: RunConfig::default(),
            workers: None,
        }),
    };
    resolved.map_err(Err)
}

/// Comment block echoing the configuration; replaying it reproduces the run.
pub fn provenance_lines(run: &RunConfig) -> Vec<String> {
    let p = &run.params;
    let mut lines = vec![
        format!("qcwave {VERSION}"),
        format!("version: {VERSION}"),
        format!("omega = {:?}", p.omega),
        format!("beta = {:?}", p.beta),
        format!("omega_max = {:?}", p.omega_max),
        format!("xi_k = {:?}", p.xi_k),
        format!("n_osc = {}", p.n_osc),
        format!("n_samples = {}", run.n_samples),
        format!("dt = {:?}", run.dt),
        format!("t_max = {:?}", run.t_max),
        format!("out_stride = {}", run.out_stride),
        format!("integrator = {}", run.integrator),
        format!("mode = {}", run.mode),
        format!("master_seed = {}", run.master_seed),
    ];
    lines.push(match run.generator_beta {
        Some(b) => format!("generator_beta = {b:?}"),
        None => "generator_beta = none".into(),
    });
    lines
}

pub fn render_csv(series: &ObservableSeries) -> String {
    let mut out = String::new();
    for line in provenance_lines(&series.provenance) {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "sigma_z", "stderr"]).expect("in-memory write");
    for k in 0..series.times.len() {
        w.write_record([
            format!("{:.16e}", series.times[k]),
            format!("{:.16e}", series.mean[k]),
            format!("{:.16e}", series.stderr[k]),
        ])
        .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output"));
    out
}

/// Columns (t, sigma_z, stderr) of an emitted CSV file.
pub fn parse_csv(text: &str) -> Result<[Vec<f64>; 3], CliError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::Usage(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "sigma_z", "stderr"] {
        return Err(CliError::Usage(format!("unexpected CSV header {headers:?}")));
    }
    let mut cols: [Vec<f64>; 3] = Default::default();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Usage(e.to_string()))?;
        for (col, field) in cols.iter_mut().zip(record.iter()) {
            col.push(field.parse().map_err(|e| CliError::Usage(format!("bad number '{field}': {e}")))?);
        }
    }
    Ok(cols)
}

pub fn render_json_lines(series: &ObservableSeries) -> String {
    let head = serde_json::json!({ "version": VERSION, "provenance": series.provenance });
    let mut out = format!("{head}\n");
    for k in 0..series.times.len() {
        let row = serde_json::json!({ "t": series.times[k], "sigma_z": series.mean[k], "stderr": series.stderr[k] });
        out.push_str(&format!("{row}\n"));
    }
    out
}

fn plot_script(data: &Path) -> String {
    let name = data.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    format!(
        r##"import os
import matplotlib.pyplot as plt
import numpy as np

here = os.path.dirname(os.path.abspath(__file__))
path = os.path.join(here, "{name}")
with open(path) as f:
    header = sum(1 for line in f if line.startswith("#"))
t, sz, err = np.loadtxt(path, delimiter=",", skiprows=header + 1, unpack=True, ndmin=2)
plt.fill_between(t, sz - err, sz + err, alpha=0.3)
plt.plot(t, sz)
plt.xlabel("t")
plt.ylabel("<sigma_z>")
plt.savefig(os.path.join(here, "{name}.png"), dpi=150)
"##
    )
}

fn default_output(name: &str) -> PathBuf {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    dir.join(name)
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    if path == Path::new("-") {
        std::io::stdout().write_all(text.as_bytes()).map_err(io_err(path))
    } else {
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Writes the series (and optional plot script); returns the data path.
pub fn emit_series(series: &ObservableSeries, cfg: &CliConfig) -> Result<PathBuf, CliError> {
    let (out, format, plot) = match &cfg.task {
        Task::Simulate { out, format, plot_script } => (out.clone(), *format, *plot_script),
        _ => (None, Format::Csv, false),
    };
    let ext = match format {
        Format::Csv => "csv",
        Format::JsonLines => "jsonl",
    };
    let path = out.unwrap_or_else(|| default_output(&format!("sigma_z_{}.{ext}", series.provenance.mode)));
    let text = match format {
        Format::Csv => render_csv(series),
        Format::JsonLines => render_json_lines(series),
    };
    write_output(&path, &text)?;
    if plot && path != Path::new("-") {
        let script = path.with_extension(format!("{ext}.plot.py"));
        fs::write(&script, plot_script(&path)).map_err(io_err(&script))?;
    }
    Ok(path)
}

fn run_series(cfg: &CliConfig) -> Result<ObservableSeries, CliError> {
    Ok(match cfg.workers {
        Some(w) => run_ensemble_with_workers(&cfg.run, w)?,
        None => run_ensemble(&cfg.run)?,
    })
}

fn render_report(report: &ConvergenceReport, run: &RunConfig) -> String {
    let mut out: String = provenance_lines(run).iter().map(|l| format!("# {l}\n")).collect();
    out.push_str("t,dt_diff,samples_diff\n");
    for k in 0..report.times.len() {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e}\n",
            report.times[k], report.dt_curve[k], report.samples_curve[k]
        ));
    }
    out
}

/// Labeled bracket-lab results.
#[derive(Debug, Clone)]
pub struct BracketDemo {
    pub antisymmetry: f64,
    pub quantum_defect: f64,
    pub classical_defect: f64,
    pub witness: CMatrix,
    pub witness_noise: f64,
    pub rabi_error: f64,
    pub quartic_homogeneity: f64,
    pub shifted_homogeneity: f64,
    pub nh_drift: f64,
}

pub fn bracket_demo() -> crate::Result<BracketDemo> {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let (sx, sy, sz) = (pauli_matrix('x'), pauli_matrix('y'), pauli_matrix('z'));
    let x = WITNESS_POINT;

    let (sx1, sz1) = (sx.clone(), sz.clone());
    let a = PhaseSpaceOperator::new(2, 1, move |x| &sx1 * c(x[0].sin(), 0.0) + &sz1 * c(x[1] * x[1], 0.0));
    let sy1 = sy.clone();
    let b = PhaseSpaceOperator::new(2, 1, move |x| &sy1 * c(x[0] * x[1], 0.0));
    let antisymmetry = max_abs(&(qc_bracket(&a, &b, &x)? + qc_bracket(&b, &a, &x)?));

    let q = [sx.clone(), sy.clone(), sz.clone()].map(|m| PhaseSpaceOperator::constant(m, 1));
    let quantum_defect = max_abs(&jacobi_defect(&q[0], &q[1], &q[2], &x)?);
    let k = [
        PhaseSpaceOperator::classical(2, 1, |x| x[0] * x[1]),
        PhaseSpaceOperator::classical(2, 1, |x| x[1].sin()),
        PhaseSpaceOperator::classical(2, 1, |x| x[0] * x[0] * x[1]),
    ];
    let classical_defect = max_abs(&jacobi_defect(&k[0], &k[1], &k[2], &x)?);

    let [wa, wb, wc] = witness_triple();
    let witness = jacobi_defect(&wa, &wb, &wc, &x)?;
    let witness_noise = jacobi_step_noise(&wa, &wb, &wc, &x)?
        .max(quantum_defect)
        .max(classical_defect);

    let omega = 0.7;
    let h = Bilinear(&sx * c(omega, 0.0));
    let start = WaveState::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)])?;
    let dt = 1e-3;
    let path = rk4_flow(&start, dt, 10_000, |s| weinberg_rhs(s, &h))?;
    let rabi_error = path
        .iter()
        .enumerate()
        .map(|(i, s)| (s.ket()[0].norm_sqr() - (omega * i as f64 * dt).cos().powi(2)).abs())
        .fold(0.0, f64::max);

    let a_mat = DMatrix::from_row_slice(2, 2, &[c(0.4, 0.0), c(0.1, -0.3), c(0.1, 0.3), c(-0.2, 0.0)]);
    let states: Vec<WaveState> = (0..8)
        .map(|i| {
            let t = i as f64;
            WaveState::from_slice(&[c(t.cos(), 0.3 * t), c(0.5, (2.0 * t).sin())])
        })
        .collect::<crate::Result<_>>()?;
    let quartic = BalancedQuartic(a_mat.clone());
    let quartic_homogeneity = homogeneity_check(&quartic, &states);
    let shifted_homogeneity = homogeneity_check(&Shifted(a_mat, 0.25), &states);

    let (k0, k1) = (sx.clone() + &sz * c(0.3, 0.0), sy.clone());
    let field = move |s: &WaveState| {
        OmegaBlocks::from_hermitian(&(&k0 + &k1 * c(s.ket()[0].norm_sqr() / s.ket().norm_squared(), 0.0)))
    };
    let start = states[3].clone();
    let h0 = quartic.value(&start);
    let path = rk4_flow(&start, 1e-3, 5_000, |s| nh_bracket_rhs(s, &quartic, &field))?;
    let nh_drift = path.iter().map(|s| (quartic.value(s) - h0).abs()).fold(0.0, f64::max);

    Ok(BracketDemo {
        antisymmetry,
        quantum_defect,
        classical_defect,
        witness,
        witness_noise,
        rabi_error,
        quartic_homogeneity,
        shifted_homogeneity,
        nh_drift,
    })
}

fn print_demo(d: &BracketDemo) {
    println!("antisymmetry residual |(a,b)+(b,a)|     {:.3e}", d.antisymmetry);
    println!("Jacobi defect, constant Pauli triple    {:.3e}", d.quantum_defect);
    println!("Jacobi defect, classical triple         {:.3e}", d.classical_defect);
    println!(
        "Jacobi defect, R^2 sx / R^2 sz / P^2 sx at (R, P) = ({}, {}):",
        WITNESS_POINT[0], WITNESS_POINT[1]
    );
    for r in 0..2 {
        println!("  [{:+.9} {:+.9}]", d.witness[(r, 0)].re, d.witness[(r, 1)].re);
    }
    println!("  noise floor {:.3e}, ratio {:.3e}", d.witness_noise, max_abs(&d.witness) / d.witness_noise);
    println!("Rabi |psi_1|^2 vs cos^2(wt), max error  {:.3e}", d.rabi_error);
    println!("homogeneity, balanced quartic           {:.3e}", d.quartic_homogeneity);
    println!("homogeneity, bilinear + 0.25            {:.3e}", d.shifted_homogeneity);
    println!("functional drift, state-dependent omega {:.3e}", d.nh_drift);
}

/// Runs a parsed configuration and returns the exit code.
pub fn execute(cfg: &CliConfig) -> Result<i32, CliError> {
    match &cfg.task {
        Task::Simulate { .. } => {
            let series = run_series(cfg)?;
            let path = emit_series(&series, cfg)?;
            if path != Path::new("-") {
                eprintln!("wrote {}", path.display());
            }
            Ok(EXIT_OK)
        }
        Task::Converge {
            out,
            dt_tolerance,
            samples_tolerance,
        } => {
            let report = match cfg.workers {
                Some(w) => rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| CliError::Usage(e.to_string()))?
                    .install(|| convergence_report(&cfg.run))?,
                None => convergence_report(&cfg.run)?,
            };
            if let Some(path) = out {
                write_output(path, &render_report(&report, &cfg.run))?;
            }
            let dt_ok = report.dt_discrepancy <= *dt_tolerance;
            let m_ok = report.samples_discrepancy <= *samples_tolerance;
            let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
            println!(
                "{} dt refinement: max |mean(dt) - mean(dt/2)| = {:.3e} (tolerance {:.1e})",
                verdict(dt_ok),
                report.dt_discrepancy,
                dt_tolerance
            );
            println!(
                "{} sample refinement: max |mean(M) - mean(2M)| = {:.3e} (tolerance {:.1e})",
                verdict(m_ok),
                report.samples_discrepancy,
                samples_tolerance
            );
            Ok(if dt_ok && m_ok { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Task::BracketDemo => {
            print_demo(&bracket_demo()?);
            Ok(EXIT_OK)
        }
    }
}

/// Full entry point: parse, run, report errors, return the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match parse_config(argv) {
        Ok(cfg) => cfg,
        Err(Ok(clap_err)) => {
            let _ = clap_err.print();
            return if clap_err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
        Err(Err(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
