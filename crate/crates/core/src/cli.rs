//! `requant run <config> [--out <dir>] [--threads <k>]`: one pipeline per
//! invocation, driven by a strict JSON configuration.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flow::{fmt17, integrate_flow, IntegratorOptions};
use crate::hilbert::{inner, spectral_projector, HermitianOperator, StateVector, C64};
use crate::manifold::ManifoldChart;
use crate::models::cylinder::{cylinder_orbit, CylinderModel};
use crate::models::lipkin::LipkinModel;
use crate::models::oscillator::OscillatorModel;
use crate::models::rotor::RotorModel;
use crate::optimize::{minimize_expectation, MinimizeOptions};
use crate::orbit::{quantize_family, QuantizeOptions, QuantizedOrbit};
use crate::requantize::{angular_project, ergodic_project, requantize};
use crate::rpa::{linearize, rpa_state, RpaOptions};
use crate::variational::{solve_targets, write_cranking_csv, CrankingOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const CSV_HELP: &str = "\
CSV output (written next to report.json):
  evolve      trajectory.csv  t, x_1..x_P, energy, theta
  quantize    orbits.csv      n, parameter, period, energy, total_phase, residual
              (cylinder: weights.csv  weight, winding, integer)
  requantize  orbits.csv      as for quantize, plus norm, requantized_energy
  crank       cranking.csv    I_target, lambda, energy, achieved
  project     projections.csv target, norm, energy, residual, projector_defect
  spectrum    spectrum.csv    index, energy
  minimize, rpa               report.json only

Exit status: 0 success, 1 I/O failure, 2 configuration error, 3 numerical failure.";

#[derive(Debug, Parser)]
#[command(name = "requant", version, about = "Constrained variational dynamics and orbit requantization", after_long_help = CSV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute the pipeline described by a JSON configuration.
    #[command(after_long_help = CSV_HELP)]
    Run {
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads for family scans (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub samples: usize,
    pub energy_tol: f64,
    pub condition_limit: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let d = IntegratorOptions::default();
        Self { rtol: d.rtol, atol: d.atol, max_steps: d.max_steps, samples: d.samples, energy_tol: d.energy_tol, condition_limit: d.condition_limit }
    }
}

impl IntegratorConfig {
    fn options(&self, store_states: bool) -> IntegratorOptions {
        IntegratorOptions {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            samples: self.samples,
            store_states,
            energy_tol: self.energy_tol,
            condition_limit: self.condition_limit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ModelConfig {
    Oscillator(OscillatorConfig),
    Lipkin(LipkinConfig),
    Rotor(RotorConfig),
    Cylinder(CylinderConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    pub omega: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
}

fn default_truncation() -> usize {
    crate::models::oscillator::DEFAULT_TRUNCATION
}

fn default_z_max() -> f64 {
    crate::models::oscillator::DEFAULT_Z_MAX
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipkinConfig {
    pub j: f64,
    pub epsilon: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotorConfig {
    pub j: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderConfig {
    pub eigenvalues: Vec<f64>,
    /// Real parts of the initial amplitudes.
    pub psi0: Vec<f64>,
    #[serde(default)]
    pub psi0_imag: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum PipelineConfig {
    Minimize(MinimizeConfig),
    Evolve(EvolveConfig),
    Quantize(QuantizeConfig),
    Requantize(QuantizeConfig),
    Rpa(RpaConfig),
    Crank(CrankConfig),
    Project(ProjectConfig),
    Spectrum(SpectrumConfig),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeConfig {
    pub x_init: Option<Vec<f64>>,
    pub gradient_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub x0: Vec<f64>,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeConfig {
    pub n: Vec<i64>,
    #[serde(default)]
    pub scan: Option<[f64; 2]>,
    #[serde(default)]
    pub scan_points: Option<usize>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub closure_tol: Option<f64>,
    #[serde(default)]
    pub quantization_tol: Option<f64>,
    /// Quadrature samples per period for requantization.
    #[serde(default)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpaConfig {
    pub x_init: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub amplitude_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrankConfig {
    /// Action targets; defaults to every `m hbar` strictly inside the spectrum.
    pub targets: Option<Vec<f64>>,
    pub x_init: Option<Vec<f64>>,
    pub constraint_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    /// Rotor: quantum numbers `m`; defaults to all integers strictly inside `(-j, j)`.
    pub m: Option<Vec<i64>>,
    /// Cylinder: energies to project on; defaults to the eigenvalues.
    pub energies: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub x_init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {}

/// Failure of a run, split by exit status.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(Error),
    Io(io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Numerical(_) => EXIT_NUMERICAL,
            RunError::Io(_) => EXIT_IO,
        }
    }

    fn report(&self) -> Value {
        match self {
            RunError::Config(m) => json!({ "kind": "ConfigError", "message": m }),
            RunError::Numerical(e) => json!({ "kind": e.name(), "message": e.to_string() }),
            RunError::Io(e) => json!({ "kind": "IoError", "message": e.to_string() }),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Numerical(e)
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

fn config_err(e: Error) -> RunError {
    RunError::Config(e.to_string())
}

fn require(cond: bool, msg: &str) -> std::result::Result<(), RunError> {
    if cond {
        Ok(())
    } else {
        Err(RunError::Config(msg.to_string()))
    }
}

/// `f64` values written as `{:.16e}` (17 significant digits).
struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
}

pub fn to_json_string(v: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    v.serialize(&mut ser).expect("serializing a JSON value cannot fail");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

enum Model {
    Oscillator(OscillatorModel, f64),
    Lipkin(LipkinModel),
    Rotor(RotorModel),
    Cylinder(CylinderModel),
}

impl Model {
    fn build(cfg: &ModelConfig, hbar: f64) -> std::result::Result<Self, RunError> {
        Ok(match cfg {
            ModelConfig::Oscillator(c) => {
                let m = OscillatorModel::new(c.omega, c.mass, c.truncation, hbar).map_err(config_err)?;
                m.glauber_chart(c.z_max).map_err(config_err)?;
                Model::Oscillator(m, c.z_max)
            }
            ModelConfig::Lipkin(c) => Model::Lipkin(LipkinModel::new(c.j, c.epsilon, c.v, hbar).map_err(config_err)?),
            ModelConfig::Rotor(c) => Model::Rotor(RotorModel::new(c.j, c.epsilon, hbar).map_err(config_err)?),
            ModelConfig::Cylinder(c) => {
                let im = c.psi0_imag.clone().unwrap_or_else(|| vec![0.0; c.psi0.len()]);
                require(im.len() == c.psi0.len(), "psi0_imag must match psi0 in length")?;
                let psi: Vec<C64> = c.psi0.iter().zip(&im).map(|(r, i)| C64::new(*r, *i)).collect();
                Model::Cylinder(CylinderModel::new(c.eigenvalues.clone(), psi, hbar).map_err(config_err)?)
            }
        })
    }

    fn hamiltonian(&self) -> &HermitianOperator {
        match self {
            Model::Oscillator(m, _) => &m.hamiltonian,
            Model::Lipkin(m) => &m.hamiltonian,
            Model::Rotor(m) => &m.hamiltonian,
            Model::Cylinder(m) => &m.hamiltonian,
        }
    }

    fn chart(&self) -> Result<Arc<dyn ManifoldChart>> {
        Ok(match self {
            Model::Oscillator(m, z) => Arc::new(m.glauber_chart(*z)?),
            Model::Lipkin(m) => Arc::new(m.spin_coherent_chart()?),
            Model::Rotor(m) => Arc::new(m.spin_coherent_chart()?),
            Model::Cylinder(m) => Arc::new(m.projective_chart()),
        })
    }

    fn default_start(&self, n_params: usize) -> Vec<f64> {
        match self {
            Model::Oscillator(..) => vec![0.3, 0.2],
            Model::Lipkin(_) => vec![0.05, 0.02],
            Model::Rotor(_) => vec![0.3, 0.2],
            Model::Cylinder(_) => vec![0.0; n_params],
        }
    }

    /// Natural angular frequency used for default time horizons.
    fn frequency_scale(&self, hbar: f64) -> f64 {
        match self {
            Model::Oscillator(m, _) => m.omega,
            Model::Lipkin(m) => m.epsilon / hbar,
            Model::Rotor(m) => m.epsilon / hbar,
            Model::Cylinder(m) => m.frequency.unwrap_or(m.hamiltonian.spectral().span().max(1.0) / hbar),
        }
    }

    /// Family through the chart origin used for quantization scans.
    fn family(&self) -> fn(f64) -> Vec<f64> {
        match self {
            Model::Oscillator(..) => |s| vec![s.max(0.0).sqrt(), 0.0],
            _ => |s| vec![s, 0.0],
        }
    }

    fn default_scan(&self, max_n: i64) -> [f64; 2] {
        match self {
            Model::Oscillator(_, z) => [0.0, ((max_n + 1) as f64).min(0.95 * z * z)],
            _ => [0.0, 1.2],
        }
    }

    /// Generator used for cranking.
    fn crank_generator(&self) -> Option<HermitianOperator> {
        match self {
            Model::Rotor(m) => Some(m.generator.clone()),
            Model::Lipkin(m) => Some(m.spin.jz_operator(m.hbar)),
            _ => None,
        }
    }
}

/// Fills model-dependent defaults in place and validates ranges.
fn resolve(cfg: &mut RunConfig, model: &Model, n_params: usize) -> std::result::Result<(), RunError> {
    let ic = &cfg.integrator;
    require(ic.rtol > 0.0 && ic.atol > 0.0 && ic.energy_tol > 0.0 && ic.condition_limit > 0.0, "integrator tolerances must be positive")?;
    require(ic.samples >= 2 && ic.max_steps > 0, "integrator samples must be >= 2 and max_steps > 0")?;
    let hbar = cfg.hbar;
    require(hbar > 0.0, "hbar must be positive")?;
    let start = |x: &mut Option<Vec<f64>>| -> std::result::Result<(), RunError> {
        let v = x.get_or_insert_with(|| model.default_start(n_params));
        require(v.len() == n_params, &format!("starting point needs {n_params} coordinates"))
    };
    match &mut cfg.pipeline {
        PipelineConfig::Minimize(c) => {
            start(&mut c.x_init)?;
            let g = *c.gradient_tol.get_or_insert(MinimizeOptions::default().gradient_tol);
            require(g > 0.0, "gradient_tol must be positive")?;
        }
        PipelineConfig::Evolve(c) => {
            require(c.x0.len() == n_params, &format!("x0 needs {n_params} coordinates"))?;
            require(c.t_end > 0.0, "t_end must be positive")?;
        }
        PipelineConfig::Quantize(c) | PipelineConfig::Requantize(c) => {
            require(!c.n.is_empty(), "n must list at least one target")?;
            let max_n = *c.n.iter().max().unwrap();
            let d = QuantizeOptions::default();
            let scan = *c.scan.get_or_insert(model.default_scan(max_n));
            require(scan[1] > scan[0], "scan range must be nonempty")?;
            require(*c.scan_points.get_or_insert(d.scan_points) >= 2, "scan_points must be >= 2")?;
            let t_max = *c.t_max.get_or_insert(3.0 * 2.0 * std::f64::consts::PI / model.frequency_scale(hbar));
            let ct = *c.closure_tol.get_or_insert(d.closure_tol);
            let qt = *c.quantization_tol.get_or_insert(d.quantization_tol);
            require(t_max > 0.0 && ct > 0.0 && qt > 0.0, "t_max and tolerances must be positive")?;
            require(*c.samples.get_or_insert(crate::requantize::DEFAULT_SAMPLES) >= crate::requantize::MIN_SAMPLES, "samples below minimum")?;
        }
        PipelineConfig::Rpa(c) => {
            require(!matches!(model, Model::Rotor(_)), "rpa is not available for the rotor (its minimum is a symmetry orbit)")?;
            start(&mut c.x_init)?;
            let d = RpaOptions::default();
            require(*c.samples.get_or_insert(d.samples_per_period) >= crate::requantize::MIN_SAMPLES, "samples below minimum")?;
            let w = *c.amplitude_window.get_or_insert([d.amplitude_window.0, d.amplitude_window.1]);
            require(w[1] > w[0] && w[0] > 0.0, "amplitude_window must be a positive nonempty range")?;
        }
        PipelineConfig::Crank(c) => {
            let Some(g) = model.crank_generator() else {
                return Err(RunError::Config("crank needs a model with an angular-momentum generator (rotor, lipkin)".into()));
            };
            start(&mut c.x_init)?;
            let t = c.targets.get_or_insert_with(|| interior_targets(&g, hbar));
            require(!t.is_empty(), "targets must be nonempty")?;
            require(*c.constraint_tol.get_or_insert(CrankingOptions::default().constraint_tol) > 0.0, "constraint_tol must be positive")?;
        }
        PipelineConfig::Project(c) => {
            require(*c.samples.get_or_insert(crate::requantize::DEFAULT_SAMPLES) > 0, "samples must be positive")?;
            match model {
                Model::Rotor(m) => {
                    start(&mut c.x_init)?;
                    let ms = c.m.get_or_insert_with(|| interior_targets(&m.generator, hbar).iter().map(|v| (v / hbar).round() as i64).collect());
                    require(!ms.is_empty(), "m must be nonempty")?;
                    require(c.energies.is_none(), "energies apply to the cylinder model only")?;
                }
                Model::Cylinder(m) => {
                    c.energies.get_or_insert_with(|| m.eigenvalues.clone());
                    require(c.m.is_none() && c.x_init.is_none(), "m and x_init apply to the rotor model only")?;
                    require(m.period().is_some(), "cylinder spectrum has no commensurate period")?;
                }
                _ => return Err(RunError::Config("project is available for the rotor (angular) and cylinder (ergodic) models".into())),
            }
        }
        PipelineConfig::Spectrum(_) => {}
    }
    Ok(())
}

/// `m hbar` for every integer `m` strictly inside the generator's spectrum.
fn interior_targets(g: &HermitianOperator, hbar: f64) -> Vec<f64> {
    let e = g.spectral().eigenvalues();
    let (lo, hi) = (e[0] / hbar, e[e.len() - 1] / hbar);
    let first = lo.floor() as i64 + 1;
    let last = hi.ceil() as i64 - 1;
    (first..=last).filter(|m| (*m as f64) > lo && (*m as f64) < hi).map(|m| m as f64 * hbar).collect()
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn csv(&self, name: &str, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> std::result::Result<String, RunError> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        write(&mut w)?;
        w.flush()?;
        Ok(name.to_string())
    }
}

fn quantize_options(c: &QuantizeConfig, integrator: &IntegratorConfig) -> QuantizeOptions {
    QuantizeOptions {
        t_max: c.t_max.unwrap(),
        closure_tol: c.closure_tol.unwrap(),
        quantization_tol: c.quantization_tol.unwrap(),
        scan_points: c.scan_points.unwrap(),
        integrator: integrator.options(false),
    }
}

fn quantized_orbits(model: &Model, cfg: &RunConfig, c: &QuantizeConfig) -> Result<Vec<QuantizedOrbit>> {
    if let Model::Cylinder(m) = model {
        // the exact orbit of psi0; its winding decides the nearest level
        let orbit = cylinder_orbit(m, cfg.integrator.samples)?;
        let w = orbit.winding();
        let n = w.round() as i64;
        return Ok(vec![QuantizedOrbit { residual: (w - n as f64).abs(), parameter: 0.0, orbit, n }]);
    }
    let scan = c.scan.unwrap();
    quantize_family(model.chart()?, model.hamiltonian(), model.family(), (scan[0], scan[1]), &c.n, &quantize_options(c, &cfg.integrator))
}

fn run_pipeline(cfg: &RunConfig, model: &Model, out: &Output) -> std::result::Result<Value, RunError> {
    let hbar = cfg.hbar;
    let h = model.hamiltonian();
    let spectrum = h.spectral();
    let mut files = Vec::new();
    let results = match &cfg.pipeline {
        PipelineConfig::Spectrum(_) => {
            let e = spectrum.eigenvalues().to_vec();
            files.push(out.csv("spectrum.csv", |w| {
                writeln!(w, "index,energy")?;
                e.iter().enumerate().try_for_each(|(k, v)| writeln!(w, "{k},{}", fmt17(*v)))
            })?);
            json!({ "eigenvalues": e, "dimension": e.len() })
        }
        PipelineConfig::Minimize(c) => {
            let chart = model.chart()?;
            let opts = MinimizeOptions { gradient_tol: c.gradient_tol.unwrap(), ..Default::default() };
            let m = minimize_expectation(chart.as_ref(), h, c.x_init.as_ref().unwrap(), &opts)?;
            json!({
                "minimum": m.x,
                "energy": m.value,
                "gradient_norm": m.gradient_norm,
                "hessian_eigenvalues": m.hessian_eigenvalues(),
                "iterations": m.iterations,
                "exact_ground_energy": spectrum.eigenvalues()[0],
            })
        }
        PipelineConfig::Evolve(c) => {
            let traj = integrate_flow(model.chart()?, h, &c.x0, c.t_end, &cfg.integrator.options(false))?;
            files.push(out.csv("trajectory.csv", |w| traj.write_csv(w))?);
            let last = traj.len() - 1;
            json!({
                "energy_drift": traj.energy_drift(),
                "initial_energy": traj.energies[0],
                "final_point": traj.points[last],
                "final_theta": traj.theta[last],
                "samples": traj.len(),
            })
        }
        PipelineConfig::Quantize(c) => {
            if let Model::Cylinder(m) = model {
                cylinder_weight_scan(m, c, out, &mut files)?
            } else {
                let orbits = quantized_orbits(model, cfg, c)?;
                files.push(out.csv("orbits.csv", |w| {
                    writeln!(w, "n,parameter,period,energy,total_phase,residual")?;
                    orbits.iter().try_for_each(|q| {
                        writeln!(w, "{},{},{},{},{},{}", q.n, fmt17(q.parameter), fmt17(q.orbit.period), fmt17(q.orbit.energy), fmt17(q.orbit.total_phase), fmt17(q.residual))
                    })
                })?);
                json!({ "orbits": orbits.iter().map(QuantizedOrbit::to_json).collect::<Vec<_>>() })
            }
        }
        PipelineConfig::Requantize(c) => {
            let orbits = quantized_orbits(model, cfg, c)?;
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for q in &orbits {
                let r = requantize(q, h, c.samples.unwrap())?;
                let mut v = q.to_json();
                v["requantized"] = r.to_json(Some(spectrum))?;
                reports.push(v);
                rows.push((q.clone(), r.norm, r.energy));
            }
            files.push(out.csv("orbits.csv", |w| {
                writeln!(w, "n,parameter,period,energy,total_phase,residual,norm,requantized_energy")?;
                rows.iter().try_for_each(|(q, norm, e)| {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        q.n,
                        fmt17(q.parameter),
                        fmt17(q.orbit.period),
                        fmt17(q.orbit.energy),
                        fmt17(q.orbit.total_phase),
                        fmt17(q.residual),
                        fmt17(*norm),
                        fmt17(*e)
                    )
                })
            })?);
            json!({ "orbits": reports })
        }
        PipelineConfig::Rpa(c) => {
            let chart = model.chart()?;
            let x_star = crate::rpa::find_minimum(chart.as_ref(), h, c.x_init.as_ref().unwrap())?;
            let modes = linearize(chart.as_ref(), h, &x_star)?;
            let mode = modes.first().ok_or(Error::ComplexInstability(0.0))?;
            let w = c.amplitude_window.unwrap();
            let opts = RpaOptions {
                samples_per_period: c.samples.unwrap(),
                amplitude_window: (w[0], w[1]),
                quantize: QuantizeOptions { scan_points: 9, integrator: cfg.integrator.options(false), ..Default::default() },
                ..Default::default()
            };
            let sol = rpa_state(mode, chart.clone(), &x_star, h, &opts)?;
            let e = spectrum.eigenvalues();
            let exact_gap = e[1] - e[0];
            let overlap = inner(&spectrum.eigenvector(1), sol.excited_state())?.norm();
            let mut v = sol.to_json(Some(overlap));
            v["exact_gap"] = json!(exact_gap);
            v["relative_gap_error"] = json!((sol.excitation_energy - exact_gap).abs() / exact_gap);
            v["all_frequencies"] = json!(modes.iter().map(|m| m.omega).collect::<Vec<_>>());
            v
        }
        PipelineConfig::Crank(c) => {
            let chart = model.chart()?;
            let g = model.crank_generator().expect("checked during resolution");
            let opts = CrankingOptions { constraint_tol: c.constraint_tol.unwrap(), ..Default::default() };
            let x_init = c.x_init.clone().unwrap();
            let targets = c.targets.clone().unwrap();
            let gens = [g];
            let sols: Vec<_> = {
                use rayon::prelude::*;
                targets.par_iter().map(|t| solve_targets(chart.as_ref(), h, &gens, &[*t], &[0.0], &x_init, &opts)).collect::<Result<_>>()?
            };
            files.push(out.csv("cranking.csv", |w| write_cranking_csv(&sols, w))?);
            json!({
                "solutions": sols.iter().map(|s| json!({
                    "target": s.targets[0],
                    "lambda": s.lambda[0],
                    "achieved": s.achieved[0],
                    "energy": s.energy,
                    "constraint_error": s.max_constraint_error(),
                    "multiplier_residual": s.multiplier_residual,
                    "x_g": s.x_g,
                })).collect::<Vec<_>>(),
            })
        }
        PipelineConfig::Project(c) => project(model, c, hbar, out, &mut files)?,
    };
    Ok(json!({ "results": results, "files": files }))
}

fn cylinder_weight_scan(m: &CylinderModel, c: &QuantizeConfig, out: &Output, files: &mut Vec<String>) -> std::result::Result<Value, RunError> {
    // psi(w) = sqrt(1 - w) |v_0> + sqrt(w) |v_1> over the configured weight range
    let spec = m.hamiltonian.spectral();
    let (v0, v1) = (spec.eigenvector(0), spec.eigenvector(1));
    let [lo, hi] = c.scan.unwrap();
    require(lo >= 0.0 && hi <= 1.0, "cylinder weight scan must lie in [0, 1]")?;
    let pts = c.scan_points.unwrap();
    let tol = c.quantization_tol.unwrap();
    let mut rows = Vec::with_capacity(pts);
    for k in 0..pts {
        let w = lo + (hi - lo) * k as f64 / (pts - 1) as f64;
        let psi = StateVector::from_dvector(v0.amplitudes() * C64::new((1.0 - w).sqrt(), 0.0) + v1.amplitudes() * C64::new(w.sqrt(), 0.0))?;
        let wind = m.winding(&psi)?;
        rows.push((w, wind, (wind - wind.round()).abs() <= tol));
    }
    files.push(out.csv("weights.csv", |f| {
        writeln!(f, "weight,winding,integer")?;
        rows.iter().try_for_each(|(w, n, i)| writeln!(f, "{},{},{}", fmt17(*w), fmt17(*n), i))
    })?);
    Ok(json!({
        "period": m.period(),
        "quantized_weights": rows.iter().filter(|r| r.2).map(|r| r.0).collect::<Vec<_>>(),
        "scan": rows.iter().map(|(w, n, i)| json!({ "weight": w, "winding": n, "integer": i })).collect::<Vec<_>>(),
    }))
}

fn project(model: &Model, c: &ProjectConfig, hbar: f64, out: &Output, files: &mut Vec<String>) -> std::result::Result<Value, RunError> {
    let samples = c.samples.unwrap();
    let mut rows: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    match model {
        Model::Rotor(m) => {
            let chart = m.spin_coherent_chart()?;
            let psi = chart.embed(c.x_init.as_ref().unwrap());
            for &k in c.m.as_ref().unwrap() {
                let target = k as f64 * hbar;
                let outv = angular_project(&m.generator, &psi, k, hbar, samples)?;
                let norm = outv.norm();
                let shifted = &m.generator.apply(&outv)? - &outv.scale(C64::new(target, 0.0));
                let residual = if norm > 0.0 { shifted.norm() / norm } else { 0.0 };
                let proj = spectral_projector(m.generator.spectral(), target, 1e-9)?.apply(&psi)?;
                let energy = if norm > 0.0 { m.hamiltonian.expectation(&outv.normalized()?)? } else { 0.0 };
                rows.push((target, norm, energy, residual, outv.distance(&proj)));
            }
        }
        Model::Cylinder(m) => {
            let period = m.period().expect("checked during resolution");
            for &e in c.energies.as_ref().unwrap() {
                let outv = ergodic_project(&m.hamiltonian, &m.psi0, e, period, hbar, samples)?;
                let norm = outv.norm();
                let shifted = &m.hamiltonian.apply(&outv)? - &outv.scale(C64::new(e, 0.0));
                let residual = if norm > 0.0 { shifted.norm() / norm } else { 0.0 };
                let proj = spectral_projector(m.hamiltonian.spectral(), e, 1e-9)?.apply(&m.psi0)?;
                let energy = if norm > 0.0 { m.hamiltonian.expectation(&outv.normalized()?)? } else { 0.0 };
                rows.push((e, norm, energy, residual, outv.distance(&proj)));
            }
        }
        _ => unreachable!("checked during resolution"),
    }
    files.push(out.csv("projections.csv", |w| {
        writeln!(w, "target,norm,energy,residual,projector_defect")?;
        rows.iter().try_for_each(|r| writeln!(w, "{},{},{},{},{}", fmt17(r.0), fmt17(r.1), fmt17(r.2), fmt17(r.3), fmt17(r.4)))
    })?);
    Ok(json!({
        "projections": rows.iter().map(|r| json!({
            "target": r.0, "norm": r.1, "energy": r.2, "residual": r.3, "projector_defect": r.4,
        })).collect::<Vec<_>>(),
    }))
}

fn pipeline_name(p: &PipelineConfig) -> &'static str {
    match p {
        PipelineConfig::Minimize(_) => "minimize",
        PipelineConfig::Evolve(_) => "evolve",
        PipelineConfig::Quantize(_) => "quantize",
        PipelineConfig::Requantize(_) => "requantize",
        PipelineConfig::Rpa(_) => "rpa",
        PipelineConfig::Crank(_) => "crank",
        PipelineConfig::Project(_) => "project",
        PipelineConfig::Spectrum(_) => "spectrum",
    }
}

/// Parses, resolves and runs `text`, writing `report.json` (and CSV files) to `out`.
pub fn run_config_text(text: &str, out: &Path) -> std::result::Result<Value, RunError> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
    let model = Model::build(&cfg.model, cfg.hbar)?;
    let n_params = model.chart().map_err(config_err)?.n_params();
    resolve(&mut cfg, &model, n_params)?;
    let resolved = serde_json::to_value(&cfg).map_err(|e| RunError::Config(e.to_string()))?;
    fs::create_dir_all(out)?;
    let output = Output { dir: out };
    let report = match run_pipeline(&cfg, &model, &output) {
        Ok(body) => json!({
            "status": "ok",
            "pipeline": pipeline_name(&cfg.pipeline),
            "config": resolved,
            "results": body["results"],
            "files": body["files"],
        }),
        Err(e) => {
            let report = json!({ "status": "error", "pipeline": pipeline_name(&cfg.pipeline), "config": resolved, "error": e.report() });
            write_report(out, &report)?;
            return Err(e);
        }
    };
    write_report(out, &report)?;
    Ok(report)
}

fn write_report(out: &Path, report: &Value) -> io::Result<()> {
    let mut text = to_json_string(report);
    text.push('\n');
    fs::write(out.join("report.json"), text)
}

/// Entry point shared by the binary and the tests; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let Command::Run { config, out, threads } = cli.command;
    let text = match fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", config.display());
            return EXIT_CONFIG;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k == 0 {
            eprintln!("--threads must be positive");
            return EXIT_CONFIG;
        }
        pool = pool.num_threads(k);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start thread pool: {e}");
            return EXIT_IO;
        }
    };
    match pool.install(|| run_config_text(&text, &out)) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            let r = e.report();
            eprintln!("{}: {}", r["kind"].as_str().unwrap_or("error"), r["message"].as_str().unwrap_or(""));
            if let RunError::Config(_) = e {
                let _ = fs::create_dir_all(&out).and_then(|_| write_report(&out, &json!({ "status": "error", "error": r })));
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> std::result::Result<RunConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    #[test]
    fn strict_parsing() {
        assert!(parse(r#"{"model":{"name":"lipkin","j":2,"epsilon":1,"V":0.1},"pipeline":{"command":"spectrum"}}"#).is_ok());
        assert!(parse(r#"{"model":{"name":"lipkin","j":2,"epsilon":1,"V":0.1,"x":1},"pipeline":{"command":"spectrum"}}"#).is_err());
        assert!(parse(r#"{"model":{"name":"lipkin","j":2,"epsilon":1,"V":0.1},"pipeline":{"command":"spectrum","k":1}}"#).is_err());
        assert!(parse(r#"{"model":{"name":"lipkin","j":2,"epsilon":1,"V":0.1},"pipeline":{"command":"spectrum"},"extra":0}"#).is_err());
        assert!(parse(r#"{"model":{"name":"duffing"},"pipeline":{"command":"spectrum"}}"#).is_err());
    }

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(to_json_string(&json!({ "a": 0.1, "b": 3 })), r#"{"a":1.0000000000000001e-1,"b":3}"#);
    }

    #[test]
    fn interior_targets_exclude_edges() {
        let r = RotorModel::new(2.0, 1.0, 1.0).unwrap();
        assert_eq!(interior_targets(&r.generator, 1.0), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn resolution_fills_defaults_and_rejects_bad_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_config_text(r#"{"model":{"name":"oscillator","omega":1},"pipeline":{"command":"minimize"}}"#, dir.path()).unwrap();
        assert_eq!(rep["config"]["pipeline"]["x_init"].as_array().unwrap().len(), 2);
        assert_eq!(rep["config"]["integrator"]["samples"], 257);
        let bad = run_config_text(r#"{"model":{"name":"oscillator","omega":1},"pipeline":{"command":"quantize","n":[1],"scan":[2,1]}}"#, dir.path());
        assert!(matches!(bad, Err(RunError::Config(_))));
        let bad = run_config_text(r#"{"model":{"name":"oscillator","omega":1},"pipeline":{"command":"crank"}}"#, dir.path());
        assert!(matches!(bad, Err(RunError::Config(_))));
    }

    proptest::proptest! {
        #[test]
        fn printed_floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = to_json_string(&json!([v]));
            let back: f64 = text.trim_matches(|c| c == '[' || c == ']').parse().unwrap();
            proptest::prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
