//! Closed orbits of the constrained flow and their phase quantization.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::flow::{DenseFlow, FlowSystem, IntegratorOptions, Trajectory, TrajectorySource};
use crate::hilbert::{inner, propagate, HermitianOperator, StateVector};
use crate::manifold::{check_params, ManifoldChart};
use crate::optimize::brent_root;

/// A closed orbit sampled over exactly one period.
#[derive(Debug, Clone)]
pub struct ClosedOrbit {
    pub period: f64,
    pub samples: Trajectory,
    pub energy: f64,
    pub total_phase: f64,
    /// Projective distance between the states at `t = 0` and `t = period`.
    pub closure_defect: f64,
    pub initial_point: Vec<f64>,
}

impl ClosedOrbit {
    /// `Theta_T / 2 pi`.
    pub fn winding(&self) -> f64 {
        self.total_phase / (2.0 * PI)
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        match &self.samples.states {
            Some(s) if !s.is_empty() => Ok(s[0].clone()),
            _ => Ok(self.samples.evaluate(0.0)?.state),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuantizedOrbit {
    pub orbit: ClosedOrbit,
    pub n: i64,
    /// `|Theta_T / 2 pi - n|`.
    pub residual: f64,
    /// Family parameter of the selected member.
    pub parameter: f64,
}

impl QuantizedOrbit {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "n": self.n,
            "period": self.orbit.period,
            "energy": self.orbit.energy,
            "total_phase": self.orbit.total_phase,
            "residual": self.residual,
            "initial_point": self.orbit.initial_point,
            "family_parameter": self.parameter,
            "closure_defect": self.orbit.closure_defect,
        })
    }
}

/// `1 - |<a|b>|^2`, evaluated as `||b - <a|b> a||^2` to avoid cancellation.
fn closure_distance2(a: &StateVector, b: &StateVector) -> f64 {
    let c = a.amplitudes().dotc(b.amplitudes());
    (b.amplitudes() - a.amplitudes() * c).norm_squared()
}

enum Closure {
    Stationary(StateVector),
    Closed(ClosedOrbit),
}

struct Detector {
    dense: Arc<DenseFlow>,
    z0: StateVector,
}

impl Detector {
    fn distance2(&self, t: f64) -> Result<f64> {
        let (x, _) = self.dense.evaluate(t)?;
        Ok(closure_distance2(&self.z0, &self.dense.system().chart().embed(&x)))
    }

    /// `dD/dt = -2 Re(c* dc/dt)` with `c = <Z0|Z_t>`.
    fn distance2_rate(&self, t: f64) -> Result<f64> {
        let (x, _) = self.dense.evaluate(t)?;
        let v = self.dense.system().velocity(&x)?;
        let c = inner(&self.z0, &v.point.state)?;
        let mut cdot = crate::hilbert::C64::new(0.0, 0.0);
        for (tan, xd) in v.point.tangents.iter().zip(&v.xdot) {
            cdot += inner(&self.z0, tan)? * *xd;
        }
        Ok(-2.0 * (c.conj() * cdot).re)
    }

    fn refine(&self, lo: f64, mid: f64, hi: f64) -> Result<f64> {
        let (dl, dh) = (self.distance2_rate(lo)?, self.distance2_rate(hi)?);
        if dl < 0.0 && dh > 0.0 {
            let (t, _) = brent_root(|t| self.distance2_rate(t), lo, hi, dl, dh, 1e-13 * hi.max(1.0), 0.0, 200)?;
            Ok(t)
        } else {
            Ok(mid)
        }
    }
}

fn detect(
    system: Arc<FlowSystem>,
    x0: &[f64],
    t_max: f64,
    closure_tol: f64,
    opts: &IntegratorOptions,
) -> Result<Closure> {
    check_params(system.chart().as_ref(), x0)?;
    if !(t_max > 0.0 && closure_tol > 0.0) {
        return Err(Error::InvalidInput("t_max and closure_tol must be positive".into()));
    }
    let v0 = system.velocity(x0)?;
    let z0 = v0.point.state.clone();
    let speed = v0.xdot.iter().map(|a| a * a).sum::<f64>().sqrt();
    if speed == 0.0 {
        return Ok(Closure::Stationary(z0));
    }
    let dense = Arc::new(DenseFlow::integrate(system.clone(), x0, t_max, opts)?);
    let det = Detector { dense: dense.clone(), z0: z0.clone() };

    let node_times: Vec<f64> = dense.node_times().collect();
    // at least two samples per step, and no gap wider than t_max / 1024 (long
    // steps occur on flows the integrator resolves exactly)
    let max_gap = t_max / 1024.0;
    let mut times = Vec::with_capacity(2 * node_times.len());
    for w in node_times.windows(2) {
        let pieces = ((w[1] - w[0]) / max_gap).ceil().max(2.0) as usize;
        times.extend((0..pieces).map(|k| w[0] + (w[1] - w[0]) * k as f64 / pieces as f64));
    }
    times.push(*node_times.last().unwrap());
    let d: Vec<f64> = times.iter().map(|&t| det.distance2(t)).collect::<Result<_>>()?;
    let d_max = d.iter().fold(0.0f64, |a, v| a.max(*v));
    if d_max < closure_tol * closure_tol {
        return Ok(Closure::Stationary(z0));
    }
    let departed = d.iter().position(|v| *v > 0.25 * d_max).unwrap_or(d.len());
    let tol2 = closure_tol * closure_tol;
    for i in departed.max(1)..d.len().saturating_sub(1) {
        if !(d[i] <= d[i - 1] && d[i] <= d[i + 1]) || d[i] > 0.25 * d_max {
            continue;
        }
        let t = det.refine(times[i - 1], times[i], times[i + 1])?;
        let dt = det.distance2(t)?;
        if dt > tol2 {
            continue;
        }
        if t < 0.01 * t_max {
            let multiples_close = det.distance2(2.0 * t)? <= tol2 && det.distance2(3.0 * t)? <= tol2;
            if !multiples_close {
                continue;
            }
        }
        let (_, theta) = dense.evaluate(t)?;
        let samples = Trajectory::sample(
            TrajectorySource::Flow(dense.clone()),
            system.hamiltonian(),
            t,
            opts.samples,
            opts.store_states,
        )?;
        let drift = samples.energy_drift();
        if drift > opts.energy_tol {
            log::warn!("orbit energy drift {drift:e} exceeds tolerance {:e}", opts.energy_tol);
        }
        return Ok(Closure::Closed(ClosedOrbit {
            period: t,
            energy: samples.energies[0],
            total_phase: theta,
            closure_defect: dt.max(0.0).sqrt(),
            initial_point: x0.to_vec(),
            samples,
        }));
    }
    Err(Error::NoClosureFound(format!("no return within closure tolerance {closure_tol:e} before t_max = {t_max}")))
}

/// First return of the flow from `x0` to its projective starting point.
pub fn detect_closed_orbit(
    chart: Arc<dyn ManifoldChart>,
    hamiltonian: &HermitianOperator,
    x0: &[f64],
    t_max: f64,
    closure_tol: f64,
    opts: &IntegratorOptions,
) -> Result<ClosedOrbit> {
    opts.validate()?;
    let system = Arc::new(FlowSystem::new(chart, hamiltonian.clone(), opts.condition_limit)?);
    match detect(system, x0, t_max, closure_tol, opts)? {
        Closure::Closed(o) => Ok(o),
        Closure::Stationary(_) => Err(Error::NoClosureFound("starting point is a fixed point; zero-length orbit".into())),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuantizeOptions {
    pub t_max: f64,
    pub closure_tol: f64,
    pub quantization_tol: f64,
    pub scan_points: usize,
    pub integrator: IntegratorOptions,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self { t_max: 20.0, closure_tol: 1e-6, quantization_tol: 1e-8, scan_points: 17, integrator: IntegratorOptions::default() }
    }
}

impl QuantizeOptions {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if !(self.t_max > 0.0 && self.closure_tol > 0.0 && self.quantization_tol > 0.0) {
            return Err(Error::InvalidInput("quantization tolerances and t_max must be positive".into()));
        }
        if self.scan_points < 2 {
            return Err(Error::InvalidInput("a family scan needs at least two points".into()));
        }
        Ok(())
    }
}

struct Member {
    s: f64,
    x0: Vec<f64>,
    winding: f64,
    closure: Closure,
}

/// Selects, for every target `n`, the family member whose orbit accumulates
/// `Theta_T = 2 pi n`. Fixed points count as phase-zero members and yield a
/// stationary limiting orbit.
pub fn quantize_family<F>(
    chart: Arc<dyn ManifoldChart>,
    hamiltonian: &HermitianOperator,
    family: F,
    range: (f64, f64),
    targets: &[i64],
    opts: &QuantizeOptions,
) -> Result<Vec<QuantizedOrbit>>
where
    F: Fn(f64) -> Vec<f64> + Sync,
{
    opts.validate()?;
    let (s_min, s_max) = range;
    if !(s_max > s_min) {
        return Err(Error::InvalidInput(format!("empty family range [{s_min}, {s_max}]")));
    }
    let system = Arc::new(FlowSystem::new(chart, hamiltonian.clone(), opts.integrator.condition_limit)?);
    let member = |s: f64| -> Result<Member> {
        let x0 = family(s);
        let closure = detect(system.clone(), &x0, opts.t_max, opts.closure_tol, &opts.integrator)?;
        let winding = match &closure {
            Closure::Closed(o) => o.winding(),
            Closure::Stationary(_) => 0.0,
        };
        Ok(Member { s, x0, winding, closure })
    };
    let p = opts.scan_points;
    let grid: Vec<f64> = (0..p).map(|i| s_min + (s_max - s_min) * i as f64 / (p - 1) as f64).collect();
    let scan: Vec<Member> = grid.par_iter().map(|&s| member(s)).collect::<Result<_>>()?;
    let lo = scan.iter().fold(f64::INFINITY, |a, m| a.min(m.winding));
    let hi = scan.iter().fold(f64::NEG_INFINITY, |a, m| a.max(m.winding));

    let mut out = Vec::with_capacity(targets.len());
    for &n in targets {
        let target = n as f64;
        let m = if let Some(i) = scan.iter().position(|m| (m.winding - target).abs() <= opts.quantization_tol) {
            member(scan[i].s)?
        } else {
            let Some(i) = scan.windows(2).position(|w| (w[0].winding - target) * (w[1].winding - target) < 0.0) else {
                return Err(Error::BracketNotFound { target: n, lo, hi });
            };
            let (a, b) = (&scan[i], &scan[i + 1]);
            let xtol = 1e-14 * (s_max - s_min).abs().max(1.0);
            let (s, _) = brent_root(
                |s| Ok(member(s)?.winding - target),
                a.s,
                b.s,
                a.winding - target,
                b.winding - target,
                xtol,
                0.01 * opts.quantization_tol,
                200,
            )?;
            member(s)?
        };
        let residual = (m.winding - target).abs();
        if residual > opts.quantization_tol {
            return Err(Error::NotConverged(format!("quantization residual {residual:e} for n = {n}")));
        }
        let orbit = match m.closure {
            Closure::Closed(o) => o,
            Closure::Stationary(state) => {
                let nearest = scan.iter().enumerate().min_by(|a, b| (a.1.s - m.s).abs().total_cmp(&(b.1.s - m.s).abs())).map(|(i, _)| i).unwrap_or(0);
                let period = neighbour_period(&scan, nearest).ok_or_else(|| {
                    Error::NoClosureFound("family has no moving member to fix the limiting period".into())
                })?;
                stationary_orbit(hamiltonian, &m.x0, state, period, &opts.integrator)?
            }
        };
        out.push(QuantizedOrbit { orbit, n, residual, parameter: m.s });
    }
    Ok(out)
}

/// Period of the closed scan member nearest to index `i`.
fn neighbour_period(scan: &[Member], i: usize) -> Option<f64> {
    let mut best: Option<(usize, f64)> = None;
    for (k, m) in scan.iter().enumerate() {
        if let Closure::Closed(o) = &m.closure {
            let dist = k.abs_diff(i);
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, o.period));
            }
        }
    }
    best.map(|(_, p)| p)
}

fn stationary_orbit(
    hamiltonian: &HermitianOperator,
    x: &[f64],
    state: StateVector,
    period: f64,
    opts: &IntegratorOptions,
) -> Result<ClosedOrbit> {
    let source = TrajectorySource::Stationary { point: x.to_vec(), state };
    let samples = Trajectory::sample(source, hamiltonian, period, opts.samples, opts.store_states)?;
    Ok(ClosedOrbit {
        period,
        energy: samples.energies[0],
        total_phase: 0.0,
        closure_defect: 0.0,
        initial_point: x.to_vec(),
        samples,
    })
}

/// Largest `|| U(T) Z0 - <Z0|U(T) Z0> Z0 ||` accepted as a pure-phase monodromy.
pub const MONODROMY_TOL: f64 = 1e-8;

/// Floquet quasienergy of a closed orbit, in `[-hbar w / 2, hbar w / 2)` with `w = 2 pi / T`.
pub fn quasienergy(orbit: &ClosedOrbit, hamiltonian: &HermitianOperator, hbar: f64) -> Result<f64> {
    let z0 = orbit.initial_state()?;
    let zt = propagate(hamiltonian, &z0, orbit.period, hbar)?;
    let ov = inner(&z0, &zt)?;
    let defect = (zt.amplitudes() - z0.amplitudes() * ov).norm();
    if defect > MONODROMY_TOL {
        return Err(Error::NotACylinderOrbit(defect));
    }
    Ok(-hbar * ov.arg() / orbit.period)
}

/// Checks `E = n hbar w + eps` for the orbit's energy, returning `n`.
pub fn floquet_index(orbit: &ClosedOrbit, hamiltonian: &HermitianOperator, hbar: f64, tol: f64) -> Result<Option<i64>> {
    let eps = quasienergy(orbit, hamiltonian, hbar)?;
    let w = 2.0 * PI / orbit.period;
    let n = (orbit.energy - eps) / (hbar * w);
    Ok(((n - n.round()).abs() <= tol).then_some(n.round() as i64))
}
