//! Constrained Hamiltonian flow on a trial manifold.
//!
//! The flow solves `sum_j 2 xdot^j omega_ji = d_i h_M` at every point, with
//! the geometric phase `Theta_t = int <Z|i d_tau Z>` carried as an extra
//! state variable of the same ODE system.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{propagate, HermitianOperator, StateVector, C64};
use crate::integrator::{self, Node, StepperOptions};
use crate::manifold::{check_params, degeneracy_ratio, evaluate, symplectic_form, ChartPoint, ManifoldChart};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Number of uniformly spaced output samples, endpoints included.
    pub samples: usize,
    pub store_states: bool,
    /// Relative energy drift tolerated before a warning is logged.
    pub energy_tol: f64,
    /// Condition number of the flow matrix beyond which a point counts as degenerate.
    pub condition_limit: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 2_000_000,
            samples: 257,
            store_states: true,
            energy_tol: 1e-8,
            condition_limit: 1e12,
        }
    }
}

impl IntegratorOptions {
    pub(crate) fn stepper(&self) -> StepperOptions {
        StepperOptions { rtol: self.rtol, atol: self.atol, max_steps: self.max_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.energy_tol > 0.0 && self.condition_limit > 0.0) {
            return Err(Error::InvalidInput("integrator tolerances must be positive".into()));
        }
        if self.samples < 2 {
            return Err(Error::InvalidInput("at least two output samples are required".into()));
        }
        Ok(())
    }
}

/// Chart plus Hamiltonian: the vector field of the constrained flow.
pub struct FlowSystem {
    chart: Arc<dyn ManifoldChart>,
    hamiltonian: HermitianOperator,
    condition_limit: f64,
}

/// Velocity and phase rate at one point.
pub struct FlowVelocity {
    pub point: ChartPoint,
    pub xdot: Vec<f64>,
    /// `<Z|i d_t Z>` along the flow.
    pub theta_rate: f64,
}

impl FlowSystem {
    pub fn new(chart: Arc<dyn ManifoldChart>, hamiltonian: HermitianOperator, condition_limit: f64) -> Result<Self> {
        if hamiltonian.dim() != chart.dim() {
            return Err(Error::DimensionMismatch { expected: chart.dim(), got: hamiltonian.dim() });
        }
        Ok(Self { chart, hamiltonian, condition_limit })
    }

    pub fn chart(&self) -> &Arc<dyn ManifoldChart> {
        &self.chart
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.hamiltonian
    }

    pub fn hbar(&self) -> f64 {
        self.chart.hbar()
    }

    /// Solves `A xdot = grad h` with `A_ij = 2 omega_ji`.
    pub fn velocity(&self, x: &[f64]) -> Result<FlowVelocity> {
        let point = evaluate(self.chart.as_ref(), x)?;
        let n = x.len();
        let w = point.symplectic_entries(self.chart.hbar());
        let a = DMatrix::from_fn(n, n, |i, j| 2.0 * w[(j, i)]);
        let grad = DVector::from_vec(point.expectation_gradient(&self.hamiltonian)?);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let absolute = degeneracy_ratio(&point, &w, self.chart.hbar());
        if smax == 0.0 || smax / smin > self.condition_limit || absolute * self.condition_limit < 1.0 {
            let ratio = if smax == 0.0 { 0.0 } else { (smin / smax).min(absolute) };
            return Err(Error::NonSymplecticPoint { point: x.to_vec(), ratio });
        }
        let xdot = svd
            .solve(&grad, 0.0)
            .map_err(|e| Error::InvalidInput(format!("flow solve failed: {e}")))?;
        let theta = point.connection();
        let theta_rate = -theta.iter().zip(xdot.iter()).map(|(t, v)| t.im * v).sum::<f64>();
        Ok(FlowVelocity { point, xdot: xdot.as_slice().to_vec(), theta_rate })
    }

    /// Right-hand side on the extended state `(x, Theta)`.
    pub(crate) fn rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = y.len() - 1;
        let v = self.velocity(&y[..n])?;
        let mut out = v.xdot;
        out.push(v.theta_rate);
        Ok(out)
    }
}

/// Integrated flow with its accepted step nodes, evaluable at any time.
pub struct DenseFlow {
    system: Arc<FlowSystem>,
    nodes: Vec<Node>,
}

impl DenseFlow {
    pub fn integrate(system: Arc<FlowSystem>, x0: &[f64], t_end: f64, opts: &IntegratorOptions) -> Result<Self> {
        let mut y0 = x0.to_vec();
        y0.push(0.0);
        let f = |y: &[f64]| system.rhs(y);
        let nodes = integrator::integrate(&f, 0.0, &y0, t_end, &opts.stepper())?;
        Ok(Self { system, nodes })
    }

    pub fn system(&self) -> &Arc<FlowSystem> {
        &self.system
    }

    pub fn t_end(&self) -> f64 {
        self.nodes.last().map(|n| n.t).unwrap_or(0.0)
    }

    pub fn node_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().map(|n| n.t)
    }

    /// `(x(t), Theta(t))`.
    pub fn evaluate(&self, t: f64) -> Result<(Vec<f64>, f64)> {
        let f = |y: &[f64]| self.system.rhs(y);
        let mut y = integrator::evaluate_at(&f, &self.nodes, t)?;
        let theta = y.pop().unwrap_or(0.0);
        Ok((y, theta))
    }
}

/// Maps a state to chart coordinates for exactly propagated orbits.
pub type CoordinateMap = fn(&StateVector) -> Vec<f64>;

/// How a trajectory can be re-evaluated between its stored samples.
#[derive(Clone)]
pub enum TrajectorySource {
    /// Integrated constrained flow.
    Flow(Arc<DenseFlow>),
    /// Exact evolution `exp(-iHt/hbar)|psi0>`, whose geometric phase grows at `energy/hbar`.
    Exact { hamiltonian: HermitianOperator, psi0: StateVector, hbar: f64, energy: f64, coordinates: CoordinateMap },
    /// A fixed point.
    Stationary { point: Vec<f64>, state: StateVector },
}

/// One point of the section `t -> (x_t, Theta_t, |Z_{x_t}>)`.
#[derive(Debug, Clone)]
pub struct SectionSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub theta: f64,
    pub state: StateVector,
}

impl TrajectorySource {
    pub fn evaluate(&self, t: f64) -> Result<SectionSample> {
        match self {
            TrajectorySource::Flow(dense) => {
                let (x, theta) = dense.evaluate(t)?;
                let state = dense.system.chart.embed(&x);
                Ok(SectionSample { t, x, theta, state })
            }
            TrajectorySource::Exact { hamiltonian, psi0, hbar, energy, coordinates } => {
                let state = propagate(hamiltonian, psi0, t, *hbar)?;
                Ok(SectionSample { t, x: coordinates(&state), theta: energy * t / hbar, state })
            }
            TrajectorySource::Stationary { point, state } => {
                Ok(SectionSample { t, x: point.clone(), theta: 0.0, state: state.clone() })
            }
        }
    }
}

/// Sampled solution of the constrained flow.
#[derive(Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// Accumulated geometric phase, `theta[0] == 0`.
    pub theta: Vec<f64>,
    pub states: Option<Vec<StateVector>>,
    pub source: Option<TrajectorySource>,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("samples", &self.times.len())
            .field("t_end", &self.times.last())
            .finish()
    }
}

impl Trajectory {
    /// Samples `source` on `samples` uniformly spaced times over `[0, t_end]`.
    pub fn sample(source: TrajectorySource, hamiltonian: &HermitianOperator, t_end: f64, samples: usize, store_states: bool) -> Result<Self> {
        let samples = samples.max(2);
        let mut traj = Trajectory {
            times: Vec::with_capacity(samples),
            points: Vec::with_capacity(samples),
            energies: Vec::with_capacity(samples),
            theta: Vec::with_capacity(samples),
            states: if store_states { Some(Vec::with_capacity(samples)) } else { None },
            source: None,
        };
        for k in 0..samples {
            let t = t_end * k as f64 / (samples - 1) as f64;
            let s = source.evaluate(t)?;
            traj.energies.push(hamiltonian.expectation(&s.state)?);
            traj.times.push(t);
            traj.points.push(s.x);
            traj.theta.push(s.theta);
            if let Some(states) = traj.states.as_mut() {
                states.push(s.state);
            }
        }
        traj.source = Some(source);
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max_k |E_k - E_0| / (1 + |E_0|)`.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energies.first().copied().unwrap_or(0.0);
        self.energies.iter().fold(0.0f64, |a, e| a.max((e - e0).abs())) / (1.0 + e0.abs())
    }

    /// Re-evaluates the section at an arbitrary time inside the trajectory.
    pub fn evaluate(&self, t: f64) -> Result<SectionSample> {
        match &self.source {
            Some(src) => src.evaluate(t),
            None => Err(Error::InvalidInput("trajectory has no dense source".into())),
        }
    }

    fn state_at(&self, k: usize) -> Result<&StateVector> {
        let states = self
            .states
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("trajectory states were not materialized".into()))?;
        states
            .get(k)
            .ok_or_else(|| Error::InvalidInput(format!("sample index {k} out of range")))
    }

    /// CSV with columns `t, x_1..x_2N, energy, theta`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.points.first().map(|p| p.len()).unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.push("energy".into());
        header.push("theta".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt17(self.times[k])];
            row.extend(self.points[k].iter().map(|v| fmt17(*v)));
            row.push(fmt17(self.energies[k]));
            row.push(fmt17(self.theta[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integrates the constrained flow from `x0` over `[0, t_end]`.
pub fn integrate_flow(
    chart: Arc<dyn ManifoldChart>,
    hamiltonian: &HermitianOperator,
    x0: &[f64],
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    check_params(chart.as_ref(), x0)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    symplectic_form(chart.as_ref(), x0)?;
    let system = Arc::new(FlowSystem::new(chart, hamiltonian.clone(), opts.condition_limit)?);
    let dense = Arc::new(DenseFlow::integrate(system, x0, t_end, opts)?);
    let traj = Trajectory::sample(TrajectorySource::Flow(dense), hamiltonian, t_end, opts.samples, opts.store_states)?;
    let drift = traj.energy_drift();
    if drift > opts.energy_tol {
        log::warn!("relative energy drift {drift:e} exceeds tolerance {:e}", opts.energy_tol);
    }
    Ok(traj)
}

/// `rho_t |Z> = exp(i (dynamical_phase + geometric_phase)) |Z_{x_t}>`.
#[derive(Debug, Clone)]
pub struct LiftedState {
    pub base: StateVector,
    pub dynamical_phase: f64,
    pub geometric_phase: f64,
}

impl LiftedState {
    pub fn state(&self) -> StateVector {
        self.base.scale(C64::from_polar(1.0, self.dynamical_phase + self.geometric_phase))
    }
}

/// Lift of sample `k`; the conserved energy is taken from the first sample.
pub fn lift(traj: &Trajectory, k: usize, hbar: f64) -> Result<LiftedState> {
    let base = traj.state_at(k)?.clone();
    let e = traj.energies[0];
    Ok(LiftedState { base, dynamical_phase: -e * traj.times[k] / hbar, geometric_phase: traj.theta[k] })
}

/// `exp(i Theta_k) |Z_{x_k}>`.
pub fn autoparallel_section(traj: &Trajectory, k: usize) -> Result<StateVector> {
    Ok(traj.state_at(k)?.scale(C64::from_polar(1.0, traj.theta[k])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::inner;
    use crate::models::oscillator::OscillatorModel;
    use std::f64::consts::PI;

    fn glauber() -> (OscillatorModel, Arc<dyn ManifoldChart>) {
        let m = OscillatorModel::new(1.0, 1.0, 40, 1.0).unwrap();
        let chart: Arc<dyn ManifoldChart> = Arc::new(m.glauber_chart(3.0).unwrap());
        (m, chart)
    }

    #[test]
    fn glauber_flow_is_circular() {
        let (m, chart) = glauber();
        let t_end = 10.0 * 2.0 * PI;
        let opts = IntegratorOptions { samples: 401, ..Default::default() };
        let traj = integrate_flow(chart, &m.hamiltonian, &[1.0, 0.0], t_end, &opts).unwrap();
        for (t, p) in traj.times.iter().zip(&traj.points) {
            let z = C64::from_polar(1.0, -t);
            assert!((p[0] - z.re).abs() < 1e-8 && (p[1] - z.im).abs() < 1e-8, "t={t}");
        }
        // dTheta/dt = omega |z0|^2
        for (t, th) in traj.times.iter().zip(&traj.theta) {
            assert!((th - t).abs() < 1e-8 * t.max(1.0));
        }
        assert!(traj.energy_drift() < 1e-8);
    }

    #[test]
    fn fixed_point_stays_put() {
        let (m, chart) = glauber();
        let traj = integrate_flow(chart, &m.hamiltonian, &[0.0, 0.0], 5.0, &IntegratorOptions::default()).unwrap();
        assert!(traj.points.iter().all(|p| p[0].abs() < 1e-14 && p[1].abs() < 1e-14));
        assert!(traj.theta.iter().all(|t| t.abs() < 1e-14));
    }

    #[test]
    fn lift_matches_exact_propagation() {
        let (m, chart) = glauber();
        let x0 = [0.7, -0.4];
        let opts = IntegratorOptions { samples: 101, ..Default::default() };
        let traj = integrate_flow(chart.clone(), &m.hamiltonian, &x0, 4.0 * PI, &opts).unwrap();
        let l0 = lift(&traj, 0, 1.0).unwrap();
        assert_eq!((l0.dynamical_phase, l0.geometric_phase), (0.0, 0.0));
        let z0 = chart.embed(&x0);
        for k in 0..traj.len() {
            let exact = propagate(&m.hamiltonian, &z0, traj.times[k], 1.0).unwrap();
            let lifted = lift(&traj, k, 1.0).unwrap().state();
            let ov = inner(&exact, &lifted).unwrap();
            assert!((ov - C64::new(1.0, 0.0)).norm() < 1e-8, "k={k} ov={ov}");
        }
    }

    #[test]
    fn section_at_half_period() {
        let (m, chart) = glauber();
        let x0 = [1.0, 0.0];
        let opts = IntegratorOptions { samples: 3, ..Default::default() };
        let traj = integrate_flow(chart.clone(), &m.hamiltonian, &x0, 2.0 * PI, &opts).unwrap();
        assert!(autoparallel_section(&traj, 0).unwrap().distance(&chart.embed(&x0)) < 1e-14);
        let half = autoparallel_section(&traj, 1).unwrap();
        let expect = chart.embed(&[-1.0, 0.0]).scale(C64::from_polar(1.0, PI));
        assert!(half.distance(&expect) < 1e-8);
    }

    #[test]
    fn section_is_autoparallel() {
        let (m, chart) = glauber();
        let opts = IntegratorOptions { samples: 2001, ..Default::default() };
        let traj = integrate_flow(chart, &m.hamiltonian, &[0.8, 0.3], 2.0 * PI, &opts).unwrap();
        let dt = traj.times[1];
        let mut worst: f64 = 0.0;
        for k in 1..traj.len() - 1 {
            let a = autoparallel_section(&traj, k - 1).unwrap();
            let b = autoparallel_section(&traj, k + 1).unwrap();
            let z = autoparallel_section(&traj, k).unwrap();
            let d = (&b - &a).scale(C64::new(0.5 / dt, 0.0));
            worst = worst.max(inner(&z, &d).unwrap().norm());
        }
        // central-difference residual is O(dt^2)
        assert!(worst < 10.0 * dt * dt, "{worst}");
    }

    #[test]
    fn gauge_covariance_of_section() {
        use crate::manifold::RephasedChart;
        let (m, chart) = glauber();
        let phased: Arc<dyn ManifoldChart> =
            Arc::new(RephasedChart::new(chart.clone(), |x: &[f64]| (0.3 * x[0], vec![0.3, 0.0])));
        let opts = IntegratorOptions { samples: 33, ..Default::default() };
        let x0 = [0.9, 0.2];
        let a = integrate_flow(chart, &m.hamiltonian, &x0, 5.0, &opts).unwrap();
        let b = integrate_flow(phased, &m.hamiltonian, &x0, 5.0, &opts).unwrap();
        let s0 = inner(&autoparallel_section(&a, 0).unwrap(), &autoparallel_section(&b, 0).unwrap()).unwrap();
        for k in 0..a.len() {
            let sa = autoparallel_section(&a, k).unwrap();
            let sb = autoparallel_section(&b, k).unwrap();
            assert!((inner(&sa, &sb).unwrap() - s0).norm() < 1e-8);
        }
    }

    #[test]
    fn phase_additivity() {
        let (m, chart) = glauber();
        let opts = IntegratorOptions { samples: 2, ..Default::default() };
        let full = integrate_flow(chart.clone(), &m.hamiltonian, &[0.5, 0.5], 3.0, &opts).unwrap();
        let first = integrate_flow(chart.clone(), &m.hamiltonian, &[0.5, 0.5], 1.2, &opts).unwrap();
        let second = integrate_flow(chart, &m.hamiltonian, &first.points[1], 1.8, &opts).unwrap();
        assert!((first.theta[1] + second.theta[1] - full.theta[1]).abs() < 1e-9);
    }

    #[test]
    fn csv_header_and_rows() {
        let (m, chart) = glauber();
        let opts = IntegratorOptions { samples: 4, ..Default::default() };
        let traj = integrate_flow(chart, &m.hamiltonian, &[0.5, 0.0], 1.0, &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,energy,theta");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, chart) = glauber();
        let opts = IntegratorOptions::default();
        assert!(integrate_flow(chart.clone(), &m.hamiltonian, &[0.5], 1.0, &opts).is_err());
        assert!(integrate_flow(chart.clone(), &m.hamiltonian, &[0.5, 0.0], 0.0, &opts).is_err());
        let traj = integrate_flow(chart, &m.hamiltonian, &[0.5, 0.0], 1.0, &IntegratorOptions { store_states: false, ..opts }).unwrap();
        assert!(lift(&traj, 0, 1.0).is_err());
    }
}
