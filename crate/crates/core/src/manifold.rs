//! Trial manifolds: charts from `2N` real parameters to normalized states,
//! and the geometric data pulled back through them (symplectic form,
//! Hamilton function, connection 1-form).

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{ComplexMatrix, HermitianOperator, StateVector, C64, I};

/// Relative norm defect tolerated before a chart state is renormalized with a warning.
const CHART_NORM_TOL: f64 = 1e-10;
/// Smallest singular value of the form, relative to `hbar max_i |d_i Z|^2`,
/// below which the form is degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-10;

/// A coordinate chart `x -> |Z_x>` on a trial manifold.
///
/// Implementations must be pure: evaluation may happen concurrently from
/// several threads.
pub trait ManifoldChart: Send + Sync {
    fn name(&self) -> &str;

    /// Number of real parameters `2N`.
    fn n_params(&self) -> usize;

    /// Hilbert space dimension.
    fn dim(&self) -> usize;

    fn hbar(&self) -> f64;

    /// Normalized state at `x`. `x.len() == n_params()` is guaranteed by callers.
    fn embed(&self, x: &[f64]) -> StateVector;

    /// Partial derivatives `|d_i Z>`. Defaults to central differences.
    fn tangent(&self, x: &[f64]) -> Vec<StateVector> {
        finite_difference_tangent(self, x)
    }

    fn has_analytic_tangent(&self) -> bool {
        false
    }

    /// Per-parameter bounds used for scans.
    fn domain_hint(&self) -> Vec<(f64, f64)>;

    /// Anti-Hermitian generators `G_k` with `|d_k Z> = G_k |Z>` at the chart
    /// origin, when the chart is an exponential group-orbit chart.
    fn origin_generators(&self) -> Option<Vec<ComplexMatrix>> {
        None
    }
}

/// Central-difference tangents with step `1e-6 * max(1, |x_i|)`.
pub fn finite_difference_tangent<C: ManifoldChart + ?Sized>(chart: &C, x: &[f64]) -> Vec<StateVector> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let up = chart.embed(&xp);
            xp[i] = x[i] - h;
            let down = chart.embed(&xp);
            xp[i] = x[i];
            (&up - &down).scale(C64::new(0.5 / h, 0.0))
        })
        .collect()
}

/// State and tangents at one parameter point.
#[derive(Debug, Clone)]
pub struct ChartPoint {
    pub x: Vec<f64>,
    pub state: StateVector,
    pub tangents: Vec<StateVector>,
}

impl ChartPoint {
    /// `d_i <Z|A|Z> = 2 Re <d_i Z|A|Z>`.
    pub fn expectation_gradient(&self, op: &HermitianOperator) -> Result<Vec<f64>> {
        let az = op.apply(&self.state)?;
        self.tangents
            .iter()
            .map(|t| Ok(2.0 * crate::hilbert::inner(t, &az)?.re))
            .collect()
    }

    /// `theta_k = <Z|d_k Z>`.
    pub fn connection(&self) -> Vec<C64> {
        self.tangents.iter().map(|t| self.state.amplitudes().dotc(t.amplitudes())).collect()
    }

    /// `omega_ij = hbar Im <d_i Z|d_j Z>`.
    pub fn symplectic_entries(&self, hbar: f64) -> DMatrix<f64> {
        let n = self.tangents.len();
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = hbar * self.tangents[i].amplitudes().dotc(self.tangents[j].amplitudes()).im;
                w[(i, j)] = v;
                w[(j, i)] = -v;
            }
        }
        w
    }
}

pub(crate) fn check_params(chart: &(impl ManifoldChart + ?Sized), x: &[f64]) -> Result<()> {
    if x.len() != chart.n_params() {
        return Err(Error::DimensionMismatch { expected: chart.n_params(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite parameter point {x:?}")));
    }
    Ok(())
}

/// Evaluates state and tangents, renormalizing (with a warning) a state whose
/// norm defect exceeds `1e-10`.
pub fn evaluate(chart: &(impl ManifoldChart + ?Sized), x: &[f64]) -> Result<ChartPoint> {
    check_params(chart, x)?;
    let mut state = chart.embed(x);
    let defect = (state.norm() - 1.0).abs();
    if defect > CHART_NORM_TOL {
        log::warn!("chart {} returned a state with norm defect {defect:e}; renormalizing", chart.name());
        state = state.normalized()?;
    }
    let tangents = chart.tangent(x);
    if tangents.len() != chart.n_params() {
        return Err(Error::DimensionMismatch { expected: chart.n_params(), got: tangents.len() });
    }
    Ok(ChartPoint { x: x.to_vec(), state, tangents })
}

/// The pulled-back symplectic form, stored entrywise as `hbar Im <d_i Z|d_j Z>`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    entries: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// `max |w_ij + w_ji|` relative to `max |w|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let scale = self.entries.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (&self.entries + self.entries.transpose()).amax() / scale
    }

    /// Smallest over largest singular value.
    pub fn singular_ratio(&self) -> f64 {
        let sv = self.entries.clone().singular_values();
        let max = sv.max();
        if max == 0.0 {
            0.0
        } else {
            sv.min() / max
        }
    }
}

/// Smallest singular value of `w` relative to `hbar max_i |d_i Z|^2`. Unlike a
/// condition number this also detects degeneracy of a 2x2 form, whose two
/// singular values always coincide.
pub fn degeneracy_ratio(point: &ChartPoint, w: &DMatrix<f64>, hbar: f64) -> f64 {
    let scale = hbar * point.tangents.iter().fold(0.0f64, |a, t| a.max(t.norm() * t.norm()));
    if scale == 0.0 {
        return 0.0;
    }
    w.clone().singular_values().min() / scale
}

pub fn symplectic_form(chart: &(impl ManifoldChart + ?Sized), x: &[f64]) -> Result<SymplecticMatrix> {
    let p = evaluate(chart, x)?;
    let entries = p.symplectic_entries(chart.hbar());
    let ratio = degeneracy_ratio(&p, &entries, chart.hbar());
    if ratio < DEGENERACY_RATIO {
        return Err(Error::NonSymplecticPoint { point: x.to_vec(), ratio });
    }
    Ok(SymplecticMatrix { entries })
}

fn check_operator(chart: &(impl ManifoldChart + ?Sized), h: &HermitianOperator) -> Result<()> {
    if h.dim() != chart.dim() {
        return Err(Error::DimensionMismatch { expected: chart.dim(), got: h.dim() });
    }
    Ok(())
}

/// `h_M(x) = <Z_x|H|Z_x>`.
pub fn hamilton_function(chart: &(impl ManifoldChart + ?Sized), h: &HermitianOperator, x: &[f64]) -> Result<f64> {
    check_params(chart, x)?;
    check_operator(chart, h)?;
    let z = chart.embed(x);
    let z = if (z.norm() - 1.0).abs() > CHART_NORM_TOL { z.normalized()? } else { z };
    h.expectation(&z)
}

/// `d_i h_M = 2 Re <d_i Z|H|Z>`.
pub fn hamilton_gradient(chart: &(impl ManifoldChart + ?Sized), h: &HermitianOperator, x: &[f64]) -> Result<Vec<f64>> {
    check_operator(chart, h)?;
    evaluate(chart, x)?.expectation_gradient(h)
}

/// Connection components `theta_k = <Z|d_k Z>`, purely imaginary for a normalized chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionSample {
    pub theta: Vec<C64>,
}

impl ConnectionSample {
    /// Largest `|Re theta_k|`.
    pub fn real_defect(&self) -> f64 {
        self.theta.iter().fold(0.0, |a, t| a.max(t.re.abs()))
    }
}

pub fn connection(chart: &(impl ManifoldChart + ?Sized), x: &[f64]) -> Result<ConnectionSample> {
    Ok(ConnectionSample { theta: evaluate(chart, x)?.connection() })
}

/// Central-difference exterior derivative of `-i hbar theta`:
/// entry `(i, j)` is `d_i(-i hbar theta_j) - d_j(-i hbar theta_i)`, which
/// equals `2 omega_ij` when the curvature relation holds.
pub fn connection_curl(chart: &(impl ManifoldChart + ?Sized), x: &[f64], step: f64) -> Result<DMatrix<f64>> {
    check_params(chart, x)?;
    let n = chart.n_params();
    let hbar = chart.hbar();
    // d_i theta_j for all i, j
    let mut dtheta = DMatrix::<C64>::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + step;
        let up = connection(chart, &xp)?;
        xp[i] = x[i] - step;
        let down = connection(chart, &xp)?;
        xp[i] = x[i];
        for j in 0..n {
            dtheta[(i, j)] = (up.theta[j] - down.theta[j]) / (2.0 * step);
        }
    }
    let mut curl = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            curl[(i, j)] = (-I * hbar * (dtheta[(i, j)] - dtheta[(j, i)])).re;
        }
    }
    Ok(curl)
}

/// Re-phased chart `e^{i S(x)} |Z_x>`, for gauge-covariance checks.
pub struct RephasedChart<F> {
    inner: Arc<dyn ManifoldChart>,
    phase: F,
    name: String,
}

impl<F> RephasedChart<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync,
{
    /// `phase(x)` returns `S(x)` and its gradient.
    pub fn new(inner: Arc<dyn ManifoldChart>, phase: F) -> Self {
        let name = format!("{}+phase", inner.name());
        Self { inner, phase, name }
    }
}

impl<F> ManifoldChart for RephasedChart<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn hbar(&self) -> f64 {
        self.inner.hbar()
    }
    fn embed(&self, x: &[f64]) -> StateVector {
        let (s, _) = (self.phase)(x);
        self.inner.embed(x).scale(C64::from_polar(1.0, s))
    }
    fn tangent(&self, x: &[f64]) -> Vec<StateVector> {
        let (s, ds) = (self.phase)(x);
        let ph = C64::from_polar(1.0, s);
        let z = self.inner.embed(x);
        self.inner
            .tangent(x)
            .into_iter()
            .zip(ds)
            .map(|(t, d)| {
                let mut out = t.scale(ph);
                out.axpy(I * d * ph, &z);
                out
            })
            .collect()
    }
    fn has_analytic_tangent(&self) -> bool {
        self.inner.has_analytic_tangent()
    }
    fn domain_hint(&self) -> Vec<(f64, f64)> {
        self.inner.domain_hint()
    }
}
