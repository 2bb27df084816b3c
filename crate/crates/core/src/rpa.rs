//! Small-amplitude normal modes about a variational minimum, their amplitude
//! quantization, and the one-phonon state built from them.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::error::{Error, Result};
use crate::hilbert::{inner, ComplexMatrix, HermitianOperator, StateVector, C64};
use crate::manifold::{evaluate, hamilton_function, hamilton_gradient, symplectic_form, ManifoldChart};
use crate::optimize::{hessian_fd, minimize_expectation, MinimizeOptions};
use crate::orbit::{quantize_family, QuantizeOptions, QuantizedOrbit};
use crate::requantize::{requantize, RequantizedState};

/// Relative real part of a stability eigenvalue tolerated at a minimum.
pub const INSTABILITY_TOL: f64 = 1e-8;
/// Frequencies below this fraction of the largest are symmetry (zero) modes.
pub const ZERO_MODE_RATIO: f64 = 1e-6;
/// Step of the central-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-5;

/// A normal mode `x(t) = x* + a Re(d e^{-i omega t})` of the linearized flow.
#[derive(Debug, Clone)]
pub struct NormalMode {
    pub omega: f64,
    /// Eigenvector `d` of the stability matrix for `-i omega`, scaled to `|d|^2 = 2`
    /// with its first largest component real and positive.
    pub displacement: Vec<C64>,
    /// Amplitude `a` placing the mode on the `n = 1` quantized orbit; zero when
    /// the phase functional is not positive.
    pub amplitude_scale: f64,
    /// `Phi` with `Theta_T = a^2 Phi` on the linearized orbit.
    pub phase_functional: f64,
    /// `|M d + i omega d| / |d|`.
    pub eigen_residual: f64,
}

impl NormalMode {
    /// Real displacement of the orbit at `t = 0` for amplitude `a`.
    pub fn initial_offset(&self, a: f64) -> Vec<f64> {
        self.displacement.iter().map(|d| a * d.re).collect()
    }
}

/// Minimum of `h_M` reached from `x_init`, with `|grad h_M| <= 1e-10` and a
/// positive semidefinite Hessian.
pub fn find_minimum(chart: &(impl ManifoldChart + ?Sized), hamiltonian: &HermitianOperator, x_init: &[f64]) -> Result<Vec<f64>> {
    Ok(minimize_expectation(chart, hamiltonian, x_init, &MinimizeOptions::default())?.x)
}

/// `M = A^{-1} Hess(h_M)` with `A_ij = 2 omega_ji`: the linearized flow `dx/dt = M dx`.
pub fn stability_matrix(chart: &(impl ManifoldChart + ?Sized), hamiltonian: &HermitianOperator, x: &[f64]) -> Result<DMatrix<f64>> {
    let w = symplectic_form(chart, x)?;
    let a = w.entries().transpose() * 2.0;
    let grad = |y: &[f64]| hamilton_gradient(chart, hamiltonian, y);
    let hess = hessian_fd(&grad, x, HESSIAN_STEP)?;
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::NonSymplecticPoint { point: x.to_vec(), ratio: 0.0 })?;
    Ok(inv * hess)
}

/// `Phi = (pi/hbar) sum_jk omega_jk Im(d_j conj(d_k))`, so that the linearized
/// orbit of amplitude `a` accumulates `Theta_T = a^2 Phi`.
pub fn phase_functional(chart: &(impl ManifoldChart + ?Sized), x_star: &[f64], d: &[C64]) -> Result<f64> {
    let w = symplectic_form(chart, x_star)?;
    if d.len() != w.size() {
        return Err(Error::DimensionMismatch { expected: w.size(), got: d.len() });
    }
    let mut s = 0.0;
    for j in 0..d.len() {
        for k in 0..d.len() {
            s += w.get(j, k) * (d[j] * d[k].conj()).im;
        }
    }
    Ok(PI / chart.hbar() * s)
}

/// Normal modes at a minimum, ascending in frequency. Zero modes are dropped.
pub fn linearize(chart: &(impl ManifoldChart + ?Sized), hamiltonian: &HermitianOperator, x_star: &[f64]) -> Result<Vec<NormalMode>> {
    let m = stability_matrix(chart, hamiltonian, x_star)?;
    let n = m.nrows();
    let eig = m.complex_eigenvalues();
    let max_im = eig.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
    let max_re = eig.iter().fold(0.0f64, |a, z| a.max(z.re.abs()));
    if max_re > INSTABILITY_TOL * max_im.max(f64::MIN_POSITIVE) && max_re > 1e-14 {
        return Err(Error::ComplexInstability(max_re));
    }
    let mut omegas: Vec<f64> = eig.iter().filter(|z| z.im < 0.0).map(|z| -z.im).collect();
    omegas.sort_by(f64::total_cmp);
    let zero_cut = ZERO_MODE_RATIO * max_im;
    let dropped = omegas.iter().filter(|w| **w < zero_cut).count() + eig.iter().filter(|z| z.im == 0.0).count();
    if dropped > 0 {
        log::info!("excluding {dropped} zero-frequency eigenvalue(s) of the stability matrix (symmetry directions)");
    }
    omegas.retain(|w| *w >= zero_cut && *w > 0.0);

    let mc: ComplexMatrix = m.map(|v| C64::new(v, 0.0));
    let mut modes = Vec::with_capacity(omegas.len());
    let mut i = 0;
    while i < omegas.len() {
        let omega = omegas[i];
        let mult = omegas[i..].iter().take_while(|w| (**w - omega).abs() <= 1e-8 * omega).count();
        let shifted = &mc + ComplexMatrix::identity(n, n) * C64::new(0.0, omega);
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
        for &col in order.iter().take(mult) {
            let mut d: DVector<C64> = vt.row(col).adjoint();
            let peak = d.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            let big = d.iter().copied().find(|z| z.norm() >= peak * (1.0 - 1e-8)).unwrap_or(C64::new(1.0, 0.0));
            d *= big.conj() / big.norm();
            d *= C64::new(2f64.sqrt() / d.norm(), 0.0);
            let residual = (&mc * &d + &d * C64::new(0.0, omega)).norm() / d.norm();
            let dv: Vec<C64> = d.iter().copied().collect();
            let phi = phase_functional(chart, x_star, &dv)?;
            let amplitude_scale = if phi > 0.0 {
                (2.0 * PI / phi).sqrt()
            } else {
                log::warn!("mode at omega = {omega} has non-positive phase functional {phi:e}");
                0.0
            };
            modes.push(NormalMode { omega, displacement: dv, amplitude_scale, phase_functional: phi, eigen_residual: residual });
        }
        i += mult;
    }
    Ok(modes)
}

/// Amplitude `a = sqrt(2 pi n / Phi)` of the linearized orbit with `Theta_T = 2 pi n`.
pub fn quantize_amplitude(mode: &NormalMode, chart: &(impl ManifoldChart + ?Sized), x_star: &[f64], n: i64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidInput(format!("amplitude quantization needs n >= 1, got {n}")));
    }
    let phi = phase_functional(chart, x_star, &mode.displacement)?;
    if !(phi > 0.0) {
        return Err(Error::NegativePhaseDirection(phi));
    }
    Ok((2.0 * PI * n as f64 / phi).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct RpaOptions {
    pub quantize: QuantizeOptions,
    /// Family scanned over `[lo, hi]` times the linear amplitude.
    pub amplitude_window: (f64, f64),
    /// Integration horizon in units of the linear period.
    pub period_factor: f64,
    pub samples_per_period: usize,
}

impl Default for RpaOptions {
    fn default() -> Self {
        Self {
            quantize: QuantizeOptions { scan_points: 9, ..Default::default() },
            amplitude_window: (0.3, 2.0),
            period_factor: 2.5,
            samples_per_period: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpaSolution {
    pub mode: NormalMode,
    pub minimum: Vec<f64>,
    pub ground_state: StateVector,
    pub ground_energy: f64,
    /// `sum_k (a d_k / 2) G_k` from the chart's origin generators, when available.
    pub b_dagger: Option<ComplexMatrix>,
    /// `<M|[B, B^dagger]|M>`.
    pub normalization: f64,
    /// `B^dagger |M>`, normalized.
    pub tangent_state: StateVector,
    /// Requantized `n = 1` orbit of the nonlinear flow.
    pub excited: RequantizedState,
    pub quantized_orbit: QuantizedOrbit,
    pub excitation_energy: f64,
    /// `|<tangent_state|excited>|^2`.
    pub tangent_overlap: f64,
    /// `|<M|excited>|`.
    pub ground_overlap: f64,
    /// `|(h(x0) - h(x*)) - hbar omega| / (hbar omega)` at the linear amplitude.
    pub linear_energy_error: f64,
}

impl RpaSolution {
    pub fn excited_state(&self) -> &StateVector {
        &self.excited.normalized
    }

    pub fn to_json(&self, overlap_exact: Option<f64>) -> serde_json::Value {
        json!({
            "omega": self.mode.omega,
            "excitation_energy": self.excitation_energy,
            "normalization": self.normalization,
            "overlap_exact": overlap_exact,
            "amplitude_scale": self.mode.amplitude_scale,
            "phase_functional": self.mode.phase_functional,
            "eigen_residual": self.mode.eigen_residual,
            "minimum": self.minimum,
            "ground_energy": self.ground_energy,
            "requantized_energy": self.excited.energy,
            "requantized_norm": self.excited.norm,
            "tangent_overlap": self.tangent_overlap,
            "ground_overlap": self.ground_overlap,
            "linear_energy_error": self.linear_energy_error,
            "orbit_period": self.quantized_orbit.orbit.period,
            "orbit_residual": self.quantized_orbit.residual,
        })
    }
}

fn normalization_and_state(
    chart: &(impl ManifoldChart + ?Sized),
    x_star: &[f64],
    d: &[C64],
    a: f64,
) -> Result<(Option<ComplexMatrix>, f64, StateVector)> {
    let point = evaluate(chart, x_star)?;
    let at_origin = x_star.iter().all(|v| v.abs() <= 1e-12);
    if let (true, Some(gens)) = (at_origin, chart.origin_generators()) {
        let dim = chart.dim();
        let mut bd = ComplexMatrix::zeros(dim, dim);
        for (g, dk) in gens.iter().zip(d) {
            bd += g * (*dk * (0.5 * a));
        }
        let b = bd.adjoint();
        let comm = &b * &bd - &bd * &b;
        let m = point.state.amplitudes();
        let norm = m.dotc(&(comm * m)).re;
        let excited = StateVector::from_dvector(&bd * m)?.normalized()?;
        return Ok((Some(bd), norm, excited));
    }
    let mut plus = StateVector::zeros(chart.dim());
    let mut minus = StateVector::zeros(chart.dim());
    for (t, dk) in point.tangents.iter().zip(d) {
        plus.axpy(*dk * (0.5 * a), t);
        minus.axpy(dk.conj() * (0.5 * a), t);
    }
    let norm = plus.norm().powi(2) - minus.norm().powi(2);
    Ok((None, norm, plus.normalized()?))
}

/// One-phonon state of `mode`: the `n = 1` orbit of the full flow is located
/// along `x* + s Re(d)`, requantized, and compared with `B^dagger |M>`.
pub fn rpa_state(
    mode: &NormalMode,
    chart: Arc<dyn ManifoldChart>,
    x_star: &[f64],
    hamiltonian: &HermitianOperator,
    opts: &RpaOptions,
) -> Result<RpaSolution> {
    let a = quantize_amplitude(mode, chart.as_ref(), x_star, 1)?;
    let (b_dagger, normalization, tangent_state) = normalization_and_state(chart.as_ref(), x_star, &mode.displacement, a)?;
    let ground_state = chart.embed(x_star);
    let ground_energy = hamilton_function(chart.as_ref(), hamiltonian, x_star)?;
    let hbar = chart.hbar();
    let excitation_energy = hbar * mode.omega;

    let offset = mode.initial_offset(1.0);
    let x0: Vec<f64> = x_star.iter().zip(&offset).map(|(x, o)| x + a * o).collect();
    let linear_energy = hamilton_function(chart.as_ref(), hamiltonian, &x0)? - ground_energy;
    let linear_energy_error = (linear_energy - excitation_energy).abs() / excitation_energy;

    let mut q = opts.quantize;
    q.t_max = opts.period_factor * 2.0 * PI / mode.omega;
    let family = |s: f64| x_star.iter().zip(&offset).map(|(x, o)| x + s * o).collect::<Vec<f64>>();
    let range = (opts.amplitude_window.0 * a, opts.amplitude_window.1 * a);
    let quantized_orbit = quantize_family(chart.clone(), hamiltonian, family, range, &[1], &q)?
        .pop()
        .ok_or_else(|| Error::NoClosureFound("no n = 1 orbit".into()))?;
    let excited = requantize(&quantized_orbit, hamiltonian, opts.samples_per_period)?;
    let tangent_overlap = inner(&tangent_state, &excited.normalized)?.norm_sqr();
    let ground_overlap = inner(&ground_state, &excited.normalized)?.norm();
    Ok(RpaSolution {
        mode: mode.clone(),
        minimum: x_star.to_vec(),
        ground_state,
        ground_energy,
        b_dagger,
        normalization,
        tangent_state,
        excited,
        quantized_orbit,
        excitation_energy,
        tangent_overlap,
        ground_overlap,
        linear_energy_error,
    })
}
