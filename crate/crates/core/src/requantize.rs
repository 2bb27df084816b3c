//! Eigenstates rebuilt from quantized orbits by time-averaging the
//! parallel-transported orbit, and the projections it reduces to.

use std::f64::consts::PI;

use serde_json::json;

use crate::error::{Error, Result};
use crate::hilbert::{inner, HermitianOperator, SpectralDecomposition, StateVector, C64};
use crate::orbit::QuantizedOrbit;

pub const DEFAULT_SAMPLES: usize = 256;
pub const MIN_SAMPLES: usize = 16;
/// Norm below which the time average is considered to vanish.
pub const ZERO_AVERAGE_TOL: f64 = 1e-12;
/// Tolerance on `lambda / hbar` being an integer for angular projection.
pub const INTEGRALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RequantizedState {
    /// `(1/T) int_0^T e^{i Theta_t} |Z_t> dt`.
    pub raw: StateVector,
    pub norm: f64,
    pub normalized: StateVector,
    /// `<H>` on the normalized state.
    pub energy: f64,
    pub n: i64,
}

impl RequantizedState {
    /// Report with `|<v_k|psi>|^2` against each eigenvector of `spectrum`.
    pub fn to_json(&self, spectrum: Option<&SpectralDecomposition>) -> Result<serde_json::Value> {
        let overlaps = match spectrum {
            Some(spec) => spec
                .coefficients(&self.normalized)?
                .iter()
                .enumerate()
                .map(|(k, c)| json!({ "eigenindex": k, "overlap_sq": c.norm_sqr() }))
                .collect(),
            None => Vec::new(),
        };
        Ok(json!({ "n": self.n, "norm": self.norm, "energy": self.energy, "overlaps": overlaps }))
    }
}

/// Periodic trapezoid average of the autoparallel section over one period,
/// on `samples` uniformly spaced times re-evaluated from the orbit's source.
pub fn requantize(q: &QuantizedOrbit, hamiltonian: &HermitianOperator, samples: usize) -> Result<RequantizedState> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!("at least {MIN_SAMPLES} samples per period are required, got {samples}")));
    }
    let orbit = &q.orbit;
    let dim = orbit.initial_state()?.dim();
    if hamiltonian.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: hamiltonian.dim() });
    }
    let mut raw = StateVector::zeros(dim);
    let w = C64::new(1.0 / samples as f64, 0.0);
    for k in 0..samples {
        let t = orbit.period * k as f64 / samples as f64;
        let s = orbit.samples.evaluate(t)?;
        raw.axpy(w * C64::from_polar(1.0, s.theta), &s.state);
    }
    let norm = raw.norm();
    if !(norm >= ZERO_AVERAGE_TOL) {
        return Err(Error::ZeroAverage(norm));
    }
    let normalized = raw.normalized()?;
    let energy = hamiltonian.expectation(&normalized)?;
    Ok(RequantizedState { raw, norm, normalized, energy, n: q.n })
}

/// `(1/S) sum_s e^{-i t_s (lambda - shift)/hbar}` for `t_s = s T / S`: the
/// periodic quadrature of the circle average, applied per eigenvalue.
fn comb_weight(lambda: f64, shift: f64, period: f64, hbar: f64, samples: usize) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for s in 0..samples {
        let t = period * s as f64 / samples as f64;
        acc += C64::from_polar(1.0, -t * (lambda - shift) / hbar);
    }
    acc / samples as f64
}

/// `(1/T) int_0^T e^{-i t (H - E)/hbar} |psi0> dt` by `samples`-point quadrature.
pub fn ergodic_project(
    hamiltonian: &HermitianOperator,
    psi0: &StateVector,
    energy: f64,
    period: f64,
    hbar: f64,
    samples: usize,
) -> Result<StateVector> {
    if !(period > 0.0 && hbar > 0.0) || samples == 0 {
        return Err(Error::InvalidInput("period, hbar and samples must be positive".into()));
    }
    hamiltonian.spectral().apply_function(psi0, |e| comb_weight(e, energy, period, hbar, samples))
}

/// `(1/2 pi) int_0^{2 pi} e^{-i phi (J - m hbar)/hbar} |psi> dphi`; requires the
/// spectrum of `J` to lie in `hbar Z`.
pub fn angular_project(
    generator: &HermitianOperator,
    psi: &StateVector,
    m: i64,
    hbar: f64,
    samples: usize,
) -> Result<StateVector> {
    if !(hbar > 0.0) || samples == 0 {
        return Err(Error::InvalidInput("hbar and samples must be positive".into()));
    }
    let spec = generator.spectral();
    let defect = spec
        .eigenvalues()
        .iter()
        .map(|e| (e / hbar - (e / hbar).round()).abs())
        .fold(0.0f64, f64::max);
    if defect > INTEGRALITY_TOL {
        return Err(Error::SpectrumNotInteger(defect));
    }
    spec.apply_function(psi, |e| comb_weight(e, m as f64 * hbar, 2.0 * PI, hbar, samples))
}

/// `<a|Op|b>` between normalized requantized states.
pub fn transition_amplitude(a: &RequantizedState, op: &HermitianOperator, b: &RequantizedState) -> Result<C64> {
    op.matrix_element(&a.normalized, &b.normalized)
}

/// `|<a|b>|` for normalized inputs, for reports.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(inner(a, b)?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::IntegratorOptions;
    use crate::hilbert::spectral_projector;
    use crate::manifold::ManifoldChart;
    use crate::models::oscillator::OscillatorModel;
    use crate::models::spin::SpinCoherentChart;
    use crate::orbit::{quantize_family, QuantizeOptions};
    use std::sync::Arc;

    fn glauber_orbits(targets: &[i64]) -> (OscillatorModel, Vec<QuantizedOrbit>) {
        let m = OscillatorModel::new(1.0, 1.0, 40, 1.0).unwrap();
        let chart: Arc<dyn ManifoldChart> = Arc::new(m.glauber_chart(3.0).unwrap());
        let q = QuantizeOptions {
            t_max: 10.0,
            scan_points: 5,
            integrator: IntegratorOptions { samples: 9, store_states: false, ..Default::default() },
            ..Default::default()
        };
        let res = quantize_family(chart, &m.hamiltonian, |s| vec![s.sqrt(), 0.0], (0.0, 3.0), targets, &q).unwrap();
        (m, res)
    }

    #[test]
    fn glauber_requantization_gives_fock_states() {
        let (m, orbits) = glauber_orbits(&[0, 1, 2]);
        for q in &orbits {
            let r = requantize(q, &m.hamiltonian, 64).unwrap();
            let n = q.n as usize;
            let fock = m.fock(n).unwrap();
            assert!(fidelity(&fock, &r.normalized).unwrap() >= 1.0 - 1e-8);
            assert!((r.energy - (n as f64 + 0.5)).abs() < 1e-8);
            let expect = (-(n as f64) / 2.0).exp() * (n as f64).powf(n as f64 / 2.0) / (1..=n).map(|k| k as f64).product::<f64>().sqrt();
            assert!((r.norm - expect).abs() < 1e-8, "n={n}: {} vs {expect}", r.norm);
        }
    }

    #[test]
    fn quadrature_converges_and_is_phase_robust() {
        let (m, orbits) = glauber_orbits(&[1]);
        let a = requantize(&orbits[0], &m.hamiltonian, 64).unwrap();
        let b = requantize(&orbits[0], &m.hamiltonian, 128).unwrap();
        assert!(a.raw.distance(&b.raw) < 1e-10);
        assert!(requantize(&orbits[0], &m.hamiltonian, 8).is_err());
    }

    #[test]
    fn transition_amplitude_is_position_element() {
        let (m, orbits) = glauber_orbits(&[0, 1]);
        let g0 = requantize(&orbits[0], &m.hamiltonian, 64).unwrap();
        let g1 = requantize(&orbits[1], &m.hamiltonian, 64).unwrap();
        let amp = transition_amplitude(&g0, &m.position, &g1).unwrap();
        assert!((amp.norm() - 0.5f64.sqrt()).abs() < 1e-6);
        let id = HermitianOperator::identity(40);
        assert!((transition_amplitude(&g1, &id, &g1).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-12);
        // H is diagonal: no coupling between distinct levels
        assert!(transition_amplitude(&g0, &m.hamiltonian, &g1).unwrap().norm() < 1e-8);
    }

    #[test]
    fn ergodic_projection_cases() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 2.0]).unwrap();
        let s = 0.5f64.sqrt();
        let psi = StateVector::from_real(&[s, s]).unwrap();
        let out = ergodic_project(&h, &psi, 0.0, PI, 1.0, 256).unwrap();
        let proj = spectral_projector(h.spectral(), 0.0, 1e-9).unwrap().apply(&psi).unwrap();
        assert!(out.distance(&proj) < 1e-10);
        let e1 = StateVector::basis(2, 1).unwrap();
        assert!(ergodic_project(&h, &e1, 2.0, PI, 1.0, 256).unwrap().distance(&e1) < 1e-12);
        // E = 2 lies between the levels of diag(0, 1, 3) and every offset is a
        // nonzero multiple of hbar w = 1, so nothing survives the average
        let h3 = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 3.0]).unwrap();
        let s3 = 1.0 / 3f64.sqrt();
        let psi3 = StateVector::from_real(&[s3, s3, s3]).unwrap();
        assert!(ergodic_project(&h3, &psi3, 2.0, 2.0 * PI, 1.0, 256).unwrap().norm() < 1e-12);
    }

    #[test]
    fn angular_projection_cases() {
        let chart = SpinCoherentChart::new(1.0, 1.0).unwrap();
        let jz = chart.operators().jz_operator(1.0);
        let psi = chart.embed(&[0.4, 0.3]);
        let out = angular_project(&jz, &psi, 0, 1.0, 64).unwrap();
        let proj = spectral_projector(jz.spectral(), 0.0, 1e-9).unwrap().apply(&psi).unwrap();
        assert!(out.distance(&proj) < 1e-12);
        let resid = jz.apply(&out).unwrap().norm();
        assert!(resid <= 1e-10 * out.norm());
        let twice = angular_project(&jz, &out, 0, 1.0, 64).unwrap();
        assert!(twice.distance(&out) < 1e-12);
        let eig = StateVector::basis(3, 2).unwrap();
        assert!(angular_project(&jz, &eig, 1, 1.0, 64).unwrap().distance(&eig) < 1e-12);
        assert!(angular_project(&jz, &psi, 5, 1.0, 64).unwrap().norm() < 1e-12);
        let half = SpinCoherentChart::new(0.5, 1.0).unwrap().operators().jz_operator(1.0);
        let up = StateVector::basis(2, 0).unwrap();
        assert!(matches!(angular_project(&half, &up, 0, 1.0, 64), Err(Error::SpectrumNotInteger(_))));
    }

    #[test]
    fn report_lists_overlaps() {
        let (m, orbits) = glauber_orbits(&[1]);
        let r = requantize(&orbits[0], &m.hamiltonian, 32).unwrap();
        let v = r.to_json(Some(m.hamiltonian.spectral())).unwrap();
        let ov = v["overlaps"].as_array().unwrap();
        assert_eq!(ov.len(), 40);
        assert!((ov[1]["overlap_sq"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn ergodic_projection_is_an_idempotent_spectral_projection(
            amps in proptest::collection::vec(-1.0f64..1.0, 8),
            level in 0usize..4,
        ) {
            let levels = [0.0, 1.0, 3.0, 4.0];
            let h = HermitianOperator::from_real_diagonal(&levels).unwrap();
            let psi = StateVector::new((0..4).map(|k| C64::new(amps[2 * k], amps[2 * k + 1])).collect::<Vec<_>>());
            proptest::prop_assume!(psi.as_ref().map(|p| p.norm() > 0.1).unwrap_or(false));
            let psi = psi.unwrap().normalized().unwrap();
            let e = levels[level];
            let out = ergodic_project(&h, &psi, e, 2.0 * PI, 1.0, 64).unwrap();
            let proj = spectral_projector(h.spectral(), e, 1e-9).unwrap().apply(&psi).unwrap();
            proptest::prop_assert!(out.distance(&proj) <= 1e-12);
            let again = ergodic_project(&h, &out, e, 2.0 * PI, 1.0, 64).unwrap();
            proptest::prop_assert!(again.distance(&out) <= 1e-12);
        }
    }
}
