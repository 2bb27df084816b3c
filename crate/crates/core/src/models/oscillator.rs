//! Truncated harmonic oscillator and the Glauber coherent-state chart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{ComplexMatrix, HermitianOperator, StateVector, C64, I};
use crate::manifold::ManifoldChart;

pub const DEFAULT_TRUNCATION: usize = 40;
pub const DEFAULT_Z_MAX: f64 = 3.0;
/// Largest Poisson tail weight beyond the truncation accepted by the chart.
pub const TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OscillatorModel {
    pub omega: f64,
    pub mass: f64,
    pub truncation: usize,
    pub hbar: f64,
    /// `hbar omega (b^dagger b + 1/2)`.
    pub hamiltonian: HermitianOperator,
    pub position: HermitianOperator,
    pub momentum: HermitianOperator,
    annihilation: ComplexMatrix,
}

impl OscillatorModel {
    pub fn new(omega: f64, mass: f64, truncation: usize, hbar: f64) -> Result<Self> {
        if !(omega > 0.0 && mass > 0.0 && hbar > 0.0) {
            return Err(Error::InvalidInput("omega, mass and hbar must be positive".into()));
        }
        if truncation < 2 {
            return Err(Error::InvalidInput(format!("truncation must be at least 2, got {truncation}")));
        }
        let d = truncation;
        let b = DMatrix::from_fn(d, d, |r, c| if c == r + 1 { C64::new((c as f64).sqrt(), 0.0) } else { C64::new(0.0, 0.0) });
        let bd = b.adjoint();
        let levels: Vec<f64> = (0..d).map(|n| hbar * omega * (n as f64 + 0.5)).collect();
        let hamiltonian = HermitianOperator::from_real_diagonal(&levels)?;
        let xs = (hbar / (2.0 * mass * omega)).sqrt();
        let ps = (hbar * mass * omega / 2.0).sqrt();
        let position = HermitianOperator::new((&b + &bd) * C64::new(xs, 0.0))?;
        let momentum = HermitianOperator::new((&bd - &b) * (I * ps))?;
        Ok(Self { omega, mass, truncation, hbar, hamiltonian, position, momentum, annihilation: b })
    }

    pub fn annihilation(&self) -> &ComplexMatrix {
        &self.annihilation
    }

    pub fn creation(&self) -> ComplexMatrix {
        self.annihilation.adjoint()
    }

    /// Fock state `|n>`.
    pub fn fock(&self, n: usize) -> Result<StateVector> {
        StateVector::basis(self.truncation, n)
    }

    /// Chart on `|z| <= z_max`; fails when the truncation cannot hold it.
    pub fn glauber_chart(&self, z_max: f64) -> Result<GlauberChart> {
        if !(z_max > 0.0) {
            return Err(Error::InvalidInput(format!("z_max must be positive, got {z_max}")));
        }
        let tail = poisson_tail(z_max * z_max, self.truncation);
        if tail >= TAIL_TOL {
            return Err(Error::TruncationInsufficient(tail));
        }
        Ok(GlauberChart { dim: self.truncation, hbar: self.hbar, z_max })
    }
}

/// `exp(-m) sum_{n >= d} m^n / n!`, summed in log space.
pub fn poisson_tail(mean: f64, d: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let mut log_term = -mean + d as f64 * mean.ln() - ln_factorial(d);
    let mut total = 0.0;
    for n in d.. {
        let term = log_term.exp();
        total += term;
        if n as f64 > mean && term < 1e-18 * total.max(1e-300) {
            break;
        }
        if n > d + 10_000 {
            break;
        }
        log_term += mean.ln() - ((n + 1) as f64).ln();
    }
    total
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `|Z(z)> = exp(z b^dagger - z* b)|0>` truncated to `D` levels and renormalized,
/// with parameters `(Re z, Im z)`.
#[derive(Debug, Clone)]
pub struct GlauberChart {
    dim: usize,
    hbar: f64,
    z_max: f64,
}

impl GlauberChart {
    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    /// Unnormalized amplitudes `z^n / sqrt(n!)`.
    fn raw(&self, x: &[f64]) -> DVector<C64> {
        let z = C64::new(x[0], x[1]);
        let mut u = DVector::zeros(self.dim);
        u[0] = C64::new(1.0, 0.0);
        for n in 1..self.dim {
            u[n] = u[n - 1] * z / (n as f64).sqrt();
        }
        u
    }

    /// `b^dagger u`, dropping the component pushed past the truncation.
    fn raise(&self, u: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::zeros(self.dim);
        for n in 1..self.dim {
            out[n] = u[n - 1] * (n as f64).sqrt();
        }
        out
    }
}

/// Tangent of `u / |u|` given `du`.
pub(crate) fn normalized_derivative(u: &DVector<C64>, du: &DVector<C64>) -> DVector<C64> {
    let n = u.norm();
    let proj = u.dotc(du).re;
    du / C64::new(n, 0.0) - u * C64::new(proj / (n * n * n), 0.0)
}

impl ManifoldChart for GlauberChart {
    fn name(&self) -> &str {
        "glauber"
    }

    fn n_params(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn hbar(&self) -> f64 {
        self.hbar
    }

    fn embed(&self, x: &[f64]) -> StateVector {
        let u = self.raw(x);
        let n = u.norm();
        StateVector::from_dvector_unchecked(u / C64::new(n, 0.0))
    }

    fn tangent(&self, x: &[f64]) -> Vec<StateVector> {
        let u = self.raw(x);
        let du = self.raise(&u);
        vec![
            StateVector::from_dvector_unchecked(normalized_derivative(&u, &du)),
            StateVector::from_dvector_unchecked(normalized_derivative(&u, &(&du * I))),
        ]
    }

    fn has_analytic_tangent(&self) -> bool {
        true
    }

    fn domain_hint(&self) -> Vec<(f64, f64)> {
        vec![(-self.z_max, self.z_max); 2]
    }

    fn origin_generators(&self) -> Option<Vec<ComplexMatrix>> {
        let b = DMatrix::from_fn(self.dim, self.dim, |r, c| {
            if c == r + 1 {
                C64::new((c as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let bd = b.adjoint();
        Some(vec![&bd - &b, (&bd + &b) * I])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::inner;
    use crate::manifold::{connection_curl, finite_difference_tangent, symplectic_form};

    fn model() -> OscillatorModel {
        OscillatorModel::new(1.0, 1.0, DEFAULT_TRUNCATION, 1.0).unwrap()
    }

    #[test]
    fn origin_is_vacuum() {
        let chart = model().glauber_chart(DEFAULT_Z_MAX).unwrap();
        assert!(chart.embed(&[0.0, 0.0]).distance(&StateVector::basis(40, 0).unwrap()) < 1e-15);
    }

    #[test]
    fn coherent_overlap_formula() {
        let chart = model().glauber_chart(DEFAULT_Z_MAX).unwrap();
        let (z1, z2) = (C64::new(0.7, -1.1), C64::new(-0.4, 0.9));
        let ov = inner(&chart.embed(&[z1.re, z1.im]), &chart.embed(&[z2.re, z2.im])).unwrap();
        let expect = (z1.conj() * z2 - 0.5 * z1.norm_sqr() - 0.5 * z2.norm_sqr()).exp();
        assert!((ov - expect).norm() < 1e-10);
    }

    #[test]
    fn commutator_below_truncation_edge() {
        let m = OscillatorModel::new(1.3, 0.7, 12, 1.0).unwrap();
        let b = m.annihilation();
        let comm = b * m.creation() - m.creation() * b;
        for r in 0..11 {
            for c in 0..11 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((comm[(r, c)] - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn position_matrix_element() {
        let m = OscillatorModel::new(2.0, 0.5, 10, 1.0).unwrap();
        let x01 = m.position.matrix_element(&m.fock(0).unwrap(), &m.fock(1).unwrap()).unwrap();
        assert!((x01.re - (1.0f64 / (2.0 * 0.5 * 2.0)).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn small_truncation_rejected() {
        let m = OscillatorModel::new(1.0, 1.0, 15, 1.0).unwrap();
        assert!(matches!(m.glauber_chart(3.0), Err(Error::TruncationInsufficient(_))));
        assert!(poisson_tail(9.0, 40) < 1e-12);
    }

    #[test]
    fn analytic_tangents_match_finite_differences() {
        let chart = model().glauber_chart(DEFAULT_Z_MAX).unwrap();
        let x = [0.8, -1.3];
        let fd = finite_difference_tangent(&chart, &x);
        for (a, b) in chart.tangent(&x).iter().zip(&fd) {
            assert!(a.distance(b) < 1e-8);
        }
    }

    #[test]
    fn form_is_hbar_and_curl_consistent() {
        let m = OscillatorModel::new(1.0, 1.0, 40, 0.5).unwrap();
        let chart = m.glauber_chart(3.0).unwrap();
        let x = [0.3, 1.2];
        let w = symplectic_form(&chart, &x).unwrap();
        assert!((w.get(0, 1) - 0.5).abs() < 1e-12);
        let curl = connection_curl(&chart, &x, 1e-4).unwrap();
        assert!((curl[(0, 1)] - 2.0 * w.get(0, 1)).abs() < 1e-5);
    }

    #[test]
    fn generators_reproduce_origin_tangents() {
        let chart = model().glauber_chart(DEFAULT_Z_MAX).unwrap();
        let z = chart.embed(&[0.0, 0.0]);
        let gens = chart.origin_generators().unwrap();
        for (g, t) in gens.iter().zip(chart.tangent(&[0.0, 0.0])) {
            let gz = StateVector::from_dvector_unchecked(g * z.amplitudes());
            assert!(gz.distance(&t) < 1e-14);
        }
    }
}
