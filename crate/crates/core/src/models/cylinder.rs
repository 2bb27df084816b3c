//! Systems with a commensurate spectrum, whose exact orbits close in
//! projective space, and the affine chart of the full projective space.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::flow::{Trajectory, TrajectorySource};
use crate::hilbert::{projective_distance, HermitianOperator, StateVector, C64, I};
use crate::manifold::ManifoldChart;
use crate::models::oscillator::normalized_derivative;
use crate::orbit::ClosedOrbit;

/// Largest denominator tried when searching for a common frequency.
const MAX_DENOMINATOR: usize = 128;
/// Relative tolerance for gaps being integer multiples of the base frequency.
const GAP_TOL: f64 = 1e-10;
/// Populations below this are treated as unoccupied levels.
const OCCUPATION_TOL: f64 = 1e-14;

/// Base angular frequency `w` such that every gap of `levels` is an integer
/// multiple of `hbar w`; `Ok(None)` when there is no gap at all.
pub fn commensurate_frequency(levels: &[f64], hbar: f64) -> Result<Option<f64>> {
    let mut e: Vec<f64> = levels.to_vec();
    e.sort_by(f64::total_cmp);
    let scale = e.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let gaps: Vec<f64> = e.iter().map(|v| v - e[0]).filter(|g| *g > GAP_TOL * scale).collect();
    let Some(&g_min) = gaps.iter().min_by(|a, b| a.total_cmp(b)) else {
        return Ok(None);
    };
    for q in 1..=MAX_DENOMINATOR {
        let base = g_min / q as f64;
        if gaps.iter().all(|g| ((g / base) - (g / base).round()).abs() <= GAP_TOL * (g / base).max(1.0)) {
            return Ok(Some(base / hbar));
        }
    }
    Err(Error::IncommensurateSpectrum(format!("gaps {gaps:?} share no common frequency")))
}

#[derive(Debug, Clone)]
pub struct CylinderModel {
    pub eigenvalues: Vec<f64>,
    pub psi0: StateVector,
    pub hbar: f64,
    pub hamiltonian: HermitianOperator,
    /// Base angular frequency of the full spectrum.
    pub frequency: Option<f64>,
}

impl CylinderModel {
    /// Diagonal Hamiltonian; `psi0` is normalized on construction.
    pub fn new(eigenvalues: Vec<f64>, psi0: Vec<C64>, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0) {
            return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        if eigenvalues.len() < 2 {
            return Err(Error::InvalidInput("a cylinder model needs at least two levels".into()));
        }
        if psi0.len() != eigenvalues.len() {
            return Err(Error::DimensionMismatch { expected: eigenvalues.len(), got: psi0.len() });
        }
        let psi0 = StateVector::new(psi0)?.normalized()?;
        let hamiltonian = HermitianOperator::from_real_diagonal(&eigenvalues)?;
        let frequency = commensurate_frequency(&eigenvalues, hbar)?;
        Ok(Self { eigenvalues, psi0, hbar, hamiltonian, frequency })
    }

    /// Common period of every exact orbit.
    pub fn period(&self) -> Option<f64> {
        self.frequency.map(|w| 2.0 * PI / w)
    }

    /// `E T / (2 pi hbar)` for the state `psi` over the model period.
    pub fn winding(&self, psi: &StateVector) -> Result<f64> {
        let t = self.period().ok_or_else(|| Error::NoClosureFound("spectrum has no gap".into()))?;
        Ok(self.hamiltonian.expectation(psi)? * t / (2.0 * PI * self.hbar))
    }

    pub fn projective_chart(&self) -> ProjectiveChart {
        ProjectiveChart { dim: self.eigenvalues.len(), hbar: self.hbar }
    }
}

/// The exact orbit of `psi0`, with period set by the gaps between occupied levels.
pub fn cylinder_orbit(model: &CylinderModel, samples: usize) -> Result<ClosedOrbit> {
    let psi0 = &model.psi0;
    let occupied: Vec<f64> = psi0
        .as_slice()
        .iter()
        .zip(&model.eigenvalues)
        .filter(|(c, _)| c.norm_sqr() > OCCUPATION_TOL)
        .map(|(_, e)| *e)
        .collect();
    let w = commensurate_frequency(&occupied, model.hbar)?
        .ok_or_else(|| Error::NoClosureFound("initial state is stationary; zero-length orbit".into()))?;
    let period = 2.0 * PI / w;
    let energy = model.hamiltonian.expectation(psi0)?;
    let source = TrajectorySource::Exact {
        hamiltonian: model.hamiltonian.clone(),
        psi0: psi0.clone(),
        hbar: model.hbar,
        energy,
        coordinates: projective_coordinates,
    };
    let end = source.evaluate(period)?;
    let samples = Trajectory::sample(source, &model.hamiltonian, period, samples, true)?;
    Ok(ClosedOrbit {
        period,
        energy,
        total_phase: end.theta,
        closure_defect: projective_distance(psi0, &end.state),
        initial_point: projective_coordinates(psi0),
        samples,
    })
}

/// `(Re w_1, Im w_1, ...)` with `w_k = c_k / c_0`; non-finite when `c_0 = 0`.
pub fn projective_coordinates(psi: &StateVector) -> Vec<f64> {
    let a = psi.as_slice();
    a[1..].iter().flat_map(|c| {
        let w = c / a[0];
        [w.re, w.im]
    }).collect()
}

/// `|Z(w)> = (1, w_1, ..., w_{D-1}) / norm`: the whole projective space, on
/// which the constrained flow is the exact Schrodinger evolution.
#[derive(Debug, Clone)]
pub struct ProjectiveChart {
    dim: usize,
    hbar: f64,
}

impl ProjectiveChart {
    pub fn new(dim: usize, hbar: f64) -> Result<Self> {
        if dim < 2 || !(hbar > 0.0) {
            return Err(Error::InvalidInput("projective chart needs dim >= 2 and positive hbar".into()));
        }
        Ok(Self { dim, hbar })
    }

    fn raw(&self, x: &[f64]) -> DVector<C64> {
        DVector::from_fn(self.dim, |k, _| if k == 0 { C64::new(1.0, 0.0) } else { C64::new(x[2 * k - 2], x[2 * k - 1]) })
    }
}

impl ManifoldChart for ProjectiveChart {
    fn name(&self) -> &str {
        "projective"
    }

    fn n_params(&self) -> usize {
        2 * (self.dim - 1)
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
        (0..self.n_params())
            .map(|p| {
                let mut du = DVector::zeros(self.dim);
                du[p / 2 + 1] = if p % 2 == 0 { C64::new(1.0, 0.0) } else { I };
                StateVector::from_dvector_unchecked(normalized_derivative(&u, &du))
            })
            .collect()
    }

    fn has_analytic_tangent(&self) -> bool {
        true
    }

    fn domain_hint(&self) -> Vec<(f64, f64)> {
        vec![(-2.0, 2.0); self.n_params()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::finite_difference_tangent;

    fn two_level(w: f64) -> CylinderModel {
        CylinderModel::new(vec![0.0, 2.0], vec![C64::new((1.0 - w).sqrt(), 0.0), C64::new(w.sqrt(), 0.0)], 1.0).unwrap()
    }

    #[test]
    fn frequency_from_gaps() {
        assert!((commensurate_frequency(&[0.0, 1.0, 3.0], 1.0).unwrap().unwrap() - 1.0).abs() < 1e-14);
        assert!((commensurate_frequency(&[0.5, 1.25, 2.0], 0.5).unwrap().unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(commensurate_frequency(&[1.0, 1.0], 1.0).unwrap(), None);
        assert!(matches!(
            commensurate_frequency(&[0.0, 1.0, 2f64.sqrt()], 1.0),
            Err(Error::IncommensurateSpectrum(_))
        ));
    }

    #[test]
    fn equal_superposition_orbit() {
        let m = two_level(0.5);
        let orbit = cylinder_orbit(&m, 65).unwrap();
        assert!((orbit.period - PI).abs() < 1e-14);
        assert!((orbit.total_phase - PI).abs() < 1e-12);
        assert!(orbit.closure_defect < 1e-7);
        assert!((orbit.samples.theta[64] - PI).abs() < 1e-12);
    }

    #[test]
    fn three_level_period() {
        let s = 1.0 / 3f64.sqrt();
        let m = CylinderModel::new(vec![0.0, 1.0, 3.0], vec![C64::new(s, 0.0), C64::new(0.0, s), C64::new(s, 0.0)], 1.0).unwrap();
        let orbit = cylinder_orbit(&m, 9).unwrap();
        assert!((orbit.period - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn eigenstate_has_no_orbit() {
        assert!(matches!(cylinder_orbit(&two_level(1.0), 9), Err(Error::NoClosureFound(_))));
    }

    #[test]
    fn projective_tangents() {
        let chart = ProjectiveChart::new(3, 1.0).unwrap();
        let x = [0.3, -0.2, 0.7, 0.1];
        let fd = finite_difference_tangent(&chart, &x);
        for (a, b) in chart.tangent(&x).iter().zip(&fd) {
            assert!(a.distance(b) < 1e-9);
        }
        let z = chart.embed(&x);
        let back = projective_coordinates(&z);
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
