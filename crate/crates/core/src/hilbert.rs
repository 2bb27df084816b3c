//! Finite-dimensional Hilbert space arithmetic.
//!
//! States are dense complex vectors, observables are dense Hermitian
//! matrices with a lazily computed (and cached) spectral decomposition.
//! Everything else in the crate is validated against exact propagation
//! through this layer.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// General (not necessarily Hermitian) dense complex matrix.
pub type ComplexMatrix = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerance on `|<psi|psi> - 1|` for a state to count as normalized.
pub const NORM_TOL: f64 = 1e-12;
/// Relative anti-Hermitian part silently removed by symmetrization.
const HERMITICITY_WARN: f64 = 1e-12;
/// Relative anti-Hermitian part beyond which construction is refused.
const HERMITICITY_REJECT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub hbar: f64,
}

impl PhysicalConstants {
    pub fn new(hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        Ok(Self { hbar })
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { hbar: 1.0 }
    }
}

/// Row-major complex array document, `{"dim": D, "re": [...], "im": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexArrayDoc {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// A vector `|psi>` of fixed dimension.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexArrayDoc", into = "ComplexArrayDoc")]
pub struct StateVector {
    amps: DVector<C64>,
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.amps.iter()).finish()
    }
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        Self::from_dvector(DVector::from_vec(amps))
    }

    pub fn from_dvector(amps: DVector<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::InvalidInput("state dimension must be at least 1".into()));
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidInput("state amplitudes must be finite".into()));
        }
        Ok(Self { amps })
    }

    pub(crate) fn from_dvector_unchecked(amps: DVector<C64>) -> Self {
        Self { amps }
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    /// Basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidInput(format!("basis index {k} out of range for dimension {dim}")));
        }
        let mut amps = DVector::zeros(dim);
        amps[k] = C64::new(1.0, 0.0);
        Ok(Self { amps })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { amps: DVector::zeros(dim.max(1)) }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn as_slice(&self) -> &[C64] {
        self.amps.as_slice()
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn is_normalized(&self) -> bool {
        (self.amps.norm_squared() - 1.0).abs() <= NORM_TOL
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        Ok(Self { amps: &self.amps / C64::new(n, 0.0) })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { amps: &self.amps * c }
    }

    /// Euclidean distance `||a - b||`.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.amps - &other.amps).norm()
    }

    /// Distance after removing the relative global phase, `min_phi ||a - e^{i phi} b||`.
    pub fn phase_aligned_distance(&self, other: &Self) -> f64 {
        let ov = self.amps.dotc(&other.amps);
        let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { C64::new(1.0, 0.0) };
        (&self.amps - &other.amps * phase.conj()).norm()
    }

    pub(crate) fn axpy(&mut self, a: C64, x: &Self) {
        self.amps.axpy(a, &x.amps, C64::new(1.0, 0.0));
    }
}

impl Add for &StateVector {
    type Output = StateVector;
    fn add(self, rhs: &StateVector) -> StateVector {
        StateVector { amps: &self.amps + &rhs.amps }
    }
}

impl Sub for &StateVector {
    type Output = StateVector;
    fn sub(self, rhs: &StateVector) -> StateVector {
        StateVector { amps: &self.amps - &rhs.amps }
    }
}

impl Mul<C64> for &StateVector {
    type Output = StateVector;
    fn mul(self, rhs: C64) -> StateVector {
        self.scale(rhs)
    }
}

impl From<StateVector> for ComplexArrayDoc {
    fn from(s: StateVector) -> Self {
        ComplexArrayDoc {
            dim: s.dim(),
            re: s.amps.iter().map(|a| a.re).collect(),
            im: s.amps.iter().map(|a| a.im).collect(),
        }
    }
}

impl TryFrom<ComplexArrayDoc> for StateVector {
    type Error = Error;
    fn try_from(doc: ComplexArrayDoc) -> Result<Self> {
        if doc.re.len() != doc.dim || doc.im.len() != doc.dim {
            return Err(Error::DimensionMismatch { expected: doc.dim, got: doc.re.len().max(doc.im.len()) });
        }
        StateVector::new(doc.re.iter().zip(&doc.im).map(|(&r, &i)| C64::new(r, i)).collect())
    }
}

/// `<a|b>`, antilinear in the first argument.
pub fn inner(a: &StateVector, b: &StateVector) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(a.amps.dotc(&b.amps))
}

/// Fubini-Study chordal distance `sqrt(1 - |<a|b>|^2)` between normalized states.
pub fn projective_distance(a: &StateVector, b: &StateVector) -> f64 {
    let ov = a.amps.dotc(&b.amps).norm_sqr();
    (1.0 - ov).max(0.0).sqrt()
}

/// Dense Hermitian operator with a cached spectral decomposition.
#[derive(Serialize, Deserialize)]
#[serde(try_from = "ComplexArrayDoc", into = "ComplexArrayDoc")]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
    spectrum: OnceLock<SpectralDecomposition>,
}

impl Clone for HermitianOperator {
    fn clone(&self) -> Self {
        let spectrum = OnceLock::new();
        if let Some(s) = self.spectrum.get() {
            let _ = spectrum.set(s.clone());
        }
        Self { matrix: self.matrix.clone(), spectrum }
    }
}

impl fmt::Debug for HermitianOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianOperator").field("dim", &self.dim()).finish()
    }
}

fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

impl HermitianOperator {
    /// Symmetrizes `(A + A^dagger)/2`. Rounding-level asymmetry is corrected
    /// with a warning; a genuinely non-Hermitian input is rejected.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "operator must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("operator entries must be finite".into()));
        }
        let adj = matrix.adjoint();
        let scale = max_abs(&matrix);
        let defect = if scale > 0.0 { max_abs(&(&matrix - &adj)) / scale } else { 0.0 };
        if defect > HERMITICITY_REJECT {
            return Err(Error::NonHermitian(defect));
        }
        if defect > HERMITICITY_WARN {
            log::warn!("symmetrizing operator with relative anti-Hermitian part {defect:e}");
        }
        let sym = (&matrix + &adj) * C64::new(0.5, 0.0);
        Ok(Self { matrix: sym, spectrum: OnceLock::new() })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| C64::new(x, 0.0)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim), spectrum: OnceLock::new() }
    }

    pub fn zero(dim: usize) -> Self {
        Self { matrix: DMatrix::zeros(dim, dim), spectrum: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: d });
        }
        Ok(())
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        self.check_dim(psi.dim())?;
        Ok(StateVector { amps: &self.matrix * &psi.amps })
    }

    /// `<a|A|b>`.
    pub fn matrix_element(&self, a: &StateVector, b: &StateVector) -> Result<C64> {
        self.check_dim(a.dim())?;
        self.check_dim(b.dim())?;
        Ok(a.amps.dotc(&(&self.matrix * &b.amps)))
    }

    /// `<psi|A|psi>` (real part; the imaginary part is rounding noise).
    pub fn expectation(&self, psi: &StateVector) -> Result<f64> {
        Ok(self.matrix_element(psi, psi)?.re)
    }

    /// `a*A + b*B`.
    pub fn combine(&self, a: f64, other: &HermitianOperator, b: f64) -> Result<HermitianOperator> {
        self.check_dim(other.dim())?;
        Ok(Self {
            matrix: &self.matrix * C64::new(a, 0.0) + &other.matrix * C64::new(b, 0.0),
            spectrum: OnceLock::new(),
        })
    }

    /// Max-entry norm of `[A, B]`.
    pub fn commutator_norm(&self, other: &HermitianOperator) -> Result<f64> {
        self.check_dim(other.dim())?;
        Ok(max_abs(&(&self.matrix * &other.matrix - &other.matrix * &self.matrix)))
    }

    pub fn max_entry(&self) -> f64 {
        max_abs(&self.matrix)
    }

    /// Spectral decomposition, computed once and shared between threads.
    pub fn spectral(&self) -> &SpectralDecomposition {
        self.spectrum.get_or_init(|| SpectralDecomposition::compute(&self.matrix))
    }
}

impl From<HermitianOperator> for ComplexArrayDoc {
    fn from(op: HermitianOperator) -> Self {
        let d = op.dim();
        let mut re = Vec::with_capacity(d * d);
        let mut im = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                re.push(op.matrix[(r, c)].re);
                im.push(op.matrix[(r, c)].im);
            }
        }
        ComplexArrayDoc { dim: d, re, im }
    }
}

impl TryFrom<ComplexArrayDoc> for HermitianOperator {
    type Error = Error;
    fn try_from(doc: ComplexArrayDoc) -> Result<Self> {
        let n = doc.dim * doc.dim;
        if doc.re.len() != n || doc.im.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: doc.re.len().max(doc.im.len()) });
        }
        let m = DMatrix::from_row_iterator(doc.dim, doc.dim, doc.re.iter().zip(&doc.im).map(|(&r, &i)| C64::new(r, i)));
        HermitianOperator::new(m)
    }
}

/// Eigenvalues (ascending) with orthonormal eigenvectors. Each eigenvector
/// is phase-fixed so that its largest component is real and positive.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    vectors: ComplexMatrix,
}

impl SpectralDecomposition {
    pub fn compute(matrix: &ComplexMatrix) -> Self {
        let eig = matrix.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let d = matrix.nrows();
        let mut vectors = DMatrix::zeros(d, d);
        let mut eigenvalues = Vec::with_capacity(d);
        for (col, &k) in order.iter().enumerate() {
            eigenvalues.push(eig.eigenvalues[k]);
            let v = eig.eigenvectors.column(k);
            let (imax, _) = v.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, z)| {
                if z.norm() > bv + 1e-12 { (i, z.norm()) } else { (bi, bv) }
            });
            let ph = v[imax] / v[imax].norm();
            let v = v / ph;
            let v = &v / C64::new(v.norm(), 0.0);
            vectors.set_column(col, &v);
        }
        Self { eigenvalues, vectors }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> StateVector {
        StateVector { amps: self.vectors.column(k).into_owned() }
    }

    pub fn eigenvectors(&self) -> Vec<StateVector> {
        (0..self.dim()).map(|k| self.eigenvector(k)).collect()
    }

    /// Spectral span `E_max - E_min`.
    pub fn span(&self) -> f64 {
        self.eigenvalues.last().unwrap_or(&0.0) - self.eigenvalues.first().unwrap_or(&0.0)
    }

    /// Default degeneracy tolerance, `1e-8` times the spectral span (or the
    /// largest eigenvalue magnitude for a flat spectrum).
    pub fn default_tolerance(&self) -> f64 {
        let scale = if self.span() > 0.0 {
            self.span()
        } else {
            self.eigenvalues.iter().fold(1.0f64, |a, e| a.max(e.abs()))
        };
        1e-8 * scale
    }

    /// Coefficients `<v_k|psi>`.
    pub fn coefficients(&self, psi: &StateVector) -> Result<DVector<C64>> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: psi.dim() });
        }
        Ok(self.vectors.adjoint() * &psi.amps)
    }

    /// `sum_k f(E_k) |v_k><v_k|psi>`.
    pub fn apply_function<F: Fn(f64) -> C64>(&self, psi: &StateVector, f: F) -> Result<StateVector> {
        let mut c = self.coefficients(psi)?;
        for (ck, &e) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= f(e);
        }
        Ok(StateVector { amps: &self.vectors * c })
    }

    /// `sum_k E_k |v_k><v_k|`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&e| C64::new(e, 0.0)));
        &self.vectors * DMatrix::from_diagonal(&d) * self.vectors.adjoint()
    }
}

/// `exp(-i H t / hbar) |psi0>` through the cached spectral decomposition.
pub fn propagate(h: &HermitianOperator, psi0: &StateVector, t: f64, hbar: f64) -> Result<StateVector> {
    if !(hbar > 0.0) {
        return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
    }
    h.spectral().apply_function(psi0, |e| C64::from_polar(1.0, -e * t / hbar))
}

/// Projector onto the eigenspaces with `|E_k - energy| <= tol`. An empty
/// selection yields the zero operator.
pub fn spectral_projector(spec: &SpectralDecomposition, energy: f64, tol: f64) -> Result<HermitianOperator> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("projector tolerance must be positive, got {tol}")));
    }
    let d = spec.dim();
    let mut m = DMatrix::zeros(d, d);
    for (k, &e) in spec.eigenvalues().iter().enumerate() {
        if (e - energy).abs() <= tol {
            let v = spec.vectors.column(k);
            m += v * v.adjoint();
        }
    }
    Ok(HermitianOperator { matrix: m, spectrum: OnceLock::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_hermitian(d: usize, seed: &[f64]) -> HermitianOperator {
        let mut m = DMatrix::zeros(d, d);
        let mut k = 0;
        for r in 0..d {
            for col in r..d {
                let a = seed[k % seed.len()] * (1.0 + k as f64).sin();
                let b = if r == col { 0.0 } else { seed[(k + 1) % seed.len()] * (2.0 + k as f64).cos() };
                m[(r, col)] = c(a, b);
                m[(col, r)] = c(a, -b);
                k += 1;
            }
        }
        HermitianOperator::new(m).unwrap()
    }

    #[test]
    fn inner_basis_cases() {
        let e0 = StateVector::basis(2, 0).unwrap();
        let e1 = StateVector::basis(2, 1).unwrap();
        assert_eq!(inner(&e0, &e0).unwrap(), c(1.0, 0.0));
        assert_eq!(inner(&e0, &e1).unwrap(), c(0.0, 0.0));
        let s = 1.0 / 2f64.sqrt();
        let psi = StateVector::new(vec![c(s, 0.0), c(0.0, s)]).unwrap();
        let v = inner(&psi, &e1).unwrap();
        assert!((v - c(0.0, -s)).norm() < 1e-15);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = StateVector::basis(2, 0).unwrap();
        let b = StateVector::basis(3, 0).unwrap();
        assert!(matches!(inner(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn state_rejects_nonfinite_and_empty() {
        assert!(StateVector::new(vec![]).is_err());
        assert!(StateVector::new(vec![c(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn propagate_eigenstate_and_zero_time() {
        let h = random_hermitian(4, &[0.3, -1.2, 0.7, 2.0, 0.1]);
        let spec = h.spectral();
        let v = spec.eigenvector(2);
        let e = spec.eigenvalues()[2];
        let out = propagate(&h, &v, 1.7, 1.0).unwrap();
        let expect = v.scale(C64::from_polar(1.0, -e * 1.7));
        assert!(out.distance(&expect) < 1e-12);
        let psi = StateVector::from_real(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(propagate(&h, &psi, 0.0, 1.0).unwrap().distance(&psi) < 1e-13);
    }

    #[test]
    fn two_level_period_closes() {
        let de = 0.8;
        let hbar = 1.3;
        let h = HermitianOperator::from_real_diagonal(&[0.0, de]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let psi = StateVector::from_real(&[s, s]).unwrap();
        let t = 2.0 * std::f64::consts::PI * hbar / de;
        let out = propagate(&h, &psi, t, hbar).unwrap();
        assert!(out.distance(&psi) < 1e-12);
        // direct matrix exponential of the diagonal generator
        let direct = StateVector::new(vec![c(s, 0.0), C64::from_polar(s, -de * t / hbar)]).unwrap();
        assert!(out.distance(&direct) < 1e-12);
    }

    #[test]
    fn projector_cases() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 1.0, 3.0]).unwrap();
        let spec = h.spectral();
        let p = spectral_projector(spec, 10.0, 1e-8).unwrap();
        assert_eq!(p.max_entry(), 0.0);
        let p = spectral_projector(spec, 3.0, 1e-8).unwrap();
        assert!((p.matrix()[(3, 3)].re - 1.0).abs() < 1e-12);
        assert!((p.matrix().trace().re - 1.0).abs() < 1e-12);
        // repeated eigenvalue in a rotated basis
        let u = {
            let s = 1.0 / 2f64.sqrt();
            let mut u = DMatrix::identity(4, 4);
            u[(0, 0)] = c(s, 0.0);
            u[(0, 2)] = c(0.0, s);
            u[(2, 0)] = c(0.0, s);
            u[(2, 2)] = c(s, 0.0);
            u
        };
        let rotated = HermitianOperator::new(&u * h.matrix() * u.adjoint()).unwrap();
        let spec = rotated.spectral();
        let p = spectral_projector(spec, 1.0, spec.default_tolerance()).unwrap();
        assert!((p.matrix().trace().re - 2.0).abs() < 1e-10);
        let p2 = p.matrix() * p.matrix();
        assert!(max_abs(&(p2 - p.matrix())) < 1e-10);
        assert!(spectral_projector(spec, 1.0, 0.0).is_err());
    }

    #[test]
    fn nonhermitian_rejected_and_rounding_symmetrized() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(HermitianOperator::new(m.clone()), Err(Error::NonHermitian(_))));
        m[(1, 0)] = c(1.0 + 1e-14, 0.0);
        let h = HermitianOperator::new(m).unwrap();
        assert_eq!(h.matrix()[(0, 1)], h.matrix()[(1, 0)].conj());
    }

    #[test]
    fn json_layout_is_row_major() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 2.0);
        m[(1, 0)] = c(1.0, -2.0);
        let h = HermitianOperator::new(m).unwrap();
        let v = serde_json::to_value(&h).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["re"], serde_json::json!([0.0, 1.0, 1.0, 0.0]));
        assert_eq!(v["im"], serde_json::json!([0.0, 2.0, -2.0, 0.0]));
        let back: HermitianOperator = serde_json::from_value(v).unwrap();
        assert_eq!(back.matrix(), h.matrix());
        let bad = serde_json::json!({"dim": 2, "re": [1.0], "im": [0.0]});
        assert!(serde_json::from_value::<HermitianOperator>(bad).is_err());
        let s: StateVector = serde_json::from_str(r#"{"dim":2,"re":[1,0],"im":[0,1]}"#).unwrap();
        assert_eq!(s.as_slice()[1], c(0.0, 1.0));
    }

    proptest! {
        #[test]
        fn unitarity_composition_and_resolution(
            seed in proptest::collection::vec(-2.0f64..2.0, 8..20),
            amps in proptest::collection::vec(-1.0f64..1.0, 10),
            t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
        ) {
            let d = 5;
            let h = random_hermitian(d, &seed);
            let scale = h.max_entry().max(1e-3);
            let psi = StateVector::new((0..d).map(|k| c(amps[2 * k], amps[2 * k + 1] + 1e-3)).collect()).unwrap()
                .normalized().unwrap();
            let tmax = 100.0 / scale;
            let out = propagate(&h, &psi, t1 * tmax, 1.0).unwrap();
            prop_assert!((out.norm() - 1.0).abs() <= 1e-10);
            let two = propagate(&h, &out, t2 * tmax, 1.0).unwrap();
            let once = propagate(&h, &psi, (t1 + t2) * tmax, 1.0).unwrap();
            prop_assert!(two.distance(&once) <= 1e-9);
            let spec = h.spectral();
            prop_assert!(max_abs(&(spec.reconstruct() - h.matrix())) <= 1e-10 * scale.max(1.0));
            for k in 0..d {
                let v = spec.eigenvector(k);
                let hv = h.apply(&v).unwrap();
                let res = hv.distance(&v.scale(c(spec.eigenvalues()[k], 0.0)));
                prop_assert!(res <= 1e-10 * (1.0 + spec.eigenvalues()[k].abs()));
                for l in 0..d {
                    let ov = inner(&v, &spec.eigenvector(l)).unwrap();
                    let delta = if k == l { 1.0 } else { 0.0 };
                    prop_assert!((ov - c(delta, 0.0)).norm() <= 1e-10);
                }
            }
        }
    }
}
