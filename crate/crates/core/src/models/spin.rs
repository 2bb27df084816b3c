//! Spin-j multiplet operators and the SU(2) coherent-state chart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{ComplexMatrix, HermitianOperator, StateVector, C64, I};
use crate::manifold::ManifoldChart;

/// Dimensionless spin matrices in the basis `|j, m>`, `m = -j, ..., j`
/// (index `k = j + m`).
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub j: f64,
    pub jz: ComplexMatrix,
    pub raising: ComplexMatrix,
    pub lowering: ComplexMatrix,
}

/// `2j` as an integer, rejecting anything that is not a positive half-integer.
pub fn twice_spin(j: f64) -> Result<usize> {
    let two_j = 2.0 * j;
    if !(two_j >= 1.0) || (two_j - two_j.round()).abs() > 1e-12 || two_j > 10_000.0 {
        return Err(Error::InvalidInput(format!("spin must be a positive half-integer, got {j}")));
    }
    Ok(two_j.round() as usize)
}

impl SpinOperators {
    pub fn new(j: f64) -> Result<Self> {
        let two_j = twice_spin(j)?;
        let d = two_j + 1;
        let j = two_j as f64 / 2.0;
        let m = |k: usize| k as f64 - j;
        let jz = DMatrix::from_fn(d, d, |r, c| if r == c { C64::new(m(c), 0.0) } else { C64::new(0.0, 0.0) });
        let raising = DMatrix::from_fn(d, d, |r, c| {
            if r == c + 1 {
                C64::new((j * (j + 1.0) - m(c) * (m(c) + 1.0)).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let lowering = raising.adjoint();
        Ok(Self { j, jz, raising, lowering })
    }

    pub fn dim(&self) -> usize {
        self.jz.nrows()
    }

    /// `scale * J_z`.
    pub fn jz_operator(&self, scale: f64) -> HermitianOperator {
        HermitianOperator::new(&self.jz * C64::new(scale, 0.0)).expect("J_z is Hermitian")
    }

    pub fn jx_operator(&self, scale: f64) -> HermitianOperator {
        HermitianOperator::new((&self.raising + &self.lowering) * C64::new(0.5 * scale, 0.0)).expect("J_x is Hermitian")
    }

    pub fn jy_operator(&self, scale: f64) -> HermitianOperator {
        HermitianOperator::new((&self.raising - &self.lowering) * C64::new(0.0, -0.5 * scale)).expect("J_y is Hermitian")
    }

    /// `exp(i pi (J_z + j))`, diagonal `(-1)^k`.
    pub fn parity(&self) -> HermitianOperator {
        let diag: Vec<f64> = (0..self.dim()).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        HermitianOperator::from_real_diagonal(&diag).expect("diagonal is Hermitian")
    }

    /// `|j, m>`.
    pub fn state(&self, m: f64) -> Result<StateVector> {
        let k = m + self.j;
        if (k - k.round()).abs() > 1e-12 || k < -1e-12 || k.round() as usize >= self.dim() {
            return Err(Error::InvalidInput(format!("m = {m} is not in the spin-{} multiplet", self.j)));
        }
        StateVector::basis(self.dim(), k.round() as usize)
    }
}

/// `exp(A)` for anti-Hermitian `A`, through the spectral decomposition of `iA`.
pub fn unitary_exp(anti_hermitian: &ComplexMatrix) -> Result<ComplexMatrix> {
    let k = HermitianOperator::new(anti_hermitian * I)?;
    let spec = k.spectral();
    let d = anti_hermitian.nrows();
    let mut out = DMatrix::zeros(d, d);
    for c in 0..d {
        let col = spec.apply_function(&StateVector::basis(d, c)?, |e| C64::from_polar(1.0, -e))?;
        out.set_column(c, col.amplitudes());
    }
    Ok(out)
}

/// `|Z(zeta)> = U0 exp(zeta J+ - zeta* J-)|j,-j>` with parameters `(Re zeta, Im zeta)`;
/// `U0` is the identity unless the chart was re-centred. The polar angle of
/// the coherent state is `2|zeta|`, so the antipode sits at `|zeta| = pi/2`.
#[derive(Debug, Clone)]
pub struct SpinCoherentChart {
    two_j: usize,
    hbar: f64,
    binom_sqrt: Vec<f64>,
    center: Option<ComplexMatrix>,
    ops: SpinOperators,
}

fn sqrt_binomials(n: usize) -> Vec<f64> {
    let mut c = vec![1.0f64; n + 1];
    for k in 1..=n {
        c[k] = c[k - 1] * (n + 1 - k) as f64 / k as f64;
    }
    c.into_iter().map(f64::sqrt).collect()
}

/// `sin(r)/r` and `(r cos r - sin r)/r^3`, with series near zero.
fn radial_factors(r: f64) -> (f64, f64) {
    let r2 = r * r;
    if r < 1e-3 {
        (1.0 - r2 / 6.0 + r2 * r2 / 120.0, -1.0 / 3.0 + r2 / 30.0 - r2 * r2 / 840.0)
    } else {
        (r.sin() / r, (r * r.cos() - r.sin()) / (r2 * r))
    }
}

impl SpinCoherentChart {
    pub fn new(j: f64, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0) {
            return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        let ops = SpinOperators::new(j)?;
        let two_j = twice_spin(j)?;
        Ok(Self { two_j, hbar, binom_sqrt: sqrt_binomials(two_j), center: None, ops })
    }

    /// Same manifold with the origin moved to `zeta0`.
    pub fn recentered(&self, x0: &[f64]) -> Result<Self> {
        if x0.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: x0.len() });
        }
        let zeta = C64::new(x0[0], x0[1]);
        let gen = &self.ops.raising * zeta - &self.ops.lowering * zeta.conj();
        let u = unitary_exp(&gen)?;
        let center = match &self.center {
            Some(c) => c * u,
            None => u,
        };
        Ok(Self { center: Some(center), ..self.clone() })
    }

    pub fn spin(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    pub fn operators(&self) -> &SpinOperators {
        &self.ops
    }

    fn amplitudes(&self, x: &[f64]) -> DVector<C64> {
        let zeta = C64::new(x[0], x[1]);
        let r = zeta.norm();
        let (s, _) = radial_factors(r);
        let c = r.cos();
        let n = self.two_j;
        DVector::from_fn(n + 1, |k, _| {
            let a = (n - k) as i32;
            let k = k as i32;
            zeta.powi(k) * (self.binom_sqrt[k as usize] * c.powi(a) * s.powi(k))
        })
    }

    fn apply_center(&self, v: DVector<C64>) -> StateVector {
        match &self.center {
            Some(u) => StateVector::from_dvector_unchecked(u * v),
            None => StateVector::from_dvector_unchecked(v),
        }
    }
}

impl ManifoldChart for SpinCoherentChart {
    fn name(&self) -> &str {
        "spin-coherent"
    }

    fn n_params(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.two_j + 1
    }

    fn hbar(&self) -> f64 {
        self.hbar
    }

    fn embed(&self, x: &[f64]) -> StateVector {
        self.apply_center(self.amplitudes(x))
    }

    fn tangent(&self, x: &[f64]) -> Vec<StateVector> {
        let zeta = C64::new(x[0], x[1]);
        let r = zeta.norm();
        let (s, q) = radial_factors(r);
        let c = r.cos();
        let n = self.two_j;
        let mut dx = DVector::zeros(n + 1);
        let mut dy = DVector::zeros(n + 1);
        for idx in 0..=n {
            let a = (n - idx) as i32;
            let k = idx as i32;
            let f = c.powi(a) * s.powi(k);
            // df/d(r^2)
            let mut fp = 0.0;
            if a > 0 {
                fp -= 0.5 * a as f64 * c.powi(a - 1) * s.powi(k + 1);
            }
            if k > 0 {
                fp += 0.5 * k as f64 * c.powi(a) * s.powi(k - 1) * q;
            }
            let zk = zeta.powi(k);
            let zk1 = if k > 0 { zeta.powi(k - 1) * k as f64 } else { C64::new(0.0, 0.0) };
            let b = self.binom_sqrt[idx];
            dx[idx] = (zk * (2.0 * x[0] * fp) + zk1 * f) * b;
            dy[idx] = (zk * (2.0 * x[1] * fp) + zk1 * I * f) * b;
        }
        vec![self.apply_center(dx), self.apply_center(dy)]
    }

    fn has_analytic_tangent(&self) -> bool {
        true
    }

    fn domain_hint(&self) -> Vec<(f64, f64)> {
        vec![(-1.5, 1.5); 2]
    }

    fn origin_generators(&self) -> Option<Vec<ComplexMatrix>> {
        let gx = &self.ops.raising - &self.ops.lowering;
        let gy = (&self.ops.raising + &self.ops.lowering) * I;
        Some(match &self.center {
            Some(u) => vec![u * gx * u.adjoint(), u * gy * u.adjoint()],
            None => vec![gx, gy],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{connection_curl, finite_difference_tangent, symplectic_form};

    #[test]
    fn rejects_non_half_integer_spin() {
        assert!(SpinOperators::new(0.3).is_err());
        assert!(SpinOperators::new(0.0).is_err());
        assert_eq!(SpinOperators::new(1.5).unwrap().dim(), 4);
    }

    #[test]
    fn su2_commutation() {
        let s = SpinOperators::new(2.5).unwrap();
        let comm = &s.raising * &s.lowering - &s.lowering * &s.raising;
        assert!((comm - &s.jz * C64::new(2.0, 0.0)).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn origin_is_lowest_weight() {
        let chart = SpinCoherentChart::new(2.0, 1.0).unwrap();
        let low = chart.operators().state(-2.0).unwrap();
        assert!(chart.embed(&[0.0, 0.0]).distance(&low) < 1e-15);
    }

    #[test]
    fn closed_form_matches_matrix_exponential() {
        let chart = SpinCoherentChart::new(1.5, 1.0).unwrap();
        let ops = chart.operators();
        for x in [[0.3, -0.2], [1.1, 0.4], [-0.05, 1e-5]] {
            let zeta = C64::new(x[0], x[1]);
            let u = unitary_exp(&(&ops.raising * zeta - &ops.lowering * zeta.conj())).unwrap();
            let exact = StateVector::from_dvector_unchecked(u.column(0).into_owned());
            assert!(chart.embed(&x).distance(&exact) < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn jz_expectation_follows_polar_angle() {
        let hbar = 0.7;
        let chart = SpinCoherentChart::new(3.0, hbar).unwrap();
        let jz = chart.operators().jz_operator(hbar);
        for x in [[0.2f64, 0.1], [0.5, -0.6], [1.0, 0.9]] {
            let theta = 2.0 * (x[0] * x[0] + x[1] * x[1]).sqrt();
            let e = jz.expectation(&chart.embed(&x)).unwrap();
            assert!((e + 3.0 * hbar * theta.cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_tangents_match_finite_differences() {
        let chart = SpinCoherentChart::new(2.5, 1.0).unwrap();
        for x in [[0.0, 0.0], [1e-4, -2e-4], [0.4, 0.7], [-1.0, 0.3]] {
            let fd = finite_difference_tangent(&chart, &x);
            for (a, b) in chart.tangent(&x).iter().zip(&fd) {
                assert!(a.distance(b) < 1e-8, "{x:?}: {}", a.distance(b));
            }
        }
    }

    #[test]
    fn origin_form_is_frozen() {
        // omega_xy(0) = 2 j hbar
        let chart = SpinCoherentChart::new(10.0, 1.0).unwrap();
        let w = symplectic_form(&chart, &[0.0, 0.0]).unwrap();
        assert!((w.get(0, 1) - 20.0).abs() < 1e-12);
        let curl = connection_curl(&chart, &[0.2, -0.3], 1e-4).unwrap();
        let w = symplectic_form(&chart, &[0.2, -0.3]).unwrap();
        assert!((curl[(0, 1)] - 2.0 * w.get(0, 1)).abs() < 1e-5);
    }

    #[test]
    fn antipode_is_degenerate() {
        let chart = SpinCoherentChart::new(1.0, 1.0).unwrap();
        let pole = std::f64::consts::FRAC_PI_2;
        assert!(matches!(symplectic_form(&chart, &[pole, 0.0]), Err(Error::NonSymplecticPoint { .. })));
    }

    #[test]
    fn recentered_chart_origin() {
        let chart = SpinCoherentChart::new(2.0, 1.0).unwrap();
        let moved = chart.recentered(&[0.3, -0.1]).unwrap();
        assert!(moved.embed(&[0.0, 0.0]).distance(&chart.embed(&[0.3, -0.1])) < 1e-12);
        let z = moved.embed(&[0.0, 0.0]);
        let gens = moved.origin_generators().unwrap();
        for (g, t) in gens.iter().zip(moved.tangent(&[0.0, 0.0])) {
            let gz = StateVector::from_dvector_unchecked(g * z.amplitudes());
            assert!(gz.distance(&t) < 1e-12);
        }
    }
}
