//! Two-level pairing-type SU(2) model `eps J_z + (V/2)(J+^2 + J-^2)`.

use crate::error::{Error, Result};
use crate::hilbert::{HermitianOperator, C64};
use crate::models::spin::{SpinCoherentChart, SpinOperators};

#[derive(Debug, Clone)]
pub struct LipkinModel {
    pub j: f64,
    pub epsilon: f64,
    pub v: f64,
    pub hbar: f64,
    pub hamiltonian: HermitianOperator,
    pub spin: SpinOperators,
}

impl LipkinModel {
    pub fn new(j: f64, epsilon: f64, v: f64, hbar: f64) -> Result<Self> {
        if !(epsilon.is_finite() && v.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidInput("epsilon and V must be finite, hbar positive".into()));
        }
        let spin = SpinOperators::new(j)?;
        let pair = &spin.raising * &spin.raising + &spin.lowering * &spin.lowering;
        let h = &spin.jz * C64::new(epsilon, 0.0) + pair * C64::new(0.5 * v, 0.0);
        let hamiltonian = HermitianOperator::new(h)?;
        Ok(Self { j: spin.j, epsilon, v, hbar, hamiltonian, spin })
    }

    pub fn spin_coherent_chart(&self) -> Result<SpinCoherentChart> {
        SpinCoherentChart::new(self.j, self.hbar)
    }

    pub fn parity(&self) -> HermitianOperator {
        self.spin.parity()
    }

    /// Coupling at which the spherical minimum becomes unstable.
    pub fn critical_coupling(&self) -> f64 {
        self.epsilon.abs() / (2.0 * self.j - 1.0)
    }

    /// Small-amplitude frequency about the spherical minimum, `None` past the critical coupling.
    pub fn harmonic_frequency(&self) -> Option<f64> {
        let chi = (2.0 * self.j - 1.0) * self.v;
        let d = self.epsilon * self.epsilon - chi * chi;
        (d > 0.0).then(|| d.sqrt() / self.hbar)
    }

    /// `E_1 - E_0` from exact diagonalization.
    pub fn exact_gap(&self) -> f64 {
        let e = self.hamiltonian.spectral().eigenvalues();
        e[1] - e[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::hamilton_function;

    #[test]
    fn parity_is_conserved() {
        let m = LipkinModel::new(10.0, 1.0, 0.03, 1.0).unwrap();
        assert!(m.hamiltonian.commutator_norm(&m.parity()).unwrap() < 1e-12);
    }

    #[test]
    fn free_limit_gap() {
        let m = LipkinModel::new(4.5, 1.3, 0.0, 1.0).unwrap();
        assert!((m.exact_gap() - 1.3).abs() < 1e-12);
        assert_eq!(m.harmonic_frequency(), Some(1.3));
    }

    #[test]
    fn strong_coupling_has_two_degenerate_minima() {
        let m = LipkinModel::new(10.0, 1.0, 0.1, 1.0).unwrap();
        assert!(m.harmonic_frequency().is_none());
        let chart = m.spin_coherent_chart().unwrap();
        // deformed minima on the imaginary axis at cos(2r) = eps / (V (2j - 1))
        let r = (1.0f64 / (0.1 * 19.0)).acos() / 2.0;
        let up = hamilton_function(&chart, &m.hamiltonian, &[0.0, r]).unwrap();
        let down = hamilton_function(&chart, &m.hamiltonian, &[0.0, -r]).unwrap();
        let origin = hamilton_function(&chart, &m.hamiltonian, &[0.0, 0.0]).unwrap();
        assert!((up - down).abs() < 1e-12);
        assert!(up < origin - 1.0);
        for dx in [[1e-3, 0.0], [0.0, 1e-3], [-1e-3, 0.0], [0.0, -1e-3]] {
            let e = hamilton_function(&chart, &m.hamiltonian, &[dx[0], r + dx[1]]).unwrap();
            assert!(e > up);
        }
    }
}
