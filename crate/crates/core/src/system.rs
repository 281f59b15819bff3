//! Physical description of the simulated ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ensemble of `N` spin-1/2 particles, every pair coupled by the same
/// motionally averaged dipolar constant `D`.
///
/// All user-facing time is the dimensionless `t = D * tau`, so coherence
/// intensities depend on `t` only; the coupling sets the scale of the
/// Hamiltonian eigenvalues and nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    n_spins: u32,
    coupling: f64,
}

impl SpinSystem {
    /// Create a system of `n_spins >= 2` particles with nonzero coupling.
    pub fn new(n_spins: u32, coupling: f64) -> Result<Self> {
        if n_spins < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 spins, got {n_spins}"
            )));
        }
        if coupling == 0.0 || !coupling.is_finite() {
            return Err(Error::Domain(format!(
                "coupling must be finite and nonzero, got {coupling}"
            )));
        }
        Ok(Self { n_spins, coupling })
    }

    /// Convenience constructor with the default coupling `D = 1`.
    pub fn with_unit_coupling(n_spins: u32) -> Result<Self> {
        Self::new(n_spins, 1.0)
    }

    pub fn n_spins(&self) -> u32 {
        self.n_spins
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn is_odd(&self) -> bool {
        self.n_spins % 2 == 1
    }

    /// `ln Tr(I_z^2) = ln(N * 2^N / 4)`, the normalization of coherence
    /// intensities, kept in log form so it never overflows.
    pub fn log_iz_norm(&self) -> f64 {
        let n = f64::from(self.n_spins);
        n.ln() + f64::from(self.n_spins) * std::f64::consts::LN_2 - 4.0f64.ln()
    }
}
