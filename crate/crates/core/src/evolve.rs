//! Spectral decomposition of sector blocks and closed-form propagation.
//!
//! Every sector Hamiltonian is time independent, so the density-matrix block
//! evolves exactly as `rho(t) = U e^{-i L tau} U^T rho0 U e^{i L tau} U^T`
//! with one eigendecomposition per sector and two matrix sandwiches per time
//! point; there is no time-step error anywhere. Decompositions are cached in
//! [`SpectralCache`] and reused across whole time grids and the averaging
//! quadrature.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::tridiagonal_eigen;
use crate::sectors::{build_sector, enumerate_sectors, Parity, Sector, SectorLabel};
use crate::system::SpinSystem;

/// Eigenvalues (ascending, carrying the coupling's units) and orthonormal
/// eigenvectors of one sector block, rows indexed like the sector's
/// projection basis.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub label: SectorLabel,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
    /// Coupling the sector was built with; propagation divides it back out
    /// so that time stays dimensionless.
    pub coupling: f64,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Density-matrix block of one sector in its projection basis, at a
/// dimensionless time `t`.
#[derive(Debug, Clone)]
pub struct SectorState {
    pub label: SectorLabel,
    pub matrix: Array2<Complex64>,
    pub time: f64,
}

impl SectorState {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Real part of the trace; exact traces are real for Hermitian states.
    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).sum()
    }
}

/// Diagonalize one sector block.
///
/// Deterministic for identical input: eigenvalues ascending, each
/// eigenvector's largest-magnitude component positive (ties broken by lowest
/// row index).
pub fn diagonalize(sector: &Sector) -> Result<SpectralDecomposition> {
    let diag = vec![0.0; sector.dim()];
    let (eigenvalues, eigenvectors) =
        tridiagonal_eigen(&diag, &sector.off_diagonal).map_err(|detail| {
            Error::Numerical(format!("sector {}: {detail}", sector.label))
        })?;
    Ok(SpectralDecomposition {
        label: sector.label,
        eigenvalues,
        eigenvectors,
        coupling: sector.coupling,
    })
}

/// The equilibrium-derived initial block: `rho(0)` is the restriction of
/// `I_z`, a diagonal matrix of the sector's projection values.
pub fn initial_state(sector: &Sector) -> SectorState {
    let d = sector.dim();
    let mut matrix = Array2::<Complex64>::zeros((d, d));
    for (i, m) in sector.m_values().enumerate() {
        matrix[(i, i)] = Complex64::new(m, 0.0);
    }
    SectorState {
        label: sector.label,
        matrix,
        time: 0.0,
    }
}

/// Evolve a sector state to dimensionless time `t` through the spectral
/// form. Hermiticity and trace are preserved to rounding.
pub fn propagate(
    decomp: &SpectralDecomposition,
    initial: &SectorState,
    t: f64,
) -> Result<SectorState> {
    if decomp.label != initial.label {
        return Err(Error::Contract(format!(
            "propagating state of sector {} with decomposition of {}",
            initial.label, decomp.label
        )));
    }
    if decomp.dim() != initial.dim() {
        return Err(Error::Contract(format!(
            "sector {}: state dim {} vs decomposition dim {}",
            initial.label,
            initial.dim(),
            decomp.dim()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite, got {t}")));
    }
    let d = decomp.dim();
    let u = &decomp.eigenvectors;

    // Work on real and imaginary parts separately so all matrix products are
    // real GEMMs.
    let mut rho_re = Array2::<f64>::zeros((d, d));
    let mut rho_im = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let v = initial.matrix[(i, j)];
            rho_re[(i, j)] = v.re;
            rho_im[(i, j)] = v.im;
        }
    }
    let w_re = u.t().dot(&rho_re).dot(u);
    let w_im = u.t().dot(&rho_im).dot(u);

    let (cos_t, sin_t) = phase_tables(&decomp.eigenvalues, t / decomp.coupling);
    let mut v_re = Array2::<f64>::zeros((d, d));
    let mut v_im = Array2::<f64>::zeros((d, d));
    for a in 0..d {
        for b in 0..d {
            // exp(-i w_ab tau) with w_ab = lambda_a - lambda_b, expanded via
            // per-eigenvalue phases.
            let pr = cos_t[a] * cos_t[b] + sin_t[a] * sin_t[b];
            let pi = cos_t[a] * sin_t[b] - sin_t[a] * cos_t[b];
            let (wr, wi) = (w_re[(a, b)], w_im[(a, b)]);
            v_re[(a, b)] = wr * pr - wi * pi;
            v_im[(a, b)] = wr * pi + wi * pr;
        }
    }
    let out_re = u.dot(&v_re).dot(&u.t());
    let out_im = u.dot(&v_im).dot(&u.t());
    let mut matrix = Array2::<Complex64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            matrix[(i, j)] = Complex64::new(out_re[(i, j)], out_im[(i, j)]);
        }
    }
    Ok(SectorState {
        label: initial.label,
        matrix,
        time: t,
    })
}

fn phase_tables(eigenvalues: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
    let mut cos_t = Vec::with_capacity(eigenvalues.len());
    let mut sin_t = Vec::with_capacity(eigenvalues.len());
    for &lambda in eigenvalues {
        let (s, c) = (lambda * tau).sin_cos();
        cos_t.push(c);
        sin_t.push(s);
    }
    (cos_t, sin_t)
}

/// Options controlling how a [`SpectralCache`] covers the sector list.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// For odd `N` the two parity subblocks of each `S` contribute equally,
    /// so one can be computed and its weight doubled. `None` enables the
    /// shortcut automatically for odd `N`.
    pub odd_doubling: Option<bool>,
    /// Drop the lightest sectors while their total (exactly conserved)
    /// contribution to the intensity sum stays below this bound. Zero keeps
    /// every sector.
    pub weight_truncation: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            odd_doubling: None,
            weight_truncation: 0.0,
        }
    }
}

/// One fully prepared sector: block, spectral data and the initial state
/// rotated into the eigenbasis, plus the normalized statistical weight.
#[derive(Debug, Clone)]
pub struct SectorData {
    pub sector: Sector,
    pub decomp: SpectralDecomposition,
    /// `U^T diag(m) U`: the initial block in the eigenbasis (real symmetric).
    pub initial_in_eigenbasis: Array2<f64>,
    /// `n_N(S) / Tr(I_z^2)` with the doubling factor folded in; combined in
    /// log space so that neither factor overflows before the ratio forms.
    pub scaled_weight: f64,
}

/// All spectral data of one `(N, D)` system, immutable after construction and
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    system: SpinSystem,
    sectors: Vec<SectorData>,
    doubled: bool,
    truncated_weight: f64,
}

impl SpectralCache {
    pub fn build(system: &SpinSystem, options: &EvolveOptions) -> Result<Self> {
        let doubled = options.odd_doubling.unwrap_or(system.is_odd());
        if doubled && !system.is_odd() {
            return Err(Error::Domain(
                "parity doubling is only valid for odd spin counts".into(),
            ));
        }
        let mut labels = enumerate_sectors(system);
        if doubled {
            labels.retain(|l| l.parity == Parity::Plus);
        }
        let log_norm = system.log_iz_norm();
        let factor = if doubled { 2.0 } else { 1.0 };

        // Weights and basis lists are cheap; compute them first so sectors can
        // be dropped before any eigensolve happens.
        let mut prepared: Vec<(SectorLabel, f64, f64)> = labels
            .iter()
            .map(|&label| {
                let sector = build_sector(system, label)?;
                let weight = factor * (sector.weight_log - log_norm).exp();
                let sum_m_sq: f64 = sector.m_values().map(|m| m * m).sum();
                // This sector's exact, time-independent share of the total
                // intensity sum.
                Ok((label, weight, weight * sum_m_sq))
            })
            .collect::<Result<_>>()?;

        let mut truncated_weight = 0.0;
        if options.weight_truncation > 0.0 {
            prepared.sort_by(|a, b| a.2.partial_cmp(&b.2).expect("non-finite weight"));
            let mut cumulative = 0.0;
            let mut keep_from = 0;
            for (i, &(_, _, share)) in prepared.iter().enumerate() {
                if cumulative + share > options.weight_truncation {
                    keep_from = i;
                    break;
                }
                cumulative += share;
                keep_from = i + 1;
            }
            truncated_weight = cumulative;
            prepared.drain(..keep_from);
            // Restore the deterministic descending-S, Plus-then-Minus order.
            prepared.sort_by_key(|(label, _, _)| {
                (std::cmp::Reverse(label.twice_spin), label.parity)
            });
        }

        let sectors: Vec<SectorData> = prepared
            .par_iter()
            .map(|&(label, weight, _)| {
                let sector = build_sector(system, label)?;
                let decomp = diagonalize(&sector)?;
                let d = sector.dim();
                let mut m_diag = Array2::<f64>::zeros((d, d));
                for (i, m) in sector.m_values().enumerate() {
                    m_diag[(i, i)] = m;
                }
                let u = &decomp.eigenvectors;
                let initial_in_eigenbasis = u.t().dot(&m_diag).dot(u);
                Ok(SectorData {
                    sector,
                    decomp,
                    initial_in_eigenbasis,
                    scaled_weight: weight,
                })
            })
            .collect::<Result<_>>()?;

        Ok(Self {
            system: *system,
            sectors,
            doubled,
            truncated_weight,
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn sectors(&self) -> &[SectorData] {
        &self.sectors
    }

    pub fn is_doubled(&self) -> bool {
        self.doubled
    }

    /// Total intensity share dropped by weight truncation (zero when every
    /// sector is kept).
    pub fn truncated_weight(&self) -> f64 {
        self.truncated_weight
    }

    /// Smallest positive eigenvalue over all cached sectors.
    ///
    /// Eigenvalues that are zero in exact arithmetic come back from the QL
    /// iteration as noise of order `eps * |lambda_max|`, so "positive" means
    /// above a relative floor rather than above zero.
    pub fn min_positive_eigenvalue(&self) -> Option<f64> {
        let all = || {
            self.sectors
                .iter()
                .flat_map(|s| s.decomp.eigenvalues.iter().cloned())
        };
        let max_abs = all().fold(0.0f64, |m, l| m.max(l.abs()));
        let floor = 1e-9 * max_abs;
        all().filter(|&l| l > floor).reduce(f64::min)
    }
}

/// Band magnitudes of one evolved sector at dimensionless time `t`:
/// `out[m] = sum_i |rho(i, i+m)|^2`, i.e. the unnormalized intensity of
/// coherence order `k = 2m` (its `-k` partner is equal by Hermiticity).
pub(crate) fn evolved_band_sums(data: &SectorData, t: f64, out: &mut Vec<f64>) {
    let d = data.sector.dim();
    let u = &data.decomp.eigenvectors;
    let w = &data.initial_in_eigenbasis;
    let tau = t / data.decomp.coupling;
    let (cos_t, sin_t) = phase_tables(&data.decomp.eigenvalues, tau);

    let mut v_re = Array2::<f64>::zeros((d, d));
    let mut v_im = Array2::<f64>::zeros((d, d));
    for a in 0..d {
        let (ca, sa) = (cos_t[a], sin_t[a]);
        for b in 0..d {
            let w_ab = w[(a, b)];
            v_re[(a, b)] = w_ab * (ca * cos_t[b] + sa * sin_t[b]);
            v_im[(a, b)] = w_ab * (ca * sin_t[b] - sa * cos_t[b]);
        }
    }
    let rho_re = u.dot(&v_re).dot(&u.t());
    let rho_im = u.dot(&v_im).dot(&u.t());

    out.clear();
    out.resize(d, 0.0);
    for m in 0..d {
        let mut acc = 0.0;
        for i in 0..d - m {
            let re = rho_re[(i, i + m)];
            let im = rho_im[(i, i + m)];
            acc += re * re + im * im;
        }
        out[m] = acc;
    }
}
