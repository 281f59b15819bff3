//! Coherence-order decomposition and observable intensities.
//!
//! A density-matrix element `<M|rho|M'>` belongs to the coherence of order
//! `k = M - M'`. With the sector basis ordered by descending projection, the
//! element `(i, j)` carries order `2(j - i)`: upper-triangle bands hold the
//! positive orders and Hermiticity makes `J_k = J_{-k}` automatic, so only
//! `k >= 0` is ever accumulated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{evolved_band_sums, EvolveOptions, SectorState, SpectralCache};
use crate::sectors::{enumerate_sectors, multiplicity_log, Sector, SectorLabel};
use crate::system::SpinSystem;

/// Threshold below which a negative intensity is considered rounding noise.
pub const CLAMP_GUARD: f64 = 1e-14;

/// Normalized coherence intensities at one dimensionless time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSpectrum {
    pub time: f64,
    /// Map from even order `k` (both signs, `|k| <= N`) to `J_k >= 0`.
    pub intensities: BTreeMap<i32, f64>,
    /// Largest negative value that was clamped to zero, reported as a
    /// magnitude; analytically every intensity is nonnegative.
    pub clamped_magnitude: f64,
}

impl CoherenceSpectrum {
    /// Build a spectrum from per-order values for `k = 0, 2, 4, ...`
    /// (index `m` holds order `2m`), mirroring onto negative orders and
    /// clamping rounding noise.
    pub fn from_nonnegative_orders(time: f64, values: &[f64]) -> Self {
        let mut intensities = BTreeMap::new();
        let mut clamped = 0.0f64;
        for (m, &v) in values.iter().enumerate() {
            let v = if v < 0.0 {
                clamped = clamped.max(-v);
                0.0
            } else {
                v
            };
            let k = 2 * m as i32;
            intensities.insert(k, v);
            if k > 0 {
                intensities.insert(-k, v);
            }
        }
        Self {
            time,
            intensities,
            clamped_magnitude: clamped,
        }
    }

    /// `J_k`, zero for orders outside the stored support (odd orders are
    /// never generated at all).
    pub fn intensity(&self, order: i32) -> f64 {
        self.intensities.get(&order).copied().unwrap_or(0.0)
    }

    /// Sum over all orders; equals 1 up to rounding for a full system.
    pub fn total(&self) -> f64 {
        self.intensities.values().sum()
    }

    /// Largest stored order.
    pub fn max_order(&self) -> i32 {
        self.intensities.keys().max().copied().unwrap_or(0)
    }
}

/// Coherence spectra over a strictly increasing time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub system: SpinSystem,
    pub grid: Vec<f64>,
    pub spectra: Vec<CoherenceSpectrum>,
}

/// Unnormalized intensity of each order held by one sector state:
/// `sum_M |<M|rho|M-k>|^2` for even `k >= 0`. Normalization by `Tr(I_z^2)`
/// happens at assembly.
pub fn sector_intensities(state: &SectorState, sector: &Sector) -> BTreeMap<u32, f64> {
    assert_eq!(
        state.label, sector.label,
        "state and sector must describe the same subblock"
    );
    assert_eq!(state.dim(), sector.dim(), "state dimension mismatch");
    let d = sector.dim();
    let mut map = BTreeMap::new();
    for m in 0..d {
        let mut acc = 0.0;
        for i in 0..d - m {
            acc += state.matrix[(i, i + m)].norm_sqr();
        }
        map.insert(2 * m as u32, acc);
    }
    map
}

/// Combine per-sector unnormalized intensities into the observable spectrum
/// `J_k = sum n_N(S) j_{k,S} / Tr(I_z^2)`.
///
/// Every sector of the system (both parities) must be present exactly once.
pub fn assemble(
    system: &SpinSystem,
    time: f64,
    per_sector: &[(SectorLabel, BTreeMap<u32, f64>)],
) -> Result<CoherenceSpectrum> {
    let expected = enumerate_sectors(system);
    if per_sector.len() != expected.len() {
        return Err(Error::Contract(format!(
            "expected {} sectors, got {}",
            expected.len(),
            per_sector.len()
        )));
    }
    let mut seen: Vec<SectorLabel> = per_sector.iter().map(|(l, _)| *l).collect();
    seen.sort_by_key(|l| (std::cmp::Reverse(l.twice_spin), l.parity));
    for (have, want) in seen.iter().zip(expected.iter()) {
        if have != want {
            return Err(Error::Contract(format!(
                "sector {want} missing from assembly input"
            )));
        }
    }

    let log_norm = system.log_iz_norm();
    let max_m = per_sector
        .iter()
        .map(|(_, map)| map.len())
        .max()
        .unwrap_or(0);
    let mut values = vec![0.0f64; max_m];
    // Fixed summation order: descending S, Plus before Minus.
    let mut ordered: Vec<&(SectorLabel, BTreeMap<u32, f64>)> = per_sector.iter().collect();
    ordered.sort_by_key(|(l, _)| (std::cmp::Reverse(l.twice_spin), l.parity));
    for (label, map) in ordered {
        let weight = (multiplicity_log(system.n_spins(), label.twice_spin)? - log_norm).exp();
        for (&k, &v) in map {
            values[(k / 2) as usize] += weight * v;
        }
    }
    Ok(CoherenceSpectrum::from_nonnegative_orders(time, &values))
}

/// Normalized intensity vector (index `m` holds order `2m`) computed from a
/// prepared cache; sequential over sectors so callers can parallelize over
/// time points deterministically.
pub(crate) fn spectrum_values_at(cache: &SpectralCache, t: f64) -> Vec<f64> {
    let max_dim = cache
        .sectors()
        .iter()
        .map(|s| s.sector.dim())
        .max()
        .unwrap_or(0);
    let mut values = vec![0.0f64; max_dim];
    let mut scratch = Vec::new();
    for data in cache.sectors() {
        evolved_band_sums(data, t, &mut scratch);
        let w = data.scaled_weight;
        for (m, &v) in scratch.iter().enumerate() {
            values[m] += w * v;
        }
    }
    values
}

/// One spectrum from a prepared cache.
pub fn spectrum_from_cache(cache: &SpectralCache, t: f64) -> CoherenceSpectrum {
    CoherenceSpectrum::from_nonnegative_orders(t, &spectrum_values_at(cache, t))
}

/// Evolve the full system over a time grid with default options (parity
/// doubling for odd `N`, no sector truncation).
pub fn evolve_system(system: &SpinSystem, grid: &[f64]) -> Result<TimeSeries> {
    evolve_system_with(system, grid, &EvolveOptions::default())
}

/// Evolve the full system over a time grid.
///
/// All sectors are diagonalized once; grid points are processed in parallel
/// and reduced in fixed sector order, so the output is identical for any
/// thread count.
pub fn evolve_system_with(
    system: &SpinSystem,
    grid: &[f64],
    options: &EvolveOptions,
) -> Result<TimeSeries> {
    if grid.is_empty() {
        return Err(Error::Domain("time grid must not be empty".into()));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Domain(format!(
                "time grid must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("time grid must be finite".into()));
    }
    let cache = SpectralCache::build(system, options)?;
    use rayon::prelude::*;
    let spectra: Vec<CoherenceSpectrum> = grid
        .par_iter()
        .map(|&t| spectrum_from_cache(&cache, t))
        .collect();
    Ok(TimeSeries {
        system: *system,
        grid: grid.to_vec(),
        spectra,
    })
}

/// Maximum spin count for the dense short-time comparison.
pub const SHORT_TIME_MAX_SPINS: u32 = 10;

/// Compare the cubic short-time expansion of the evolved state against exact
/// evolution in the full product basis and return the max-norm deviation.
///
/// The deviation of the cubic series is a fourth-order remainder, so
/// `deviation(2h)/deviation(h)` approaches 16 as `h -> 0`.
pub fn short_time_check(system: &SpinSystem, t: f64) -> Result<f64> {
    if system.n_spins() > SHORT_TIME_MAX_SPINS {
        return Err(Error::Unsupported(format!(
            "short-time comparison builds 2^N dense operators; N = {} exceeds the cap of {}",
            system.n_spins(),
            SHORT_TIME_MAX_SPINS
        )));
    }
    crate::oracles::short_time_deviation(system, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{diagonalize, initial_state, propagate};
    use crate::sectors::{build_sector, Parity};

    fn five_spin() -> SpinSystem {
        SpinSystem::with_unit_coupling(5).unwrap()
    }

    fn sector(sys: &SpinSystem, ts: u32, parity: Parity) -> Sector {
        build_sector(
            sys,
            SectorLabel {
                twice_spin: ts,
                parity,
            },
        )
        .unwrap()
    }

    #[test]
    fn initial_sector_intensity_is_pure_zero_order() {
        let sys = five_spin();
        let s = sector(&sys, 5, Parity::Plus);
        let state = initial_state(&s);
        let map = sector_intensities(&state, &s);
        // Sum of M^2 over {5/2, 1/2, -3/2} is 35/4.
        assert!((map[&0] - 35.0 / 4.0).abs() < 1e-14);
        assert_eq!(map[&2], 0.0);
        assert_eq!(map[&4], 0.0);
    }

    #[test]
    fn scalar_sector_contributes_constant_quarter() {
        let sys = five_spin();
        let s = sector(&sys, 1, Parity::Plus);
        let decomp = diagonalize(&s).unwrap();
        for &t in &[0.0, 3.0, 42.0] {
            let state = propagate(&decomp, &initial_state(&s), t).unwrap();
            let map = sector_intensities(&state, &s);
            assert_eq!(map.len(), 1);
            assert!((map[&0] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn top_sector_order_four_band() {
        // |rho13|^2 = (24 sqrt5 / 49)^2 sin^8(sqrt7 t / 2).
        let sys = five_spin();
        let s = sector(&sys, 5, Parity::Plus);
        let decomp = diagonalize(&s).unwrap();
        let t = 1.234;
        let state = propagate(&decomp, &initial_state(&s), t).unwrap();
        let map = sector_intensities(&state, &s);
        let a13 = (24.0 / 49.0) * 5.0f64.sqrt() * (7.0f64.sqrt() * t / 2.0).sin().powi(4);
        assert!((map[&4] - a13 * a13).abs() < 1e-12);
    }

    fn full_assembly(sys: &SpinSystem, t: f64) -> CoherenceSpectrum {
        let per_sector: Vec<(SectorLabel, BTreeMap<u32, f64>)> = enumerate_sectors(sys)
            .into_iter()
            .map(|label| {
                let s = build_sector(sys, label).unwrap();
                let decomp = diagonalize(&s).unwrap();
                let state = propagate(&decomp, &initial_state(&s), t).unwrap();
                (label, sector_intensities(&state, &s))
            })
            .collect();
        assemble(sys, t, &per_sector).unwrap()
    }

    #[test]
    fn assembly_at_zero_is_pure_zero_order() {
        let spectrum = full_assembly(&five_spin(), 0.0);
        assert!((spectrum.intensity(0) - 1.0).abs() < 1e-12);
        assert!(spectrum.intensity(2).abs() < 1e-15);
        assert!(spectrum.intensity(4).abs() < 1e-15);
        assert!((spectrum.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assembly_peak_order_four_value() {
        // At sqrt7 t = pi the fourth-order intensity reaches 144/2401 per sign.
        let t = std::f64::consts::PI / 7.0f64.sqrt();
        let spectrum = full_assembly(&five_spin(), t);
        assert!((spectrum.intensity(4) - 144.0 / 2401.0).abs() < 1e-12);
        assert!((spectrum.intensity(-4) - 144.0 / 2401.0).abs() < 1e-12);
    }

    #[test]
    fn assembly_sum_rule() {
        for &t in &[0.3, 1.7, 9.9, 31.4] {
            let spectrum = full_assembly(&five_spin(), t);
            assert!(
                (spectrum.total() - 1.0).abs() < 1e-12,
                "sum rule broke at t={t}"
            );
        }
    }

    #[test]
    fn assembly_rejects_missing_sector() {
        let sys = five_spin();
        let mut per_sector: Vec<(SectorLabel, BTreeMap<u32, f64>)> = enumerate_sectors(&sys)
            .into_iter()
            .map(|label| {
                let s = build_sector(&sys, label).unwrap();
                (label, sector_intensities(&initial_state(&s), &s))
            })
            .collect();
        per_sector.pop();
        assert!(assemble(&sys, 0.0, &per_sector).is_err());
    }

    #[test]
    fn evolve_system_matches_manual_assembly() {
        let sys = five_spin();
        let grid = [0.0, 0.9, 2.4];
        let series = evolve_system(&sys, &grid).unwrap();
        assert_eq!(series.grid.len(), series.spectra.len());
        for (i, &t) in grid.iter().enumerate() {
            let manual = full_assembly(&sys, t);
            for (&k, &v) in &series.spectra[i].intensities {
                assert!(
                    (v - manual.intensity(k)).abs() < 1e-12,
                    "t={t} k={k}: doubled path {v} vs both-parity {}",
                    manual.intensity(k)
                );
            }
        }
    }

    #[test]
    fn evolve_system_rejects_bad_grids() {
        let sys = five_spin();
        assert!(evolve_system(&sys, &[]).is_err());
        assert!(evolve_system(&sys, &[0.0, 0.0]).is_err());
        assert!(evolve_system(&sys, &[1.0, 0.5]).is_err());
        assert!(evolve_system(&sys, &[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn spectrum_support_is_bounded_by_spin_count() {
        let sys = five_spin();
        let series = evolve_system(&sys, &[1.3]).unwrap();
        let spectrum = &series.spectra[0];
        assert!(spectrum.max_order() <= 5);
        assert_eq!(spectrum.intensity(6), 0.0);
        assert_eq!(spectrum.intensity(3), 0.0); // odd orders never exist
    }

    #[test]
    fn clamping_reports_magnitude() {
        let s = CoherenceSpectrum::from_nonnegative_orders(0.0, &[1.0, -3e-15]);
        assert_eq!(s.intensity(2), 0.0);
        assert!((s.clamped_magnitude - 3e-15).abs() < 1e-20);
        assert!(s.clamped_magnitude < CLAMP_GUARD);
    }

    #[test]
    fn short_time_rejects_large_systems() {
        let sys = SpinSystem::with_unit_coupling(11).unwrap();
        assert!(short_time_check(&sys, 0.1).is_err());
    }

    #[test]
    fn short_time_zero_deviation_at_zero() {
        let sys = SpinSystem::with_unit_coupling(3).unwrap();
        let dev = short_time_check(&sys, 0.0).unwrap();
        assert!(dev < 1e-13);
    }

    #[test]
    fn short_time_small_deviation_for_three_spins() {
        let sys = SpinSystem::with_unit_coupling(3).unwrap();
        let dev = short_time_check(&sys, 0.1).unwrap();
        assert!(dev < 1e-3, "deviation {dev}");
    }
}
