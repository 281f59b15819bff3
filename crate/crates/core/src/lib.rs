//! Multiple-quantum coherence dynamics of spin-1/2 ensembles coupled by a
//! single motionally averaged dipolar constant.
//!
//! The double-quantum Hamiltonian built from collective ladder operators
//! conserves the squared total spin and the parity of the projection, so the
//! 2^N-dimensional evolution splits into O(N) real symmetric tridiagonal
//! blocks. This crate enumerates those blocks ([`sectors`]), diagonalizes and
//! propagates them in closed form ([`evolve`]), assembles observable
//! coherence intensities ([`coherence`]), averages them into stationary
//! profiles and fits the two-family exponential model ([`profile`]), and
//! carries its own independent correctness references ([`oracles`]).
//!
//! Everything is deterministic: eigenvector signs are pinned, reductions run
//! in fixed sector order, and parallelism never changes results.

pub mod coherence;
mod error;
pub mod evolve;
pub mod linalg;
pub mod oracles;
pub mod profile;
pub mod sectors;
pub mod system;

pub use coherence::{
    assemble, evolve_system, evolve_system_with, sector_intensities, short_time_check,
    spectrum_from_cache, CoherenceSpectrum, TimeSeries,
};
pub use error::{Error, Result};
pub use evolve::{
    diagonalize, initial_state, propagate, EvolveOptions, SectorState, SpectralCache,
    SpectralDecomposition,
};
pub use oracles::{
    dense_brute_force, five_spin_closed_form, five_spin_sector_data, two_spin_closed_form,
};
pub use profile::{
    default_period, fit_profile, fit_profile_with_floor, normalization_residual, split_families,
    time_average, time_average_with, AverageOptions, AveragedProfile, FamilySplit, FitParams,
    ProfileFit,
};
pub use sectors::{
    build_sector, enumerate_sectors, multiplicity_exact, multiplicity_log,
    raising_squared_element, verify_dimension_identity, Parity, Sector, SectorLabel,
};
pub use system::SpinSystem;
