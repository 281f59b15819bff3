//! Property tests for the structural invariants of the sector machinery and
//! cross-checks that are cheap enough to run on every test pass.

use proptest::prelude::*;

use mqpore::{
    build_sector, diagonalize, evolve_system, initial_state, multiplicity_exact,
    multiplicity_log, propagate, raising_squared_element, two_spin_closed_form, Parity,
    SectorLabel, SpinSystem,
};

/// Arbitrary valid (N, 2S) pair with N small enough for exact arithmetic.
fn spin_pair() -> impl Strategy<Value = (u32, u32)> {
    (1u32..=20).prop_flat_map(|n| {
        let steps = n / 2;
        (Just(n), 0..=steps).prop_map(|(n, k)| (n, n - 2 * k))
    })
}

proptest! {
    #[test]
    fn multiplicities_are_positive_and_consistent((n, ts) in spin_pair()) {
        let exact = multiplicity_exact(n, ts).unwrap();
        prop_assert!(exact >= 1);
        let log = multiplicity_log(n, ts).unwrap();
        let relative = (log.exp() - exact as f64) / exact as f64;
        prop_assert!(relative.abs() < 1e-12, "relative error {relative:e}");
    }

    #[test]
    fn raising_element_symmetry(ts in 0u32..200, shift in 0i32..100) {
        // The squared ladder element obeys f(M) = f(2 - M), which is what
        // mirrors the two parity subblocks onto each other.
        let tm = ts as i32 - 4 * shift;
        let mirrored = 4 - tm;
        let a = raising_squared_element(ts, tm);
        let b = raising_squared_element(ts, mirrored);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn sector_spectra_are_symmetric((n, ts) in spin_pair(), coupling in 0.1f64..4.0) {
        if n < 2 {
            return Ok(());
        }
        let sys = SpinSystem::new(n, coupling).unwrap();
        let sector = build_sector(&sys, SectorLabel { twice_spin: ts, parity: Parity::Plus }).unwrap();
        let decomp = diagonalize(&sector).unwrap();
        let d = decomp.eigenvalues.len();
        let max = decomp.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        for i in 0..d {
            let pair = decomp.eigenvalues[i] + decomp.eigenvalues[d - 1 - i];
            prop_assert!(pair.abs() <= 1e-10 * max.max(1.0));
        }
        // Orthogonality of the eigenvector matrix.
        let gram = decomp.eigenvectors.t().dot(&decomp.eigenvectors);
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_preserves_trace_and_hermiticity(
        (n, ts) in spin_pair(),
        t in 0.0f64..100.0,
    ) {
        if n < 2 {
            return Ok(());
        }
        let sys = SpinSystem::with_unit_coupling(n).unwrap();
        let sector = build_sector(&sys, SectorLabel { twice_spin: ts, parity: Parity::Plus }).unwrap();
        let decomp = diagonalize(&sector).unwrap();
        let rho0 = initial_state(&sector);
        let rho = propagate(&decomp, &rho0, t).unwrap();
        prop_assert!((rho.trace() - rho0.trace()).abs() < 1e-12);
        for i in 0..sector.dim() {
            for j in 0..sector.dim() {
                let defect = rho.matrix[(i, j)] - rho.matrix[(j, i)].conj();
                prop_assert!(defect.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn spectra_are_normalized_even_and_mirror_symmetric(
        n in 2u32..=9,
        t in 0.0f64..50.0,
    ) {
        let sys = SpinSystem::with_unit_coupling(n).unwrap();
        let series = evolve_system(&sys, &[t.max(1e-6)]).unwrap();
        let spectrum = &series.spectra[0];
        prop_assert!((spectrum.total() - 1.0).abs() < 1e-9);
        prop_assert!(spectrum.clamped_magnitude <= 1e-14);
        for (&k, &v) in &spectrum.intensities {
            prop_assert_eq!(k.rem_euclid(2), 0);
            prop_assert!(v >= 0.0);
            prop_assert!((v - spectrum.intensity(-k)).abs() < 1e-12);
        }
        prop_assert!(spectrum.max_order() <= n as i32);
    }

    #[test]
    fn coupling_strength_never_changes_dimensionless_intensities(
        n in 2u32..=7,
        t in 0.0f64..20.0,
        coupling in prop::sample::select(vec![0.5f64, 2.0, -1.0, 7.25]),
    ) {
        // Time is t = D tau, so intensities as functions of t cannot depend
        // on the coupling (the sign flips the spectrum, which is symmetric).
        let unit = SpinSystem::with_unit_coupling(n).unwrap();
        let scaled = SpinSystem::new(n, coupling).unwrap();
        let a = evolve_system(&unit, &[t.max(1e-9)]).unwrap();
        let b = evolve_system(&scaled, &[t.max(1e-9)]).unwrap();
        for (&k, &v) in &a.spectra[0].intensities {
            prop_assert!((v - b.spectra[0].intensity(k)).abs() < 1e-11);
        }
    }
}

#[test]
fn two_spin_pipeline_matches_hand_derived_form() {
    // Anti-circularity anchor: the sector pipeline against the by-hand
    // triplet-rotation solution.
    let sys = SpinSystem::with_unit_coupling(2).unwrap();
    let grid: Vec<f64> = (0..60).map(|i| 0.17 * f64::from(i) + 0.01).collect();
    let series = evolve_system(&sys, &grid).unwrap();
    for (spectrum, &t) in series.spectra.iter().zip(&grid) {
        let reference = two_spin_closed_form(t);
        for k in [0, 2] {
            assert!(
                (spectrum.intensity(k) - reference.intensity(k)).abs() < 1e-12,
                "t={t} k={k}"
            );
        }
    }
}

#[test]
fn largest_system_sector_is_orthogonal_to_spec_tolerance() {
    // The biggest block that ever occurs at the scales exercised here.
    let sys = SpinSystem::with_unit_coupling(601).unwrap();
    let sector = build_sector(
        &sys,
        SectorLabel {
            twice_spin: 601,
            parity: Parity::Plus,
        },
    )
    .unwrap();
    assert_eq!(sector.dim(), 301);
    let decomp = diagonalize(&sector).unwrap();
    let gram = decomp.eigenvectors.t().dot(&decomp.eigenvectors);
    let mut defect = 0.0f64;
    for i in 0..301 {
        for j in 0..301 {
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((gram[(i, j)] - target).abs());
        }
    }
    assert!(defect < 1e-12, "orthogonality defect {defect:e}");
}

#[test]
fn propagation_composes_through_reused_decomposition() {
    // Spectral propagation is closed-form: reusing one decomposition for
    // different target times equals fresh single-shot propagation.
    let sys = SpinSystem::with_unit_coupling(9).unwrap();
    let sector = build_sector(
        &sys,
        SectorLabel {
            twice_spin: 5,
            parity: Parity::Minus,
        },
    )
    .unwrap();
    let decomp = diagonalize(&sector).unwrap();
    let rho0 = initial_state(&sector);
    for t in [0.4, 3.9, 27.0] {
        let reused = propagate(&decomp, &rho0, t).unwrap();
        let fresh = propagate(&diagonalize(&sector).unwrap(), &initial_state(&sector), t).unwrap();
        for i in 0..sector.dim() {
            for j in 0..sector.dim() {
                assert_eq!(reused.matrix[(i, j)], fresh.matrix[(i, j)]);
            }
        }
    }
}

#[test]
fn quadrature_window_is_insensitive_to_doubling_the_periods() {
    // Averaging over 2 or 4 periods changes nothing beyond residual
    // oscillation leakage, which dies out with system size; 201 spins is
    // where the stationary-profile claims live.
    let sys = SpinSystem::with_unit_coupling(201).unwrap();
    let p2 = mqpore::time_average(&sys, 31.0, 2, mqpore::default_period()).unwrap();
    let p4 = mqpore::time_average(&sys, 31.0, 4, mqpore::default_period()).unwrap();
    for (&k, &v) in &p2.averaged {
        assert!(
            (v - p4.value(k)).abs() < 1e-3,
            "order {k}: {v} vs {}",
            p4.value(k)
        );
    }
}
